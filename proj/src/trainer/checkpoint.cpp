// SPDX-License-Identifier: Apache-2.0
#include "avssl/trainer/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "avssl/core/error.hpp"
#include "json.hpp"

namespace avssl::trainer {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void CollapseMonitor::add(const Tensor<float>& z) {
  const std::size_t n = z.dim(0), d = z.row_size();
  if (sum.empty()) {
    sum.assign(d, 0.0);
    sumsq.assign(d, 0.0);
  }
  if (sum.size() != d) throw ShapeError("collapse monitor width changed");
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.data() + i * d;
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(row[k]) * row[k];
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) norm = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = row[k] / norm;
      sum[k] += x;
      sumsq[k] += x * x;
    }
  }
  rows += n;
}

double CollapseMonitor::value() const {
  if (rows == 0 || sum.empty()) return 0.0;
  const double n = static_cast<double>(rows);
  double acc = 0.0;
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double mean = sum[k] / n;
    acc += std::sqrt(std::max(0.0, sumsq[k] / n - mean * mean));
  }
  return acc / static_cast<double>(sum.size());
}

void CollapseMonitor::reset() {
  sum.clear();
  sumsq.clear();
  rows = 0;
}

void EpochTotals::reset() {
  video.reset();
  audio.reset();
  loss_sum = 0.0;
  steps = 0;
  skipped = 0;
}

std::string config_hash(const data::RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data::to_json(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace {

struct ArrayRef {
  std::string name;
  std::string kind;
  Shape shape;
  const void* data = nullptr;
  std::size_t bytes = 0;
  std::string dtype;
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::size_t header_bytes() { return sizeof(kCheckpointMagic) + sizeof(std::uint16_t) + sizeof(std::uint64_t); }

ordered_json read_meta(std::istream& is, const fs::path& path, std::uint64_t& payload_start) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError(path.string() + ": bad magic bytes at offset 0 (expected AVSSLCKP)");
  }
  std::uint16_t version = 0;
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&version), 2);
  is.read(reinterpret_cast<char*>(&len), 8);
  if (!is) throw IoError(path.string() + ": truncated checkpoint header at offset 8");
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  }
  if (len > fs::file_size(path)) throw IoError(path.string() + ": truncated checkpoint metadata at offset 18");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError(path.string() + ": truncated checkpoint metadata at offset 18");
  payload_start = header_bytes() + len;
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw IoError(path.string() + ": malformed checkpoint metadata at offset 18");
  }
}

ordered_json shape_json(const Shape& s) {
  ordered_json j = ordered_json::array();
  for (auto d : s) j.push_back(d);
  return j;
}

}  // namespace

void save_checkpoint(const fs::path& path, const data::RunConfig& cfg, const model::Network<float>& net,
                     const TrainState& state) {
  const auto& store = net.store();
  std::vector<ArrayRef> arrays;
  auto add_f32 = [&](const std::string& name, const std::string& kind, const Tensor<float>& t) {
    arrays.push_back({name, kind, t.shape(), t.data(), t.size() * sizeof(float), "f32"});
  };
  auto add_f64 = [&](const std::string& name, const std::vector<double>& v) {
    arrays.push_back({name, "monitor", Shape{v.size()}, v.data(), v.size() * sizeof(double), "f64"});
  };
  const auto& entries = store.entries();
  if (state.optim.m.size() != entries.size()) throw ShapeError("optimizer state does not match the network");
  for (const auto& e : entries) add_f32(e.var->name, "param", e.var->value);
  for (const auto& b : store.buffer_names()) add_f32(b, "buffer", store.buffer(b));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    add_f32(entries[i].var->name, "adam_m", state.optim.m[i]);
    add_f32(entries[i].var->name, "adam_v", state.optim.v[i]);
  }
  add_f64("video.sum", state.epoch.video.sum);
  add_f64("video.sumsq", state.epoch.video.sumsq);
  add_f64("audio.sum", state.epoch.audio.sum);
  add_f64("audio.sumsq", state.epoch.audio.sumsq);

  ordered_json meta;
  meta["format"] = "avssl-checkpoint";
  meta["version"] = kCheckpointVersion;
  meta["step"] = state.step;
  meta["rng_state"] = state.rng_state;
  meta["config_hash"] = config_hash(cfg);
  meta["config"] = ordered_json::parse(data::to_json(cfg));
  meta["parameter_count"] = store.parameter_count();
  meta["parameter_count_video"] = store.parameter_count(nn::ModalityTag::video);
  meta["parameter_count_audio"] = store.parameter_count(nn::ModalityTag::audio);
  const auto& h = state.optim.hyper;
  meta["optimizer"] = {{"step", state.optim.step},      {"beta1", h.beta1}, {"beta2", h.beta2},
                       {"eps", h.eps},                   {"weight_decay", h.weight_decay},
                       {"decoupled", h.decoupled}};
  meta["epoch_totals"] = {{"loss_sum", state.epoch.loss_sum},
                          {"steps", state.epoch.steps},
                          {"skipped", state.epoch.skipped},
                          {"video_rows", state.epoch.video.rows},
                          {"audio_rows", state.epoch.audio.rows}};
  ordered_json list = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    list.push_back({{"name", a.name},
                    {"kind", a.kind},
                    {"dtype", a.dtype},
                    {"shape", shape_json(a.shape)},
                    {"offset", offset},
                    {"bytes", a.bytes}});
    offset += a.bytes;
  }
  meta["arrays"] = std::move(list);
  const std::string text = meta.dump();

  // Write to a sibling and rename, so an interrupted save never clobbers the
  // previous checkpoint.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kCheckpointMagic, 8);
    put<std::uint16_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays) os.write(static_cast<const char*>(a.data), static_cast<std::streamsize>(a.bytes));
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::uint64_t payload = 0;
  const auto meta = read_meta(is, path, payload);

  Checkpoint ck;
  try {
    ck.config = data::config_from_json(meta.at("config").dump());
    ck.config_hash = meta.at("config_hash").get<std::string>();
    ck.state.step = meta.at("step").get<std::size_t>();
    ck.state.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": incomplete checkpoint metadata (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": stored config is invalid: " + e.what());
  }

  const auto& arrays = meta.at("arrays");
  std::uint64_t total = 0;
  for (const auto& a : arrays) total = std::max<std::uint64_t>(total, a.at("offset").get<std::uint64_t>() + a.at("bytes").get<std::uint64_t>());
  const auto size = fs::file_size(path);
  if (size < payload + total) {
    throw IoError(path.string() + ": truncated checkpoint payload (" + std::to_string(size) + " of " +
                  std::to_string(payload + total) + " bytes)");
  }

  ck.network = std::make_unique<model::Network<float>>(ck.config.model, ck.config.seed);
  auto& store = ck.network->store();
  const auto& entries = store.entries();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) index.emplace(entries[i].var->name, i);

  const auto& oj = meta.at("optimizer");
  AdamHyper h;
  h.beta1 = oj.at("beta1");
  h.beta2 = oj.at("beta2");
  h.eps = oj.at("eps");
  h.weight_decay = oj.at("weight_decay");
  h.decoupled = oj.at("decoupled");
  ck.state.optim = OptimizerState<float>::zeros(store, h);
  ck.state.optim.step = oj.at("step");
  const auto& et = meta.at("epoch_totals");
  ck.state.epoch.loss_sum = et.at("loss_sum");
  ck.state.epoch.steps = et.at("steps");
  ck.state.epoch.skipped = et.at("skipped");
  ck.state.epoch.video.rows = et.at("video_rows");
  ck.state.epoch.audio.rows = et.at("audio_rows");

  std::size_t params_seen = 0;
  for (const auto& a : arrays) {
    const auto name = a.at("name").get<std::string>();
    const auto kind = a.at("kind").get<std::string>();
    const auto bytes = a.at("bytes").get<std::size_t>();
    Shape shape = a.at("shape").get<Shape>();
    void* dst = nullptr;
    std::vector<double>* f64 = nullptr;
    if (kind == "monitor") {
      if (name == "video.sum") f64 = &ck.state.epoch.video.sum;
      else if (name == "video.sumsq") f64 = &ck.state.epoch.video.sumsq;
      else if (name == "audio.sum") f64 = &ck.state.epoch.audio.sum;
      else if (name == "audio.sumsq") f64 = &ck.state.epoch.audio.sumsq;
      else throw IoError(path.string() + ": unknown monitor array '" + name + "'");
      f64->resize(shape_numel(shape));
      dst = f64->data();
    } else {
      Tensor<float>* t = nullptr;
      if (kind == "buffer") {
        const auto& names = store.buffer_names();
        if (std::find(names.begin(), names.end(), name) == names.end()) {
          throw IoError(path.string() + ": buffer '" + name + "' does not exist in the configured model");
        }
        t = &store.buffer(name);
      } else {
        auto it = index.find(name);
        if (it == index.end()) throw IoError(path.string() + ": parameter '" + name + "' does not exist in the configured model");
        if (kind == "param") {
          t = &entries[it->second].var->value;
          ++params_seen;
        } else if (kind == "adam_m") {
          t = &ck.state.optim.m[it->second];
        } else if (kind == "adam_v") {
          t = &ck.state.optim.v[it->second];
        } else {
          throw IoError(path.string() + ": unknown array kind '" + kind + "'");
        }
      }
      if (t->shape() != shape) {
        throw IoError(path.string() + ": array '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                      shape_string(t->shape()));
      }
      dst = t->data();
    }
    is.seekg(static_cast<std::streamoff>(payload + a.at("offset").get<std::uint64_t>()));
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!is) throw IoError(path.string() + ": short read for array '" + name + "'");
  }
  if (params_seen != entries.size()) {
    throw IoError(path.string() + ": checkpoint holds " + std::to_string(params_seen) + " of " +
                  std::to_string(entries.size()) + " parameters");
  }
  return ck;
}

std::string describe_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::uint64_t payload = 0;
  auto meta = read_meta(is, path, payload);
  std::size_t n = 0, bytes = 0;
  for (const auto& a : meta["arrays"]) {
    ++n;
    bytes += a.at("bytes").get<std::size_t>();
  }
  meta.erase("arrays");
  meta.erase("rng_state");
  meta["array_count"] = n;
  meta["payload_bytes"] = bytes;
  meta["file"] = path.string();
  return meta.dump(2);
}

}  // namespace avssl::trainer
