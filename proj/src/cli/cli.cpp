// SPDX-License-Identifier: Apache-2.0
#include "avssl/cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "avssl/core/error.hpp"
#include "avssl/core/log.hpp"
#include "avssl/data/manifest.hpp"
#include "avssl/data/run_config.hpp"
#include "avssl/eval/evaluation.hpp"
#include "avssl/synth/synthdata.hpp"
#include "avssl/trainer/checkpoint.hpp"
#include "avssl/trainer/pretrain.hpp"
#include "json.hpp"

namespace avssl::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const RangeError*>(&e) || dynamic_cast<const InfeasibleClip*>(&e)) {
    return kExitUsage;
  }
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const CLI::ParseError*>(&e)) return kExitUsage;
  return kExitInternal;
}

fs::path output_root() {
  if (const char* root = std::getenv("AVSSL_OUTPUT_ROOT"); root && *root) return root;
  return "avssl_out";
}

// --- grids ---------------------------------------------------------------------

namespace {

ordered_json parse_object(const std::string& text, const std::string& what) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  return j;
}

/// {"a.b": 1} -> {"a": {"b": 1}}; nested objects are expanded recursively.
ordered_json expand_dotted(const ordered_json& j) {
  ordered_json out = ordered_json::object();
  for (const auto& [k, v] : j.items()) {
    const ordered_json value = v.is_object() ? expand_dotted(v) : v;
    std::string ptr = "/" + k;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    ordered_json patch = ordered_json::object();
    patch[ordered_json::json_pointer(ptr)] = value;
    out.merge_patch(patch);
  }
  return out;
}

AblationVariant variant(std::string id, std::string label, ordered_json set) {
  return {std::move(id), std::move(label), set.dump()};
}

}  // namespace

std::vector<std::string> builtin_grid_names() { return {"loss", "sampler"}; }

AblationGrid builtin_grid(const std::string& name) {
  AblationGrid g;
  g.name = name;
  if (name == "loss") {
    const std::pair<const char*, const char*> rows[] = {
        {"L_v1v2", "video"},       {"L_a1a2", "audio"},       {"L_intra", "intra"},
        {"L_sync", "sync"},        {"L_async", "async"},      {"L_sync+L_intra", "intra,sync"},
        {"L_async+L_intra", "intra,async"}, {"L_async+L_sync", "sync,async"}, {"L_CrissCross", "full"}};
    char id = 'a';
    for (const auto& [label, mask] : rows) {
      g.variants.push_back(variant(std::string(1, id++), label, {{"loss_mask", mask}}));
    }
    return g;
  }
  if (name == "sampler") {
    for (const char* s : {"same", "overlapped", "adjacent", "random", "far_apart"}) {
      g.variants.push_back(variant(s, s, {{"sampler", {{"strategy", s}}}}));
    }
    return g;
  }
  throw ConfigError("unknown built-in grid '" + name + "' (expected loss or sampler)");
}

AblationGrid grid_from_json(const std::string& text) {
  const ordered_json j = parse_object(text, "ablation grid");
  for (const auto& [k, _] : j.items()) {
    if (k != "name" && k != "base" && k != "variants") throw ConfigError("unknown grid key '" + k + "'");
  }
  AblationGrid g;
  g.name = j.value("name", std::string("grid"));
  if (j.contains("base")) {
    if (!j["base"].is_object()) throw ConfigError("grid 'base' must be an object");
    g.base = j["base"].dump();
  }
  if (!j.contains("variants") || !j["variants"].is_array()) throw ConfigError("grid needs a 'variants' array");
  std::set<std::string> ids;
  for (const auto& v : j["variants"]) {
    if (!v.is_object() || !v.contains("id") || !v["id"].is_string()) {
      throw ConfigError("every grid variant needs a string 'id'");
    }
    for (const auto& [k, _] : v.items()) {
      if (k != "id" && k != "label" && k != "set") throw ConfigError("unknown variant key '" + k + "'");
    }
    AblationVariant row;
    row.id = v["id"].get<std::string>();
    if (row.id.empty() || row.id.find_first_of("/\\ ,") != std::string::npos) {
      throw ConfigError("variant id '" + row.id + "' must be non-empty without '/', ',' or spaces");
    }
    if (!ids.insert(row.id).second) throw ConfigError("duplicate variant id '" + row.id + "'");
    row.label = v.value("label", row.id);
    if (v.contains("set")) {
      if (!v["set"].is_object()) throw ConfigError("variant '" + row.id + "': 'set' must be an object");
      row.overrides = v["set"].dump();
    }
    g.variants.push_back(std::move(row));
  }
  if (g.variants.empty()) throw ConfigError("ablation grid '" + g.name + "' has no variants");
  return g;
}

std::string to_json(const AblationGrid& grid) {
  ordered_json j;
  j["name"] = grid.name;
  j["base"] = ordered_json::parse(grid.base);
  j["variants"] = ordered_json::array();
  for (const auto& v : grid.variants) {
    j["variants"].push_back({{"id", v.id}, {"label", v.label}, {"set", ordered_json::parse(v.overrides)}});
  }
  return j.dump(2);
}

// --- helpers -------------------------------------------------------------------

namespace {

std::string read_text(const fs::path& p, const std::string& what) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + what + " " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("failed writing " + p.string());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

ordered_json paths_json(const std::vector<fs::path>& paths) {
  ordered_json a = ordered_json::array();
  for (const auto& p : paths) a.push_back(p.string());
  return a;
}

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

data::RunConfig apply_overlay(const data::RunConfig& cfg, const std::string& overlay) {
  ordered_json j = ordered_json::parse(data::to_json(cfg));
  j.merge_patch(expand_dotted(parse_object(overlay, "config overrides")));
  return data::config_from_json(j.dump());
}

/// Flags shared by pretrain, ablate and random-init probing.
struct ConfigFlags {
  std::string config_file;
  std::string preset_name;
  std::string loss_mask;
  std::string sampler;
  std::optional<std::size_t> epochs, batch_size, epoch_size;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app, bool with_training) {
    app->add_option("--config", config_file, "Run config JSON (keys as in README); starts from its 'preset'");
    app->add_option("--preset", preset_name, "Named preset when no --config is given: desk or kinetics_sound");
    app->add_option("--seed", seed, "Override the run seed");
    if (!with_training) return;
    app->add_option("--loss-mask", loss_mask, "Aggregates entering the loss, e.g. full, sync, intra,async, video");
    app->add_option("--sampler", sampler, "Temporal sampler: same, overlapped, adjacent, random, far_apart");
    app->add_option("--epochs", epochs, "Override optim.epochs");
    app->add_option("--batch-size", batch_size, "Override optim.batch_size");
    app->add_option("--epoch-size", epoch_size, "Override optim.epoch_size (0 = train split size)");
  }

  data::RunConfig resolve() const {
    if (!config_file.empty() && !preset_name.empty()) {
      throw ConfigError("--config and --preset are mutually exclusive; set 'preset' inside the config file");
    }
    data::RunConfig cfg = !config_file.empty() ? data::load_config(config_file)
                                                : data::preset(preset_name.empty() ? "desk" : preset_name);
    if (!loss_mask.empty()) cfg.loss_mask = objective::LossMask::parse(loss_mask);
    if (!sampler.empty()) cfg.sampler.strategy = sampling::parse_strategy(sampler);
    if (epochs) cfg.optim.epochs = *epochs;
    if (batch_size) cfg.optim.batch_size = *batch_size;
    if (epoch_size) cfg.optim.epoch_size = *epoch_size;
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

fs::path out_or_default(const std::string& out, const char* command) {
  return out.empty() ? output_root() / command : fs::path(out);
}

data::DatasetManifest require_manifest(const std::string& path) {
  if (path.empty()) throw ConfigError("--data is required");
  return data::load_manifest(path);
}

// --- gen-data ----------------------------------------------------------------

struct GenDataArgs {
  std::string spec_file, out;
  std::optional<std::size_t> categories, clips_per_category;
  std::optional<std::uint64_t> seed;
};

ordered_json cmd_gen_data(const GenDataArgs& a, std::vector<fs::path>& artifacts) {
  synth::SynthSpec spec;
  if (!a.spec_file.empty()) spec = synth::spec_from_json(read_text(a.spec_file, "synth spec"));
  if (a.categories) spec.num_categories = *a.categories;
  if (a.clips_per_category) spec.clips_per_category = *a.clips_per_category;
  if (a.seed) spec.seed = *a.seed;
  if (const auto v = synth::validate(spec); !v.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  const fs::path out = out_or_default(a.out, "data");
  const auto m = synth::generate_dataset(spec, out);
  const fs::path manifest = out / synth::kManifestFile;
  const fs::path spec_path = out / "synth_spec.json";
  write_text(spec_path, synth::to_json(spec) + "\n");
  artifacts.push_back(manifest);
  artifacts.push_back(out / data::kLabelNamesFile);
  artifacts.push_back(spec_path);
  for (const auto& e : m.entries) {
    artifacts.push_back(m.resolve(e.audio_path));
    artifacts.push_back(m.resolve(e.video_path));
  }
  ordered_json s;
  s["out_dir"] = out.string();
  s["manifest"] = manifest.string();
  s["manifest_hash"] = fnv1a_hex(read_text(manifest, "manifest"));
  s["clips"] = m.entries.size();
  s["train"] = m.split(data::Split::train).size();
  s["test"] = m.split(data::Split::test).size();
  s["categories"] = spec.num_categories;
  s["labels"] = m.label_names;
  return s;
}

// --- pretrain ------------------------------------------------------------------

struct PretrainArgs {
  ConfigFlags config;
  std::string data, out, resume;
  bool deterministic = false;
  bool quiet = false;
  std::size_t stop_after_steps = 0;
};

ordered_json pretrain_summary(const data::RunConfig& cfg, const trainer::PretrainResult& r) {
  ordered_json s;
  s["checkpoint"] = r.checkpoint.string();
  s["metrics"] = r.metrics.string();
  s["steps"] = r.steps;
  s["total_steps"] = r.total_steps;
  s["finished"] = r.finished;
  s["final_L_total"] = r.final_total;
  s["collapse_video"] = r.collapse_video;
  s["collapse_audio"] = r.collapse_audio;
  s["collapse_reference"] = 1.0 / std::sqrt(static_cast<double>(cfg.model.projector_dim));
  s["skipped"] = r.skipped;
  s["loss_mask"] = cfg.loss_mask.to_string();
  s["sampler"] = std::string(sampling::to_string(cfg.sampler.strategy));
  return s;
}

ordered_json cmd_pretrain(const PretrainArgs& a, std::vector<fs::path>& artifacts) {
  const data::RunConfig cfg = data::require_valid(a.config.resolve());
  const auto manifest = require_manifest(a.data);
  trainer::PretrainOptions opt;
  opt.out_dir = out_or_default(a.out, "pretrain");
  opt.deterministic = a.deterministic;
  if (!a.resume.empty()) opt.resume = a.resume;
  opt.stop_after_steps = a.stop_after_steps;
  opt.log_progress = !a.quiet;
  const auto r = trainer::pretrain(cfg, manifest, opt);
  artifacts = r.artifacts;
  ordered_json s;
  s["out_dir"] = opt.out_dir.string();
  s["deterministic"] = a.deterministic;
  s.update(pretrain_summary(cfg, r));
  return s;
}

// --- probe / retrieve -----------------------------------------------------------

struct ModelSource {
  std::string checkpoint;
  bool random_init = false;
  ConfigFlags config;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Checkpoint written by pretrain");
    app->add_flag("--random-init", random_init, "Use a freshly initialized network instead of a checkpoint");
    config.add(app, false);
  }

  std::pair<data::RunConfig, std::unique_ptr<model::Network<float>>> load() const {
    if (random_init == !checkpoint.empty()) throw ConfigError("give exactly one of --checkpoint or --random-init");
    if (random_init) {
      data::RunConfig cfg = data::require_valid(config.resolve());
      return {cfg, std::make_unique<model::Network<float>>(cfg.model, cfg.seed)};
    }
    if (!config.config_file.empty() || !config.preset_name.empty() || config.seed) {
      throw ConfigError("--config, --preset and --seed apply only with --random-init");
    }
    auto ck = trainer::load_checkpoint(checkpoint);
    return {std::move(ck.config), std::move(ck.network)};
  }

  std::string describe() const { return random_init ? "random-init" : checkpoint; }
};

struct ProbeArgs {
  ModelSource source;
  std::string data, out, modality = "video", protocol;
  std::uint64_t eval_seed = 0;
  std::size_t batch = 32;
};

ordered_json cmd_probe(const ProbeArgs& a, std::vector<fs::path>& artifacts) {
  const auto mod = a.modality == "video" ? model::Modality::video
                   : a.modality == "audio" ? model::Modality::audio
                                           : throw ConfigError("--modality must be video or audio");
  const auto [train_p, default_test] = eval::probe_protocols(mod);
  const auto test_p = a.protocol.empty() ? default_test : eval::parse_protocol(a.protocol);
  if (eval::modality(test_p) != mod || eval::augmented(test_p)) {
    throw ConfigError("--protocol " + a.protocol + " is not a test protocol for " + a.modality);
  }
  auto [cfg, net] = a.source.load();
  const auto manifest = require_manifest(a.data);
  const fs::path out = out_or_default(a.out, "probe");

  eval::ExtractOptions ex;
  ex.seed = a.eval_seed;
  ex.batch_size = a.batch;
  eval::SvmOptions svm;
  svm.seed = a.eval_seed;
  eval::FeatureMatrix train, test;
  const auto report = eval::linear_probe(*net, cfg, manifest, test_p, ex, svm, eval::default_costs(), &train, &test);

  const fs::path train_f = out / ("features_" + std::string(eval::to_string(train_p)) + ".avfm");
  const fs::path test_f = out / ("features_" + std::string(eval::to_string(test_p)) + ".avfm");
  const fs::path report_f = out / ("probe_" + a.modality + ".json");
  fs::create_directories(out);
  eval::save_features(train_f, train);
  eval::save_features(test_f, test);
  write_text(report_f, eval::to_json(report) + "\n");
  artifacts = {train_f, fs::path(train_f.string() + ".json"), test_f, fs::path(test_f.string() + ".json"), report_f};

  ordered_json s;
  s["source"] = a.source.describe();
  s["report"] = report_f.string();
  s["modality"] = a.modality;
  s["train_protocol"] = std::string(eval::to_string(train_p));
  s["test_protocol"] = std::string(eval::to_string(test_p));
  s["best_accuracy"] = report.best_accuracy;
  s["best_cost"] = report.best_cost;
  s["chance"] = report.num_classes ? 1.0 / static_cast<double>(report.num_classes) : 0.0;
  return s;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long k = 0;
    try {
      k = std::stoll(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty() || k < 1) throw ConfigError("--ks entries must be positive integers: '" + text + "'");
    ks.push_back(static_cast<std::size_t>(k));
  }
  if (ks.empty()) throw ConfigError("--ks is empty");
  return ks;
}

struct RetrieveArgs {
  ModelSource source;
  std::string data, out, modality = "video", ks = "1,5,20";
  std::uint64_t eval_seed = 0;
  std::size_t batch = 32;
  bool neighbors = true;
};

ordered_json cmd_retrieve(const RetrieveArgs& a, std::vector<fs::path>& artifacts) {
  const auto mod = a.modality == "video" ? model::Modality::video
                   : a.modality == "audio" ? model::Modality::audio
                                           : throw ConfigError("--modality must be video or audio");
  const auto ks = parse_ks(a.ks);
  auto [cfg, net] = a.source.load();
  const auto manifest = require_manifest(a.data);
  const fs::path out = out_or_default(a.out, "retrieve");
  const auto proto = eval::probe_protocols(mod).second;

  eval::ExtractOptions ex;
  ex.seed = a.eval_seed;
  ex.batch_size = a.batch;
  ex.split = data::Split::test;
  const auto queries = eval::extract_frozen_features(*net, cfg, manifest, proto, ex);
  ex.split = data::Split::train;
  const auto gallery = eval::extract_frozen_features(*net, cfg, manifest, proto, ex);
  const auto report = eval::retrieval(queries, gallery, ks);

  const fs::path report_f = out / ("retrieval_" + a.modality + ".json");
  write_text(report_f, eval::to_json(report, a.neighbors) + "\n");
  artifacts = {report_f};

  ordered_json s;
  s["source"] = a.source.describe();
  s["report"] = report_f.string();
  s["modality"] = a.modality;
  s["protocol"] = std::string(eval::to_string(proto));
  s["queries"] = report.query_ids.size();
  s["gallery_rows"] = gallery.rows();
  ordered_json r = ordered_json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) r["R@" + std::to_string(ks[i])] = report.recall[i];
  s["recall"] = r;
  return s;
}

// --- ablate -----------------------------------------------------------------------

struct AblateArgs {
  ConfigFlags config;
  std::string grid, data, out;
  bool no_probe = false;
  std::uint64_t eval_seed = 0;
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

struct AblationRow {
  std::string variant, label, loss_mask, sampler, status = "ok", run_dir, error;
  int exit_code = 0;
  std::size_t steps = 0;
  std::optional<double> final_total, collapse_video, collapse_audio, video_top1, audio_top1;
};

ordered_json cmd_ablate(const AblateArgs& a, std::vector<fs::path>& artifacts, int& exit_code) {
  if (a.grid.empty()) throw ConfigError("--grid is required (a grid file or one of: loss, sampler)");
  const auto names = builtin_grid_names();
  const AblationGrid grid = std::find(names.begin(), names.end(), a.grid) != names.end() && !fs::exists(a.grid)
                                ? builtin_grid(a.grid)
                                : grid_from_json(read_text(a.grid, "ablation grid"));
  const data::RunConfig base = apply_overlay(a.config.resolve(), grid.base);
  // Resolve every variant up front so a bad row fails before any training.
  std::vector<data::RunConfig> configs;
  for (const auto& v : grid.variants) {
    try {
      configs.push_back(data::require_valid(apply_overlay(base, v.overrides)));
    } catch (const ConfigError& e) {
      throw ConfigError("variant '" + v.id + "': " + e.what());
    }
  }
  const auto manifest = require_manifest(a.data);
  const fs::path out = out_or_default(a.out, "ablate");
  fs::create_directories(out);
  const fs::path grid_f = out / "grid.json";
  write_text(grid_f, to_json(grid) + "\n");
  artifacts.push_back(grid_f);

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.variants.size(); ++i) {
    const auto& v = grid.variants[i];
    const auto& cfg = configs[i];
    AblationRow row;
    row.variant = v.id;
    row.label = v.label;
    row.loss_mask = cfg.loss_mask.to_string();
    row.sampler = std::string(sampling::to_string(cfg.sampler.strategy));
    const fs::path dir = out / (grid.name + "_" + v.id);
    row.run_dir = dir.string();
    log_info("ablate: variant " + v.id + " (" + v.label + ")");
    try {
      trainer::PretrainOptions opt;
      opt.out_dir = dir;
      const auto r = trainer::pretrain(cfg, manifest, opt);
      artifacts.insert(artifacts.end(), r.artifacts.begin(), r.artifacts.end());
      row.steps = r.steps;
      row.final_total = r.final_total;
      if (cfg.loss_mask.needs_video()) row.collapse_video = r.collapse_video;
      if (cfg.loss_mask.needs_audio()) row.collapse_audio = r.collapse_audio;
      if (!a.no_probe) {
        auto ck = trainer::load_checkpoint(r.checkpoint);
        eval::ExtractOptions ex;
        ex.seed = a.eval_seed;
        eval::SvmOptions svm;
        svm.seed = a.eval_seed;
        for (const auto mod : {model::Modality::video, model::Modality::audio}) {
          const bool trained = mod == model::Modality::video ? cfg.loss_mask.needs_video() : cfg.loss_mask.needs_audio();
          if (!trained) continue;
          const auto rep = eval::linear_probe(*ck.network, ck.config, manifest, eval::probe_protocols(mod).second, ex, svm);
          const fs::path f = dir / ("probe_" + std::string(model::to_string(mod)) + ".json");
          write_text(f, eval::to_json(rep) + "\n");
          artifacts.push_back(f);
          (mod == model::Modality::video ? row.video_top1 : row.audio_top1) = rep.best_accuracy;
        }
      }
    } catch (const std::exception& e) {
      row.status = "failed";
      row.exit_code = exit_code_for(e);
      row.error = e.what();
      log_warning("ablate: variant " + v.id + " failed: " + row.error);
      if (exit_code == kExitOk) exit_code = row.exit_code;
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  csv << kAblationCsvHeader << '\n';
  for (const auto& r : rows) {
    csv << csv_field(grid.name) << ',' << csv_field(r.variant) << ',' << csv_field(r.label) << ','
        << csv_field(r.loss_mask) << ',' << r.sampler << ',' << r.status << ',' << r.exit_code << ',' << r.steps << ','
        << csv_number(r.final_total) << ',' << csv_number(r.collapse_video) << ',' << csv_number(r.collapse_audio)
        << ',' << csv_number(r.video_top1) << ',' << csv_number(r.audio_top1) << ',' << csv_field(r.run_dir) << ','
        << csv_field(r.error) << '\n';
  }
  const fs::path csv_f = out / "ablation.csv";
  write_text(csv_f, csv.str());
  artifacts.push_back(csv_f);

  ordered_json s;
  s["grid"] = grid.name;
  s["csv"] = csv_f.string();
  s["variants"] = rows.size();
  s["failed"] = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.status != "ok"; });
  ordered_json table = ordered_json::array();
  for (const auto& r : rows) {
    table.push_back({{"variant", r.variant},
                     {"label", r.label},
                     {"status", r.status},
                     {"video_top1", optional_number(r.video_top1)},
                     {"audio_top1", optional_number(r.audio_top1)}});
  }
  s["rows"] = table;
  return s;
}

// --- plot ---------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

const char* const kLossSeries[] = {"L_v1v2", "L_a1a2",  "L_a1v1", "L_a2v2",  "L_a1v2",
                                   "L_a2v1", "L_intra", "L_sync", "L_async", "L_total"};
const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#000000"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

struct Panel {
  double x0, y0, w, h;  // pixel box
  double xmin, xmax, ymin, ymax;
  double px(double x) const { return x0 + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * w; }
  double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * h; }
};

void draw_axes(std::ostringstream& svg, const Panel& p, const std::string& title) {
  svg << "<rect x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0) << "\" width=\"" << fmt(p.w) << "\" height=\""
      << fmt(p.h) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  svg << "<text x=\"" << fmt(p.x0) << "\" y=\"" << fmt(p.y0 - 8) << "\" font-size=\"14\">" << title << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = p.ymin + (p.ymax - p.ymin) * i / 4.0;
    svg << "<text x=\"" << fmt(p.x0 - 6) << "\" y=\"" << fmt(p.py(y) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    const double x = p.xmin + (p.xmax - p.xmin) * i / 4.0;
    svg << "<text x=\"" << fmt(p.px(x)) << "\" y=\"" << fmt(p.y0 + p.h + 16)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << std::llround(x) << "</text>\n";
  }
}

void draw_series(std::ostringstream& svg, const Panel& p, const Series& s, const char* color, const char* cls,
                 double legend_x, double legend_y) {
  svg << "<polyline class=\"" << cls << "\" data-series=\"" << s.name << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
  for (const auto& [x, y] : s.points) svg << fmt(p.px(x)) << ',' << fmt(p.py(y)) << ' ';
  svg << "\"/>\n";
  svg << "<line x1=\"" << fmt(legend_x) << "\" y1=\"" << fmt(legend_y) << "\" x2=\"" << fmt(legend_x + 18)
      << "\" y2=\"" << fmt(legend_y) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  svg << "<text x=\"" << fmt(legend_x + 22) << "\" y=\"" << fmt(legend_y + 4) << "\" font-size=\"11\">" << s.name
      << "</text>\n";
}

struct PlotArgs {
  std::string metrics, out;
};

ordered_json cmd_plot(const PlotArgs& a, std::vector<fs::path>& artifacts) {
  if (a.metrics.empty()) throw ConfigError("--metrics is required");
  std::ifstream is(a.metrics);
  if (!is) throw IoError("cannot read metrics " + a.metrics);
  std::vector<Series> loss(std::size(kLossSeries));
  for (std::size_t i = 0; i < loss.size(); ++i) loss[i].name = kLossSeries[i];
  Series cv{"collapse_video", {}}, ca{"collapse_audio", {}};
  double reference = 0.0;
  std::size_t steps = 0, line_no = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError("metrics line " + std::to_string(line_no) + " is not valid JSON");
    }
    const std::string kind = j.value("kind", "");
    if (!j.contains("step") || !j["step"].is_number()) {
      throw ConfigError("metrics line " + std::to_string(line_no) + " has no step");
    }
    const double step = j["step"].get<double>();
    if (kind == "step") {
      ++steps;
      for (auto& s : loss) {
        if (j.contains(s.name) && j[s.name].is_number()) s.points.emplace_back(step, j[s.name].get<double>());
      }
    } else if (kind == "epoch") {
      if (j.contains("collapse_video") && j["collapse_video"].is_number())
        cv.points.emplace_back(step, j["collapse_video"].get<double>());
      if (j.contains("collapse_audio") && j["collapse_audio"].is_number())
        ca.points.emplace_back(step, j["collapse_audio"].get<double>());
      reference = j.value("collapse_reference", reference);
    } else {
      throw ConfigError("metrics line " + std::to_string(line_no) + " has unknown kind '" + kind + "'");
    }
  }
  if (steps == 0) throw ConfigError("metrics log " + a.metrics + " has no step records");

  double xmax = 1.0, lmin = -1.0, lmax = -1.0, cmax = reference;
  for (const auto& s : loss) {
    for (const auto& [x, y] : s.points) {
      xmax = std::max(xmax, x);
      lmin = std::min(lmin, y);
      lmax = std::max(lmax, y);
    }
  }
  for (const auto* s : {&cv, &ca}) {
    for (const auto& [x, y] : s->points) cmax = std::max(cmax, y);
  }
  if (lmax - lmin < 0.1) lmax = lmin + 0.1;
  const double pad = 0.05 * (lmax - lmin);
  const Panel top{70, 40, 700, 330, 1.0, xmax, lmin - pad, lmax + pad};
  const Panel bottom{70, 440, 700, 160, 1.0, xmax, 0.0, cmax > 0.0 ? 1.1 * cmax : 1.0};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"640\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"960\" height=\"640\" fill=\"white\"/>\n";
  draw_axes(svg, top, "loss terms vs step");
  svg << "<line class=\"reference\" x1=\"" << fmt(top.x0) << "\" y1=\"" << fmt(top.py(-1.0)) << "\" x2=\""
      << fmt(top.x0 + top.w) << "\" y2=\"" << fmt(top.py(-1.0))
      << "\" stroke=\"#888\" stroke-dasharray=\"6,4\"/>\n";
  std::size_t drawn = 0;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    draw_series(svg, top, loss[i], kPalette[i], "series", 790, 50 + 18.0 * static_cast<double>(i));
    drawn += loss[i].points.empty() ? 0 : 1;
  }
  draw_axes(svg, bottom, "collapse monitor vs step");
  if (reference > 0.0) {
    svg << "<line class=\"reference\" x1=\"" << fmt(bottom.x0) << "\" y1=\"" << fmt(bottom.py(reference))
        << "\" x2=\"" << fmt(bottom.x0 + bottom.w) << "\" y2=\"" << fmt(bottom.py(reference))
        << "\" stroke=\"#888\" stroke-dasharray=\"6,4\"/>\n";
  }
  draw_series(svg, bottom, cv, "#1f77b4", "monitor", 790, 460);
  draw_series(svg, bottom, ca, "#ff7f0e", "monitor", 790, 478);
  svg << "</svg>\n";

  const fs::path out = a.out.empty() ? output_root() / "plot" / "losses.svg" : fs::path(a.out);
  write_text(out, svg.str());
  artifacts = {out};
  ordered_json s;
  s["image"] = out.string();
  s["step_records"] = steps;
  s["series"] = loss.size();
  s["series_with_data"] = drawn;
  return s;
}

// --- describe -----------------------------------------------------------------------

ordered_json cmd_describe(const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return ordered_json::parse(trainer::describe_checkpoint(checkpoint));
}

}  // namespace

// --- entry ------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual self-supervised pretraining and evaluation on clip datasets.", "avssl"};
  app.require_subcommand(1);
  app.footer("Output root for commands run without --out: $AVSSL_OUTPUT_ROOT (default ./avssl_out).\n"
             "Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 numeric failure.");

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Render a synthetic labeled audio-visual dataset");
  g->add_option("--spec", gen.spec_file, "Synth spec JSON (defaults: K=8, 100 clips per category)");
  g->add_option("--out", gen.out, "Output directory");
  g->add_option("--categories", gen.categories, "Override num_categories");
  g->add_option("--clips-per-category", gen.clips_per_category, "Override clips_per_category");
  g->add_option("--seed", gen.seed, "Override the generator seed");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Pretrain the audio and video encoders");
  pre.config.add(p, true);
  p->add_option("--data", pre.data, "Dataset manifest (JSON lines)");
  p->add_option("--out", pre.out, "Run directory");
  p->add_flag("--deterministic", pre.deterministic, "Single-worker loading in a fixed order (bit-reproducible)");
  p->add_option("--resume", pre.resume, "Continue from this checkpoint");
  p->add_option("--stop-after-steps", pre.stop_after_steps, "Checkpoint and stop after this many steps");
  p->add_flag("--quiet", pre.quiet, "No progress lines on stderr");

  AblateArgs abl;
  auto* ab = app.add_subcommand("ablate", "Pretrain and probe every variant of a grid; writes ablation.csv");
  ab->add_option("--grid", abl.grid, "Grid JSON file, or a built-in grid: loss, sampler");
  abl.config.add(ab, true);
  ab->add_option("--data", abl.data, "Dataset manifest (JSON lines)");
  ab->add_option("--out", abl.out, "Output directory (one run directory per variant)");
  ab->add_flag("--no-probe", abl.no_probe, "Skip the linear probes");
  ab->add_option("--eval-seed", abl.eval_seed, "Seed for probe feature extraction and the SVM");

  ProbeArgs pr;
  auto* pb = app.add_subcommand("probe", "Linear SVM probe on frozen features");
  pr.source.add(pb);
  pb->add_option("--data", pr.data, "Dataset manifest (JSON lines)");
  pb->add_option("--modality", pr.modality, "video or audio")->capture_default_str();
  pb->add_option("--protocol", pr.protocol, "Test protocol: video_test, audio_test_2s or audio_test_5s");
  pb->add_option("--out", pr.out, "Output directory for the report and feature dumps");
  pb->add_option("--eval-seed", pr.eval_seed, "Seed for window draws, augmentation and the SVM");
  pb->add_option("--extract-batch", pr.batch, "Clips per forward pass")->capture_default_str();

  RetrieveArgs rt;
  auto* rv = app.add_subcommand("retrieve", "Nearest-neighbor retrieval: test samples query train clips");
  rt.source.add(rv);
  rv->add_option("--data", rt.data, "Dataset manifest (JSON lines)");
  rv->add_option("--ks", rt.ks, "Comma-separated k values")->capture_default_str();
  rv->add_option("--modality", rt.modality, "video or audio")->capture_default_str();
  rv->add_option("--out", rt.out, "Output directory");
  rv->add_option("--eval-seed", rt.eval_seed, "Seed for feature extraction");
  rv->add_option("--extract-batch", rt.batch, "Clips per forward pass")->capture_default_str();

  PlotArgs pl;
  auto* pt = app.add_subcommand("plot", "SVG of the loss terms and collapse monitor from a metrics log");
  pt->add_option("--metrics", pl.metrics, "metrics.jsonl written by pretrain");
  pt->add_option("--out", pl.out, "Output SVG path");

  std::string describe_path;
  auto* ds = app.add_subcommand("describe", "Print checkpoint metadata");
  ds->add_option("--checkpoint", describe_path, "Checkpoint file");

  // CLI11 consumes a reversed argument list without the program name.
  std::vector<std::string> rev;
  for (std::size_t i = args.size(); i > 1; --i) rev.push_back(args[i - 1]);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  std::string command;
  for (auto* sub : app.get_subcommands()) command = sub->get_name();
  std::vector<fs::path> artifacts;
  ordered_json summary;
  int code = kExitOk;
  try {
    ordered_json body;
    if (command == "gen-data") body = cmd_gen_data(gen, artifacts);
    else if (command == "pretrain") body = cmd_pretrain(pre, artifacts);
    else if (command == "ablate") body = cmd_ablate(abl, artifacts, code);
    else if (command == "probe") body = cmd_probe(pr, artifacts);
    else if (command == "retrieve") body = cmd_retrieve(rt, artifacts);
    else if (command == "plot") body = cmd_plot(pl, artifacts);
    else if (command == "describe") body = cmd_describe(describe_path);
    summary["command"] = command;
    summary["exit_code"] = code;
    summary.update(body);
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    summary = ordered_json::object();
    summary["command"] = command;
    summary["exit_code"] = code;
    summary["error"] = e.what();
  }
  summary["artifacts"] = paths_json(artifacts);
  out << summary.dump(2) << "\n";
  return code;
}

}  // namespace avssl::cli
