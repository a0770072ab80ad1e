// SPDX-License-Identifier: Apache-2.0
#include "avssl/data/manifest.hpp"

#include <fstream>
#include <map>
#include "json.hpp"
#include <sstream>

#include "avssl/core/error.hpp"
#include "avssl/core/log.hpp"

namespace avssl::data {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  fs::path q(p);
  return q.is_absolute() ? q : base_dir / q;
}

std::size_t DatasetManifest::num_labels() const {
  int mx = -1;
  for (const auto& e : entries)
    if (e.label) mx = std::max(mx, *e.label);
  return static_cast<std::size_t>(mx + 1);
}

namespace {

ManifestEntry parse_entry(const std::string& line, std::size_t lineno, const fs::path& path) {
  const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw IoError(where + "expected a JSON object");
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw IoError(where + "missing string field '" + key + "'");
    return j[key].get<std::string>();
  };
  ManifestEntry e;
  e.clip_id = str("clip_id");
  e.audio_path = str("audio_path");
  e.video_path = str("video_path");
  if (!j.contains("duration_s") || !j["duration_s"].is_number()) {
    throw IoError(where + "missing numeric field 'duration_s'");
  }
  e.duration_s = j["duration_s"].get<double>();
  if (!(e.duration_s > 0.0)) throw IoError(where + "duration_s must be positive");
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) throw IoError(where + "label must be an integer");
    e.label = j["label"].get<int>();
    if (*e.label < 0) throw IoError(where + "label must be non-negative");
  }
  const auto split = str("split");
  if (split == "train") {
    e.split = Split::train;
  } else if (split == "test") {
    e.split = Split::test;
  } else {
    throw IoError(where + "split must be 'train' or 'test', got '" + split + "'");
  }
  return e;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest not found: " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto e = parse_entry(line, lineno, path);
    auto [it, inserted] = seen.emplace(e.clip_id, lineno);
    if (!inserted) {
      throw IoError(path.string() + ": duplicate clip_id '" + e.clip_id + "' on lines " +
                    std::to_string(it->second) + " and " + std::to_string(lineno));
    }
    for (const auto* p : {&e.audio_path, &e.video_path}) {
      if (!fs::exists(m.resolve(*p))) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": media file not found: " + *p);
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) log_warning("manifest " + path.string() + " has no entries");

  std::ifstream names(m.base_dir / kLabelNamesFile);
  while (names && std::getline(names, line)) m.label_names.push_back(line);
  return m;
}

std::string manifest_to_string(const DatasetManifest& m) {
  std::ostringstream os;
  for (const auto& e : m.entries) {
    ordered_json j;
    j["clip_id"] = e.clip_id;
    j["audio_path"] = e.audio_path;
    j["video_path"] = e.video_path;
    j["duration_s"] = e.duration_s;
    if (e.label) j["label"] = *e.label;
    j["split"] = to_string(e.split);
    os << j.dump() << '\n';
  }
  return os.str();
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << manifest_to_string(m);
  if (!m.label_names.empty()) {
    std::ofstream ns(path.parent_path() / kLabelNamesFile, std::ios::binary | std::ios::trunc);
    for (const auto& n : m.label_names) ns << n << '\n';
    if (!ns) throw IoError("cannot write label names next to " + path.string());
  }
  if (!os) throw IoError("failed writing " + path.string());
}

AVClip load_clip(const DatasetManifest& m, const ManifestEntry& e) {
  return AVClip::make(read_wav(m.resolve(e.audio_path)), read_avcx(m.resolve(e.video_path)), e.label);
}

}  // namespace avssl::data
