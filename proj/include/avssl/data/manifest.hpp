// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avssl/data/media.hpp"

namespace avssl::data {

enum class Split { train, test };
std::string_view to_string(Split s);

struct ManifestEntry {
  std::string clip_id;
  std::string audio_path;  // relative paths resolve against the manifest's directory
  std::string video_path;
  double duration_s = 0.0;
  std::optional<int> label;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;
  /// Category names from the sidecar file, indexed by label; may be empty.
  std::vector<std::string> label_names;

  std::vector<const ManifestEntry*> split(Split s) const;
  std::filesystem::path resolve(const std::string& p) const;
  /// Number of distinct labels (max label + 1); 0 when unlabeled.
  std::size_t num_labels() const;
};

/// Name of the label sidecar next to a manifest: one category name per line.
inline constexpr const char* kLabelNamesFile = "label_names.txt";

/// Parses a JSON-lines manifest. Throws IoError on a missing file, a
/// malformed line (with its 1-based number), a duplicate clip_id (naming both
/// lines) or a media path that does not exist. An empty file yields an empty
/// manifest and a warning.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// One JSON object per entry, fixed key order, "\n" terminated.
std::string manifest_to_string(const DatasetManifest& m);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Loads both media files of an entry fully into memory.
AVClip load_clip(const DatasetManifest& m, const ManifestEntry& e);

}  // namespace avssl::data
