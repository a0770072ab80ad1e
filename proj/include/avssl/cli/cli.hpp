// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace avssl::cli {

/// Exit codes: 0 ok, 2 usage or config, 3 I/O, 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;
/// Anything outside the library's exception hierarchy.
inline constexpr int kExitInternal = 1;

int exit_code_for(const std::exception& e);

/// Default output root: $AVSSL_OUTPUT_ROOT, else ./avssl_out. A command run
/// without --out writes to <root>/<command>.
std::filesystem::path output_root();

/// Runs one command line (args[0] is the program name). The summary JSON
/// goes to out, diagnostics and help errors to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// --- ablation grids -----------------------------------------------------------

/// One row: config overrides (a JSON object, nested or dotted keys) applied
/// on top of the grid base.
struct AblationVariant {
  std::string id;
  std::string label;
  std::string overrides = "{}";
  bool operator==(const AblationVariant&) const = default;
};

struct AblationGrid {
  std::string name;
  std::string base = "{}";
  std::vector<AblationVariant> variants;
  bool operator==(const AblationGrid&) const = default;
};

/// "loss": rows (a)-(i) over the loss mask; "sampler": the five sampling
/// strategies with the full mask. Throws ConfigError for other names.
AblationGrid builtin_grid(const std::string& name);
std::vector<std::string> builtin_grid_names();

/// {"name": ..., "base": {...}, "variants": [{"id", "label", "set": {...}}]}.
/// Throws ConfigError on malformed input or an empty variant list.
AblationGrid grid_from_json(const std::string& text);
std::string to_json(const AblationGrid& grid);

/// Frozen column order of the consolidated ablation CSV.
inline constexpr const char* kAblationCsvHeader =
    "grid,variant,label,loss_mask,sampler,status,exit_code,steps,final_L_total,collapse_video,collapse_audio,"
    "video_top1,audio_top1,run_dir,error";

}  // namespace avssl::cli
