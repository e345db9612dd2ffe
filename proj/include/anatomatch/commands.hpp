#pragma once

// Experiment drivers behind the CLI. Each takes a parsed, validated config and
// returns a JSON report; file outputs go to the given directory. Configs are
// validated in full before anything is written.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "anatomatch/json_io.hpp"

namespace anatomatch::commands {

namespace fs = std::filesystem;

// intensity.aev, labels.alv, structures.json
json phantom_gen(const PhantomConfig& cfg, const fs::path& out_dir);

struct PairOptions {
  PhantomConfig phantom;
  std::optional<AugmentParams> params;  // sampled from ranges when unset
  AugmentRanges ranges;
  int n_points = 20;
  uint64_t seed = 0;
};

// a.aev, a.alv, b.aev, b.alv, truth.json (correspondences + transform)
json phantom_pair(const PairOptions& opt, const fs::path& out_dir);

struct CorruptOptions {
  fs::path intensity, labels;
  Corruption corruption;
  uint64_t seed = 0;
};

// intensity.aev, labels.alv (+ deform.json for local-deform)
json phantom_corrupt(const CorruptOptions& opt, const fs::path& out_dir);

json match_files(const fs::path& templ, const fs::path& query, const VoxelPoint& point,
                 const MatcherConfig& cfg);

struct EvalReport {
  json summary;
  std::string table;
};

EvalReport eval(const json& predictions, const json& truth);

struct AblationConfig {
  uint64_t seed = 0;
  int n_pairs = 25;
  int points_per_pair = 4;
  int points_on_corrupted = 2;  // of points_per_pair, drawn from the corrupted structure
  PhantomConfig phantom{Dims{32, 32, 32}, Spacing{2, 2, 2}, 6, 8, 5.0, 9.0, 0.0, 0};
  AugmentRanges augment{10.0, 0.9, 1.1, 6.0, 0.02, 0.5};
  bool corruption = true;
  double corruption_radius_scale = 1.25;  // x structure radius
  double shift_gain = 1.5;
  double deform_amplitude_mm = 3.0;
  double unified_weight = kDefaultUnifiedWeight;
  MatcherConfig matcher;
  std::optional<TrainConfig> train;  // used when heads are not given
  std::optional<fs::path> appearance_head, semantic_head;

  void validate() const;
};

AblationConfig ablation_config_from_json(const json& j);
json to_json(const AblationConfig& c);

struct AblationReport {
  json report;
  std::string table;
};

AblationReport ablation(const AblationConfig& cfg);

struct LossCheckOptions {
  uint64_t seed = 0;
  int batches = 100;
  bool inject_wrong_gradient = false;
};

// "all_passed" is false when any check fails.
json loss_check(const LossCheckOptions& opt);

// appearance.aph, semantic.aph, loss_history.csv. Throws Numerical on divergence
// after writing the partial history.
json train_toy(const TrainConfig& cfg, const fs::path& out_dir);

// Loads a JSON document; Io on open failure, Format on parse failure.
json read_json_file(const fs::path& path);

}  // namespace anatomatch::commands
