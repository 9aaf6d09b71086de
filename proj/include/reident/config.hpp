#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reident/data.hpp"
#include "reident/ensemble.hpp"
#include "reident/features.hpp"
#include "reident/training.hpp"

namespace reident {

struct SubModelConfig {
  std::string name;
  FeatureSettings features;
  std::vector<int> hidden;  // dense layers before the head
  int output_dim = 50;
  int conv_layers = 6;      // raw_image only
  TrainConfig train;
};

struct DatasetSource {
  std::optional<std::filesystem::path> manifest;
  std::optional<SyntheticParams> synthetic;
};

struct FoldConfig {
  int k_folds = 5;
  int holdout_fold = 4;
};

struct AnalysisConfig {
  bool pairwise = false;
  bool leave_one_out = false;
  std::size_t correlation_trials = 0;  // 0 disables
  int max_rank = 10;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<SubModelConfig> sub_models;
  std::vector<EnsembleKind> ensembles;
  TrainConfig nn_triplet_train;
  int nn_triplet_hidden = 100;
  int nn_triplet_output_dim = 50;
  TrainConfig weighted_triplet_train;
  int weighted_accuracy_budget = 200;
  FoldConfig folds;
  AnalysisConfig analyses;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  bool save_models = true;
  bool dump_embeddings = true;
};

/// Sub-model defaults for a feature method (resize target, layers, epochs).
SubModelConfig default_sub_model(const std::string& name, FeatureMethod method);

/// Parses and validates a JSON config. Unknown keys, missing required keys
/// and invalid values throw ConfigError. Relative paths resolve against
/// `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config with every default filled in; parse_config of the
/// result reproduces the same config.
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const SyntheticParams& params);
nlohmann::json to_json(const TrainConfig& cfg);

}  // namespace reident
