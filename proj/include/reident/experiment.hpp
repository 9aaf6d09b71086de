#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reident/config.hpp"
#include "reident/data.hpp"
#include "reident/ensemble.hpp"
#include "reident/features.hpp"
#include "reident/matrix.hpp"
#include "reident/network.hpp"

namespace reident {

/// Feature rows for every sample of the dataset under one sub-model.
Matrix extract_all(const std::vector<Sample>& samples, const FeatureSettings& settings);

/// Network layout for a sub-model given the width of its feature rows.
NetworkSpec sub_model_network(const SubModelConfig& config, std::size_t feature_dims);

/// Per-dimension standardization of network inputs, fitted on training rows.
/// Image tensors use a single global mean and std so spatial structure is
/// kept.
struct InputScaler {
  Vector mean;
  Vector stddev;

  static InputScaler fit(const Matrix& rows, bool per_dimension);
  Matrix apply(const Matrix& rows) const;
};

/// One trained sub-model: feature settings, input scaling and network.
struct TrainedSubModel {
  std::string name;
  InputScaler scaler;
  EmbeddingModel model;
  double train_seconds = 0.0;

  Matrix embed(const Matrix& features) const { return embed_all(model, scaler.apply(features)); }
};

TrainedSubModel train_sub_model(const SubModelConfig& config, const Matrix& features,
                                const std::vector<std::size_t>& train_rows, const std::vector<std::string>& subjects,
                                std::uint64_t seed);

/// Results of one fold rotation.
struct FoldResult {
  int eval_fold = 0;
  std::size_t n_train = 0;
  std::size_t n_query = 0;
  std::size_t n_gallery = 0;
  std::map<std::string, std::vector<double>> cmc;  // method -> Rank-1..Rank-k
  std::map<std::string, double> seconds;           // phase -> wall-clock
  std::map<std::string, std::vector<double>> weights;
  std::map<std::string, double> weighted_accuracy_objective;
  std::map<std::string, double> final_train_loss;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::pair<std::string, std::string>, double> pair_rank1;
  std::map<std::string, double> without_rank1;  // leave-one-out
  std::optional<double> all_rank1;              // concatenation of all sub-models
  std::optional<Matrix> correlation;
};

struct MethodSummary {
  std::string name;
  std::string family;  // sub_model | ensemble
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> min;
  std::vector<double> max;
  std::optional<double> relative_uncertainty;  // at the largest k
};

/// Everything a run produces, independent of how it is written out.
struct EvaluationReport {
  nlohmann::json config;
  std::string dataset_hash;
  std::size_t n_samples = 0;
  std::size_t n_subjects = 0;
  std::vector<std::string> sub_models;
  std::vector<std::string> methods;
  std::vector<FoldResult> folds;
  std::vector<MethodSummary> summary;
  double feature_seconds = 0.0;
  std::optional<ImprovementMatrix> improvement;
  std::map<std::string, std::pair<double, double>> leave_one_out;  // mean, std of deltas
  std::optional<Matrix> correlation;

  const MethodSummary& method(const std::string& name) const;
};

struct RunOptions {
  int threads = 1;
  /// When set, per-fold models, transforms and embedding dumps are written here.
  std::optional<std::filesystem::path> artifact_dir;
};

/// Git blob hash (SHA-1 of "blob <size>\0" + content).
std::string git_blob_hash(const std::string& content);

/// Hash of the manifest bytes or of the canonical synthetic parameter JSON.
std::string dataset_hash(const DatasetSource& source);

std::vector<Sample> load_samples(const DatasetSource& source);

/// Rotates the eval fold over every fold except the holdout; each rotation
/// trains every sub-model on the training folds, fits the configured
/// ensembles on training embeddings and scores query against gallery.
EvaluationReport cross_validate(const std::vector<Sample>& samples, const ExperimentConfig& config,
                                const RunOptions& options = {});

/// Rank-1 mean and fold std of one sub-model retrained at each output size.
struct SizePoint {
  int size = 0;
  double mean = 0.0;
  double std = 0.0;
};

std::vector<SizePoint> representation_size_sweep(const std::vector<int>& sizes, const SubModelConfig& sub_model,
                                                 const std::vector<Sample>& samples, const ExperimentConfig& config,
                                                 const RunOptions& options = {});

}  // namespace reident
