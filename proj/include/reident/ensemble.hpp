#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reident/matrix.hpp"
#include "reident/metrics.hpp"
#include "reident/network.hpp"
#include "reident/training.hpp"

namespace reident {

enum class EnsembleKind { concatenation, nn_triplet, weighted_triplet, weighted_accuracy, majority_vote };

std::string to_string(EnsembleKind kind);
EnsembleKind ensemble_kind_from_string(const std::string& name);
const std::vector<EnsembleKind>& all_ensemble_kinds();

/// Per sub-model, per dimension training mean and population std.
struct ZScoreStats {
  std::vector<Vector> mean;
  std::vector<Vector> stddev;  // floored at epsilon
  double epsilon = 1e-8;

  std::size_t models() const { return mean.size(); }
  std::size_t total_dims() const;
};

/// Throws ValidationError for fewer than 2 rows or row counts differing
/// between sub-models.
ZScoreStats fit_zscore(const std::vector<Matrix>& train_embeddings, double epsilon = 1e-8);

/// z-scores each sub-model's rows with the fitted stats.
std::vector<Matrix> apply_zscore(const ZScoreStats& stats, const std::vector<Matrix>& embeddings);

Vector apply_concatenation(const ZScoreStats& stats, const std::vector<Vector>& per_model);
Matrix apply_concatenation(const ZScoreStats& stats, const std::vector<Matrix>& per_model);

/// Horizontal concatenation of already z-scored blocks scaled by weights.
Matrix weighted_concatenation(const std::vector<Matrix>& z_blocks, const std::vector<double>& alpha);

struct WeightVector {
  std::vector<double> alpha;

  void validate(std::size_t models) const;
};

struct WeightedTripletFit {
  WeightVector weights;
  std::vector<double> loss_log;
};

/// Gradient descent on the mean triplet loss of the weighted concatenation.
/// Weights start at one and are clamped at zero after every step.
WeightedTripletFit fit_weighted_triplet(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects,
                                        const TrainConfig& cfg);

struct WeightedAccuracyFit {
  WeightVector weights;
  double objective = 0.0;           // training-split Rank-1 of `weights`
  double baseline_objective = 0.0;  // same for all-ones
  int evaluations = 0;
};

/// Derivative-free search maximizing Rank-1 on a query/gallery split carved
/// from the training rows. The all-ones point is evaluated first; then
/// log-uniform random points in [1e-2, 1e1]^m fill 60% of the budget and
/// multiplicative coordinate moves around the incumbent use the rest. Only
/// strict improvements replace the incumbent.
WeightedAccuracyFit fit_weighted_accuracy(const std::vector<Matrix>& z_train,
                                          const std::vector<std::string>& subjects, int budget,
                                          std::uint64_t seed);

/// Rank-1 of a weighted concatenation on a precomputed split, used as the
/// weighted-accuracy objective.
class WeightedRankObjective {
 public:
  WeightedRankObjective(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects,
                        std::uint64_t seed);
  double operator()(const std::vector<double>& alpha) const;
  std::size_t queries() const { return query_subjects_.size(); }

 private:
  std::vector<Matrix> squared_;  // per model, queries x gallery squared distances
  std::vector<std::string> query_subjects_;
  std::vector<std::string> gallery_subjects_;
};

/// Stacked network over the z-scored concatenation: dense(hidden), relu,
/// dense(output_dim), trained with the siamese triplet loop.
EmbeddingModel fit_nn_triplet(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects,
                              const TrainConfig& cfg, int hidden = 100, int output_dim = 50);

/// Rows are per-model distances from one query to every gallery item.
/// Each model's distances become ordinal ranks (1 = closest, ties by gallery
/// index); items are ordered by the lower median of their ranks, then by
/// mean rank, then by gallery index.
std::vector<std::size_t> majority_vote_ranking(const std::vector<std::vector<double>>& per_model_distances);

/// A fitted fusion rule over per-sub-model embeddings.
class EnsembleTransform {
 public:
  static EnsembleTransform concatenation(ZScoreStats stats);
  static EnsembleTransform weighted(EnsembleKind kind, ZScoreStats stats, WeightVector weights);
  static EnsembleTransform nn_triplet(ZScoreStats stats, EmbeddingModel model);
  static EnsembleTransform majority_vote(std::size_t models);

  EnsembleKind kind() const { return kind_; }
  const ZScoreStats& stats() const { return stats_; }
  const std::optional<WeightVector>& weights() const { return weights_; }
  const std::optional<EmbeddingModel>& model() const { return model_; }

  /// Fused embedding rows; not available for majority_vote.
  Matrix embed(const std::vector<Matrix>& per_model) const;

  RankedRetrieval rank(const std::vector<Matrix>& per_model_queries,
                       const std::vector<Matrix>& per_model_gallery) const;

  void save(const std::filesystem::path& path) const;
  static EnsembleTransform load(const std::filesystem::path& path);

 private:
  EnsembleKind kind_ = EnsembleKind::concatenation;
  std::size_t models_ = 0;
  ZScoreStats stats_;
  std::optional<WeightVector> weights_;
  std::optional<EmbeddingModel> model_;
};

}  // namespace reident
