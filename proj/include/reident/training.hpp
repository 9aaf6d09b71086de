#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reident/matrix.hpp"
#include "reident/network.hpp"
#include "reident/random.hpp"

namespace reident {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  double margin = 1.0;
  double learning_rate = 0.001;
  int batch_size = 256;
  int epochs = 100;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

/// Feature rows with the subject of each row.
struct LabeledMatrix {
  Matrix values;
  std::vector<std::string> subjects;
};

/// Row indices into a LabeledMatrix. anchors[i] and positives[i] share a
/// subject, negatives[i] belongs to another.
struct TripletBatch {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::vector<std::string> anchor_subjects;
  std::vector<std::string> negative_subjects;

  std::size_t size() const { return anchors.size(); }
};

/// Draws triplets over a fixed label list. Anchors come only from subjects
/// with at least two rows.
class TripletSampler {
 public:
  explicit TripletSampler(const std::vector<std::string>& subjects);

  TripletBatch sample(std::size_t batch_size, Rng& rng) const;

  const std::vector<std::size_t>& anchor_subjects() const { return eligible_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> rows_of_subject_;
  std::vector<std::size_t> eligible_;
};

TripletBatch sample_triplets(const std::vector<std::string>& subjects, std::size_t batch_size, Rng& rng);

/// max(0, |a - b| - |a - c| + margin)
double triplet_loss(const Vector& anchor, const Vector& positive, const Vector& negative, double margin);

/// Mean loss and gradient over a batch. All rows are embedded once with the
/// shared parameters; the gradient flows back through every occurrence.
struct TripletEvaluation {
  double loss = 0.0;
  std::vector<double> gradient;       // empty unless requested
  std::vector<double> hinge_margins;  // |a-b| - |a-c| + margin per triplet
  std::vector<double> min_distances;  // min(|a-b|, |a-c|) per triplet
};

TripletEvaluation evaluate_triplets(const EmbeddingModel& model, const Matrix& inputs,
                                    const TripletBatch& batch, double margin, bool with_gradient);

/// First-order optimizer state for a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t n_params);
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  TrainConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

/// Triplet-loss training from init_network(spec, cfg.seed). Each epoch runs
/// ceil(rows / batch_size) optimizer steps over freshly sampled triplets.
/// Throws TrainingError naming the epoch and batch on a non-finite loss or
/// weight.
EmbeddingModel train_siamese(const LabeledMatrix& features, const NetworkSpec& spec, const TrainConfig& cfg);

/// Continues training an existing model.
void train_model(EmbeddingModel& model, const LabeledMatrix& features, const TrainConfig& cfg);

}  // namespace reident
