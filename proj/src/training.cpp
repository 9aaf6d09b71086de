#include "reident/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "reident/error.hpp"
#include "reident/log.hpp"

namespace reident {

void TrainConfig::validate() const {
  if (!(margin >= 0)) throw ValidationError("margin must be >= 0");
  if (!(learning_rate >= 0)) throw ValidationError("learning_rate must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ValidationError("Adam epsilon must be > 0");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer `" + name + "`");
}

TripletSampler::TripletSampler(const std::vector<std::string>& subjects) {
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < subjects.size(); ++r) {
    auto [it, inserted] = index.emplace(subjects[r], names_.size());
    if (inserted) {
      names_.push_back(subjects[r]);
      rows_of_subject_.emplace_back();
    }
    rows_of_subject_[it->second].push_back(r);
  }
  if (names_.size() < 2) throw ValidationError("triplet sampling needs at least 2 subjects");
  for (std::size_t s = 0; s < names_.size(); ++s) {
    if (rows_of_subject_[s].size() >= 2) eligible_.push_back(s);
  }
  if (eligible_.empty()) throw ValidationError("triplet sampling needs a subject with at least 2 views");
}

TripletBatch TripletSampler::sample(std::size_t batch_size, Rng& rng) const {
  TripletBatch b;
  b.anchors.reserve(batch_size);
  b.positives.reserve(batch_size);
  b.negatives.reserve(batch_size);
  for (std::size_t t = 0; t < batch_size; ++t) {
    const std::size_t a = eligible_[rng.uniform_index(eligible_.size())];
    const auto& rows = rows_of_subject_[a];
    const std::size_t i = rng.uniform_index(rows.size());
    std::size_t j = rng.uniform_index(rows.size() - 1);
    if (j >= i) ++j;
    std::size_t n = rng.uniform_index(names_.size() - 1);
    if (n >= a) ++n;
    const auto& neg_rows = rows_of_subject_[n];
    b.anchors.push_back(rows[i]);
    b.positives.push_back(rows[j]);
    b.negatives.push_back(neg_rows[rng.uniform_index(neg_rows.size())]);
    b.anchor_subjects.push_back(names_[a]);
    b.negative_subjects.push_back(names_[n]);
  }
  return b;
}

TripletBatch sample_triplets(const std::vector<std::string>& subjects, std::size_t batch_size, Rng& rng) {
  return TripletSampler(subjects).sample(batch_size, rng);
}

double triplet_loss(const Vector& anchor, const Vector& positive, const Vector& negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw ValidationError("triplet embeddings differ in length");
  }
  return std::max(0.0, (anchor - positive).norm() - (anchor - negative).norm() + margin);
}

namespace {

// Cached activations per chunk stay below ~64 MB.
constexpr std::size_t kActivationBudget = 8'000'000;

Matrix gather_rows(const Matrix& inputs, const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), inputs.cols());
  for (std::size_t r = begin; r < end; ++r) out.row(static_cast<Eigen::Index>(r - begin)) = inputs.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

}  // namespace

TripletEvaluation evaluate_triplets(const EmbeddingModel& model, const Matrix& inputs,
                                    const TripletBatch& batch, double margin, bool with_gradient) {
  TripletEvaluation result;
  const std::size_t n_triplets = batch.size();
  if (with_gradient) result.gradient.assign(model.params.size(), 0.0);
  if (n_triplets == 0) return result;

  // Embed each distinct row once.
  std::vector<std::size_t> unique;
  unique.reserve(3 * n_triplets);
  for (std::size_t t = 0; t < n_triplets; ++t) {
    unique.push_back(batch.anchors[t]);
    unique.push_back(batch.positives[t]);
    unique.push_back(batch.negatives[t]);
  }
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  for (std::size_t r : unique) {
    if (r >= static_cast<std::size_t>(inputs.rows())) throw ValidationError("triplet index out of range");
  }
  auto slot = [&](std::size_t row) {
    return static_cast<Eigen::Index>(std::lower_bound(unique.begin(), unique.end(), row) - unique.begin());
  };

  const std::size_t per_row = std::max<std::size_t>(1, model.spec.activation_size());
  const std::size_t chunk = std::max<std::size_t>(1, kActivationBudget / per_row);
  const bool single_pass = unique.size() <= chunk;

  Matrix embeddings;
  ForwardCache cache;
  if (single_pass && with_gradient) {
    cache = forward_cached(model, gather_rows(inputs, unique, 0, unique.size()));
    embeddings = cache.output;
  } else {
    embeddings.resize(static_cast<Eigen::Index>(unique.size()), model.spec.output_dim());
    for (std::size_t s = 0; s < unique.size(); s += chunk) {
      const std::size_t e = std::min(unique.size(), s + chunk);
      embeddings.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)) =
          forward_batch(model, gather_rows(inputs, unique, s, e));
    }
  }

  Matrix grad_emb;
  if (with_gradient) grad_emb = Matrix::Zero(embeddings.rows(), embeddings.cols());
  result.hinge_margins.reserve(n_triplets);
  result.min_distances.reserve(n_triplets);
  const double scale = 1.0 / static_cast<double>(n_triplets);
  double total = 0.0;
  for (std::size_t t = 0; t < n_triplets; ++t) {
    const Eigen::Index a = slot(batch.anchors[t]);
    const Eigen::Index p = slot(batch.positives[t]);
    const Eigen::Index n = slot(batch.negatives[t]);
    const Eigen::RowVectorXd d_ap = embeddings.row(a) - embeddings.row(p);
    const Eigen::RowVectorXd d_an = embeddings.row(a) - embeddings.row(n);
    const double dist_ap = d_ap.norm();
    const double dist_an = d_an.norm();
    const double hinge = dist_ap - dist_an + margin;
    result.hinge_margins.push_back(hinge);
    result.min_distances.push_back(std::min(dist_ap, dist_an));
    if (hinge <= 0.0) continue;
    total += hinge;
    if (!with_gradient) continue;
    // Subgradient zero where a distance vanishes.
    if (dist_ap > 0.0) {
      const Eigen::RowVectorXd u = d_ap * (scale / dist_ap);
      grad_emb.row(a) += u;
      grad_emb.row(p) -= u;
    }
    if (dist_an > 0.0) {
      const Eigen::RowVectorXd u = d_an * (scale / dist_an);
      grad_emb.row(a) -= u;
      grad_emb.row(n) += u;
    }
  }
  result.loss = total * scale;

  if (with_gradient) {
    if (single_pass) {
      backward(model, cache, grad_emb, result.gradient);
    } else {
      for (std::size_t s = 0; s < unique.size(); s += chunk) {
        const std::size_t e = std::min(unique.size(), s + chunk);
        const ForwardCache part = forward_cached(model, gather_rows(inputs, unique, s, e));
        backward(model, part, grad_emb.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)),
                 result.gradient);
      }
    }
  }
  return result;
}

Optimizer::Optimizer(const TrainConfig& cfg, std::size_t n_params) : cfg_(cfg) {
  if (cfg_.optimizer == OptimizerKind::adam) {
    m_.assign(n_params, 0.0);
    v_.assign(n_params, 0.0);
  }
}

void Optimizer::step(std::vector<double>& params, const std::vector<double>& grad) {
  const double lr = cfg_.learning_rate;
  if (cfg_.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
  }
}

void train_model(EmbeddingModel& model, const LabeledMatrix& features, const TrainConfig& cfg) {
  cfg.validate();
  if (features.values.rows() != static_cast<Eigen::Index>(features.subjects.size())) {
    throw ValidationError("feature rows and subject labels differ in count");
  }
  if (features.values.cols() != static_cast<Eigen::Index>(model.spec.input_shape().size())) {
    throw ValidationError("features have " + std::to_string(features.values.cols()) +
                          " columns, network expects " + std::to_string(model.spec.input_shape().size()));
  }
  if (!features.values.allFinite()) throw ValidationError("training features contain non-finite values");
  const TripletSampler sampler(features.subjects);
  Optimizer optimizer(cfg, model.params.size());
  Rng rng(derive_seed(cfg.seed, 0x7472));
  const std::size_t n = features.subjects.size();
  const std::size_t batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const TripletBatch batch = sampler.sample(static_cast<std::size_t>(cfg.batch_size), rng);
      const TripletEvaluation eval = evaluate_triplets(model, features.values, batch, cfg.margin, true);
      if (!std::isfinite(eval.loss)) {
        throw TrainingError("non-finite triplet loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      }
      optimizer.step(model.params, eval.gradient);
      for (double w : model.params) {
        if (!std::isfinite(w)) {
          throw TrainingError("non-finite weight after epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b));
        }
      }
      epoch_loss += eval.loss;
    }
    model.train_log.push_back(epoch_loss / static_cast<double>(batches));
    log_debug("epoch {} mean triplet loss {:.6f}", epoch, model.train_log.back());
  }
}

EmbeddingModel train_siamese(const LabeledMatrix& features, const NetworkSpec& spec, const TrainConfig& cfg) {
  EmbeddingModel model = init_network(spec, cfg.seed);
  train_model(model, features, cfg);
  return model;
}

}  // namespace reident
