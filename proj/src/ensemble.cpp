#include "reident/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "reident/container.hpp"
#include "reident/error.hpp"
#include "reident/log.hpp"
#include "reident/random.hpp"
#include "reident/text.hpp"

namespace reident {

std::string to_string(EnsembleKind kind) {
  switch (kind) {
    case EnsembleKind::concatenation: return "concatenation";
    case EnsembleKind::nn_triplet: return "nn_triplet";
    case EnsembleKind::weighted_triplet: return "weighted_triplet";
    case EnsembleKind::weighted_accuracy: return "weighted_accuracy";
    case EnsembleKind::majority_vote: return "majority_vote";
  }
  return "unknown";
}

const std::vector<EnsembleKind>& all_ensemble_kinds() {
  static const std::vector<EnsembleKind> kinds = {EnsembleKind::concatenation, EnsembleKind::nn_triplet,
                                                  EnsembleKind::weighted_triplet, EnsembleKind::weighted_accuracy,
                                                  EnsembleKind::majority_vote};
  return kinds;
}

EnsembleKind ensemble_kind_from_string(const std::string& name) {
  for (EnsembleKind k : all_ensemble_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown ensemble kind `" + name + "`");
}

std::size_t ZScoreStats::total_dims() const {
  std::size_t total = 0;
  for (const auto& m : mean) total += static_cast<std::size_t>(m.size());
  return total;
}

ZScoreStats fit_zscore(const std::vector<Matrix>& train_embeddings, double epsilon) {
  if (train_embeddings.empty()) throw ValidationError("fit_zscore needs at least one sub-model");
  const Eigen::Index rows = train_embeddings.front().rows();
  if (rows < 2) throw ValidationError("fit_zscore needs at least 2 training rows");
  ZScoreStats stats;
  stats.epsilon = epsilon;
  for (const Matrix& m : train_embeddings) {
    if (m.rows() != rows) throw ValidationError("sub-model embeddings differ in row count");
    const Vector mu = m.colwise().mean().transpose();
    const Vector var = (m.rowwise() - mu.transpose()).array().square().colwise().mean().transpose();
    stats.mean.push_back(mu);
    stats.stddev.push_back(var.array().sqrt().max(epsilon).matrix());
  }
  return stats;
}

std::vector<Matrix> apply_zscore(const ZScoreStats& stats, const std::vector<Matrix>& embeddings) {
  if (embeddings.size() != stats.models()) {
    throw ValidationError("expected " + std::to_string(stats.models()) + " sub-models, got " +
                          std::to_string(embeddings.size()));
  }
  std::vector<Matrix> out;
  out.reserve(embeddings.size());
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    if (embeddings[m].cols() != stats.mean[m].size()) {
      throw ValidationError("sub-model " + std::to_string(m) + " has " + std::to_string(embeddings[m].cols()) +
                            " dims, stats expect " + std::to_string(stats.mean[m].size()));
    }
    if (embeddings[m].rows() != embeddings.front().rows()) throw ValidationError("sub-models differ in row count");
    Matrix z = (embeddings[m].rowwise() - stats.mean[m].transpose()).array().rowwise() /
               stats.stddev[m].transpose().array();
    out.push_back(std::move(z));
  }
  return out;
}

Matrix weighted_concatenation(const std::vector<Matrix>& z_blocks, const std::vector<double>& alpha) {
  if (z_blocks.empty()) return {};
  if (alpha.size() != z_blocks.size()) throw ValidationError("one weight per sub-model required");
  Eigen::Index cols = 0;
  for (const Matrix& b : z_blocks) cols += b.cols();
  Matrix out(z_blocks.front().rows(), cols);
  Eigen::Index at = 0;
  for (std::size_t m = 0; m < z_blocks.size(); ++m) {
    out.middleCols(at, z_blocks[m].cols()) = alpha[m] * z_blocks[m];
    at += z_blocks[m].cols();
  }
  return out;
}

Matrix apply_concatenation(const ZScoreStats& stats, const std::vector<Matrix>& per_model) {
  const auto z = apply_zscore(stats, per_model);
  return weighted_concatenation(z, std::vector<double>(z.size(), 1.0));
}

Vector apply_concatenation(const ZScoreStats& stats, const std::vector<Vector>& per_model) {
  std::vector<Matrix> rows;
  rows.reserve(per_model.size());
  for (const Vector& v : per_model) rows.emplace_back(v.transpose());
  return apply_concatenation(stats, rows).row(0).transpose();
}

void WeightVector::validate(std::size_t models) const {
  if (alpha.size() != models) throw ValidationError("weight vector length differs from sub-model count");
  bool positive = false;
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("weights must be finite and >= 0");
    positive |= a > 0.0;
  }
  if (!positive) throw ValidationError("at least one weight must be positive");
}

namespace {

void check_blocks(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects) {
  if (z_train.empty()) throw ValidationError("ensemble fitting needs at least one sub-model");
  for (const Matrix& b : z_train) {
    if (b.rows() != static_cast<Eigen::Index>(subjects.size())) {
      throw ValidationError("sub-model rows and subject labels differ in count");
    }
  }
}

}  // namespace

WeightedTripletFit fit_weighted_triplet(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects,
                                        const TrainConfig& cfg) {
  cfg.validate();
  check_blocks(z_train, subjects);
  const std::size_t m = z_train.size();
  const TripletSampler sampler(subjects);
  Optimizer optimizer(cfg, m);
  Rng rng(derive_seed(cfg.seed, 0x7774));

  WeightedTripletFit fit;
  fit.weights.alpha.assign(m, 1.0);
  std::vector<double>& alpha = fit.weights.alpha;
  const std::size_t n = subjects.size();
  const std::size_t batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);

  std::vector<double> s_ap(m), s_an(m), grad(m);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const TripletBatch batch = sampler.sample(static_cast<std::size_t>(cfg.batch_size), rng);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t t = 0; t < batch.size(); ++t) {
        const auto a = static_cast<Eigen::Index>(batch.anchors[t]);
        const auto p = static_cast<Eigen::Index>(batch.positives[t]);
        const auto q = static_cast<Eigen::Index>(batch.negatives[t]);
        double d_ap2 = 0.0;
        double d_an2 = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          s_ap[k] = (z_train[k].row(a) - z_train[k].row(p)).squaredNorm();
          s_an[k] = (z_train[k].row(a) - z_train[k].row(q)).squaredNorm();
          d_ap2 += alpha[k] * alpha[k] * s_ap[k];
          d_an2 += alpha[k] * alpha[k] * s_an[k];
        }
        const double d_ap = std::sqrt(d_ap2);
        const double d_an = std::sqrt(d_an2);
        const double hinge = d_ap - d_an + cfg.margin;
        if (hinge <= 0.0) continue;
        loss += hinge;
        for (std::size_t k = 0; k < m; ++k) {
          if (d_ap > 0.0) grad[k] += alpha[k] * s_ap[k] / d_ap;
          if (d_an > 0.0) grad[k] -= alpha[k] * s_an[k] / d_an;
        }
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      loss *= scale;
      for (double& g : grad) g *= scale;
      if (!std::isfinite(loss)) {
        throw TrainingError("weighted triplet: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
      }
      optimizer.step(alpha, grad);
      for (double& a : alpha) a = std::max(0.0, a);
      if (std::all_of(alpha.begin(), alpha.end(), [](double a) { return a == 0.0; })) {
        throw TrainingError("weighted triplet: all weights collapsed to zero at epoch " + std::to_string(epoch));
      }
      epoch_loss += loss;
    }
    fit.loss_log.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return fit;
}

WeightedRankObjective::WeightedRankObjective(const std::vector<Matrix>& z_train,
                                             const std::vector<std::string>& subjects, std::uint64_t seed) {
  check_blocks(z_train, subjects);
  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < subjects.size(); ++r) rows_of[subjects[r]].push_back(r);
  std::size_t eligible = 0;
  for (const auto& [s, rows] : rows_of) eligible += rows.size() >= 2 ? 1 : 0;
  if (rows_of.size() < 2 || eligible < 2) {
    throw ValidationError("weighted accuracy needs >= 2 subjects with >= 2 views in the training data");
  }

  Rng rng(seed);
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> gallery_rows;
  for (const auto& [s, rows] : rows_of) {
    if (rows.size() < 2) {
      gallery_rows.insert(gallery_rows.end(), rows.begin(), rows.end());
      continue;
    }
    const std::size_t pick = rng.uniform_index(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) (j == pick ? query_rows : gallery_rows).push_back(rows[j]);
  }
  std::sort(gallery_rows.begin(), gallery_rows.end());
  for (std::size_t r : query_rows) query_subjects_.push_back(subjects[r]);
  for (std::size_t r : gallery_rows) gallery_subjects_.push_back(subjects[r]);

  for (const Matrix& block : z_train) {
    Matrix sq(static_cast<Eigen::Index>(query_rows.size()), static_cast<Eigen::Index>(gallery_rows.size()));
    for (std::size_t q = 0; q < query_rows.size(); ++q) {
      for (std::size_t g = 0; g < gallery_rows.size(); ++g) {
        sq(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)) =
            (block.row(static_cast<Eigen::Index>(query_rows[q])) - block.row(static_cast<Eigen::Index>(gallery_rows[g])))
                .squaredNorm();
      }
    }
    squared_.push_back(std::move(sq));
  }
}

double WeightedRankObjective::operator()(const std::vector<double>& alpha) const {
  if (alpha.size() != squared_.size()) throw ValidationError("one weight per sub-model required");
  Matrix combined = Matrix::Zero(squared_.front().rows(), squared_.front().cols());
  for (std::size_t m = 0; m < squared_.size(); ++m) combined += (alpha[m] * alpha[m]) * squared_[m];
  std::size_t hits = 0;
  for (Eigen::Index q = 0; q < combined.rows(); ++q) {
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < combined.cols(); ++g) {
      if (combined(q, g) < combined(q, best)) best = g;
    }
    hits += gallery_subjects_[static_cast<std::size_t>(best)] == query_subjects_[static_cast<std::size_t>(q)];
  }
  return static_cast<double>(hits) / static_cast<double>(combined.rows());
}

WeightedAccuracyFit fit_weighted_accuracy(const std::vector<Matrix>& z_train,
                                          const std::vector<std::string>& subjects, int budget,
                                          std::uint64_t seed) {
  check_blocks(z_train, subjects);
  const std::size_t m = z_train.size();
  if (budget < static_cast<int>(m)) {
    throw ValidationError("weighted accuracy budget " + std::to_string(budget) + " is below the sub-model count " +
                          std::to_string(m));
  }
  const WeightedRankObjective objective(z_train, subjects, derive_seed(seed, 0x7161));
  Rng rng(derive_seed(seed, 0x7162));

  WeightedAccuracyFit fit;
  std::vector<double> incumbent(m, 1.0);
  double best = objective(incumbent);
  fit.baseline_objective = best;
  int used = 1;

  const int random_phase = static_cast<int>(std::ceil(0.6 * budget));
  const double log_lo = std::log(1e-2);
  const double log_hi = std::log(1e1);
  std::vector<double> candidate(m);
  for (; used < random_phase && used < budget; ++used) {
    for (double& a : candidate) a = std::exp(rng.uniform(log_lo, log_hi));
    const double value = objective(candidate);
    if (value > best) {
      best = value;
      incumbent = candidate;
    }
  }

  static constexpr double kFactors[] = {0.5, 0.8, 1.25, 2.0};
  std::size_t since_improvement = 0;
  const std::size_t moves = m * std::size(kFactors);
  for (std::size_t move = 0; used < budget && since_improvement < moves; ++move, ++used) {
    candidate = incumbent;
    candidate[(move / std::size(kFactors)) % m] *= kFactors[move % std::size(kFactors)];
    const double value = objective(candidate);
    if (value > best) {
      best = value;
      incumbent = candidate;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
  }

  fit.weights.alpha = incumbent;
  fit.objective = best;
  fit.evaluations = used;
  log_debug("weighted accuracy: {} evaluations, objective {:.4f} (all-ones {:.4f})", used, best,
            fit.baseline_objective);
  return fit;
}

EmbeddingModel fit_nn_triplet(const std::vector<Matrix>& z_train, const std::vector<std::string>& subjects,
                              const TrainConfig& cfg, int hidden, int output_dim) {
  check_blocks(z_train, subjects);
  LabeledMatrix input{weighted_concatenation(z_train, std::vector<double>(z_train.size(), 1.0)), subjects};
  const NetworkSpec spec = NetworkSpec::dense_head(static_cast<int>(input.values.cols()), {hidden}, output_dim);
  return train_siamese(input, spec, cfg);
}

std::vector<std::size_t> majority_vote_ranking(const std::vector<std::vector<double>>& per_model_distances) {
  if (per_model_distances.empty()) throw ValidationError("majority vote needs at least one sub-model");
  const std::size_t n = per_model_distances.front().size();
  const std::size_t m = per_model_distances.size();
  for (const auto& row : per_model_distances) {
    if (row.size() != n) throw ValidationError("majority vote: ragged distance rows");
  }

  // ranks[item][model], 1-based ordinal positions.
  std::vector<std::vector<std::size_t>> ranks(n, std::vector<std::size_t>(m));
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < m; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& d = per_model_distances[k];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    for (std::size_t pos = 0; pos < n; ++pos) ranks[order[pos]][k] = pos + 1;
  }

  std::vector<std::size_t> median(n);
  std::vector<std::size_t> rank_sum(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = ranks[i];
    rank_sum[i] = std::accumulate(r.begin(), r.end(), std::size_t{0});
    std::nth_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>((m - 1) / 2), r.end());
    median[i] = r[(m - 1) / 2];
  }
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (median[a] != median[b]) return median[a] < median[b];
    return rank_sum[a] < rank_sum[b];
  });
  return order;
}

EnsembleTransform EnsembleTransform::concatenation(ZScoreStats stats) {
  EnsembleTransform t;
  t.kind_ = EnsembleKind::concatenation;
  t.models_ = stats.models();
  t.stats_ = std::move(stats);
  return t;
}

EnsembleTransform EnsembleTransform::weighted(EnsembleKind kind, ZScoreStats stats, WeightVector weights) {
  if (kind != EnsembleKind::weighted_triplet && kind != EnsembleKind::weighted_accuracy) {
    throw ValidationError("weighted transform needs a weighted kind");
  }
  weights.validate(stats.models());
  EnsembleTransform t;
  t.kind_ = kind;
  t.models_ = stats.models();
  t.stats_ = std::move(stats);
  t.weights_ = std::move(weights);
  return t;
}

EnsembleTransform EnsembleTransform::nn_triplet(ZScoreStats stats, EmbeddingModel model) {
  if (model.spec.input_shape().size() != stats.total_dims()) {
    throw ValidationError("stacked network input does not match the concatenated width");
  }
  EnsembleTransform t;
  t.kind_ = EnsembleKind::nn_triplet;
  t.models_ = stats.models();
  t.stats_ = std::move(stats);
  t.model_ = std::move(model);
  return t;
}

EnsembleTransform EnsembleTransform::majority_vote(std::size_t models) {
  if (models == 0) throw ValidationError("majority vote needs at least one sub-model");
  EnsembleTransform t;
  t.kind_ = EnsembleKind::majority_vote;
  t.models_ = models;
  return t;
}

Matrix EnsembleTransform::embed(const std::vector<Matrix>& per_model) const {
  switch (kind_) {
    case EnsembleKind::concatenation:
      return apply_concatenation(stats_, per_model);
    case EnsembleKind::weighted_triplet:
    case EnsembleKind::weighted_accuracy:
      return weighted_concatenation(apply_zscore(stats_, per_model), weights_->alpha);
    case EnsembleKind::nn_triplet:
      return embed_all(*model_, apply_concatenation(stats_, per_model));
    case EnsembleKind::majority_vote:
      break;
  }
  throw ValidationError("majority vote produces rankings, not embeddings");
}

RankedRetrieval EnsembleTransform::rank(const std::vector<Matrix>& per_model_queries,
                                        const std::vector<Matrix>& per_model_gallery) const {
  if (per_model_queries.size() != models_ || per_model_gallery.size() != models_) {
    throw ValidationError("expected " + std::to_string(models_) + " sub-models");
  }
  if (kind_ != EnsembleKind::majority_vote) {
    return rank_by_distance(embed(per_model_queries), embed(per_model_gallery));
  }
  std::vector<Matrix> distances;
  for (std::size_t m = 0; m < models_; ++m) distances.push_back(distance_matrix(per_model_queries[m], per_model_gallery[m]));
  const auto n_queries = per_model_queries.front().rows();
  RankedRetrieval out(static_cast<std::size_t>(n_queries));
  std::vector<std::vector<double>> rows(models_);
  for (Eigen::Index q = 0; q < n_queries; ++q) {
    for (std::size_t m = 0; m < models_; ++m) {
      rows[m].assign(distances[m].row(q).data(), distances[m].row(q).data() + distances[m].cols());
    }
    out[static_cast<std::size_t>(q)] = majority_vote_ranking(rows);
  }
  return out;
}

void EnsembleTransform::save(const std::filesystem::path& path) const {
  Container c;
  std::ostringstream header;
  header << "transform " << to_string(kind_) << "\nmodels " << models_ << "\nepsilon " << format_double(stats_.epsilon)
         << '\n';
  for (std::size_t m = 0; m < stats_.models(); ++m) {
    c.arrays.emplace_back(stats_.mean[m].data(), stats_.mean[m].data() + stats_.mean[m].size());
    c.arrays.emplace_back(stats_.stddev[m].data(), stats_.stddev[m].data() + stats_.stddev[m].size());
  }
  if (weights_) c.arrays.push_back(weights_->alpha);
  if (model_) {
    header << "network\n" << model_->spec.to_text();
    c.arrays.push_back(model_->params);
  }
  c.header = header.str();
  write_container(path, c);
}

EnsembleTransform EnsembleTransform::load(const std::filesystem::path& path) {
  const Container c = read_container(path);
  std::istringstream in(c.header);
  std::string word, kind_name;
  std::size_t models = 0;
  std::string epsilon_text;
  if (!(in >> word >> kind_name) || word != "transform" || !(in >> word >> models) || word != "models" ||
      !(in >> word >> epsilon_text) || word != "epsilon") {
    throw IngestError(path.string() + " does not hold an ensemble transform");
  }
  const EnsembleKind kind = ensemble_kind_from_string(kind_name);
  if (kind == EnsembleKind::majority_vote) return majority_vote(models);

  ZScoreStats stats;
  stats.epsilon = parse_double(epsilon_text, path.string());
  if (c.arrays.size() < 2 * models) throw IngestError(path.string() + ": missing z-score arrays");
  for (std::size_t m = 0; m < models; ++m) {
    const auto& mu = c.arrays[2 * m];
    const auto& sd = c.arrays[2 * m + 1];
    if (mu.size() != sd.size()) throw IngestError(path.string() + ": z-score arrays differ in length");
    stats.mean.emplace_back(Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(mu.size())));
    stats.stddev.emplace_back(Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size())));
  }
  std::size_t next = 2 * models;
  switch (kind) {
    case EnsembleKind::concatenation:
      return concatenation(std::move(stats));
    case EnsembleKind::weighted_triplet:
    case EnsembleKind::weighted_accuracy: {
      if (next >= c.arrays.size()) throw IngestError(path.string() + ": missing weights");
      return weighted(kind, std::move(stats), WeightVector{c.arrays[next]});
    }
    case EnsembleKind::nn_triplet: {
      std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      const auto at = rest.find("network\n");
      if (at == std::string::npos || next >= c.arrays.size()) throw IngestError(path.string() + ": missing network");
      EmbeddingModel model;
      model.spec = NetworkSpec::from_text(rest.substr(at + 8));
      model.params = c.arrays[next];
      if (model.params.size() != model.spec.parameter_count()) {
        throw IngestError(path.string() + ": network parameters do not match the stored spec");
      }
      return nn_triplet(std::move(stats), std::move(model));
    }
    case EnsembleKind::majority_vote:
      break;
  }
  return majority_vote(models);
}

}  // namespace reident
