#include "reident/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "reident/error.hpp"
#include "reident/random.hpp"

namespace reident {

Matrix distance_matrix(const Matrix& queries, const Matrix& gallery) {
  if (queries.cols() != gallery.cols()) throw ValidationError("query and gallery embeddings differ in width");
  Matrix d(queries.rows(), gallery.rows());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
      d(q, g) = (queries.row(q) - gallery.row(g)).norm();
    }
  }
  return d;
}

RankedRetrieval rank_by_distances(const Matrix& distances) {
  RankedRetrieval out(static_cast<std::size_t>(distances.rows()));
  for (Eigen::Index q = 0; q < distances.rows(); ++q) {
    auto& order = out[static_cast<std::size_t>(q)];
    order.resize(static_cast<std::size_t>(distances.cols()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distances(q, static_cast<Eigen::Index>(a)) < distances(q, static_cast<Eigen::Index>(b));
    });
  }
  return out;
}

RankedRetrieval rank_by_distance(const Matrix& queries, const Matrix& gallery) {
  return rank_by_distances(distance_matrix(queries, gallery));
}

std::vector<double> cmc_curve(const RankedRetrieval& ranking, const std::vector<std::string>& query_ids,
                              const std::vector<std::string>& gallery_ids, int k_max) {
  if (ranking.size() != query_ids.size()) throw ValidationError("ranking and query labels differ in count");
  if (k_max < 1) throw ValidationError("k must be >= 1");
  if (static_cast<std::size_t>(k_max) > gallery_ids.size()) {
    throw ValidationError("k = " + std::to_string(k_max) + " exceeds gallery size " +
                          std::to_string(gallery_ids.size()));
  }
  const std::set<std::string> present(gallery_ids.begin(), gallery_ids.end());
  std::vector<std::size_t> hits(static_cast<std::size_t>(k_max), 0);
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    if (!present.contains(query_ids[q])) {
      throw ValidationError("query subject " + query_ids[q] + " has no gallery image");
    }
    if (ranking[q].size() != gallery_ids.size()) throw ValidationError("ranking is not a full gallery permutation");
    for (std::size_t r = 0; r < static_cast<std::size_t>(k_max); ++r) {
      if (gallery_ids[ranking[q][r]] == query_ids[q]) {
        for (std::size_t k = r; k < hits.size(); ++k) ++hits[k];
        break;
      }
    }
  }
  std::vector<double> curve(hits.size(), 0.0);
  if (ranking.empty()) return curve;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    curve[k] = static_cast<double>(hits[k]) / static_cast<double>(ranking.size());
  }
  return curve;
}

double rank_k_accuracy(const RankedRetrieval& ranking, const std::vector<std::string>& query_ids,
                       const std::vector<std::string>& gallery_ids, int k) {
  return cmc_curve(ranking, query_ids, gallery_ids, k).back();
}

double rank_k_accuracy(const Matrix& query_embs, const Matrix& gallery_embs,
                       const std::vector<std::string>& query_ids,
                       const std::vector<std::string>& gallery_ids, int k) {
  if (query_embs.rows() != static_cast<Eigen::Index>(query_ids.size()) ||
      gallery_embs.rows() != static_cast<Eigen::Index>(gallery_ids.size())) {
    throw ValidationError("embedding rows and labels differ in count");
  }
  return rank_k_accuracy(rank_by_distance(query_embs, gallery_embs), query_ids, gallery_ids, k);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double relative_uncertainty(const std::vector<double>& per_fold_accuracies) {
  if (per_fold_accuracies.size() < 2) throw ValidationError("relative uncertainty needs at least 2 folds");
  const double m = mean(per_fold_accuracies);
  if (m == 0.0) throw ValidationError("relative uncertainty undefined for zero mean accuracy");
  return sample_std(per_fold_accuracies) / m;
}

double triplet_correlation(const Matrix& embs_f, const Matrix& embs_g, std::size_t trials, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(embs_f.rows());
  if (static_cast<std::size_t>(embs_g.rows()) != n) throw ValidationError("embeddings cover different sample counts");
  if (n < 3) throw ValidationError("triplet correlation needs at least 3 samples");
  if (trials < 1) throw ValidationError("triplet correlation needs at least 1 trial");

  Rng rng(seed);
  std::size_t success = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t a = rng.uniform_index(n);
    std::size_t b = rng.uniform_index(n - 1);
    if (b >= a) ++b;
    std::size_t c = rng.uniform_index(n - 2);
    if (c >= std::min(a, b)) ++c;
    if (c >= std::max(a, b)) ++c;
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    const auto ic = static_cast<Eigen::Index>(c);
    const double f_ab = (embs_f.row(ia) - embs_f.row(ib)).norm();
    const double f_ac = (embs_f.row(ia) - embs_f.row(ic)).norm();
    const double g_ab = (embs_g.row(ia) - embs_g.row(ib)).norm();
    const double g_ac = (embs_g.row(ia) - embs_g.row(ic)).norm();
    if ((f_ab < f_ac && g_ab < g_ac) || (f_ab > f_ac && g_ab > g_ac)) ++success;
  }
  return 2.0 * static_cast<double>(success) / static_cast<double>(trials) - 1.0;
}

ImprovementMatrix pairwise_improvement_matrix(
    const std::vector<std::string>& models, const std::map<std::string, double>& sub_model_rank1,
    const std::map<std::pair<std::string, std::string>, double>& pair_rank1) {
  ImprovementMatrix out;
  out.models = models;
  const auto m = static_cast<Eigen::Index>(models.size());
  out.delta = Matrix::Constant(m, m, std::numeric_limits<double>::quiet_NaN());
  auto single = [&](const std::string& name) {
    auto it = sub_model_rank1.find(name);
    if (it == sub_model_rank1.end()) throw ValidationError("missing Rank-1 for sub-model " + name);
    return it->second;
  };
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      const auto& a = models[static_cast<std::size_t>(i)];
      const auto& b = models[static_cast<std::size_t>(j)];
      auto it = pair_rank1.find({a, b});
      if (it == pair_rank1.end()) it = pair_rank1.find({b, a});
      if (it == pair_rank1.end()) throw ValidationError("missing two-model ensemble " + a + "+" + b);
      out.delta(i, j) = it->second - std::max(single(a), single(b));
    }
  }
  return out;
}

std::map<std::string, double> leave_one_out_ablation(double full_rank1, const std::vector<std::string>& models,
                                                     const std::map<std::string, double>& without_rank1) {
  std::map<std::string, double> out;
  for (const auto& m : models) {
    auto it = without_rank1.find(m);
    if (it == without_rank1.end()) throw ValidationError("missing leave-one-out report without " + m);
    out[m] = full_rank1 - it->second;
  }
  return out;
}

}  // namespace reident
