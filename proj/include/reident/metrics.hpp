#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "reident/matrix.hpp"

namespace reident {

/// Per query, gallery indices from most to least similar.
using RankedRetrieval = std::vector<std::vector<std::size_t>>;

/// Euclidean distances, queries x gallery.
Matrix distance_matrix(const Matrix& queries, const Matrix& gallery);

/// Orders each row ascending by distance; equal distances keep gallery order.
RankedRetrieval rank_by_distances(const Matrix& distances);
RankedRetrieval rank_by_distance(const Matrix& queries, const Matrix& gallery);

/// Fraction of queries with a same-subject item among the first k of
/// their ranking. Throws ValidationError for k < 1, k > gallery size, or a
/// query subject missing from the gallery.
double rank_k_accuracy(const RankedRetrieval& ranking, const std::vector<std::string>& query_ids,
                       const std::vector<std::string>& gallery_ids, int k);

double rank_k_accuracy(const Matrix& query_embs, const Matrix& gallery_embs,
                       const std::vector<std::string>& query_ids,
                       const std::vector<std::string>& gallery_ids, int k);

/// Rank-1 .. Rank-k_max in one pass.
std::vector<double> cmc_curve(const RankedRetrieval& ranking, const std::vector<std::string>& query_ids,
                              const std::vector<std::string>& gallery_ids, int k_max);

double mean(const std::vector<double>& values);

/// Divide-by-(n-1) standard deviation; 0 for fewer than two values.
double sample_std(const std::vector<double>& values);

/// Sample std across folds divided by the mean across folds.
double relative_uncertainty(const std::vector<double>& per_fold_accuracies);

/// Agreement of two embeddings on the order of d(A,B) vs d(A,C) for random
/// distinct triples, mapped to [-1, 1]: 2 * agreements / trials - 1.
double triplet_correlation(const Matrix& embs_f, const Matrix& embs_g, std::size_t trials, std::uint64_t seed);

/// Rows and columns follow `models`; entry (i, j) is
/// pair_rank1({i, j}) - max(rank1[i], rank1[j]); the diagonal is NaN.
struct ImprovementMatrix {
  std::vector<std::string> models;
  Matrix delta;
};

ImprovementMatrix pairwise_improvement_matrix(
    const std::vector<std::string>& models, const std::map<std::string, double>& sub_model_rank1,
    const std::map<std::pair<std::string, std::string>, double>& pair_rank1);

/// delta_m = full - without_m for every model in `without`.
std::map<std::string, double> leave_one_out_ablation(double full_rank1,
                                                     const std::vector<std::string>& models,
                                                     const std::map<std::string, double>& without_rank1);

}  // namespace reident
