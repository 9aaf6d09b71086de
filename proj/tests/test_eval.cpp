#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "reident/error.hpp"
#include "reident/features.hpp"
#include "reident/metrics.hpp"

using namespace reident;

TEST_CASE("rank-k on hand-built distances") {
  Matrix d(2, 4);
  d << 0.1, 0.5, 0.7, 0.9,  // query a: match at rank 1
      0.2, 0.3, 0.6, 0.8;   // query b: match (index 2) at rank 3
  const auto ranking = rank_by_distances(d);
  const std::vector<std::string> q{"a", "b"};
  const std::vector<std::string> g{"a", "x", "b", "y"};
  CHECK(rank_k_accuracy(ranking, q, g, 1) == 0.5);
  CHECK(rank_k_accuracy(ranking, q, g, 2) == 0.5);
  CHECK(rank_k_accuracy(ranking, q, g, 3) == 1.0);
  CHECK(rank_k_accuracy(ranking, q, g, 4) == 1.0);
  CHECK_THROWS_AS(rank_k_accuracy(ranking, q, g, 5), ValidationError);
  CHECK_THROWS_AS(rank_k_accuracy(ranking, q, g, 0), ValidationError);
  CHECK_THROWS_AS(rank_k_accuracy(ranking, {"a", "z"}, g, 1), ValidationError);
}

TEST_CASE("exact copies in the gallery give rank-1 of one") {
  const Matrix q = testing::gaussian(5, 3, 1);
  Matrix g(10, 3);
  g << q, testing::gaussian(5, 3, 2) + Matrix::Constant(5, 3, 10.0);
  const std::vector<std::string> qid{"a", "b", "c", "d", "e"};
  const std::vector<std::string> gid{"a", "b", "c", "d", "e", "a", "b", "c", "d", "e"};
  CHECK(rank_k_accuracy(q, g, qid, gid, 1) == 1.0);
}

TEST_CASE("distance ties resolve to the lower gallery index") {
  Matrix d(1, 3);
  d << 1.0, 0.5, 0.5;
  CHECK(rank_by_distances(d)[0] == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("rank-k agrees with exhaustive sorting, is monotone and permutation invariant") {
  Rng rng(77);
  for (int inst = 0; inst < 50; ++inst) {
    const int nq = 1 + static_cast<int>(rng.uniform_index(10));
    const int extra = static_cast<int>(rng.uniform_index(10));
    const Matrix q = testing::gaussian(nq, 3, rng.next_u64());
    const Matrix g = testing::gaussian(nq + extra, 3, rng.next_u64());
    std::vector<std::string> qid, gid;
    for (int i = 0; i < nq; ++i) qid.push_back("s" + std::to_string(i));
    for (int i = 0; i < nq + extra; ++i) gid.push_back("s" + std::to_string(i % nq));
    const auto curve = cmc_curve(rank_by_distance(q, g), qid, gid, nq + extra);
    for (int k = 1; k <= nq + extra; ++k) {
      CHECK(curve[static_cast<std::size_t>(k - 1)] == testing::brute_force_rank_k(q, g, qid, gid, k));
      if (k > 1) CHECK(curve[static_cast<std::size_t>(k - 1)] >= curve[static_cast<std::size_t>(k - 2)]);
    }
    // Reverse the gallery and its labels.
    const Matrix gr = g.colwise().reverse();
    const std::vector<std::string> gidr(gid.rbegin(), gid.rend());
    CHECK(cmc_curve(rank_by_distance(q, gr), qid, gidr, nq + extra) == curve);
    // Positive scaling leaves the ranking alone.
    CHECK(rank_by_distance(q * 3.5, g * 3.5) == rank_by_distance(q, g));
  }
}

TEST_CASE("fold statistics") {
  CHECK(relative_uncertainty({0.9, 0.9, 0.9}) == 0.0);
  CHECK(relative_uncertainty({0.8, 1.0}) == doctest::Approx(std::sqrt(0.02) / 0.9));
  CHECK_THROWS_AS(relative_uncertainty({0.8}), ValidationError);
  CHECK_THROWS_AS(relative_uncertainty({0.0, 0.0}), ValidationError);
  CHECK(sample_std({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("triplet correlation") {
  const Matrix f = testing::gaussian(30, 4, 1);
  CHECK(triplet_correlation(f, f, 5000, 2) == 1.0);
  const Matrix g = testing::gaussian(30, 4, 3);
  const double fg = triplet_correlation(f, g, 100000, 4);
  const double gf = triplet_correlation(g, f, 100000, 4);
  CHECK(std::abs(fg - gf) < 5.0 / std::sqrt(100000.0));
  CHECK(triplet_correlation(f, f * 2.0 + Matrix::Constant(30, 4, 1.0), 2000, 5) == 1.0);
  CHECK_THROWS_AS(triplet_correlation(f.topRows(2), f.topRows(2), 10, 1), ValidationError);
}

TEST_CASE("pairwise improvement and leave-one-out") {
  const std::vector<std::string> models{"a", "b", "c"};
  const auto m = pairwise_improvement_matrix(models, {{"a", 0.5}, {"b", 0.6}, {"c", 0.2}},
                                             {{{"a", "b"}, 0.7}, {{"a", "c"}, 0.5}, {{"b", "c"}, 0.55}});
  CHECK(std::isnan(m.delta(0, 0)));
  CHECK(m.delta(0, 1) == doctest::Approx(0.1));
  CHECK(m.delta(1, 0) == doctest::Approx(0.1));
  CHECK(m.delta(0, 2) == doctest::Approx(0.0));
  CHECK(m.delta(1, 2) == doctest::Approx(-0.05));
  CHECK_THROWS_AS(pairwise_improvement_matrix(models, {{"a", 0.5}, {"b", 0.6}, {"c", 0.2}}, {{{"a", "b"}, 0.7}}),
                  ValidationError);

  const auto loo = leave_one_out_ablation(0.8, {"a", "b"}, {{"a", 0.3}, {"b", 0.79}});
  CHECK(loo.at("a") == doctest::Approx(0.5));
  CHECK(loo.at("b") == doctest::Approx(0.01));
  CHECK_THROWS_AS(leave_one_out_ablation(0.8, {"a", "b"}, {{"a", 0.3}}), ValidationError);
}

constexpr double kRawColorVarianceRank1 = 0.98;

TEST_CASE("raw color-variance nearest neighbour beats chance on the synthetic corpus") {
  const auto samples = generate_synthetic({});
  FeatureSettings fs;
  fs.method = FeatureMethod::color_variance;
  const std::size_t dims = extract_features(samples[0], fs).dims();
  // First view of every subject queries the remaining four.
  Matrix q(50, static_cast<Eigen::Index>(dims));
  Matrix g(200, static_cast<Eigen::Index>(dims));
  std::vector<std::string> qid, gid;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = extract_features(samples[i], fs).values;
    const auto row = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    if (samples[i].view_id == "0") {
      q.row(static_cast<Eigen::Index>(qid.size())) = row;
      qid.push_back(samples[i].subject_id);
    } else {
      g.row(static_cast<Eigen::Index>(gid.size())) = row;
      gid.push_back(samples[i].subject_id);
    }
  }
  const double rank1 = rank_k_accuracy(q, g, qid, gid, 1);
  MESSAGE("raw color-variance rank-1: " << rank1);
  CHECK(rank1 > 0.02);
  // Pinned regression value for this corpus.
  CHECK(rank1 == doctest::Approx(kRawColorVarianceRank1));
}
