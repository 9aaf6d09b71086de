#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "reident/data.hpp"
#include "reident/matrix.hpp"
#include "reident/random.hpp"

namespace testing {

inline reident::Sample solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b,
                             std::string subject = "a", std::string view = "0") {
  reident::Sample s;
  s.width = w;
  s.height = h;
  s.subject_id = std::move(subject);
  s.view_id = std::move(view);
  s.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < s.pixels.size(); i += 3) {
    s.pixels[i] = r;
    s.pixels[i + 1] = g;
    s.pixels[i + 2] = b;
  }
  return s;
}

inline reident::Matrix gaussian(int rows, int cols, std::uint64_t seed) {
  reident::Rng rng(seed);
  reident::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("reident_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Exhaustive rank-k: sort every gallery item by (distance, index) and scan.
inline double brute_force_rank_k(const reident::Matrix& q, const reident::Matrix& g,
                                 const std::vector<std::string>& qid, const std::vector<std::string>& gid, int k) {
  int hits = 0;
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < g.rows(); ++j) {
      double d = 0.0;
      for (int c = 0; c < q.cols(); ++c) d += (q(i, c) - g(j, c)) * (q(i, c) - g(j, c));
      order.push_back({std::sqrt(d), j});
    }
    std::sort(order.begin(), order.end());
    bool hit = false;
    for (int r = 0; r < k; ++r) hit = hit || gid[static_cast<std::size_t>(order[static_cast<std::size_t>(r)].second)] == qid[static_cast<std::size_t>(i)];
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(q.rows());
}

}  // namespace testing
