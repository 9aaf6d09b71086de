// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reident/config.hpp"
#include "reident/data.hpp"
#include "reident/ensemble.hpp"
#include "reident/experiment.hpp"
#include "reident/features.hpp"
#include "reident/log.hpp"
#include "reident/metrics.hpp"
#include "reident/network.hpp"
#include "reident/random.hpp"
#include "reident/training.hpp"

using namespace reident;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("reident_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

// Signs of every hidden pre-activation for all rows; a change between
// theta+h and theta-h means the difference straddles a relu kink.
std::vector<bool> relu_pattern(const EmbeddingModel& m, const Matrix& x) {
  const NetworkSpec first(m.spec.input_shape(), {LayerSpec::dense(m.spec.layers()[0].units)});
  EmbeddingModel head{first, std::vector<double>(m.params.begin(), m.params.begin() + first.parameter_count()), {}};
  const Matrix pre = forward_batch(head, x);
  std::vector<bool> out;
  for (Eigen::Index i = 0; i < pre.size(); ++i) out.push_back(pre.data()[i] > 0);
  return out;
}

double min_abs_preactivation(const EmbeddingModel& m, const Matrix& x) {
  const NetworkSpec first(m.spec.input_shape(), {LayerSpec::dense(m.spec.layers()[0].units)});
  EmbeddingModel head{first, std::vector<double>(m.params.begin(), m.params.begin() + first.parameter_count()), {}};
  return forward_batch(head, x).cwiseAbs().minCoeff();
}

Outcome gradient_check() {
  const double h = 1e-4;
  const double kink = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  const auto spec = NetworkSpec(Shape{8, 1, 1}, {LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(3)});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(seed, 0x6763));
    const auto model = init_network(spec, seed);
    const Matrix x = gaussian(12, 8, rng);
    std::vector<std::string> subjects;
    for (int i = 0; i < 12; ++i) subjects.push_back("s" + std::to_string(i / 3));
    const auto batch = sample_triplets(subjects, 8, rng);
    const auto base = evaluate_triplets(model, x, batch, 1.0, true);
    const bool near_kink_at_theta =
        min_abs_preactivation(model, x) < kink ||
        std::any_of(base.hinge_margins.begin(), base.hinge_margins.end(), [&](double v) { return std::abs(v) < kink; }) ||
        std::any_of(base.min_distances.begin(), base.min_distances.end(), [&](double v) { return v < kink; });
    for (std::size_t j = 0; j < model.params.size(); ++j) {
      auto plus = model;
      auto minus = model;
      plus.params[j] += h;
      minus.params[j] -= h;
      const auto ep = evaluate_triplets(plus, x, batch, 1.0, false);
      const auto em = evaluate_triplets(minus, x, batch, 1.0, false);
      bool straddles = near_kink_at_theta || relu_pattern(plus, x) != relu_pattern(minus, x);
      for (std::size_t t = 0; t < batch.size() && !straddles; ++t) {
        straddles = (ep.hinge_margins[t] > 0) != (em.hinge_margins[t] > 0);
      }
      if (straddles) {
        ++skipped;
        continue;
      }
      const double numeric = (ep.loss - em.loss) / (2 * h);
      const double analytic = base.gradient[j];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
      ++checked;
    }
  }
  return {worst < 1e-4 && checked > 0, "max rel err " + num(worst, 3) + " over " + std::to_string(checked) +
                                           " coords (" + std::to_string(skipped) + " kink-adjacent skipped)"};
}

// ---------------------------------------------------------------------------

Outcome zscore_contract() {
  Rng rng(0x7a73);
  double worst_mean = 0.0;
  double worst_std = 0.0;
  std::size_t dims_checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto models = 1 + rng.uniform_index(4);
    const auto rows = static_cast<Eigen::Index>(10 + rng.uniform_index(60));
    std::vector<Matrix> train;
    for (std::size_t m = 0; m < models; ++m) {
      const auto dims = static_cast<Eigen::Index>(1 + rng.uniform_index(20));
      Matrix block = gaussian(rows, dims, rng);
      for (Eigen::Index j = 0; j < dims; ++j) {
        const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
        const double shift = rng.uniform(-1e3, 1e3);
        block.col(j) = block.col(j) * scale + Vector::Constant(rows, shift);
        if (rng.uniform01() < 0.1) block.col(j).setConstant(shift);  // degenerate column
      }
      train.push_back(std::move(block));
    }
    const auto stats = fit_zscore(train);
    const Matrix fused = apply_concatenation(stats, train);
    Eigen::Index col = 0;
    for (const auto& block : train) {
      for (Eigen::Index j = 0; j < block.cols(); ++j, ++col) {
        if (block.col(j).maxCoeff() == block.col(j).minCoeff()) continue;
        const double mean = fused.col(col).mean();
        const double var = (fused.col(col).array() - mean).square().mean();
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(var) - 1.0));
        ++dims_checked;
      }
    }
  }
  return {worst_mean < 1e-9 && worst_std < 1e-6, "max |mean| " + num(worst_mean, 3) + ", max |std-1| " +
                                                     num(worst_std, 3) + " over " + std::to_string(dims_checked) + " dims"};
}

// ---------------------------------------------------------------------------

// Exhaustive reference: full sort of every query's distance row.
double oracle_rank_k(const Matrix& q, const Matrix& g, const std::vector<std::string>& qid,
                     const std::vector<std::string>& gid, std::size_t k) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> row;
    for (Eigen::Index j = 0; j < g.rows(); ++j) row.emplace_back((q.row(i) - g.row(j)).norm(), static_cast<std::size_t>(j));
    std::sort(row.begin(), row.end());
    bool hit = false;
    for (std::size_t r = 0; r < k; ++r) hit = hit || gid[row[r].second] == qid[static_cast<std::size_t>(i)];
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(q.rows());
}

Outcome rank_k_oracle() {
  Rng rng(0x726b);
  std::size_t comparisons = 0;
  std::size_t mismatches = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto nq = 1 + rng.uniform_index(20);
    const auto ng = nq + rng.uniform_index(21 - nq);
    const auto dims = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    const Matrix q = gaussian(static_cast<Eigen::Index>(nq), dims, rng);
    const Matrix g = gaussian(static_cast<Eigen::Index>(ng), dims, rng);
    std::vector<std::string> qid;
    std::vector<std::string> gid;
    for (std::size_t i = 0; i < nq; ++i) qid.push_back("s" + std::to_string(i));
    for (std::size_t j = 0; j < ng; ++j) gid.push_back("s" + std::to_string(j < nq ? j : rng.uniform_index(nq)));
    for (std::size_t k = 1; k <= ng; ++k) {
      ++comparisons;
      if (rank_k_accuracy(q, g, qid, gid, static_cast<int>(k)) != oracle_rank_k(q, g, qid, gid, k)) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(comparisons) + " (instance, k) pairs, " + std::to_string(mismatches) +
                               " mismatches"};
}

// ---------------------------------------------------------------------------

// Correlation over every ordered triplet of distinct samples.
double exact_triplet_correlation(const Matrix& f, const Matrix& g) {
  const Matrix df = distance_matrix(f, f);
  const Matrix dg = distance_matrix(g, g);
  const Eigen::Index n = f.rows();
  long agree = 0;
  long total = 0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index c = 0; c < n; ++c) {
        if (a == b || b == c || a == c) continue;
        const double x = df(a, b) - df(a, c);
        const double y = dg(a, b) - dg(a, c);
        agree += (x < 0 && y < 0) || (x > 0 && y > 0);
        ++total;
      }
  return 2.0 * static_cast<double>(agree) / static_cast<double>(total) - 1.0;
}

Outcome correlation_calibration() {
  Rng rng(0x636f);
  bool identity_exact = true;
  for (int s = 0; s < 5; ++s) {
    const Matrix f = gaussian(100, 16, rng);
    identity_exact = identity_exact && triplet_correlation(f, f, 100000, derive_seed(s, 1)) == 1.0;
  }
  double worst = 0.0;
  double worst_exact = 0.0;
  double worst_sampling = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(derive_seed(seed, 0x6367));
    const Matrix f = gaussian(100, 16, r);
    const Matrix g = gaussian(100, 16, r);
    const double mc = triplet_correlation(f, g, 100000, seed);
    const double exact = exact_triplet_correlation(f, g);
    worst = std::max(worst, std::abs(mc));
    worst_exact = std::max(worst_exact, std::abs(exact));
    worst_sampling = std::max(worst_sampling, std::abs(mc - exact));
  }
  // The 0.02 bound covers Monte Carlo error only. With 100 fixed samples the
  // all-triplet value itself scatters around zero, so the diagnostic below
  // separates the two sources.
  return {identity_exact && worst < 0.02,
          std::string("corr(f,f) ") + (identity_exact ? "== 1" : "!= 1") + ", max |corr| independent " + num(worst, 3) +
              "; exact all-triplet max |corr| " + num(worst_exact, 3) + ", max |sampled - exact| " +
              num(worst_sampling, 3) + " (4/sqrt(trials) = " + num(4.0 / std::sqrt(1e5), 3) + ")"};
}

// ---------------------------------------------------------------------------

ExperimentConfig synthetic_config(std::uint64_t data_seed) {
  json doc = {{"dataset", {{"synthetic", {{"seed", data_seed}}}}},
              {"sub_models", json::array()},
              {"ensembles", {"concatenation"}},
              {"seed", 1},
              {"save_models", false},
              {"dump_embeddings", false}};
  for (const char* m : {"brightness", "avg_color", "color_variance", "column_quantile"}) {
    doc["sub_models"].push_back({{"name", m}, {"method", m}, {"resize", nullptr}});
  }
  return parse_config(doc);
}

Outcome ensemble_benefit() {
  std::vector<double> gains;
  bool within = true;
  std::ostringstream runs;
  for (std::uint64_t data_seed = 1; data_seed <= 5; ++data_seed) {
    const auto cfg = synthetic_config(data_seed);
    const auto report = cross_validate(load_samples(cfg.dataset), cfg);
    double best = 0.0;
    for (const auto& name : report.sub_models) best = std::max(best, report.method(name).mean.front());
    const double concat = report.method("concatenation").mean.front();
    gains.push_back(concat - best);
    within = within && concat >= best - 0.02;
    runs << (data_seed > 1 ? ", " : "") << num(concat, 3) << " vs " << num(best, 3);
  }
  auto sorted = gains;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  return {within && median > 0.0, "concat vs best sub-model rank-1: " + runs.str() + "; median gain " + num(median, 3)};
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  const auto dir = scratch("determinism");
  const std::string config = std::string(REIDENT_SOURCE_DIR) + "/configs/quickstart.json";
  for (const char* out : {"a", "b"}) {
    const std::string cmd = std::string(REIDENT_CLI) + " run --config " + config + " --out " + (dir / out).string() +
                            " --stable-output";
    if (std::system(cmd.c_str()) != 0) return {false, "cli run failed: " + cmd};
  }
  const std::string a = slurp(dir / "a/report.json");
  const std::string b = slurp(dir / "b/report.json");
  return {!a.empty() && a == b, std::to_string(a.size()) + "-byte reports " + (a == b ? "identical" : "differ")};
}

// ---------------------------------------------------------------------------

Outcome timing_ratio() {
  const auto samples = generate_synthetic({});
  const auto folds = assign_folds(samples, 5, 0, 4, 1);
  const auto rows = training_indices(samples, folds);
  std::vector<std::string> subjects;
  for (auto r : rows) subjects.push_back(samples[r].subject_id);

  auto train_seconds = [&](const SubModelConfig& sub) {
    const Matrix features = extract_all(samples, sub.features);
    return train_sub_model(sub, features, rows, subjects, 3).train_seconds;
  };
  const double cv = train_seconds(default_sub_model("color_variance", FeatureMethod::color_variance));
  const double conv = train_seconds(default_sub_model("image", FeatureMethod::raw_image));
  const double ratio = cv / conv;
  return {ratio < 0.2, "color_variance " + num(cv, 3) + " s, conv 100x58 " + num(conv, 3) + " s, ratio " + num(ratio, 3)};
}

// ---------------------------------------------------------------------------

// Not a numeric criterion at desk scale: check the documented real-data
// recipe exists and its config template validates once paths are filled in.
Outcome real_data_recipe() {
  const fs::path root(REIDENT_SOURCE_DIR);
  const std::string readme = slurp(root / "README.md");
  if (readme.find("## Real datasets") == std::string::npos) return {false, "README lacks the real-data recipe"};
  std::ifstream in(root / "configs/pallet_recipe.json");
  if (!in) return {false, "configs/pallet_recipe.json missing"};
  json doc = json::parse(in);

  const auto dir = scratch("recipe");
  SyntheticParams p;
  p.n_subjects = 3;
  p.views_per_subject = 2;
  p.width = 32;
  p.height = 32;
  const auto samples = generate_synthetic(p);
  const auto manifest = write_dataset(samples, dir / "data");
  std::ofstream graph(dir / "graph.csv");
  graph << "subject_id,view_id,f0\n";
  for (const auto& s : samples) graph << s.subject_id << ',' << s.view_id << ",0\n";
  graph.close();
  doc["dataset"]["manifest"] = manifest.string();
  for (auto& m : doc["sub_models"]) {
    if (m.contains("import_path")) m["import_path"] = (dir / "graph.csv").string();
  }
  try {
    const auto cfg = parse_config(doc);
    return {true, "recipe documented; template config validates with " + std::to_string(cfg.sub_models.size()) +
                      " sub-models (reference numbers need the real datasets)"};
  } catch (const std::exception& e) {
    return {false, std::string("recipe config invalid: ") + e.what()};
  }
}

// ---------------------------------------------------------------------------

Outcome weighted_accuracy_contract() {
  // Trained sub-models separate their own training subjects almost
  // perfectly, which saturates the objective; the raw-feature arm runs the
  // same search where there is room to improve.
  struct Arm {
    std::size_t improved = 0;
    double worst = 1.0;
    double baseline = 0.0;
  };
  Arm trained_arm;
  Arm raw_arm;
  auto search = [](Arm& arm, const std::vector<Matrix>& per_model, const std::vector<std::string>& subjects,
                   int budget, std::uint64_t seed) {
    const auto z = apply_zscore(fit_zscore(per_model), per_model);
    const auto fit = fit_weighted_accuracy(z, subjects, budget, seed);
    // Recompute both objectives independently of the search's bookkeeping.
    const WeightedRankObjective objective(z, subjects, seed);
    const double fitted = objective(fit.weights.alpha);
    const double ones = objective(std::vector<double>(z.size(), 1.0));
    arm.worst = std::min(arm.worst, fitted - ones);
    arm.baseline += ones / 20.0;
    if (fitted > ones) ++arm.improved;
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto cfg = synthetic_config(seed);
    const auto samples = load_samples(cfg.dataset);
    const auto folds = assign_folds(samples, 5, 0, 4, seed);
    const auto rows = training_indices(samples, folds);
    std::vector<std::string> subjects;
    for (auto r : rows) subjects.push_back(samples[r].subject_id);
    std::vector<Matrix> embedded;
    std::vector<Matrix> raw;
    for (std::size_t m = 0; m < cfg.sub_models.size(); ++m) {
      const auto& sub = cfg.sub_models[m];
      const Matrix features = extract_all(samples, sub.features);
      Matrix selected(static_cast<Eigen::Index>(rows.size()), features.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) selected.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
      const auto trained = train_sub_model(sub, features, rows, subjects, derive_seed(seed, m));
      embedded.push_back(trained.embed(selected));
      raw.push_back(std::move(selected));
    }
    search(trained_arm, embedded, subjects, cfg.weighted_accuracy_budget, seed);
    search(raw_arm, raw, subjects, cfg.weighted_accuracy_budget, seed);
  }
  auto describe = [](const char* name, const Arm& arm) {
    return std::string(name) + ": min gain " + num(arm.worst, 3) + ", strictly better " +
           std::to_string(arm.improved) + "/20, mean all-ones " + num(arm.baseline, 3);
  };
  return {trained_arm.worst >= 0.0 && raw_arm.worst >= 0.0,
          describe("trained embeddings", trained_arm) + "; " + describe("raw features", raw_arm)};
}

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient check", 10, gradient_check},
      {2, "z-score contract", 1, zscore_contract},
      {3, "rank-k oracle equivalence", 5, rank_k_oracle},
      {4, "triplet-correlation calibration", 30, correlation_calibration},
      {5, "ensemble benefit", 600, ensemble_benefit},
      {6, "determinism", 1200, determinism},
      {7, "timing ratio", 0, timing_ratio},
      {8, "real-data recipe", 0, real_data_recipe},
      {9, "weighted-accuracy contract", 180, weighted_accuracy_contract},
  };
  // Positional ids select criteria; `--allow-fail N` keeps a documented,
  // known failure from setting the exit status (it is still printed as FAIL).
  std::vector<int> only;
  std::vector<int> allowed;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--allow-fail" && i + 1 < argc) {
      allowed.push_back(std::atoi(argv[++i]));
    } else {
      only.push_back(std::atoi(argv[i]));
    }
  }

  // ctest hides passing output, so keep a copy of every line on disk.
  std::ofstream results("acceptance_results.txt");
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    results << line << std::flush;
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = o.pass;
    std::string budget;
    if (c.budget_seconds > 0) {
      budget = " budget " + num(c.budget_seconds, 4) + " s";
      if (secs > c.budget_seconds) {
        pass = false;
        o.detail += "; over runtime budget";
      }
    }
    char head[128];
    std::snprintf(head, sizeof head, "criterion %d %-32s %s  [%.2f s%s]  ", c.id, c.name, pass ? "PASS" : "FAIL", secs,
                  budget.c_str());
    emit(head + o.detail + "\n");
    if (!pass && std::find(allowed.begin(), allowed.end(), c.id) != allowed.end()) {
      emit("criterion " + std::to_string(c.id) + " known failure, excluded from exit status (see README)\n");
      continue;
    }
    failed += pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
