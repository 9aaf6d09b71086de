#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reident/config.hpp"
#include "reident/data.hpp"
#include "reident/error.hpp"
#include "reident/experiment.hpp"
#include "reident/log.hpp"
#include "reident/metrics.hpp"
#include "reident/report.hpp"
#include "reident/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reident;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct CommonFlags {
  std::string config;
  std::string out;
  int threads = 1;
  std::optional<std::uint64_t> seed;
  bool stable = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory (overrides config)");
  cmd->add_option("--threads", f.threads, "fold rotations run in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "master seed (overrides config)");
  cmd->add_flag("--stable-output", f.stable, "omit timings from the report JSON");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  return cfg;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void write_run_manifest(const fs::path& dir, const ExperimentConfig& cfg, const EvaluationReport& report,
                        const std::vector<std::string>& argv) {
  json seeds = json::object();
  seeds["master"] = cfg.seed;
  for (const auto& f : report.folds) seeds["fold_" + std::to_string(f.eval_fold)] = f.seeds;
  json files = json::array();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir).generic_string());
  }
  std::sort(files.begin(), files.end());
  write_json(dir / "run_manifest.json", {{"command", argv},
                                         {"config", to_json(cfg)},
                                         {"dataset_hash", report.dataset_hash},
                                         {"seeds", seeds},
                                         {"files", files}});
}

int cmd_run(const CommonFlags& f, const std::vector<std::string>& argv) {
  const ExperimentConfig cfg = resolve(f);
  const std::vector<Sample> samples = load_samples(cfg.dataset);
  fs::create_directories(cfg.output_dir);
  RunOptions opts;
  opts.threads = f.threads;
  if (cfg.save_models || cfg.dump_embeddings) opts.artifact_dir = cfg.output_dir / "artifacts";
  log_info("{} samples, {} sub-models", samples.size(), cfg.sub_models.size());
  const EvaluationReport report = cross_validate(samples, cfg, opts);
  write_json(cfg.output_dir / "report.json", report_to_json(report, f.stable));
  write_text(cfg.output_dir / "report.txt", report_to_text(report));
  write_report_csvs(report, cfg.output_dir / "tables");
  write_run_manifest(cfg.output_dir, cfg, report, argv);
  return 0;
}

int cmd_ablate(const CommonFlags& f, const std::vector<int>& sizes, const std::string& method,
               const std::vector<std::string>& argv) {
  ExperimentConfig cfg = resolve(f);
  cfg.analyses.pairwise = true;
  cfg.analyses.leave_one_out = true;
  cfg.ensembles = {EnsembleKind::concatenation};
  const SubModelConfig* swept = nullptr;
  if (!sizes.empty()) {
    for (const auto& s : cfg.sub_models) {
      if (s.name == method) swept = &s;
    }
    if (!swept) throw ConfigError("--method `" + method + "` is not a configured sub-model");
  }
  const std::vector<Sample> samples = load_samples(cfg.dataset);
  fs::create_directories(cfg.output_dir);
  RunOptions opts;
  opts.threads = f.threads;
  const EvaluationReport report = cross_validate(samples, cfg, opts);
  write_json(cfg.output_dir / "report.json", report_to_json(report, f.stable));
  write_text(cfg.output_dir / "report.txt", report_to_text(report));
  write_report_csvs(report, cfg.output_dir / "tables");
  if (swept) {
    const auto curve = representation_size_sweep(sizes, *swept, samples, cfg, opts);
    write_size_sweep_csv(curve, cfg.output_dir / "tables" / "size_sweep.csv");
  }
  write_run_manifest(cfg.output_dir, cfg, report, argv);
  return 0;
}

int cmd_synth(const SyntheticParams& params, const std::string& out) {
  const auto samples = generate_synthetic(params);
  const fs::path manifest = write_dataset(samples, out);
  write_json(fs::path(out) / "synthetic.json", to_json(params));
  log_info("wrote {} images, manifest {}", samples.size(), manifest.string());
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, double tolerance) {
  auto load = [](const std::string& p) {
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open report " + p);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(p + ": " + e.what());
    }
  };
  const auto diffs = compare_reports(load(a_path), load(b_path), tolerance);
  for (const auto& d : diffs) {
    std::cout << d.method << " rank-" << d.k << ": " << format_double(d.a) << " vs " << format_double(d.b)
              << " (diff " << format_double(d.b - d.a) << ")\n";
  }
  return diffs.empty() ? 0 : kExitRuntime;
}

int cmd_correlate(const std::vector<std::string>& dumps, const std::string& out, std::size_t trials,
                  std::uint64_t seed) {
  if (dumps.size() < 2) throw ValidationError("correlate needs at least two embedding dumps");
  std::vector<std::string> names;
  std::vector<EmbeddingDump> loaded;
  for (const auto& p : dumps) {
    std::string stem = fs::path(p).filename().string();
    if (auto pos = stem.find(".embeddings"); pos != std::string::npos) stem.resize(pos);
    else stem = fs::path(p).stem().string();
    names.push_back(stem);
    loaded.push_back(read_embedding_dump(p));
  }
  // Align rows of every dump to the sample order of the first.
  std::map<std::pair<std::string, std::string>, Eigen::Index> order;
  const auto& first = loaded.front();
  for (std::size_t i = 0; i < first.subject_ids.size(); ++i) {
    order[{first.subject_ids[i], first.view_ids[i]}] = static_cast<Eigen::Index>(i);
  }
  std::vector<Matrix> aligned;
  for (std::size_t d = 0; d < loaded.size(); ++d) {
    const auto& dump = loaded[d];
    if (dump.subject_ids.size() != first.subject_ids.size()) {
      throw ValidationError(dumps[d] + " covers a different sample set than " + dumps[0]);
    }
    Matrix m(dump.values.rows(), dump.values.cols());
    for (std::size_t i = 0; i < dump.subject_ids.size(); ++i) {
      auto it = order.find({dump.subject_ids[i], dump.view_ids[i]});
      if (it == order.end()) throw ValidationError(dumps[d] + " has a sample missing from " + dumps[0]);
      m.row(it->second) = dump.values.row(static_cast<Eigen::Index>(i));
    }
    aligned.push_back(std::move(m));
  }
  const auto n = static_cast<Eigen::Index>(aligned.size());
  Matrix corr(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      corr(i, j) = triplet_correlation(aligned[static_cast<std::size_t>(i)], aligned[static_cast<std::size_t>(j)],
                                       trials, seed);
    }
  }
  write_correlation_csv(names, corr, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (!init_logging_from_env()) {
    std::cerr << "REIDENT_ENS_LOG must be one of error, info, debug\n";
    return kExitConfig;
  }
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"heterogeneous embedding ensembles for re-identification"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "cross-validate every sub-model and ensemble");
  add_common(run, run_flags);

  CommonFlags ablate_flags;
  std::vector<int> sizes;
  std::string sweep_method;
  auto* ablate = app.add_subcommand("ablate", "pairwise and leave-one-out ablations, optional size sweep");
  add_common(ablate, ablate_flags);
  ablate->add_option("--sizes", sizes, "output sizes to sweep")->delimiter(',');
  ablate->add_option("--method", sweep_method, "sub-model to sweep");

  SyntheticParams synth_params;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset and manifest");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--subjects", synth_params.n_subjects);
  synth->add_option("--views", synth_params.views_per_subject);
  synth->add_option("--width", synth_params.width);
  synth->add_option("--height", synth_params.height);
  synth->add_option("--noise-sigma", synth_params.noise_sigma);
  synth->add_option("--shift-max", synth_params.shift_max);
  synth->add_option("--seed", synth_params.seed);

  std::string report_a;
  std::string report_b;
  double tolerance = 0.0;
  auto* compare = app.add_subcommand("compare", "list accuracies that differ beyond a tolerance");
  compare->add_option("report_a", report_a)->required();
  compare->add_option("report_b", report_b)->required();
  compare->add_option("--tolerance", tolerance)->check(CLI::NonNegativeNumber);

  std::vector<std::string> dumps;
  std::string corr_out;
  std::size_t trials = 100000;
  std::uint64_t corr_seed = 1;
  auto* correlate = app.add_subcommand("correlate", "triplet correlation between saved embedding dumps");
  correlate->add_option("dumps", dumps)->required()->check(CLI::ExistingFile);
  correlate->add_option("--out", corr_out)->required();
  correlate->add_option("--trials", trials)->check(CLI::PositiveNumber);
  correlate->add_option("--seed", corr_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags, args);
    if (*ablate) return cmd_ablate(ablate_flags, sizes, sweep_method, args);
    if (*synth) return cmd_synth(synth_params, synth_out);
    if (*compare) return cmd_compare(report_a, report_b, tolerance);
    if (*correlate) return cmd_correlate(dumps, corr_out, trials, corr_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "invalid network: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IngestError& e) {
    std::cerr << "cannot read input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FoldError& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
