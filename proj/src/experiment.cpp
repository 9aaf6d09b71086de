#include "reident/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "reident/error.hpp"
#include "reident/log.hpp"
#include "reident/metrics.hpp"
#include "reident/random.hpp"
#include "reident/text.hpp"

namespace reident {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<std::string> subjects_of(const std::vector<Sample>& samples, const std::vector<std::size_t>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(samples[r].subject_id);
  return out;
}

}  // namespace

Matrix extract_all(const std::vector<Sample>& samples, const FeatureSettings& settings) {
  std::vector<FeatureVector> vectors;
  if (settings.method == FeatureMethod::imported) {
    vectors = join_imported(import_features(settings.import_path, settings.import_path.stem().string()), samples);
  } else {
    vectors.reserve(samples.size());
    for (const Sample& s : samples) vectors.push_back(extract_features(s, settings));
  }
  if (vectors.empty()) return Matrix(0, 0);
  const std::size_t dims = vectors.front().dims();
  Matrix out(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].dims() != dims) {
      throw ValidationError(to_string(settings.method) + " features of sample " + samples[i].subject_id + "/" +
                            samples[i].view_id + " have " + std::to_string(vectors[i].dims()) + " dims, expected " +
                            std::to_string(dims) + " (use a fixed resize for images of varying size)");
    }
    for (std::size_t d = 0; d < dims; ++d) {
      const double v = vectors[i].values[d];
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value for sample " + samples[i].subject_id);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v;
    }
  }
  return out;
}

NetworkSpec sub_model_network(const SubModelConfig& config, std::size_t feature_dims) {
  if (config.features.method == FeatureMethod::raw_image) {
    const auto [w, h] = *config.features.resize;
    return NetworkSpec::conv_image(h, w, config.conv_layers, config.hidden, config.output_dim);
  }
  return NetworkSpec::dense_head(static_cast<int>(feature_dims), config.hidden, config.output_dim);
}

InputScaler InputScaler::fit(const Matrix& rows, bool per_dimension) {
  if (rows.rows() < 2) throw ValidationError("input scaling needs at least 2 training rows");
  constexpr double kFloor = 1e-8;
  InputScaler s;
  if (per_dimension) {
    s.mean = rows.colwise().mean().transpose();
    const Vector var = (rows.rowwise() - s.mean.transpose()).array().square().colwise().mean().transpose();
    s.stddev = var.array().sqrt().max(kFloor).matrix();
  } else {
    const double mu = rows.mean();
    const double sd = std::sqrt((rows.array() - mu).square().mean());
    s.mean = Vector::Constant(rows.cols(), mu);
    s.stddev = Vector::Constant(rows.cols(), std::max(sd, kFloor));
  }
  return s;
}

Matrix InputScaler::apply(const Matrix& rows) const {
  if (rows.cols() != mean.size()) throw ValidationError("input scaler width mismatch");
  return (rows.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
}

TrainedSubModel train_sub_model(const SubModelConfig& config, const Matrix& features,
                                const std::vector<std::size_t>& train_rows, const std::vector<std::string>& subjects,
                                std::uint64_t seed) {
  const auto start = Clock::now();
  TrainedSubModel out;
  out.name = config.name;
  const Matrix train = select_rows(features, train_rows);
  out.scaler = InputScaler::fit(train, config.features.method != FeatureMethod::raw_image);
  TrainConfig cfg = config.train;
  cfg.seed = seed;
  const NetworkSpec spec = sub_model_network(config, static_cast<std::size_t>(features.cols()));
  out.model = train_siamese(LabeledMatrix{out.scaler.apply(train), subjects}, spec, cfg);
  out.train_seconds = seconds_since(start);
  return out;
}

std::string git_blob_hash(const std::string& content) {
  const std::string payload = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::string dataset_hash(const DatasetSource& source) {
  if (source.manifest) {
    std::ifstream in(*source.manifest, std::ios::binary);
    if (!in) throw IngestError("cannot open manifest " + source.manifest->string());
    return git_blob_hash(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  }
  return git_blob_hash(to_json(*source.synthetic).dump());
}

std::vector<Sample> load_samples(const DatasetSource& source) {
  if (source.manifest) return load_dataset(*source.manifest);
  return generate_synthetic(*source.synthetic);
}

const MethodSummary& EvaluationReport::method(const std::string& name) const {
  for (const auto& m : summary) {
    if (m.name == name) return m;
  }
  throw ValidationError("report has no method `" + name + "`");
}

namespace {

void dump_embeddings(const std::filesystem::path& path, const std::vector<Sample>& samples,
                     const std::vector<std::size_t>& rows, const Matrix& embeddings) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  out << "subject_id,view_id";
  for (Eigen::Index d = 0; d < embeddings.cols(); ++d) out << ",e" << d;
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << samples[rows[i]].subject_id << ',' << samples[rows[i]].view_id;
    for (Eigen::Index d = 0; d < embeddings.cols(); ++d) {
      out << ',' << format_double(embeddings(static_cast<Eigen::Index>(i), d));
    }
    out << '\n';
  }
}

struct FoldContext {
  const std::vector<Sample>& samples;
  const ExperimentConfig& config;
  const std::vector<Matrix>& features;
  const FoldAssignment& base_assignment;
  const RunOptions& options;
};

FoldResult run_fold(const FoldContext& ctx, int eval_fold) {
  std::string phase = "split";
  try {
    const auto& cfg = ctx.config;
    const auto& samples = ctx.samples;
    FoldResult result;
    result.eval_fold = eval_fold;

    FoldAssignment assignment = ctx.base_assignment;
    assignment.eval_fold = eval_fold;
    const std::uint64_t query_seed = derive_seed(cfg.seed, 0x5155, static_cast<std::uint64_t>(eval_fold));
    result.seeds["query"] = query_seed;
    const QueryGallerySplit split = build_query_gallery(samples, assignment, query_seed);
    const std::vector<std::size_t> train_rows = training_indices(samples, assignment);
    const auto train_ids = subjects_of(samples, train_rows);
    const auto query_ids = subjects_of(samples, split.query);
    const auto gallery_ids = subjects_of(samples, split.gallery);
    result.n_train = train_rows.size();
    result.n_query = split.query.size();
    result.n_gallery = split.gallery.size();
    const int k_max = std::min<int>(cfg.analyses.max_rank, static_cast<int>(split.gallery.size()));

    std::optional<std::filesystem::path> fold_dir;
    if (ctx.options.artifact_dir) {
      fold_dir = *ctx.options.artifact_dir / ("fold_" + std::to_string(eval_fold));
      std::filesystem::create_directories(*fold_dir);
    }

    const std::size_t m_count = cfg.sub_models.size();
    std::vector<Matrix> train_embs, query_embs, gallery_embs;
    std::vector<std::string> names;
    for (std::size_t m = 0; m < m_count; ++m) {
      const SubModelConfig& sub = cfg.sub_models[m];
      phase = "training " + sub.name;
      const std::uint64_t seed = derive_seed(cfg.seed, 0x5355, static_cast<std::uint64_t>(eval_fold), m);
      result.seeds["train/" + sub.name] = seed;
      const TrainedSubModel trained = train_sub_model(sub, ctx.features[m], train_rows, train_ids, seed);
      result.seconds["train/" + sub.name] = trained.train_seconds;
      result.final_train_loss[sub.name] = trained.model.train_log.empty() ? 0.0 : trained.model.train_log.back();

      phase = "inference " + sub.name;
      const auto start = Clock::now();
      train_embs.push_back(trained.embed(select_rows(ctx.features[m], train_rows)));
      query_embs.push_back(trained.embed(select_rows(ctx.features[m], split.query)));
      gallery_embs.push_back(trained.embed(select_rows(ctx.features[m], split.gallery)));
      result.cmc[sub.name] = cmc_curve(rank_by_distance(query_embs.back(), gallery_embs.back()), query_ids,
                                       gallery_ids, k_max);
      result.seconds["inference/" + sub.name] = seconds_since(start);
      names.push_back(sub.name);

      if (fold_dir) {
        phase = "writing artifacts " + sub.name;
        if (cfg.save_models) save_model(trained.model, *fold_dir / (sub.name + ".model"));
        if (cfg.dump_embeddings) {
          std::vector<std::size_t> eval_rows = split.query;
          eval_rows.insert(eval_rows.end(), split.gallery.begin(), split.gallery.end());
          Matrix eval_embs(query_embs.back().rows() + gallery_embs.back().rows(), query_embs.back().cols());
          eval_embs << query_embs.back(), gallery_embs.back();
          dump_embeddings(*fold_dir / (sub.name + ".embeddings.csv"), samples, eval_rows, eval_embs);
        }
      }
    }

    phase = "z-score fit";
    const ZScoreStats stats = fit_zscore(train_embs);
    const std::vector<Matrix> z_train = apply_zscore(stats, train_embs);

    for (EnsembleKind kind : cfg.ensembles) {
      const std::string name = to_string(kind);
      phase = "fitting " + name;
      auto start = Clock::now();
      std::optional<EnsembleTransform> transform;
      switch (kind) {
        case EnsembleKind::concatenation:
          transform = EnsembleTransform::concatenation(stats);
          break;
        case EnsembleKind::weighted_triplet: {
          TrainConfig tc = cfg.weighted_triplet_train;
          tc.seed = derive_seed(cfg.seed, 0x5754, static_cast<std::uint64_t>(eval_fold));
          result.seeds["fit/" + name] = tc.seed;
          WeightedTripletFit fit = fit_weighted_triplet(z_train, train_ids, tc);
          result.weights[name] = fit.weights.alpha;
          transform = EnsembleTransform::weighted(kind, stats, fit.weights);
          break;
        }
        case EnsembleKind::weighted_accuracy: {
          const std::uint64_t seed = derive_seed(cfg.seed, 0x5741, static_cast<std::uint64_t>(eval_fold));
          result.seeds["fit/" + name] = seed;
          WeightedAccuracyFit fit = fit_weighted_accuracy(z_train, train_ids, cfg.weighted_accuracy_budget, seed);
          result.weights[name] = fit.weights.alpha;
          result.weighted_accuracy_objective["fitted"] = fit.objective;
          result.weighted_accuracy_objective["all_ones"] = fit.baseline_objective;
          transform = EnsembleTransform::weighted(kind, stats, fit.weights);
          break;
        }
        case EnsembleKind::nn_triplet: {
          TrainConfig tc = cfg.nn_triplet_train;
          tc.seed = derive_seed(cfg.seed, 0x4e4e, static_cast<std::uint64_t>(eval_fold));
          result.seeds["fit/" + name] = tc.seed;
          EmbeddingModel model = fit_nn_triplet(z_train, train_ids, tc, cfg.nn_triplet_hidden, cfg.nn_triplet_output_dim);
          result.final_train_loss[name] = model.train_log.empty() ? 0.0 : model.train_log.back();
          transform = EnsembleTransform::nn_triplet(stats, std::move(model));
          break;
        }
        case EnsembleKind::majority_vote:
          transform = EnsembleTransform::majority_vote(m_count);
          break;
      }
      result.seconds["fit/" + name] = seconds_since(start);

      phase = "inference " + name;
      start = Clock::now();
      result.cmc[name] = cmc_curve(transform->rank(query_embs, gallery_embs), query_ids, gallery_ids, k_max);
      result.seconds["inference/" + name] = seconds_since(start);
      if (fold_dir && cfg.save_models) transform->save(*fold_dir / (name + ".transform"));
    }

    auto subset_rank1 = [&](const std::vector<std::size_t>& subset) {
      std::vector<Matrix> tr, q, g;
      for (std::size_t i : subset) {
        tr.push_back(train_embs[i]);
        q.push_back(query_embs[i]);
        g.push_back(gallery_embs[i]);
      }
      const auto t = EnsembleTransform::concatenation(fit_zscore(tr));
      return rank_k_accuracy(t.rank(q, g), query_ids, gallery_ids, 1);
    };

    if (cfg.analyses.pairwise || cfg.analyses.leave_one_out) {
      std::vector<std::size_t> all(m_count);
      for (std::size_t i = 0; i < m_count; ++i) all[i] = i;
      result.all_rank1 = subset_rank1(all);
    }
    if (cfg.analyses.pairwise) {
      phase = "pairwise ensembles";
      for (std::size_t i = 0; i < m_count; ++i) {
        for (std::size_t j = i + 1; j < m_count; ++j) result.pair_rank1[{names[i], names[j]}] = subset_rank1({i, j});
      }
    }
    if (cfg.analyses.leave_one_out && m_count >= 2) {
      phase = "leave-one-out ensembles";
      for (std::size_t skip = 0; skip < m_count; ++skip) {
        std::vector<std::size_t> subset;
        for (std::size_t i = 0; i < m_count; ++i) {
          if (i != skip) subset.push_back(i);
        }
        result.without_rank1[names[skip]] = subset_rank1(subset);
      }
    }
    if (cfg.analyses.correlation_trials > 0) {
      phase = "triplet correlation";
      const auto n = static_cast<Eigen::Index>(m_count);
      Matrix corr(n, n);
      std::vector<Matrix> eval_embs;
      for (std::size_t m = 0; m < m_count; ++m) {
        Matrix e(query_embs[m].rows() + gallery_embs[m].rows(), query_embs[m].cols());
        e << query_embs[m], gallery_embs[m];
        eval_embs.push_back(std::move(e));
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const std::uint64_t seed = derive_seed(cfg.seed, 0x434f, static_cast<std::uint64_t>(eval_fold),
                                                 static_cast<std::uint64_t>(i * n + j));
          corr(i, j) = triplet_correlation(eval_embs[static_cast<std::size_t>(i)], eval_embs[static_cast<std::size_t>(j)],
                                           cfg.analyses.correlation_trials, seed);
        }
      }
      result.correlation = std::move(corr);
    }
    log_info("fold {} done: {} train / {} query / {} gallery images", eval_fold, result.n_train, result.n_query,
             result.n_gallery);
    return result;
  } catch (const FoldError&) {
    throw;
  } catch (const std::exception& e) {
    throw FoldError(eval_fold, phase, e.what());
  }
}

std::vector<double> column(const std::vector<FoldResult>& folds, const std::string& method, std::size_t k) {
  std::vector<double> out;
  for (const auto& f : folds) {
    const auto& curve = f.cmc.at(method);
    if (k < curve.size()) out.push_back(curve[k]);
  }
  return out;
}

}  // namespace

EvaluationReport cross_validate(const std::vector<Sample>& samples, const ExperimentConfig& config,
                                const RunOptions& options) {
  validate_samples(samples);
  if (config.sub_models.empty()) throw ConfigError("at least one sub-model required");

  EvaluationReport report;
  report.config = to_json(config);
  report.config.erase("output_dir");
  report.dataset_hash = dataset_hash(config.dataset);
  report.n_samples = samples.size();
  report.n_subjects = distinct_subjects(samples).size();

  auto start = Clock::now();
  std::vector<Matrix> features;
  for (const auto& sub : config.sub_models) {
    log_info("extracting {} features ({})", sub.name, to_string(sub.features.method));
    features.push_back(extract_all(samples, sub.features));
    report.sub_models.push_back(sub.name);
  }
  report.feature_seconds = seconds_since(start);

  const int first_eval = config.folds.holdout_fold == 0 ? 1 : 0;
  const FoldAssignment base = assign_folds(samples, config.folds.k_folds, first_eval, config.folds.holdout_fold,
                                           derive_seed(config.seed, 0x464f));
  std::vector<int> rotations;
  for (int f = 0; f < config.folds.k_folds; ++f) {
    if (f != config.folds.holdout_fold) rotations.push_back(f);
  }

  const FoldContext ctx{samples, config, features, base, options};
  report.folds.resize(rotations.size());
  const std::size_t threads = static_cast<std::size_t>(std::max(1, options.threads));
  if (threads == 1) {
    for (std::size_t r = 0; r < rotations.size(); ++r) report.folds[r] = run_fold(ctx, rotations[r]);
  } else {
    std::vector<std::exception_ptr> errors(rotations.size());
    for (std::size_t begin = 0; begin < rotations.size(); begin += threads) {
      std::vector<std::thread> pool;
      for (std::size_t r = begin; r < std::min(rotations.size(), begin + threads); ++r) {
        pool.emplace_back([&, r] {
          try {
            report.folds[r] = run_fold(ctx, rotations[r]);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  report.methods = report.sub_models;
  for (EnsembleKind k : config.ensembles) report.methods.push_back(to_string(k));
  for (const auto& name : report.methods) {
    MethodSummary s;
    s.name = name;
    s.family = std::find(report.sub_models.begin(), report.sub_models.end(), name) != report.sub_models.end()
                   ? "sub_model"
                   : "ensemble";
    std::size_t k_count = std::numeric_limits<std::size_t>::max();
    for (const auto& f : report.folds) k_count = std::min(k_count, f.cmc.at(name).size());
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto values = column(report.folds, name, k);
      s.mean.push_back(mean(values));
      s.std.push_back(sample_std(values));
      s.min.push_back(*std::min_element(values.begin(), values.end()));
      s.max.push_back(*std::max_element(values.begin(), values.end()));
    }
    if (report.folds.size() >= 2 && k_count > 0 && s.mean.back() > 0.0) {
      s.relative_uncertainty = relative_uncertainty(column(report.folds, name, k_count - 1));
    }
    report.summary.push_back(std::move(s));
  }

  if (config.analyses.pairwise && report.sub_models.size() >= 2) {
    std::map<std::string, double> single;
    for (const auto& name : report.sub_models) single[name] = report.method(name).mean.front();
    std::map<std::pair<std::string, std::string>, double> pairs;
    for (const auto& [key, value] : report.folds.front().pair_rank1) {
      std::vector<double> values;
      for (const auto& f : report.folds) values.push_back(f.pair_rank1.at(key));
      pairs[key] = mean(values);
    }
    report.improvement = pairwise_improvement_matrix(report.sub_models, single, pairs);
  }
  if (config.analyses.leave_one_out && report.sub_models.size() >= 2) {
    for (const auto& name : report.sub_models) {
      std::vector<double> deltas;
      for (const auto& f : report.folds) {
        deltas.push_back(leave_one_out_ablation(*f.all_rank1, {name}, f.without_rank1).at(name));
      }
      report.leave_one_out[name] = {mean(deltas), sample_std(deltas)};
    }
  }
  if (config.analyses.correlation_trials > 0) {
    Matrix sum = Matrix::Zero(report.folds.front().correlation->rows(), report.folds.front().correlation->cols());
    for (const auto& f : report.folds) sum += *f.correlation;
    report.correlation = sum / static_cast<double>(report.folds.size());
  }
  return report;
}

std::vector<SizePoint> representation_size_sweep(const std::vector<int>& sizes, const SubModelConfig& sub_model,
                                                 const std::vector<Sample>& samples, const ExperimentConfig& config,
                                                 const RunOptions& options) {
  std::vector<SizePoint> curve;
  for (int size : sizes) {
    if (size < 1) throw ValidationError("representation sizes must be >= 1");
    ExperimentConfig c = config;
    c.sub_models = {sub_model};
    c.sub_models.front().output_dim = size;
    c.ensembles.clear();
    c.analyses = AnalysisConfig{};
    c.analyses.max_rank = config.analyses.max_rank;
    RunOptions o = options;
    o.artifact_dir.reset();
    const EvaluationReport r = cross_validate(samples, c, o);
    const MethodSummary& s = r.method(sub_model.name);
    curve.push_back({size, s.mean.front(), s.std.front()});
  }
  return curve;
}

}  // namespace reident
