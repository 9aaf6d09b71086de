#include "reident/report.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "reident/error.hpp"
#include "reident/text.hpp"

namespace reident {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      row.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  return out;
}

}  // namespace

json report_to_json(const EvaluationReport& r, bool stable) {
  json doc;
  doc["format"] = "reident-report/1";
  doc["dataset"] = {{"hash", r.dataset_hash}, {"samples", r.n_samples}, {"subjects", r.n_subjects}};
  doc["config"] = r.config;

  json methods = json::array();
  for (const auto& s : r.summary) {
    json m{{"name", s.name},
           {"family", s.family},
           {"rank_k", {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}}}};
    m["relative_uncertainty"] = s.relative_uncertainty ? json(*s.relative_uncertainty) : json(nullptr);
    methods.push_back(std::move(m));
  }
  doc["methods"] = std::move(methods);

  json folds = json::array();
  for (const auto& f : r.folds) {
    json fj{{"eval_fold", f.eval_fold}, {"n_train", f.n_train}, {"n_query", f.n_query}, {"n_gallery", f.n_gallery}};
    json cmc = json::object();
    for (const auto& name : r.methods) cmc[name] = f.cmc.at(name);
    fj["rank_k"] = std::move(cmc);
    fj["seeds"] = f.seeds;
    fj["final_train_loss"] = f.final_train_loss;
    if (!f.weights.empty()) fj["weights"] = f.weights;
    if (!f.weighted_accuracy_objective.empty()) fj["weighted_accuracy_objective"] = f.weighted_accuracy_objective;
    if (f.all_rank1) fj["all_sub_models_rank1"] = *f.all_rank1;
    if (!f.pair_rank1.empty()) {
      json pairs = json::array();
      for (const auto& [key, value] : f.pair_rank1) pairs.push_back({{"a", key.first}, {"b", key.second}, {"rank1", value}});
      fj["pair_rank1"] = std::move(pairs);
    }
    if (!f.without_rank1.empty()) fj["leave_one_out_rank1"] = f.without_rank1;
    if (f.correlation) fj["correlation"] = matrix_to_json(*f.correlation);
    if (!stable) fj["seconds"] = f.seconds;
    folds.push_back(std::move(fj));
  }
  doc["folds"] = std::move(folds);

  if (r.improvement) {
    doc["pairwise_improvement"] = {{"models", r.improvement->models}, {"delta", matrix_to_json(r.improvement->delta)}};
  }
  if (!r.leave_one_out.empty()) {
    json loo = json::object();
    for (const auto& [name, ms] : r.leave_one_out) loo[name] = {{"mean", ms.first}, {"std", ms.second}};
    doc["leave_one_out"] = std::move(loo);
  }
  if (r.correlation) doc["correlation"] = {{"models", r.sub_models}, {"matrix", matrix_to_json(*r.correlation)}};
  if (!stable) doc["seconds"] = {{"feature_extraction", r.feature_seconds}};
  return doc;
}

std::string report_to_text(const EvaluationReport& r) {
  std::ostringstream out;
  out << "dataset " << r.dataset_hash << "  samples " << r.n_samples << "  subjects " << r.n_subjects << "  folds "
      << r.folds.size() << "\n\n";
  std::size_t width = 8;
  for (const auto& s : r.summary) width = std::max(width, s.name.size() + 2);
  const std::vector<std::size_t> ks = {1, 5, 10};
  out << std::left << std::setw(static_cast<int>(width)) << "method";
  for (std::size_t k : ks) out << std::setw(18) << ("rank-" + std::to_string(k));
  out << "rel.unc\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& s : r.summary) {
    out << std::setw(static_cast<int>(width)) << s.name;
    for (std::size_t k : ks) {
      if (k <= s.mean.size()) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << s.mean[k - 1] << " +- " << s.std[k - 1];
        out << std::setw(18) << cell.str();
      } else {
        out << std::setw(18) << "-";
      }
    }
    if (s.relative_uncertainty) out << *s.relative_uncertainty;
    else out << "-";
    out << '\n';
  }
  if (r.improvement) {
    out << "\ntwo-model concatenation, rank-1 change over the better sub-model\n";
    for (std::size_t i = 0; i < r.improvement->models.size(); ++i) {
      for (std::size_t j = i + 1; j < r.improvement->models.size(); ++j) {
        out << "  " << r.improvement->models[i] << " + " << r.improvement->models[j] << ": " << std::showpos
            << r.improvement->delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << std::noshowpos
            << '\n';
      }
    }
  }
  if (!r.leave_one_out.empty()) {
    out << "\nleave-one-out, rank-1 lost when dropping a sub-model\n";
    for (const auto& [name, ms] : r.leave_one_out) {
      out << "  " << name << ": " << std::showpos << ms.first << std::noshowpos << " +- " << ms.second << '\n';
    }
  }
  return out.str();
}

void write_report_csvs(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const std::string family : {"sub_model", "ensemble"}) {
    auto out = open_out(dir / ("rank_k_" + family + "s.csv"));
    out << "method,k,accuracy,std,min,max\n";
    for (const auto& s : r.summary) {
      if (s.family != family) continue;
      for (std::size_t k = 0; k < s.mean.size(); ++k) {
        out << s.name << ',' << k + 1 << ',' << format_double(s.mean[k]) << ',' << format_double(s.std[k]) << ','
            << format_double(s.min[k]) << ',' << format_double(s.max[k]) << '\n';
      }
    }
  }
  {
    auto out = open_out(dir / "relative_uncertainty.csv");
    out << "method,k,relative_uncertainty\n";
    for (const auto& s : r.summary) {
      if (s.relative_uncertainty) out << s.name << ',' << s.mean.size() << ',' << format_double(*s.relative_uncertainty) << '\n';
    }
  }
  {
    auto out = open_out(dir / "runtime.csv");
    out << "method,train_seconds,inference_seconds,rank1\n";
    for (const auto& s : r.summary) {
      double train = 0.0;
      double infer = 0.0;
      for (const auto& f : r.folds) {
        const std::string train_key = (s.family == "sub_model" ? "train/" : "fit/") + s.name;
        if (auto it = f.seconds.find(train_key); it != f.seconds.end()) train += it->second;
        if (auto it = f.seconds.find("inference/" + s.name); it != f.seconds.end()) infer += it->second;
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, r.folds.size()));
      out << s.name << ',' << format_double(train / n) << ',' << format_double(infer / n) << ','
          << format_double(s.mean.empty() ? 0.0 : s.mean.front()) << '\n';
    }
  }
  if (r.improvement) {
    auto out = open_out(dir / "pairwise_improvement.csv");
    out << "model_a,model_b,delta\n";
    const auto& m = *r.improvement;
    for (std::size_t i = 0; i < m.models.size(); ++i) {
      for (std::size_t j = 0; j < m.models.size(); ++j) {
        if (i == j) continue;
        out << m.models[i] << ',' << m.models[j] << ','
            << format_double(m.delta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
      }
    }
  }
  if (!r.leave_one_out.empty()) {
    auto out = open_out(dir / "leave_one_out.csv");
    out << "model,delta,std\n";
    for (const auto& [name, ms] : r.leave_one_out) {
      out << name << ',' << format_double(ms.first) << ',' << format_double(ms.second) << '\n';
    }
  }
  if (r.correlation) write_correlation_csv(r.sub_models, *r.correlation, dir / "correlation.csv");
}

void write_size_sweep_csv(const std::vector<SizePoint>& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "size,accuracy,std\n";
  for (const auto& p : curve) out << p.size << ',' << format_double(p.mean) << ',' << format_double(p.std) << '\n';
}

void write_correlation_csv(const std::vector<std::string>& models, const Matrix& correlation,
                           const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "model_a,model_b,correlation\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = 0; j < models.size(); ++j) {
      out << models[i] << ',' << models[j] << ','
          << format_double(correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

std::vector<AccuracyDiff> compare_reports(const json& a, const json& b, double tolerance) {
  auto curves = [](const json& doc, const char* which) {
    std::map<std::string, std::vector<double>> out;
    if (!doc.is_object() || !doc.contains("methods") || !doc.at("methods").is_array()) {
      throw ValidationError(std::string("report ") + which + " has no `methods` list");
    }
    for (const auto& m : doc.at("methods")) {
      try {
        out[m.at("name").get<std::string>()] = m.at("rank_k").at("mean").get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw ValidationError(std::string("report ") + which + " is malformed: " + e.what());
      }
    }
    return out;
  };
  const auto ca = curves(a, "A");
  const auto cb = curves(b, "B");
  for (const auto& [name, curve] : ca) {
    if (!cb.contains(name)) throw ValidationError("method `" + name + "` missing from report B");
    if (cb.at(name).size() != curve.size()) throw ValidationError("method `" + name + "` has differing rank counts");
  }
  for (const auto& [name, curve] : cb) {
    if (!ca.contains(name)) throw ValidationError("method `" + name + "` missing from report A");
  }
  std::vector<AccuracyDiff> diffs;
  for (const auto& [name, curve] : ca) {
    const auto& other = cb.at(name);
    for (std::size_t k = 0; k < curve.size(); ++k) {
      if (std::abs(curve[k] - other[k]) > tolerance) diffs.push_back({name, static_cast<int>(k + 1), curve[k], other[k]});
    }
  }
  return diffs;
}

EmbeddingDump read_embedding_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty embedding dump");
  const auto header = split(strip_cr(line), ',');
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "view_id") {
    throw IngestError(path.string() + ": header must be `subject_id,view_id,e0,...`");
  }
  const std::size_t dims = header.size() - 2;
  EmbeddingDump dump;
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    const auto fields = split(line, ',');
    if (fields.size() != dims + 2) throw IngestError(path.string() + ": row " + std::to_string(row) + " is ragged");
    dump.subject_ids.push_back(fields[0]);
    dump.view_ids.push_back(fields[1]);
    for (std::size_t i = 2; i < fields.size(); ++i) {
      values.push_back(parse_double(fields[i], path.string() + ": row " + std::to_string(row)));
    }
  }
  dump.values = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(dims));
  return dump;
}

}  // namespace reident
