#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "reident/experiment.hpp"
#include "reident/metrics.hpp"

namespace reident {

/// Machine-readable report. With `stable`, wall-clock timings are left out
/// so reruns are byte-identical.
nlohmann::json report_to_json(const EvaluationReport& report, bool stable);

/// Aligned-column summary for humans.
std::string report_to_text(const EvaluationReport& report);

/// One CSV per table: sub-model and ensemble CMC curves, relative
/// uncertainty, runtime, and whichever analyses the run produced.
void write_report_csvs(const EvaluationReport& report, const std::filesystem::path& dir);

void write_size_sweep_csv(const std::vector<SizePoint>& curve, const std::filesystem::path& path);

void write_correlation_csv(const std::vector<std::string>& models, const Matrix& correlation,
                           const std::filesystem::path& path);

/// Writes `text` to `path` verbatim.
void write_text(const std::filesystem::path& path, const std::string& text);

struct AccuracyDiff {
  std::string method;
  int k = 0;
  double a = 0.0;
  double b = 0.0;
};

/// Every (method, k) whose mean accuracy differs by more than `tolerance`.
/// Throws ValidationError when the reports do not share the same methods
/// and curve lengths.
std::vector<AccuracyDiff> compare_reports(const nlohmann::json& a, const nlohmann::json& b, double tolerance);

/// Embedding dump rows `subject_id,view_id,e0,...`.
struct EmbeddingDump {
  std::vector<std::string> subject_ids;
  std::vector<std::string> view_ids;
  Matrix values;
};

EmbeddingDump read_embedding_dump(const std::filesystem::path& path);

}  // namespace reident
