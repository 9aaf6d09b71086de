#include "reident/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "reident/error.hpp"
#include "reident/random.hpp"
#include "reident/text.hpp"

namespace reident {

void validate_samples(const std::vector<Sample>& samples) {
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.width < kMinImageExtent || s.height < kMinImageExtent) {
      throw ValidationError("sample " + std::to_string(i) + " (" + s.subject_id + "/" + s.view_id +
                            ") is " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                            ", minimum is 16x16");
    }
    if (s.pixels.size() != static_cast<std::size_t>(s.width) * s.height * 3) {
      throw ValidationError("sample " + std::to_string(i) + " has a pixel buffer of wrong size");
    }
    if (!seen.emplace(s.subject_id, s.view_id).second) {
      throw ValidationError("duplicate (subject_id, view_id) = (" + s.subject_id + ", " +
                            s.view_id + ")");
    }
  }
}

namespace {

Sample decode_image(const std::filesystem::path& path, std::size_t row) {
  if (!std::filesystem::exists(path)) {
    throw IngestError("manifest row " + std::to_string(row) + ": file not found: " +
                      path.string());
  }
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IngestError("manifest row " + std::to_string(row) + ": cannot decode image " +
                      path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Sample s;
  s.width = rgb.cols;
  s.height = rgb.rows;
  s.pixels.resize(static_cast<std::size_t>(s.width) * s.height * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const std::uint8_t* src = rgb.ptr<std::uint8_t>(y);
    std::copy(src, src + s.width * 3, s.pixels.begin() + static_cast<std::ptrdiff_t>(y) * s.width * 3);
  }
  return s;
}

}  // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestError("cannot open manifest " + manifest_path.string());

  std::string line;
  if (!std::getline(in, line)) return {};
  if (strip_cr(line) != "path,subject_id,view_id,tag") {
    throw IngestError("manifest header must be `path,subject_id,view_id,tag`, got `" + line + "`");
  }

  const auto base = manifest_path.parent_path();
  std::vector<Sample> samples;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    auto fields = split(line, ',');
    if (fields.size() != 4) {
      throw IngestError("manifest row " + std::to_string(row) + ": expected 4 fields, got " +
                        std::to_string(fields.size()) + " (commas inside paths are not supported)");
    }
    std::filesystem::path path = fields[0];
    if (path.is_relative()) path = base / path;
    Sample s = decode_image(path, row);
    s.subject_id = fields[1];
    s.view_id = fields[2];
    s.tag = fields[3];
    samples.push_back(std::move(s));
  }
  validate_samples(samples);
  return samples;
}

namespace {

// Periodic bilinear interpolation of a coarse grid onto the full image.
double periodic_bilinear(const std::vector<double>& grid, int gw, int gh, double gx, double gy) {
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const double fx = gx - x0;
  const double fy = gy - y0;
  auto g = [&](int x, int y) {
    x = ((x % gw) + gw) % gw;
    y = ((y % gh) + gh) % gh;
    return grid[static_cast<std::size_t>(y) * gw + x];
  };
  return (1 - fy) * ((1 - fx) * g(x0, y0) + fx * g(x0 + 1, y0)) +
         fy * ((1 - fx) * g(x0, y0 + 1) + fx * g(x0 + 1, y0 + 1));
}

constexpr int kTextureCell = 16;
constexpr double kTemplateLow = 90.0;
constexpr double kTemplateHigh = 165.0;
constexpr double kDetailBase = 15.0;
constexpr double kMeanDeviation = 8.0;
constexpr double kDetailDeviation = 6.0;
constexpr int kBrightnessRange = 10;

struct Template {
  int gw = 0;
  int gh = 0;
  std::vector<double> mean[3];
};

// Coarse per-channel color field shared by every subject. Subjects differ
// from it only by small deviations, so no single statistic separates them.
Template shared_template(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  Template t;
  t.gw = std::max(2, (width + kTextureCell - 1) / kTextureCell);
  t.gh = std::max(2, (height + kTextureCell - 1) / kTextureCell);
  for (auto& m : t.mean) {
    m.resize(static_cast<std::size_t>(t.gw) * t.gh);
    for (auto& v : m) v = rng.uniform(kTemplateLow, kTemplateHigh);
  }
  return t;
}

// Integer-valued texture: template field plus a subject offset per coarse
// cell, and fine detail whose per-channel amplitude also varies by subject.
std::vector<int> subject_texture(const Template& t, int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  const double sx = static_cast<double>(t.gw) / width;
  const double sy = static_cast<double>(t.gh) / height;

  std::vector<int> tex(static_cast<std::size_t>(width) * height * 3);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> base = t.mean[c];
    std::vector<double> amplitude(base.size(), kDetailBase);
    for (auto& v : base) v += rng.uniform(-kMeanDeviation, kMeanDeviation);
    for (auto& v : amplitude) v = std::max(0.0, v + rng.uniform(-kDetailDeviation, kDetailDeviation));
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double b = periodic_bilinear(base, t.gw, t.gh, x * sx, y * sy);
        const double a = periodic_bilinear(amplitude, t.gw, t.gh, x * sx, y * sy);
        const double detail = rng.uniform(-1.0, 1.0) * a;
        tex[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<int>(std::lround(b + detail));
      }
    }
  }
  return tex;
}

}  // namespace

std::vector<Sample> generate_synthetic(const SyntheticParams& p) {
  if (p.n_subjects < 2) throw ValidationError("synthetic data needs at least 2 subjects");
  if (p.views_per_subject < 2) throw ValidationError("synthetic data needs at least 2 views per subject");
  if (p.width < 32 || p.height < 32) throw ValidationError("synthetic images must be at least 32x32");
  if (p.noise_sigma < 0 || p.shift_max < 0) throw ValidationError("noise_sigma and shift_max must be >= 0");

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(p.n_subjects) * p.views_per_subject);
  const int digits = static_cast<int>(std::to_string(p.n_subjects - 1).size());
  const Template shared = shared_template(p.width, p.height, derive_seed(p.seed, 3));
  for (int s = 0; s < p.n_subjects; ++s) {
    const auto tex = subject_texture(shared, p.width, p.height, derive_seed(p.seed, 1, s));
    std::string subject = std::to_string(s);
    subject.insert(0, static_cast<std::size_t>(digits) - subject.size(), '0');
    for (int v = 0; v < p.views_per_subject; ++v) {
      Rng rng(derive_seed(p.seed, 2, s, v));
      const int dx = static_cast<int>(rng.uniform_int(-p.shift_max, p.shift_max));
      const int dy = static_cast<int>(rng.uniform_int(-p.shift_max, p.shift_max));
      const int offset = static_cast<int>(rng.uniform_int(-kBrightnessRange, kBrightnessRange));

      Sample out;
      out.width = p.width;
      out.height = p.height;
      out.subject_id = "s" + subject;
      out.view_id = std::to_string(v);
      out.tag = "dx=" + std::to_string(dx) + ";dy=" + std::to_string(dy) +
                ";b=" + std::to_string(offset);
      out.pixels.resize(static_cast<std::size_t>(p.width) * p.height * 3);
      for (int y = 0; y < p.height; ++y) {
        const int sy = (((y - dy) % p.height) + p.height) % p.height;
        for (int x = 0; x < p.width; ++x) {
          const int sx = (((x - dx) % p.width) + p.width) % p.width;
          for (int c = 0; c < 3; ++c) {
            double value = tex[(static_cast<std::size_t>(sy) * p.width + sx) * 3 + c] + offset;
            if (p.noise_sigma > 0) value += p.noise_sigma * rng.normal();
            out.at(y, x, c) =
                static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
          }
        }
      }
      samples.push_back(std::move(out));
    }
  }
  return samples;
}

std::filesystem::path write_dataset(const std::vector<Sample>& samples,
                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw IngestError("cannot write " + manifest.string());
  out << "path,subject_id,view_id,tag\n";
  for (const Sample& s : samples) {
    const std::string rel = "images/" + s.subject_id + "_" + s.view_id + ".png";
    cv::Mat rgb(s.height, s.width, CV_8UC3, const_cast<std::uint8_t*>(s.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite((dir / rel).string(), bgr)) {
      throw IngestError("cannot write image " + (dir / rel).string());
    }
    out << rel << ',' << s.subject_id << ',' << s.view_id << ',' << s.tag << '\n';
  }
  return manifest;
}

std::vector<std::string> distinct_subjects(const std::vector<Sample>& samples) {
  std::set<std::string> ids;
  for (const Sample& s : samples) ids.insert(s.subject_id);
  return {ids.begin(), ids.end()};
}

bool FoldAssignment::is_training(const std::string& subject) const {
  auto it = fold_of_subject.find(subject);
  return it != fold_of_subject.end() && it->second != eval_fold && it->second != holdout_fold;
}

bool FoldAssignment::is_eval(const std::string& subject) const {
  auto it = fold_of_subject.find(subject);
  return it != fold_of_subject.end() && it->second == eval_fold;
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k_folds), 0);
  for (const auto& [subject, fold] : fold_of_subject) ++sizes[static_cast<std::size_t>(fold)];
  return sizes;
}

FoldAssignment assign_folds(const std::vector<Sample>& samples, int k_folds, int eval_fold,
                            int holdout_fold, std::uint64_t seed) {
  if (k_folds < 3) throw ValidationError("k_folds must be >= 3 (eval, holdout and >= 1 training fold)");
  if (eval_fold < 0 || eval_fold >= k_folds || holdout_fold < 0 || holdout_fold >= k_folds) {
    throw ValidationError("eval_fold and holdout_fold must lie in [0, k_folds)");
  }
  if (eval_fold == holdout_fold) throw ValidationError("eval_fold must differ from holdout_fold");

  std::map<std::string, int> views;
  for (const Sample& s : samples) ++views[s.subject_id];
  for (const auto& [subject, n] : views) {
    if (n < 2) throw ValidationError("subject " + subject + " has a single view; need >= 2");
  }

  std::vector<std::string> subjects = distinct_subjects(samples);
  Rng rng(seed);
  rng.shuffle(subjects);

  FoldAssignment a;
  a.k_folds = k_folds;
  a.eval_fold = eval_fold;
  a.holdout_fold = holdout_fold;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    a.fold_of_subject[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k_folds));
  }
  return a;
}

QueryGallerySplit build_query_gallery(const std::vector<Sample>& samples,
                                      const FoldAssignment& assignment, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& subject = samples[i].subject_id;
    if (!assignment.fold_of_subject.contains(subject)) {
      throw ValidationError("subject " + subject + " is missing from the fold assignment");
    }
    if (assignment.is_eval(subject)) by_subject[subject].push_back(i);
  }

  Rng rng(seed);
  QueryGallerySplit split;
  for (const auto& [subject, indices] : by_subject) {
    if (indices.size() < 2) {
      throw ValidationError("eval subject " + subject + " has a single view; cannot form query and gallery");
    }
    const std::size_t pick = rng.uniform_index(indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
      (j == pick ? split.query : split.gallery).push_back(indices[j]);
    }
  }
  std::sort(split.gallery.begin(), split.gallery.end());
  return split;
}

std::vector<std::size_t> training_indices(const std::vector<Sample>& samples,
                                          const FoldAssignment& assignment) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (assignment.is_training(samples[i].subject_id)) out.push_back(i);
  }
  return out;
}

}  // namespace reident
