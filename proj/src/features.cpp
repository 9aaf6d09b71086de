#include "reident/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "reident/error.hpp"
#include "reident/text.hpp"

namespace reident {

std::string to_string(FeatureMethod method) {
  switch (method) {
    case FeatureMethod::brightness: return "brightness";
    case FeatureMethod::avg_color: return "avg_color";
    case FeatureMethod::color_variance: return "color_variance";
    case FeatureMethod::column_quantile: return "column_quantile";
    case FeatureMethod::raw_image: return "raw_image";
    case FeatureMethod::imported: return "imported";
  }
  return "unknown";
}

FeatureMethod feature_method_from_string(const std::string& name) {
  for (auto m : {FeatureMethod::brightness, FeatureMethod::avg_color, FeatureMethod::color_variance,
                 FeatureMethod::column_quantile, FeatureMethod::raw_image, FeatureMethod::imported}) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown feature method `" + name + "`");
}

Sample resize_image(const Sample& sample, int target_w, int target_h) {
  // Pipeline configs enforce the 16 px minimum; the primitive itself only
  // needs a non-empty target.
  if (target_w < 1 || target_h < 1) throw ValidationError("resize target must be at least 1x1");
  Sample out;
  out.width = target_w;
  out.height = target_h;
  out.subject_id = sample.subject_id;
  out.view_id = sample.view_id;
  out.tag = sample.tag;
  out.pixels.resize(static_cast<std::size_t>(target_w) * target_h * 3);

  const double scale_x = static_cast<double>(sample.width) / target_w;
  const double scale_y = static_cast<double>(sample.height) / target_h;
  for (int y = 0; y < target_h; ++y) {
    const double sy = std::clamp((y + 0.5) * scale_y - 0.5, 0.0, sample.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, sample.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < target_w; ++x) {
      const double sx = std::clamp((x + 0.5) * scale_x - 0.5, 0.0, sample.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, sample.width - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * sample.at(y0, x0, c) + fx * sample.at(y0, x1, c)) +
                         fy * ((1 - fx) * sample.at(y1, x0, c) + fx * sample.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

PatchGrid patch_grid(int width, int height, int patch, double overlap_fraction) {
  if (patch < 1) throw ValidationError("patch size must be positive");
  if (overlap_fraction < 0 || overlap_fraction >= 1) {
    throw ValidationError("overlap_fraction must lie in [0, 1)");
  }
  if (width < patch || height < patch) {
    throw ValidationError("image " + std::to_string(width) + "x" + std::to_string(height) +
                          " is smaller than one " + std::to_string(patch) + "px patch");
  }
  PatchGrid g;
  g.stride = std::max(1, static_cast<int>(std::lround(patch * (1.0 - overlap_fraction))));
  g.cols = (width - patch) / g.stride + 1;
  g.rows = (height - patch) / g.stride + 1;
  return g;
}

FeatureVector extract_patch_features(const Sample& sample, PatchMode mode, int patch,
                                     double overlap_fraction) {
  const PatchGrid grid = patch_grid(sample.width, sample.height, patch, overlap_fraction);
  const double n = static_cast<double>(patch) * patch;

  FeatureVector fv;
  fv.method = mode == PatchMode::brightness  ? FeatureMethod::brightness
              : mode == PatchMode::avg_color ? FeatureMethod::avg_color
                                             : FeatureMethod::color_variance;
  fv.values.reserve(static_cast<std::size_t>(grid.rows) * grid.cols * (mode == PatchMode::brightness ? 1 : 3));

  for (int r = 0; r < grid.rows; ++r) {
    for (int col = 0; col < grid.cols; ++col) {
      const int y0 = r * grid.stride;
      const int x0 = col * grid.stride;
      double sum[3] = {0, 0, 0};
      for (int y = y0; y < y0 + patch; ++y) {
        for (int x = x0; x < x0 + patch; ++x) {
          for (int c = 0; c < 3; ++c) sum[c] += sample.at(y, x, c);
        }
      }
      if (mode == PatchMode::brightness) {
        fv.values.push_back((sum[0] + sum[1] + sum[2]) / (3 * n));
        continue;
      }
      const double mean[3] = {sum[0] / n, sum[1] / n, sum[2] / n};
      if (mode == PatchMode::avg_color) {
        fv.values.insert(fv.values.end(), mean, mean + 3);
        continue;
      }
      // Two-pass population variance.
      double ss[3] = {0, 0, 0};
      for (int y = y0; y < y0 + patch; ++y) {
        for (int x = x0; x < x0 + patch; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double d = sample.at(y, x, c) - mean[c];
            ss[c] += d * d;
          }
        }
      }
      for (int c = 0; c < 3; ++c) fv.values.push_back(std::sqrt(ss[c] / n));
    }
  }
  return fv;
}

FeatureVector extract_column_quantiles(const Sample& sample, std::vector<double> quantiles) {
  for (double q : quantiles) {
    if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile outside [0, 1]");
  }
  std::sort(quantiles.begin(), quantiles.end());

  FeatureVector fv;
  fv.method = FeatureMethod::column_quantile;
  fv.values.reserve(static_cast<std::size_t>(sample.width) * quantiles.size());
  std::vector<double> column(static_cast<std::size_t>(sample.height) * 3);
  for (int x = 0; x < sample.width; ++x) {
    std::size_t k = 0;
    for (int y = 0; y < sample.height; ++y) {
      for (int c = 0; c < 3; ++c) column[k++] = sample.at(y, x, c);
    }
    std::sort(column.begin(), column.end());
    const double last = static_cast<double>(column.size() - 1);
    for (double q : quantiles) {
      const double pos = q * last;
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, column.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      fv.values.push_back(column[lo] + frac * (column[hi] - column[lo]));
    }
  }
  return fv;
}

FeatureVector extract_raw_image(const Sample& sample) {
  FeatureVector fv;
  fv.method = FeatureMethod::raw_image;
  fv.values.resize(sample.pixels.size());
  const std::size_t plane = static_cast<std::size_t>(sample.width) * sample.height;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      fv.values[c * plane + p] = sample.pixels[p * 3 + static_cast<std::size_t>(c)];
    }
  }
  return fv;
}

FeatureVector extract_features(const Sample& sample, const FeatureSettings& settings) {
  const Sample* input = &sample;
  Sample resized;
  if (settings.resize && (settings.resize->first != sample.width || settings.resize->second != sample.height)) {
    resized = resize_image(sample, settings.resize->first, settings.resize->second);
    input = &resized;
  }
  switch (settings.method) {
    case FeatureMethod::brightness:
      return extract_patch_features(*input, PatchMode::brightness, settings.patch, settings.overlap_fraction);
    case FeatureMethod::avg_color:
      return extract_patch_features(*input, PatchMode::avg_color, settings.patch, settings.overlap_fraction);
    case FeatureMethod::color_variance:
      return extract_patch_features(*input, PatchMode::color_variance, settings.patch, settings.overlap_fraction);
    case FeatureMethod::column_quantile:
      return extract_column_quantiles(*input, settings.quantiles);
    case FeatureMethod::raw_image:
      return extract_raw_image(*input);
    case FeatureMethod::imported:
      break;
  }
  throw ValidationError("imported features are joined from a file, not extracted per sample");
}

ImportedFeatures import_features(const std::filesystem::path& path, const std::string& method_label) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open feature file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty feature file");
  const auto header = split(strip_cr(line), ',');
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "view_id") {
    throw IngestError(path.string() + ": header must be `subject_id,view_id,f0,...`");
  }
  const std::size_t dims = header.size() - 2;

  ImportedFeatures out;
  out.method_label = method_label;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    auto fields = split(line, ',');
    if (fields.size() != dims + 2) {
      throw IngestError(path.string() + ": row " + std::to_string(row) + " has " +
                        std::to_string(fields.size() - 2) + " values, expected " + std::to_string(dims));
    }
    FeatureVector fv;
    fv.method = FeatureMethod::imported;
    fv.values.reserve(dims);
    const std::string where = path.string() + ": row " + std::to_string(row);
    for (std::size_t i = 2; i < fields.size(); ++i) {
      const double v = parse_double(fields[i], where);
      if (!std::isfinite(v)) throw IngestError(where + ": non-finite value");
      fv.values.push_back(v);
    }
    out.subject_ids.push_back(fields[0]);
    out.view_ids.push_back(fields[1]);
    out.vectors.push_back(std::move(fv));
  }
  return out;
}

std::vector<FeatureVector> join_imported(const ImportedFeatures& imported,
                                         const std::vector<Sample>& samples) {
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    index[{samples[i].subject_id, samples[i].view_id}] = i;
  }
  std::vector<FeatureVector> out(samples.size());
  std::vector<bool> filled(samples.size(), false);
  for (std::size_t r = 0; r < imported.vectors.size(); ++r) {
    auto it = index.find({imported.subject_ids[r], imported.view_ids[r]});
    if (it == index.end()) {
      throw ValidationError("imported features (" + imported.method_label + ") name unknown sample (" +
                            imported.subject_ids[r] + ", " + imported.view_ids[r] + ")");
    }
    out[it->second] = imported.vectors[r];
    filled[it->second] = true;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!filled[i]) {
      throw ValidationError("imported features (" + imported.method_label + ") lack sample (" +
                            samples[i].subject_id + ", " + samples[i].view_id + ")");
    }
  }
  return out;
}

void dump_features(const std::filesystem::path& path, const std::vector<Sample>& samples,
                   const std::vector<FeatureVector>& vectors) {
  if (samples.size() != vectors.size()) throw ValidationError("dump_features: size mismatch");
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  const std::size_t dims = vectors.empty() ? 0 : vectors.front().dims();
  out << "subject_id,view_id";
  for (std::size_t d = 0; d < dims; ++d) out << ",f" << d;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << samples[i].subject_id << ',' << samples[i].view_id;
    for (double v : vectors[i].values) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace reident
