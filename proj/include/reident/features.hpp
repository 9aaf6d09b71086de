#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reident/data.hpp"

namespace reident {

enum class FeatureMethod { brightness, avg_color, color_variance, column_quantile, raw_image, imported };

std::string to_string(FeatureMethod method);
FeatureMethod feature_method_from_string(const std::string& name);

struct FeatureVector {
  std::vector<double> values;
  FeatureMethod method = FeatureMethod::imported;

  std::size_t dims() const { return values.size(); }
};

/// Bilinear resize with half-pixel centers; results rounded half-up and
/// clamped to [0, 255]. Aspect ratio is not preserved.
Sample resize_image(const Sample& sample, int target_w, int target_h);

enum class PatchMode { brightness, avg_color, color_variance };

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int stride = 0;
};

/// Patches per axis are floor((extent - patch) / stride) + 1.
PatchGrid patch_grid(int width, int height, int patch, double overlap_fraction);

/// Per-patch statistics over a top-left anchored grid; patches that would
/// cross the border are dropped. Values are laid out rows outer, columns
/// inner, channels innermost. color_variance uses the population std.
FeatureVector extract_patch_features(const Sample& sample, PatchMode mode, int patch = 16,
                                     double overlap_fraction = 0.5);

/// Per pixel column, pools every row and channel and reports the requested
/// quantiles (linear interpolation between order statistics, ascending).
FeatureVector extract_column_quantiles(const Sample& sample,
                                       std::vector<double> quantiles = {0.2, 0.5, 0.8});

/// Resized image as a channel-major (C, H, W) tensor of 0..255 values.
FeatureVector extract_raw_image(const Sample& sample);

/// Everything needed to turn one sample into one feature vector.
struct FeatureSettings {
  FeatureMethod method = FeatureMethod::color_variance;
  std::optional<std::pair<int, int>> resize;  // (width, height)
  int patch = 16;
  double overlap_fraction = 0.5;
  std::vector<double> quantiles{0.2, 0.5, 0.8};
  std::filesystem::path import_path;
};

FeatureVector extract_features(const Sample& sample, const FeatureSettings& settings);

/// Imported vectors keyed by (subject_id, view_id), in file order.
struct ImportedFeatures {
  std::vector<std::string> subject_ids;
  std::vector<std::string> view_ids;
  std::vector<FeatureVector> vectors;
  std::string method_label;
};

ImportedFeatures import_features(const std::filesystem::path& path, const std::string& method_label);

/// Aligns imported vectors to the dataset order. Throws ValidationError for
/// rows naming samples not in the dataset, and for samples without a row.
std::vector<FeatureVector> join_imported(const ImportedFeatures& imported,
                                         const std::vector<Sample>& samples);

/// Writes vectors in the import CSV layout.
void dump_features(const std::filesystem::path& path, const std::vector<Sample>& samples,
                   const std::vector<FeatureVector>& vectors);

}  // namespace reident
