#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace reident {

/// One RGB image of a subject. Pixels are row-major, channels interleaved.
struct Sample {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
  std::string subject_id;
  std::string view_id;
  std::string tag;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

constexpr int kMinImageExtent = 16;

/// Throws ValidationError when dimensions, pixel buffer size or
/// (subject_id, view_id) uniqueness are violated.
void validate_samples(const std::vector<Sample>& samples);

/// Reads a `path,subject_id,view_id,tag` manifest. Relative image paths are
/// resolved against the manifest's directory.
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path);

struct SyntheticParams {
  int n_subjects = 50;
  int views_per_subject = 5;
  int width = 128;
  int height = 96;
  double noise_sigma = 8.0;
  int shift_max = 4;
  std::uint64_t seed = 7;
};

std::vector<Sample> generate_synthetic(const SyntheticParams& params);

/// Writes PNGs plus a manifest.csv into `dir`; returns the manifest path.
std::filesystem::path write_dataset(const std::vector<Sample>& samples,
                                    const std::filesystem::path& dir);

struct FoldAssignment {
  std::map<std::string, int> fold_of_subject;
  int k_folds = 0;
  int eval_fold = 0;
  int holdout_fold = 0;

  bool is_training(const std::string& subject) const;
  bool is_eval(const std::string& subject) const;
  std::vector<std::size_t> fold_sizes() const;
};

/// Seeded subject shuffle dealt round-robin into `k_folds` folds.
FoldAssignment assign_folds(const std::vector<Sample>& samples, int k_folds, int eval_fold,
                            int holdout_fold, std::uint64_t seed);

/// Indices into the sample list.
struct QueryGallerySplit {
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
};

QueryGallerySplit build_query_gallery(const std::vector<Sample>& samples,
                                      const FoldAssignment& assignment, std::uint64_t seed);

/// Indices of samples whose subject lies in a training fold.
std::vector<std::size_t> training_indices(const std::vector<Sample>& samples,
                                          const FoldAssignment& assignment);

/// Sorted distinct subject ids.
std::vector<std::string> distinct_subjects(const std::vector<Sample>& samples);

}  // namespace reident
