#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reident/matrix.hpp"

namespace reident {

/// Tensor shape of one sample. Flat vectors are (dims, 1, 1).
struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;

  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  bool operator==(const Shape&) const = default;
};

enum class LayerKind { dense, conv, maxpool, relu };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;                // dense
  int kernel = 3;               // conv, maxpool
  double channel_growth = 1.5;  // conv

  static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 0.0}; }
  static LayerSpec conv(int kernel = 3, double growth = 1.5) { return {LayerKind::conv, 0, kernel, growth}; }
  static LayerSpec maxpool(int kernel = 2) { return {LayerKind::maxpool, 0, kernel, 0.0}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0.0}; }
};

/// Conv output channels: round(growth * in), halves rounded up.
int grown_channels(int in_channels, double growth);

/// A validated feed-forward layout. Construction resolves every layer's
/// output shape and throws SpecError when a layer cannot be applied.
class NetworkSpec {
 public:
  NetworkSpec() = default;
  NetworkSpec(Shape input, std::vector<LayerSpec> layers);

  /// hidden dense(relu) layers followed by a linear dense(output_dim) head.
  static NetworkSpec dense_head(int input_dims, const std::vector<int>& hidden, int output_dim);

  /// conv+relu pairs with a 2x2 max-pool after every second conv, then
  /// dense(100)+relu layers and a linear dense(output_dim) head.
  static NetworkSpec conv_image(int height, int width, int conv_layers = 6,
                                const std::vector<int>& hidden = {100, 100}, int output_dim = 100);

  const Shape& input_shape() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<Shape>& output_shapes() const { return shapes_; }
  const Shape& layer_input_shape(std::size_t layer) const {
    return layer == 0 ? input_ : shapes_[layer - 1];
  }
  int output_dim() const { return static_cast<int>(shapes_.back().size()); }

  /// Offset of each layer's parameters in the flat parameter vector;
  /// weights first, then biases.
  std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t weight_count(std::size_t layer) const;
  std::size_t bias_count(std::size_t layer) const;
  std::size_t parameter_count() const { return offsets_.back(); }

  /// Floats needed to cache every layer input for one sample.
  std::size_t activation_size() const;

  std::string to_text() const;
  static NetworkSpec from_text(const std::string& text);

  bool operator==(const NetworkSpec& other) const { return to_text() == other.to_text(); }

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
};

/// A network plus its flat parameters. All forward passes, including the
/// three members of a triplet, read the same parameter buffer.
struct EmbeddingModel {
  NetworkSpec spec;
  std::vector<double> params;
  std::vector<double> train_log;  // mean triplet loss per epoch
};

/// He-style uniform init in +-sqrt(6 / fan_in); biases zero.
EmbeddingModel init_network(const NetworkSpec& spec, std::uint64_t seed);

/// Every layer's input for a batch, plus the final output.
struct ForwardCache {
  std::vector<Matrix> inputs;
  Matrix output;
};

Matrix forward_batch(const EmbeddingModel& model, const Matrix& inputs);
ForwardCache forward_cached(const EmbeddingModel& model, const Matrix& inputs);

/// Adds d(sum over rows of <grad_output, output>)/d(params) to `grad`.
void backward(const EmbeddingModel& model, const ForwardCache& cache, const Matrix& grad_output,
              std::vector<double>& grad);

Vector forward(const EmbeddingModel& model, const Vector& input);

/// Row i is forward(model, inputs.row(i)).
Matrix embed_all(const EmbeddingModel& model, const Matrix& inputs);

/// Binary container: header text carries the spec, weight arrays follow in
/// layer order. Round trip is bit-exact.
void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

}  // namespace reident
