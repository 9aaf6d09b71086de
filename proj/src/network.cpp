#include "reident/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "reident/container.hpp"
#include "reident/error.hpp"
#include "reident/random.hpp"

namespace reident {

int grown_channels(int in_channels, double growth) {
  return static_cast<int>(std::floor(growth * in_channels + 0.5));
}

NetworkSpec::NetworkSpec(Shape input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.channels < 1 || input_.height < 1 || input_.width < 1) {
    throw SpecError("input shape must be positive");
  }
  if (layers_.empty() || layers_.back().kind != LayerKind::dense) {
    throw SpecError("network must end with a linear dense layer");
  }
  Shape s = input_;
  offsets_.push_back(0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    std::size_t params = 0;
    switch (l.kind) {
      case LayerKind::dense:
        if (l.units < 1) throw SpecError("dense layer " + std::to_string(i) + " needs >= 1 unit");
        params = s.size() * static_cast<std::size_t>(l.units) + static_cast<std::size_t>(l.units);
        s = Shape{l.units, 1, 1};
        break;
      case LayerKind::conv: {
        if (l.kernel < 1) throw SpecError("conv kernel must be positive");
        if (s.height < l.kernel || s.width < l.kernel) {
          throw SpecError("conv layer " + std::to_string(i) + ": spatial extent " +
                          std::to_string(s.height) + "x" + std::to_string(s.width) +
                          " is smaller than kernel " + std::to_string(l.kernel));
        }
        const int out_c = grown_channels(s.channels, l.channel_growth);
        if (out_c < 1) throw SpecError("conv layer " + std::to_string(i) + " has no output channels");
        params = static_cast<std::size_t>(out_c) * s.channels * l.kernel * l.kernel +
                 static_cast<std::size_t>(out_c);
        s = Shape{out_c, s.height - l.kernel + 1, s.width - l.kernel + 1};
        break;
      }
      case LayerKind::maxpool:
        if (l.kernel < 1) throw SpecError("pool kernel must be positive");
        if (s.height < l.kernel || s.width < l.kernel) {
          throw SpecError("maxpool layer " + std::to_string(i) + ": spatial extent " +
                          std::to_string(s.height) + "x" + std::to_string(s.width) +
                          " is smaller than kernel " + std::to_string(l.kernel));
        }
        s = Shape{s.channels, s.height / l.kernel, s.width / l.kernel};
        break;
      case LayerKind::relu:
        break;
    }
    shapes_.push_back(s);
    offset += params;
    offsets_.push_back(offset);
  }
}

NetworkSpec NetworkSpec::dense_head(int input_dims, const std::vector<int>& hidden, int output_dim) {
  std::vector<LayerSpec> layers;
  for (int units : hidden) {
    layers.push_back(LayerSpec::dense(units));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::dense(output_dim));
  return NetworkSpec(Shape{input_dims, 1, 1}, std::move(layers));
}

NetworkSpec NetworkSpec::conv_image(int height, int width, int conv_layers,
                                    const std::vector<int>& hidden, int output_dim) {
  std::vector<LayerSpec> layers;
  for (int i = 1; i <= conv_layers; ++i) {
    layers.push_back(LayerSpec::conv());
    layers.push_back(LayerSpec::relu());
    if (i % 2 == 0) layers.push_back(LayerSpec::maxpool());
  }
  for (int units : hidden) {
    layers.push_back(LayerSpec::dense(units));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::dense(output_dim));
  return NetworkSpec(Shape{3, height, width}, std::move(layers));
}

std::size_t NetworkSpec::weight_count(std::size_t layer) const {
  return offsets_[layer + 1] - offsets_[layer] - bias_count(layer);
}

std::size_t NetworkSpec::bias_count(std::size_t layer) const {
  const LayerKind k = layers_[layer].kind;
  if (k == LayerKind::dense || k == LayerKind::conv) return static_cast<std::size_t>(shapes_[layer].channels);
  return 0;
}

std::size_t NetworkSpec::activation_size() const {
  std::size_t total = input_.size();
  for (const Shape& s : shapes_) total += s.size();
  return total;
}

std::string NetworkSpec::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "input " << input_.channels << ' ' << input_.height << ' ' << input_.width << '\n';
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::dense: out << "dense " << l.units << '\n'; break;
      case LayerKind::conv: out << "conv " << l.kernel << ' ' << l.channel_growth << '\n'; break;
      case LayerKind::maxpool: out << "maxpool " << l.kernel << '\n'; break;
      case LayerKind::relu: out << "relu\n"; break;
    }
  }
  return out.str();
}

NetworkSpec NetworkSpec::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  Shape input;
  if (!(in >> word) || word != "input" || !(in >> input.channels >> input.height >> input.width)) {
    throw SpecError("network text must start with `input C H W`");
  }
  std::vector<LayerSpec> layers;
  while (in >> word) {
    if (word == "dense") {
      int units = 0;
      if (!(in >> units)) throw SpecError("dense needs a unit count");
      layers.push_back(LayerSpec::dense(units));
    } else if (word == "conv") {
      int kernel = 0;
      double growth = 0;
      if (!(in >> kernel >> growth)) throw SpecError("conv needs kernel and growth");
      layers.push_back(LayerSpec::conv(kernel, growth));
    } else if (word == "maxpool") {
      int kernel = 0;
      if (!(in >> kernel)) throw SpecError("maxpool needs a kernel");
      layers.push_back(LayerSpec::maxpool(kernel));
    } else if (word == "relu") {
      layers.push_back(LayerSpec::relu());
    } else {
      throw SpecError("unknown layer `" + word + "`");
    }
  }
  return NetworkSpec(input, std::move(layers));
}

EmbeddingModel init_network(const NetworkSpec& spec, std::uint64_t seed) {
  EmbeddingModel model;
  model.spec = spec;
  model.params.assign(spec.parameter_count(), 0.0);
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const LayerSpec& l = spec.layers()[i];
    std::size_t fan_in = 0;
    if (l.kind == LayerKind::dense) {
      fan_in = spec.layer_input_shape(i).size();
    } else if (l.kind == LayerKind::conv) {
      fan_in = static_cast<std::size_t>(spec.layer_input_shape(i).channels) * l.kernel * l.kernel;
    } else {
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double* w = model.params.data() + spec.param_offset(i);
    for (std::size_t k = 0; k < spec.weight_count(i); ++k) w[k] = rng.uniform(-bound, bound);
  }
  return model;
}

namespace {

using RowMatrixMap = Eigen::Map<const Matrix>;
using MutableRowMatrixMap = Eigen::Map<Matrix>;

// Column matrix of every k x k window: (C*k*k) x (Ho*Wo).
void im2col(const double* input, const Shape& in, int k, Matrix& cols) {
  const int ho = in.height - k + 1;
  const int wo = in.width - k + 1;
  cols.resize(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(ho) * wo);
  Eigen::Index row = 0;
  for (int c = 0; c < in.channels; ++c) {
    const double* plane = input + static_cast<std::size_t>(c) * in.height * in.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.row(row).data();
        for (int y = 0; y < ho; ++y) {
          const double* src = plane + static_cast<std::size_t>(y + ky) * in.width + kx;
          std::copy(src, src + wo, dst + static_cast<std::size_t>(y) * wo);
        }
      }
    }
  }
}

void col2im_add(const Matrix& cols, const Shape& in, int k, double* grad_input) {
  const int ho = in.height - k + 1;
  const int wo = in.width - k + 1;
  Eigen::Index row = 0;
  for (int c = 0; c < in.channels; ++c) {
    double* plane = grad_input + static_cast<std::size_t>(c) * in.height * in.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols.row(row).data();
        for (int y = 0; y < ho; ++y) {
          double* dst = plane + static_cast<std::size_t>(y + ky) * in.width + kx;
          const double* s = src + static_cast<std::size_t>(y) * wo;
          for (int x = 0; x < wo; ++x) dst[x] += s[x];
        }
      }
    }
  }
}

Matrix apply_layer(const EmbeddingModel& model, std::size_t i, const Matrix& x) {
  const NetworkSpec& spec = model.spec;
  const LayerSpec& l = spec.layers()[i];
  const Shape& in = spec.layer_input_shape(i);
  const Shape& out = spec.output_shapes()[i];
  const double* p = model.params.data() + spec.param_offset(i);
  const Eigen::Index n = x.rows();

  switch (l.kind) {
    case LayerKind::dense: {
      RowMatrixMap w(p, out.channels, static_cast<Eigen::Index>(in.size()));
      Eigen::Map<const Eigen::RowVectorXd> b(p + spec.weight_count(i), out.channels);
      Matrix y = x * w.transpose();
      y.rowwise() += b;
      return y;
    }
    case LayerKind::conv: {
      const Eigen::Index kk = static_cast<Eigen::Index>(in.channels) * l.kernel * l.kernel;
      RowMatrixMap w(p, out.channels, kk);
      Eigen::Map<const Eigen::VectorXd> b(p + spec.weight_count(i), out.channels);
      Matrix y(n, static_cast<Eigen::Index>(out.size()));
      Matrix cols;
      for (Eigen::Index r = 0; r < n; ++r) {
        im2col(x.row(r).data(), in, l.kernel, cols);
        MutableRowMatrixMap dst(y.row(r).data(), out.channels, static_cast<Eigen::Index>(out.height) * out.width);
        dst.noalias() = w * cols;
        dst.colwise() += b;
      }
      return y;
    }
    case LayerKind::maxpool: {
      Matrix y(n, static_cast<Eigen::Index>(out.size()));
      const int k = l.kernel;
      for (Eigen::Index r = 0; r < n; ++r) {
        const double* src = x.row(r).data();
        double* dst = y.row(r).data();
        for (int c = 0; c < out.channels; ++c) {
          const double* plane = src + static_cast<std::size_t>(c) * in.height * in.width;
          for (int oy = 0; oy < out.height; ++oy) {
            for (int ox = 0; ox < out.width; ++ox) {
              double best = plane[static_cast<std::size_t>(oy * k) * in.width + ox * k];
              for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                  best = std::max(best, plane[static_cast<std::size_t>(oy * k + dy) * in.width + ox * k + dx]);
                }
              }
              *dst++ = best;
            }
          }
        }
      }
      return y;
    }
    case LayerKind::relu:
      return x.cwiseMax(0.0);
  }
  return x;
}

void check_input(const EmbeddingModel& model, const Matrix& inputs) {
  if (inputs.cols() != static_cast<Eigen::Index>(model.spec.input_shape().size())) {
    throw ValidationError("input has " + std::to_string(inputs.cols()) + " values, network expects " +
                          std::to_string(model.spec.input_shape().size()));
  }
  if (model.params.size() != model.spec.parameter_count()) {
    throw ValidationError("model parameter count does not match its spec");
  }
}

}  // namespace

Matrix forward_batch(const EmbeddingModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  Matrix x = inputs;
  for (std::size_t i = 0; i < model.spec.layers().size(); ++i) x = apply_layer(model, i, x);
  return x;
}

ForwardCache forward_cached(const EmbeddingModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  ForwardCache cache;
  cache.inputs.reserve(model.spec.layers().size());
  Matrix x = inputs;
  for (std::size_t i = 0; i < model.spec.layers().size(); ++i) {
    Matrix y = apply_layer(model, i, x);
    cache.inputs.push_back(std::move(x));
    x = std::move(y);
  }
  cache.output = std::move(x);
  return cache;
}

void backward(const EmbeddingModel& model, const ForwardCache& cache, const Matrix& grad_output,
              std::vector<double>& grad) {
  const NetworkSpec& spec = model.spec;
  if (grad.size() != model.params.size()) grad.assign(model.params.size(), 0.0);
  Matrix g = grad_output;
  for (std::size_t i = spec.layers().size(); i-- > 0;) {
    const LayerSpec& l = spec.layers()[i];
    const Shape& in = spec.layer_input_shape(i);
    const Shape& out = spec.output_shapes()[i];
    const Matrix& x = cache.inputs[i];
    const double* p = model.params.data() + spec.param_offset(i);
    double* gp = grad.data() + spec.param_offset(i);
    const bool need_input_grad = i > 0;

    switch (l.kind) {
      case LayerKind::dense: {
        RowMatrixMap w(p, out.channels, static_cast<Eigen::Index>(in.size()));
        MutableRowMatrixMap gw(gp, out.channels, static_cast<Eigen::Index>(in.size()));
        Eigen::Map<Eigen::RowVectorXd> gb(gp + spec.weight_count(i), out.channels);
        gw.noalias() += g.transpose() * x;
        gb += g.colwise().sum();
        if (need_input_grad) g = g * w;
        break;
      }
      case LayerKind::conv: {
        const Eigen::Index kk = static_cast<Eigen::Index>(in.channels) * l.kernel * l.kernel;
        const Eigen::Index area = static_cast<Eigen::Index>(out.height) * out.width;
        RowMatrixMap w(p, out.channels, kk);
        MutableRowMatrixMap gw(gp, out.channels, kk);
        Eigen::Map<Eigen::VectorXd> gb(gp + spec.weight_count(i), out.channels);
        Matrix gx = need_input_grad ? Matrix::Zero(x.rows(), x.cols()) : Matrix();
        Matrix cols, gcols;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          im2col(x.row(r).data(), in, l.kernel, cols);
          Eigen::Map<const Matrix> go(g.row(r).data(), out.channels, area);
          gw.noalias() += go * cols.transpose();
          gb += go.rowwise().sum();
          if (need_input_grad) {
            gcols.noalias() = w.transpose() * go;
            col2im_add(gcols, in, l.kernel, gx.row(r).data());
          }
        }
        g = std::move(gx);
        break;
      }
      case LayerKind::maxpool: {
        if (!need_input_grad) break;
        Matrix gx = Matrix::Zero(x.rows(), x.cols());
        const int k = l.kernel;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const double* src = x.row(r).data();
          const double* go = g.row(r).data();
          double* dst = gx.row(r).data();
          for (int c = 0; c < out.channels; ++c) {
            const std::size_t plane = static_cast<std::size_t>(c) * in.height * in.width;
            for (int oy = 0; oy < out.height; ++oy) {
              for (int ox = 0; ox < out.width; ++ox) {
                // First maximum in scan order receives the gradient.
                std::size_t best = plane + static_cast<std::size_t>(oy * k) * in.width + ox * k;
                for (int dy = 0; dy < k; ++dy) {
                  for (int dx = 0; dx < k; ++dx) {
                    const std::size_t at = plane + static_cast<std::size_t>(oy * k + dy) * in.width + ox * k + dx;
                    if (src[at] > src[best]) best = at;
                  }
                }
                dst[best] += *go++;
              }
            }
          }
        }
        g = std::move(gx);
        break;
      }
      case LayerKind::relu:
        if (!need_input_grad) break;
        g = g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        break;
    }
  }
}

Vector forward(const EmbeddingModel& model, const Vector& input) {
  Matrix x = input.transpose();
  return forward_batch(model, x).row(0).transpose();
}

Matrix embed_all(const EmbeddingModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  const Eigen::Index n = inputs.rows();
  Matrix out(n, model.spec.output_dim());
  // Bound cached activations to ~64 MB per chunk.
  const auto per_row = static_cast<Eigen::Index>(std::max<std::size_t>(1, model.spec.activation_size()));
  const Eigen::Index chunk = std::max<Eigen::Index>(1, Eigen::Index{8'000'000} / per_row);
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    out.middleRows(start, len) = forward_batch(model, inputs.middleRows(start, len));
  }
  return out;
}

void save_model(const EmbeddingModel& model, const std::filesystem::path& path) {
  Container c;
  c.header = "model\n" + model.spec.to_text();
  for (std::size_t i = 0; i < model.spec.layers().size(); ++i) {
    const std::size_t nw = model.spec.weight_count(i);
    const std::size_t nb = model.spec.bias_count(i);
    if (nw + nb == 0) continue;
    const auto begin = model.params.begin() + static_cast<std::ptrdiff_t>(model.spec.param_offset(i));
    c.arrays.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(nw));
    c.arrays.emplace_back(begin + static_cast<std::ptrdiff_t>(nw), begin + static_cast<std::ptrdiff_t>(nw + nb));
  }
  c.arrays.push_back(model.train_log);
  write_container(path, c);
}

EmbeddingModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const std::string prefix = "model\n";
  if (c.header.rfind(prefix, 0) != 0) throw IngestError(path.string() + " does not hold a model");
  EmbeddingModel model;
  model.spec = NetworkSpec::from_text(c.header.substr(prefix.size()));
  std::size_t a = 0;
  for (std::size_t i = 0; i < model.spec.layers().size(); ++i) {
    const std::size_t nw = model.spec.weight_count(i);
    const std::size_t nb = model.spec.bias_count(i);
    if (nw + nb == 0) continue;
    if (a + 1 >= c.arrays.size() || c.arrays[a].size() != nw || c.arrays[a + 1].size() != nb) {
      throw IngestError(path.string() + ": weight arrays do not match the stored spec");
    }
    model.params.insert(model.params.end(), c.arrays[a].begin(), c.arrays[a].end());
    model.params.insert(model.params.end(), c.arrays[a + 1].begin(), c.arrays[a + 1].end());
    a += 2;
  }
  if (a + 1 != c.arrays.size()) throw IngestError(path.string() + ": unexpected trailing arrays");
  model.train_log = c.arrays[a];
  return model;
}

}  // namespace reident
