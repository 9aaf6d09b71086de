#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "reident/error.hpp"
#include "reident/features.hpp"
#include "reident/network.hpp"
#include "reident/training.hpp"

using namespace reident;

namespace {

// Direct loop evaluation of a conv/relu/maxpool/dense stack, written
// without im2col so it can serve as an oracle.
std::vector<double> naive_forward(const EmbeddingModel& m, std::vector<double> x) {
  const auto& spec = m.spec;
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const auto& l = spec.layers()[i];
    const Shape in = spec.layer_input_shape(i);
    const Shape out = spec.output_shapes()[i];
    const double* p = m.params.data() + spec.param_offset(i);
    std::vector<double> y(out.size(), 0.0);
    if (l.kind == LayerKind::dense) {
      for (int o = 0; o < out.channels; ++o) {
        double s = p[spec.weight_count(i) + static_cast<std::size_t>(o)];
        for (std::size_t j = 0; j < in.size(); ++j) s += p[static_cast<std::size_t>(o) * in.size() + j] * x[j];
        y[static_cast<std::size_t>(o)] = s;
      }
    } else if (l.kind == LayerKind::conv) {
      const int k = l.kernel;
      for (int o = 0; o < out.channels; ++o)
        for (int yy = 0; yy < out.height; ++yy)
          for (int xx = 0; xx < out.width; ++xx) {
            double s = p[spec.weight_count(i) + static_cast<std::size_t>(o)];
            for (int c = 0; c < in.channels; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  s += p[((static_cast<std::size_t>(o) * in.channels + c) * k + ky) * k + kx] *
                       x[(static_cast<std::size_t>(c) * in.height + yy + ky) * in.width + xx + kx];
            y[(static_cast<std::size_t>(o) * out.height + yy) * out.width + xx] = s;
          }
    } else if (l.kind == LayerKind::maxpool) {
      const int k = l.kernel;
      for (int c = 0; c < out.channels; ++c)
        for (int yy = 0; yy < out.height; ++yy)
          for (int xx = 0; xx < out.width; ++xx) {
            double best = -INFINITY;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                best = std::max(best, x[(static_cast<std::size_t>(c) * in.height + yy * k + dy) * in.width + xx * k + dx]);
            y[(static_cast<std::size_t>(c) * out.height + yy) * out.width + xx] = best;
          }
    } else {
      for (std::size_t j = 0; j < x.size(); ++j) y[j] = std::max(0.0, x[j]);
    }
    x = std::move(y);
  }
  return x;
}

LabeledMatrix labeled(const Matrix& values, int views) {
  LabeledMatrix lm;
  lm.values = values;
  for (Eigen::Index r = 0; r < values.rows(); ++r) lm.subjects.push_back("s" + std::to_string(r / views));
  return lm;
}

}  // namespace

TEST_CASE("dense parameter count") {
  const auto spec = NetworkSpec::dense_head(768, {100, 100, 100}, 50);
  CHECK(spec.parameter_count() == 102150);
  CHECK(spec.output_dim() == 50);
}

TEST_CASE("conv channel growth and spec errors") {
  std::vector<int> channels{3};
  for (int i = 0; i < 6; ++i) channels.push_back(grown_channels(channels.back(), 1.5));
  CHECK(channels == std::vector<int>{3, 5, 8, 12, 18, 27, 41});
  CHECK_THROWS_AS(NetworkSpec::conv_image(8, 8), SpecError);
  CHECK_NOTHROW(NetworkSpec::conv_image(58, 100));
  CHECK_THROWS_AS(NetworkSpec(Shape{1, 1, 4}, {LayerSpec::dense(3), LayerSpec::relu()}), SpecError);
}

TEST_CASE("init is deterministic and bounded by fan-in") {
  const auto spec = NetworkSpec::dense_head(20, {10}, 4);
  const auto a = init_network(spec, 5);
  CHECK(a.params == init_network(spec, 5).params);
  CHECK(a.params != init_network(spec, 6).params);
  const double bound = std::sqrt(6.0 / 20.0);
  for (std::size_t j = 0; j < spec.weight_count(0); ++j) CHECK(std::abs(a.params[j]) <= bound);
  for (std::size_t j = 0; j < spec.bias_count(0); ++j) CHECK(a.params[spec.weight_count(0) + j] == 0.0);
}

TEST_CASE("forward: zero weights, identity, relu") {
  auto zero = init_network(NetworkSpec::dense_head(4, {6}, 3), 1);
  std::fill(zero.params.begin(), zero.params.end(), 0.0);
  CHECK(forward(zero, Vector::Constant(4, 3.0)).isZero());

  EmbeddingModel id{NetworkSpec::dense_head(3, {}, 3), {}, {}};
  id.params.assign(id.spec.parameter_count(), 0.0);
  for (int i = 0; i < 3; ++i) id.params[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  Vector v(3);
  v << -1, 0, 2;
  CHECK(forward(id, v) == v);

  EmbeddingModel r{NetworkSpec(Shape{3, 1, 1}, {LayerSpec::relu(), LayerSpec::dense(3)}), {}, {}};
  r.params.assign(r.spec.parameter_count(), 0.0);
  for (int i = 0; i < 3; ++i) r.params[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  CHECK(forward(r, v) == Vector::Map(std::vector<double>{0, 0, 2}.data(), 3));
  CHECK_THROWS_AS(forward(r, Vector::Zero(4)), ValidationError);
}

TEST_CASE("conv stack matches a direct loop evaluation") {
  const NetworkSpec spec(Shape{3, 11, 9}, {LayerSpec::conv(), LayerSpec::relu(), LayerSpec::maxpool(),
                                           LayerSpec::conv(), LayerSpec::dense(4)});
  const auto m = init_network(spec, 3);
  const Matrix x = testing::gaussian(3, static_cast<int>(spec.input_shape().size()), 4);
  const Matrix y = forward_batch(m, x);
  for (int r = 0; r < 3; ++r) {
    const auto expect = naive_forward(m, std::vector<double>(x.row(r).data(), x.row(r).data() + x.cols()));
    for (int j = 0; j < 4; ++j) CHECK(y(r, j) == doctest::Approx(expect[static_cast<std::size_t>(j)]).epsilon(1e-12));
  }
}

TEST_CASE("embed_all: empty input, order preserved") {
  const auto m = init_network(NetworkSpec::dense_head(5, {7}, 3), 2);
  CHECK(embed_all(m, Matrix(0, 5)).rows() == 0);
  CHECK(embed_all(m, Matrix(0, 5)).cols() == 3);
  const Matrix x = testing::gaussian(6, 5, 8);
  const Matrix y = embed_all(m, x);
  CHECK(y.row(2).transpose().isApprox(forward(m, x.row(2).transpose()), 0.0));
  Matrix permuted = x;
  permuted.row(0) = x.row(5);
  permuted.row(5) = x.row(0);
  const Matrix yp = embed_all(m, permuted);
  CHECK(yp.row(0) == y.row(5));
  CHECK(yp.row(5) == y.row(0));
}

TEST_CASE("triplet loss values") {
  auto v = [](double a) { return Vector::Constant(1, a); };
  CHECK(triplet_loss(v(0), v(0), v(1), 0.2) == 0.0);
  CHECK(triplet_loss(v(0), v(1), v(0), 0.5) == 1.5);
  CHECK(triplet_loss(v(3), v(3), v(3), 0.7) == 0.7);
}

TEST_CASE("triplet sampling constraints and determinism") {
  const std::vector<std::string> subjects{"a", "a", "b", "b"};
  Rng rng(1);
  const auto batch = sample_triplets(subjects, 4, rng);
  REQUIRE(batch.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(batch.anchors[t] != batch.positives[t]);
    CHECK(subjects[batch.anchors[t]] == subjects[batch.positives[t]]);
    CHECK(subjects[batch.anchors[t]] != subjects[batch.negatives[t]]);
  }
  Rng r1(9), r2(9);
  CHECK(sample_triplets(subjects, 16, r1).anchors == sample_triplets(subjects, 16, r2).anchors);

  const std::vector<std::string> with_single{"a", "a", "b", "c", "c"};
  Rng r3(4);
  const auto b = sample_triplets(with_single, 200, r3);
  for (auto i : b.anchors) CHECK(with_single[i] != "b");

  Rng r4(1);
  CHECK_THROWS_AS(sample_triplets({"a", "a"}, 2, r4), ValidationError);
}

TEST_CASE("conv network gradient matches finite differences") {
  const NetworkSpec spec(Shape{2, 6, 5}, {LayerSpec::conv(), LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::dense(3)});
  auto model = init_network(spec, 12);
  const Matrix x = testing::gaussian(6, static_cast<int>(spec.input_shape().size()), 13);
  const std::vector<std::string> subjects{"a", "a", "b", "b", "c", "c"};
  Rng rng(3);
  const auto batch = sample_triplets(subjects, 5, rng);
  const auto eval = evaluate_triplets(model, x, batch, 1.0, true);
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t j = 0; j < model.params.size(); ++j) {
    auto plus = model;
    auto minus = model;
    plus.params[j] += h;
    minus.params[j] -= h;
    const auto ep = evaluate_triplets(plus, x, batch, 1.0, false);
    const auto em = evaluate_triplets(minus, x, batch, 1.0, false);
    bool kink = false;
    for (std::size_t t = 0; t < batch.size(); ++t) kink = kink || (ep.hinge_margins[t] > 0) != (em.hinge_margins[t] > 0);
    if (kink) continue;
    const double numeric = (ep.loss - em.loss) / (2 * h);
    // Relu and pooling switches show up as a second-difference jump; skip those too.
    const double curvature = std::abs(ep.loss + em.loss - 2 * eval.loss) / (h * h);
    if (curvature > 1e3) continue;
    CHECK(eval.gradient[j] == doctest::Approx(numeric).epsilon(1e-5).scale(1e-3));
    ++checked;
  }
  CHECK(checked > static_cast<int>(model.params.size()) / 2);
}

TEST_CASE("zero learning rate leaves weights untouched") {
  const Matrix x = testing::gaussian(12, 6, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  const auto spec = NetworkSpec::dense_head(6, {5}, 3);
  const auto init = init_network(spec, cfg.seed);
  const auto trained = train_siamese(labeled(x, 3), spec, cfg);
  CHECK(trained.params == init.params);
  CHECK(trained.train_log.size() == 3);
}

TEST_CASE("zero margin on identical features gives zero loss") {
  TrainConfig cfg;
  cfg.margin = 0.0;
  cfg.epochs = 4;
  cfg.batch_size = 5;
  const auto trained = train_siamese(labeled(Matrix::Constant(10, 4, 0.5), 2), NetworkSpec::dense_head(4, {3}, 2), cfg);
  for (double l : trained.train_log) CHECK(l == 0.0);
}

TEST_CASE("invalid training settings are rejected") {
  TrainConfig cfg;
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("training on synthetic color-variance features lowers the loss") {
  const auto samples = generate_synthetic({});
  FeatureSettings fs;
  fs.method = FeatureMethod::color_variance;
  LabeledMatrix train;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 150; ++i) {
    rows.push_back(extract_features(samples[i], fs).values);
    train.subjects.push_back(samples[i].subject_id);
  }
  train.values.resize(150, static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    train.values.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), static_cast<Eigen::Index>(rows[i].size()));
  // Scale pixel statistics down so the default learning rate applies.
  train.values /= 20.0;
  TrainConfig cfg;
  cfg.seed = 3;
  const auto model = train_siamese(train, NetworkSpec::dense_head(static_cast<int>(train.values.cols()), {100, 100, 100}, 50), cfg);
  REQUIRE(model.train_log.size() == 100);
  CHECK(model.train_log.back() < model.train_log.front());
  CHECK(model.train_log.back() < 0.5 * model.train_log.front());
}

TEST_CASE("training is bit-reproducible") {
  const Matrix x = testing::gaussian(20, 6, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  const auto spec = NetworkSpec::dense_head(6, {8}, 3);
  CHECK(train_siamese(labeled(x, 4), spec, cfg).params == train_siamese(labeled(x, 4), spec, cfg).params);
}

TEST_CASE("non-finite inputs and divergence are reported") {
  Matrix x = testing::gaussian(8, 3, 1);
  x(0, 0) = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto spec = NetworkSpec::dense_head(3, {4}, 2);
  CHECK_THROWS_AS(train_siamese(labeled(x, 2), spec, cfg), ValidationError);

  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e308;
  try {
    train_siamese(labeled(testing::gaussian(8, 3, 1), 2), spec, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch") != std::string::npos);
    CHECK(what.find("batch") != std::string::npos);
  }
}

TEST_CASE("model save/load is bit-exact") {
  auto dir = testing::scratch("model");
  auto m = init_network(NetworkSpec::conv_image(20, 24, 2, {7}, 5), 4);
  m.train_log = {1.5, 0.25};
  save_model(m, dir / "m.model");
  const auto back = load_model(dir / "m.model");
  CHECK(back.spec == m.spec);
  CHECK(back.params == m.params);
  CHECK(back.train_log == m.train_log);
  std::ofstream(dir / "junk.model") << "not a model";
  CHECK_THROWS_AS(load_model(dir / "junk.model"), IngestError);
}
