#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/model.hpp"
#include "oracles.hpp"
#include "probe.hpp"

using namespace fetfids;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

FetFidsConfig small_config() {
  FetFidsConfig c;
  c.n_features = 6;
  c.d_model = 4;
  c.heads = 2;
  c.blocks = 2;
  c.embed_channels = {3, 3};
  c.ff_hidden = 5;
  c.mlp_hidden = {7};
  c.seed = 42;
  return c;
}

double largest_gap(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor row_of(const Tensor& x, std::size_t r) {
  Tensor out({1, x.dim(1)});
  for (std::size_t j = 0; j < x.dim(1); ++j) out[j] = x.at(r, j);
  return out;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fetfids_test_model";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("init is a pure function of the config") {
  const auto c = small_config();
  FetFidsModel a(c), b(c);
  CHECK(a.params().values_identical(b.params()));
  auto c2 = c;
  c2.seed = 43;
  FetFidsModel d(c2);
  CHECK_FALSE(a.params().values_identical(d.params()));
}

TEST_CASE("param count matches the layer-by-layer formula") {
  FetFidsModel def{FetFidsConfig{}};
  CHECK(def.param_count() == FetFidsModel::analytic_param_count(FetFidsConfig{}));
  CHECK(def.param_count() == 116554);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto c = probe::random_config(rng);
    CHECK(FetFidsModel(c).param_count() == FetFidsModel::analytic_param_count(c));
  }
}

TEST_CASE("param count is unchanged by forward and backward") {
  FetFidsModel m(small_config());
  const auto before = m.param_count();
  Rng rng(1);
  const auto x = random_tensor(rng, {4, 6}, 0, 1);
  const std::vector<int> labels = {0, 1, 2, 3};
  m.backward(nn::nll_loss(m.forward(x, nn::Mode::train), labels).grad);
  CHECK(m.param_count() == before);
}

TEST_CASE("config violations are reported together") {
  FetFidsConfig c;
  c.heads = 3;
  c.embed_channels = {8, 14};
  c.embed_kernel = 2;
  CHECK(c.violations().size() >= 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(FetFidsModel{c}, ConfigError);
}

TEST_CASE("feature_embed") {
  const auto c = small_config();
  FetFidsModel m(c);
  Rng rng(5);
  const auto x = random_tensor(rng, {3, c.n_features}, 0, 1);
  const auto t = m.feature_embed(x);
  REQUIRE(t.shape() == Shape{3, c.n_features, c.d_model});

  SUBCASE("raw value is the last channel") {
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t f = 0; f < c.n_features; ++f)
        CHECK(t[(b * c.n_features + f) * c.d_model + c.d_model - 1] == x.at(b, f));
  }
  SUBCASE("per example") {
    for (std::size_t b = 0; b < 3; ++b) {
      const auto alone = m.feature_embed(row_of(x, b));
      for (std::size_t i = 0; i < alone.size(); ++i) CHECK(alone[i] == t[b * alone.size() + i]);
    }
  }
  SUBCASE("zero input gives identical tokens") {
    const auto z = m.feature_embed(Tensor({2, c.n_features}, 0.0));
    // kernel 3 with zero padding: interior tokens only see zeros.
    for (std::size_t f = 1; f + 1 < c.n_features; ++f)
      for (std::size_t d = 0; d < c.d_model; ++d) CHECK(z[f * c.d_model + d] == z[c.d_model + d]);
    for (std::size_t f = 0; f < c.n_features; ++f) CHECK(z[f * c.d_model + c.d_model - 1] == 0.0);
    for (double v : z.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("encoder block") {
  const auto c = small_config();
  FetFidsModel m(c);
  Rng rng(9);
  const auto tokens = random_tensor(rng, {3, c.n_features, c.d_model});
  const auto once = m.encoder_block(0, tokens, nn::Mode::eval);
  CHECK(once.shape() == tokens.shape());
  const auto twice = m.encoder_block(0, once, nn::Mode::eval);
  CHECK(largest_gap(once, twice) > 1e-3);
  CHECK_THROWS_AS(m.encoder_block(2, tokens, nn::Mode::eval), ConfigError);
  CHECK_THROWS_AS(m.encoder_block_backward(1, tokens), StateError);
}

TEST_CASE("gradient through one encoder block") {
  Rng rng(21);
  for (int i = 0; i < 10; ++i) {
    const auto c = probe::random_config(rng);
    const auto r = probe::encoder_block(rng, c);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst_entry);
  }
}

TEST_CASE("forward") {
  const auto c = small_config();
  FetFidsModel m(c);
  Rng rng(11);
  const auto x = random_tensor(rng, {8, c.n_features}, 0, 1);
  for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
    const auto lp = m.forward(x, mode);
    REQUIRE(lp.shape() == Shape{8, c.n_classes});
    for (std::size_t r = 0; r < 8; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < c.n_classes; ++k) s += std::exp(lp.at(r, k));
      CHECK(std::abs(s - 1.0) < 1e-10);
    }
  }
  CHECK(m.forward(row_of(x, 0), nn::Mode::eval).shape() == Shape{1, c.n_classes});
  CHECK_THROWS_AS(m.forward(row_of(x, 0), nn::Mode::train), BatchSizeError);
  CHECK_THROWS_AS(m.forward(Tensor({2, 5}), nn::Mode::eval), DimensionError);
}

TEST_CASE("untrained model is near chance on balanced random data") {
  FetFidsModel m{FetFidsConfig{}};
  Rng rng(2);
  const std::size_t n = 1000;
  const auto x = random_tensor(rng, {n, 41}, 0, 1);
  const auto lp = m.infer(x);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 5; ++k)
      if (lp.at(r, k) > lp.at(r, best)) best = k;
    hits += best == r % 5;
  }
  const double acc = static_cast<double>(hits) / n;
  CHECK(acc > 0.15);
  CHECK(acc < 0.25);
}

TEST_CASE("eval mode is deterministic and independent of the batch") {
  const auto c = small_config();
  FetFidsModel m(c);
  Rng rng(4);
  // Move the running statistics away from their initial values first.
  for (int i = 0; i < 3; ++i) m.forward(random_tensor(rng, {16, c.n_features}, 0, 1), nn::Mode::train);
  const auto x = random_tensor(rng, {10, c.n_features}, 0, 1);
  const auto a = m.infer(x);
  CHECK(a.identical(m.infer(x)));
  CHECK(a.identical(m.forward(x, nn::Mode::eval)));
  for (std::size_t r = 0; r < 10; ++r) {
    const auto alone = m.infer(row_of(x, r));
    for (std::size_t k = 0; k < c.n_classes; ++k) CHECK(std::abs(alone[k] - a.at(r, k)) < 1e-10);
  }
}

TEST_CASE("clone is independent") {
  FetFidsModel m(small_config());
  auto copy = m.clone();
  CHECK(copy->params().values_identical(m.params()));
  copy->params().value(0).fill(0.5);
  CHECK_FALSE(copy->params().values_identical(m.params()));
}

TEST_CASE("default complexity") {
  FetFidsModel m{FetFidsConfig{}};
  CHECK(m.flop_estimate(1) == 1218527);
  CHECK(m.flop_estimate(3) == 3 * m.flop_estimate(1));
}

TEST_CASE("mlr") {
  MlrModel m(41, 5);
  CHECK(m.param_count() == 210);
  CHECK(m.flop_estimate(1) == 430);

  SUBCASE("zero weights give the uniform distribution") {
    Rng rng(1);
    const auto lp = m.infer(random_tensor(rng, {4, 41}, 0, 1));
    for (double v : lp.data()) CHECK(v == doctest::Approx(std::log(0.2)).epsilon(1e-15));
  }
  SUBCASE("equals log_softmax(xW + b)") {
    Rng rng(2);
    m.params().value(0) = random_tensor(rng, {41, 5});
    m.params().value(1) = random_tensor(rng, {5});
    const auto x = random_tensor(rng, {6, 41}, 0, 1);
    auto z = oracle::matmul(x, m.params().value(0));
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t k = 0; k < 5; ++k) z.at(r, k) += m.params().value(1)[k];
    const auto p = oracle::softmax(z);
    const auto lp = m.forward(x, nn::Mode::train);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(lp[i] - std::log(p[i])) < 1e-12);
  }
  SUBCASE("gradient") {
    // One example with inputs away from 0: every entry is x_f (p_k - y_k),
    // far above the finite-difference noise.
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      m.params().value(0) = random_tensor(rng, {41, 5}, -0.1, 0.1);
      m.params().value(1) = random_tensor(rng, {5}, -0.1, 0.1);
      const auto x = random_tensor(rng, {1, 41}, 0.5, 1.0);
      const std::vector<int> labels = {static_cast<int>(rng.index(5))};
      m.backward(nn::nll_loss(m.forward(x, nn::Mode::train), labels).grad);
      const auto r = grad_check(m.params(), [&] { return nn::nll_loss(m.forward(x, nn::Mode::train), labels).loss; });
      CHECK_MESSAGE(r.max_rel_error < 1e-6, r.worst_entry);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  FetFidsModel m(small_config());
  Rng rng(6);
  m.forward(random_tensor(rng, {8, 6}, 0, 1), nn::Mode::train);  // non-trivial buffers
  const auto path = scratch("round_trip.ckpt");
  save_params(m, path);

  auto c2 = small_config();
  c2.seed = 99;  // the seed is not part of the architecture
  FetFidsModel other(c2);
  load_params(path, other);
  CHECK(other.params().values_identical(m.params()));
}

TEST_CASE("checkpoint for a different architecture is rejected") {
  FetFidsModel m(small_config());
  const auto path = scratch("arch.ckpt");
  save_params(m, path);
  auto c = small_config();
  c.ff_hidden = 6;
  FetFidsModel other(c);
  const FetFidsModel pristine(c);
  CHECK_THROWS_AS(load_params(path, other), IncompatibleCheckpointError);
  CHECK(other.params().values_identical(pristine.params()));
  MlrModel mlr(6, 5);
  CHECK_THROWS_AS(load_params(path, mlr), IncompatibleCheckpointError);
}

TEST_CASE("truncated checkpoint leaves the model untouched") {
  FetFidsModel m(small_config());
  const auto path = scratch("trunc.ckpt");
  save_params(m, path);
  const auto bytes = read_file(path);
  auto c = small_config();
  c.seed = 7;
  for (std::size_t keep : {std::size_t{0}, std::size_t{10}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    write_file_atomic(path, std::string_view(bytes).substr(0, keep));
    FetFidsModel target(c);
    const FetFidsModel pristine(c);
    CHECK_THROWS_AS(load_params(path, target), CorruptionError);
    CHECK(target.params().values_identical(pristine.params()));
  }
  write_file_atomic(path, bytes + "x");
  FetFidsModel target(c);
  CHECK_THROWS_AS(load_params(path, target), CorruptionError);
  CHECK_THROWS_AS(load_params(scratch("missing.ckpt"), target), Error);
}

}  // TEST_SUITE
