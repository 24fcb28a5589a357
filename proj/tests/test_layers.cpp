#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "nemo/gradcheck.hpp"
#include "nemo/layers.hpp"
#include "test_util.hpp"

using namespace nemo;

TEST_CASE("conv2d: identity kernel, constant bias, shape errors") {
  std::mt19937_64 rng(2);

  SUBCASE("1x1 identity kernel reproduces the input") {
    Conv2d<double> conv(1, 1, 3, 3, 1, 0, rng);
    conv.w.zero();
    conv.b.zero();
    for (std::int64_t c = 0; c < 3; ++c) conv.w.at(0, 0, c, c) = 1.0;
    Tensor<double> x({2, 4, 5, 3});
    testutil::fill_separated(x, rng);
    const Tensor<double> y = conv.forward(x);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }

  SUBCASE("zero weights with bias b give a constant field of b") {
    Conv2d<double> conv(3, 3, 2, 4, 1, 1, rng);
    conv.w.zero();
    for (std::int64_t c = 0; c < 4; ++c) conv.b[c] = 0.5 * static_cast<double>(c + 1);
    Tensor<double> x({1, 5, 5, 2});
    testutil::fill_separated(x, rng);
    const Tensor<double> y = conv.forward(x);
    for (std::int64_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == conv.b[i % 4]);
  }

  SUBCASE("channel mismatch names the offending shapes") {
    Conv2d<double> conv(3, 3, 2, 4, 1, 1, rng);
    Tensor<double> x({1, 5, 5, 3});
    CHECK_THROWS_WITH_AS(conv.forward(x), doctest::Contains("does not match"),
                         std::invalid_argument);
  }
}

TEST_CASE("conv2d gradients match finite differences on several shapes") {
  struct Shape {
    std::int64_t n, h, w, cin, cout;
    int k, stride, pad;
  };
  const Shape shapes[] = {
      {1, 4, 4, 1, 2, 3, 1, 1},
      {2, 5, 6, 3, 4, 3, 1, 1},
      {1, 6, 5, 2, 3, 1, 1, 0},
      {2, 6, 6, 2, 3, 3, 2, 1},
  };
  int seed = 100;
  for (const Shape& s : shapes) {
    CAPTURE(s.n);
    CAPTURE(s.k);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
    Conv2d<double> conv(s.k, s.k, s.cin, s.cout, s.stride, s.pad, rng);
    Tensor<double> x({s.n, s.h, s.w, s.cin});
    testutil::fill_separated(x, rng);

    const Tensor<double> y0 = conv.forward(x);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    conv.gw.zero();
    conv.gb.zero();
    const Tensor<double> gx = conv.backward(head.grad());

    std::vector<GradSlot> slots = {{"x", &x, &gx},
                                   {"w", &conv.w, &conv.gw},
                                   {"b", &conv.b, &conv.gb}};
    const auto report = grad_check(
        [&]() { return head.value(conv.forward(x)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("maxpool2d: constants, impulse plateau, tie routing") {
  MaxPool2d<double> pool(3, 1, 1);

  SUBCASE("constant field is unchanged for any padding") {
    const Tensor<double> x = Tensor<double>::full({1, 5, 6, 2}, 1.25);
    const Tensor<double> y = pool.forward(x);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 1.25);
  }

  SUBCASE("a single impulse becomes a 3x3 plateau of its value") {
    Tensor<double> x({1, 7, 7, 1});
    x.at(0, 3, 4, 0) = 2.0;
    const Tensor<double> y = pool.forward(x);
    for (std::int64_t h = 0; h < 7; ++h)
      for (std::int64_t w = 0; w < 7; ++w) {
        const bool in_plateau =
            std::abs(h - 3) <= 1 && std::abs(w - 4) <= 1;
        CHECK(y.at(0, h, w, 0) == (in_plateau ? 2.0 : 0.0));
      }
  }

  SUBCASE("ties route the gradient to the lowest linear input index") {
    Tensor<double> x({1, 1, 3, 1});
    x[0] = 1.0;
    x[1] = 1.0;
    x[2] = 0.0;
    MaxPool2d<double> p(3, 1, 1);
    p.forward(x);
    Tensor<double> gy({1, 1, 3, 1});
    gy.fill(1.0);
    const Tensor<double> gx = p.backward(gy);
    // Outputs at columns 0 and 1 both see the tied pair; both route to x[0].
    CHECK(gx[0] == 2.0);
    CHECK(gx[1] == 1.0);  // only the column-2 window, where x[1] wins alone
    CHECK(gx[2] == 0.0);
  }
}

TEST_CASE("maxpool2d gradients match finite differences on several shapes") {
  struct Shape {
    std::int64_t n, h, w, c;
    int k, stride, pad;
  };
  const Shape shapes[] = {
      {1, 4, 4, 2, 3, 1, 1},
      {2, 5, 5, 3, 2, 2, 0},
      {1, 6, 4, 1, 3, 1, 1},
  };
  int seed = 200;
  for (const Shape& s : shapes) {
    CAPTURE(s.h);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
    MaxPool2d<double> pool(s.k, s.stride, s.pad);
    Tensor<double> x({s.n, s.h, s.w, s.c});
    testutil::fill_separated(x, rng);

    const Tensor<double> y0 = pool.forward(x);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    const Tensor<double> gx = pool.backward(head.grad());

    std::vector<GradSlot> slots = {{"x", &x, &gx}};
    const auto report = grad_check(
        [&]() { return head.value(pool.forward(x)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("batchnorm2d: batch statistics, running stats, eval identity") {
  std::mt19937_64 rng(5);

  SUBCASE("train-mode output has zero mean and unit variance per channel") {
    BatchNorm2d<double> bn(3);
    Tensor<double> x({4, 5, 5, 3});
    fill_normal(x, 2.0, 3.0, rng);
    const Tensor<double> y = bn.forward(x, NormMode::train);
    const std::int64_t count = y.numel() / 3;
    for (std::int64_t c = 0; c < 3; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t i = 0; i < count; ++i) {
        sum += y[i * 3 + c];
        sq += y[i * 3 + c] * y[i * 3 + c];
      }
      const double mean = sum / static_cast<double>(count);
      const double var = sq / static_cast<double>(count) - mean * mean;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }

  SUBCASE("already-normalized input passes through with unit gamma") {
    BatchNorm2d<double> bn(2);
    Tensor<double> x({2, 4, 4, 2});
    fill_normal(x, 0.0, 1.0, rng);
    // Normalize exactly first so the layer's own statistics are trivial.
    const std::int64_t count = x.numel() / 2;
    for (std::int64_t c = 0; c < 2; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t i = 0; i < count; ++i) sum += x[i * 2 + c];
      const double mean = sum / static_cast<double>(count);
      for (std::int64_t i = 0; i < count; ++i) sq += (x[i * 2 + c] - mean) * (x[i * 2 + c] - mean);
      const double stdev = std::sqrt(sq / static_cast<double>(count));
      for (std::int64_t i = 0; i < count; ++i)
        x[i * 2 + c] = (x[i * 2 + c] - mean) / stdev;
    }
    const Tensor<double> y = bn.forward(x, NormMode::train);
    for (std::int64_t i = 0; i < x.numel(); ++i)
      CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));
  }

  SUBCASE("eval before any training step normalizes with mean 0 / var 1") {
    BatchNorm2d<double> bn(2);
    Tensor<double> x({1, 3, 3, 2});
    testutil::fill_separated(x, rng);
    const Tensor<double> y = bn.forward(x, NormMode::eval);
    for (std::int64_t i = 0; i < x.numel(); ++i)
      CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  }

  SUBCASE("running statistics blend with momentum 0.1") {
    BatchNorm2d<double> bn(1);
    Tensor<double> x({1, 2, 2, 1});
    x[0] = 1.0;
    x[1] = 3.0;
    x[2] = 5.0;
    x[3] = 7.0;  // mean 4, biased var 5, unbiased var 20/3
    bn.forward(x, NormMode::train);
    CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 4.0).epsilon(1e-12));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * (20.0 / 3.0)).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm2d gradients match finite differences in both modes") {
  struct Shape {
    std::int64_t n, h, w, c;
  };
  const Shape shapes[] = {{2, 3, 3, 4}, {1, 4, 5, 3}, {4, 2, 2, 2}};
  int seed = 300;
  for (const Shape& s : shapes) {
    CAPTURE(s.c);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
    BatchNorm2d<double> bn(s.c);
    fill_normal(bn.gamma, 1.0, 0.2, rng);
    fill_normal(bn.beta, 0.0, 0.2, rng);
    Tensor<double> x({s.n, s.h, s.w, s.c});
    fill_normal(x, 0.5, 1.5, rng);

    const Tensor<double> y0 = bn.forward(x, NormMode::train);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    bn.ggamma.zero();
    bn.gbeta.zero();
    const Tensor<double> gx = bn.backward(head.grad());

    std::vector<GradSlot> slots = {{"x", &x, &gx},
                                   {"gamma", &bn.gamma, &bn.ggamma},
                                   {"beta", &bn.beta, &bn.gbeta}};
    const auto report = grad_check(
        [&]() { return head.value(bn.forward(x, NormMode::train)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }

  SUBCASE("eval mode uses frozen statistics in forward and backward") {
    std::mt19937_64 rng(77);
    BatchNorm2d<double> bn(3);
    Tensor<double> warm({2, 4, 4, 3});
    fill_normal(warm, 1.0, 2.0, rng);
    bn.forward(warm, NormMode::train);

    Tensor<double> x({1, 3, 4, 3});
    fill_normal(x, 0.0, 1.0, rng);
    const Tensor<double> y0 = bn.forward(x, NormMode::eval);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    bn.ggamma.zero();
    bn.gbeta.zero();
    const Tensor<double> gx = bn.backward(head.grad());

    std::vector<GradSlot> slots = {{"x", &x, &gx},
                                   {"gamma", &bn.gamma, &bn.ggamma},
                                   {"beta", &bn.beta, &bn.gbeta}};
    const auto report = grad_check(
        [&]() { return head.value(bn.forward(x, NormMode::eval)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("mlp: identity layer, relu clamp, gradients") {
  std::mt19937_64 rng(9);

  SUBCASE("single linear layer with identity weights is the identity") {
    Mlp<double> mlp({3, 3}, rng);
    mlp.layers[0].w.zero();
    mlp.layers[0].b.zero();
    for (std::int64_t i = 0; i < 3; ++i) mlp.layers[0].w.at(i, i) = 1.0;
    Tensor<double> x({4, 3});
    testutil::fill_separated(x, rng);
    const Tensor<double> y = mlp.forward(x);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }

  SUBCASE("negative inputs die in a relu stage with identity weights") {
    Mlp<double> mlp({2, 2, 2}, rng);
    for (auto& layer : mlp.layers) {
      layer.w.zero();
      layer.b.zero();
      for (std::int64_t i = 0; i < 2; ++i) layer.w.at(i, i) = 1.0;
    }
    Tensor<double> x({1, 2});
    x[0] = -3.0;
    x[1] = 4.0;
    const Tensor<double> y = mlp.forward(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 4.0);
  }

  SUBCASE("gradients match finite differences on several widths") {
    const std::vector<std::vector<std::int64_t>> widths = {
        {3, 5, 4}, {2, 4}, {5, 7, 6, 2}};
    const std::int64_t batches[] = {4, 3, 2};
    int seed = 400;
    for (size_t i = 0; i < widths.size(); ++i) {
      std::mt19937_64 r2(static_cast<std::uint64_t>(seed++));
      Mlp<double> mlp(widths[i], r2);
      ParamStore<double> store;
      mlp.register_params(store, "mlp");
      Tensor<double> x({batches[i], widths[i].front()});
      testutil::fill_separated(x, r2);

      const Tensor<double> y0 = mlp.forward(x);
      testutil::WeightedSumLoss head(y0.shape(), r2);
      store.zero_grads();
      const Tensor<double> gx = mlp.backward(head.grad());

      std::vector<GradSlot> slots = slots_from(store);
      slots.push_back({"x", &x, &gx});
      const auto report = grad_check(
          [&]() { return head.value(mlp.forward(x)); }, slots);
      CHECK(report.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("linear layer gradient is exact to 1e-7 and relu to 1e-6") {
  std::mt19937_64 rng(13);
  Linear<double> fc(4, 3, rng);
  Tensor<double> x({5, 4});
  testutil::fill_separated(x, rng);
  const Tensor<double> y0 = fc.forward(x);
  testutil::WeightedSumLoss head(y0.shape(), rng);
  fc.gw.zero();
  fc.gb.zero();
  const Tensor<double> gx = fc.backward(head.grad());
  std::vector<GradSlot> slots = {
      {"x", &x, &gx}, {"w", &fc.w, &fc.gw}, {"b", &fc.b, &fc.gb}};
  const auto report =
      grad_check([&]() { return head.value(fc.forward(x)); }, slots);
  CHECK(report.max_rel_err < 1e-7);

  Relu<double> relu;
  Tensor<double> xr({6, 4});
  testutil::fill_separated(xr, rng);  // elements at least 0.025 from zero
  const Tensor<double> yr = relu.forward(xr);
  testutil::WeightedSumLoss head_r(yr.shape(), rng);
  const Tensor<double> gxr = relu.backward(head_r.grad());
  std::vector<GradSlot> slots_r = {{"x", &xr, &gxr}};
  const auto report_r =
      grad_check([&]() { return head_r.value(relu.forward(xr)); }, slots_r);
  CHECK(report_r.max_rel_err < 1e-6);
}

TEST_CASE("softmax cross entropy: analytic values, masking, gradients") {
  SoftmaxCrossEntropy<double> ce;

  SUBCASE("uniform logits over 4 classes cost ln 4") {
    Tensor<double> logits({3, 4});
    logits.fill(0.7);
    const double loss = ce.forward(logits, {0, 1, 3}, {});
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    for (std::int64_t i = 0; i < 3; ++i) {
      double row = 0.0;
      for (std::int64_t j = 0; j < 4; ++j) row += ce.probs_cache.at(i, j);
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("a huge correct logit drives the loss to zero") {
    Tensor<double> logits({1, 4});
    logits[2] = 50.0;
    const double loss = ce.forward(logits, {2}, {});
    CHECK(loss < 1e-12);
  }

  SUBCASE("an all-masked batch is an error") {
    Tensor<double> logits({2, 3});
    CHECK_THROWS_WITH_AS(ce.forward(logits, {0, 1}, {0, 0}),
                         doctest::Contains("empty supervision set"),
                         std::runtime_error);
  }

  SUBCASE("out-of-range labels are rejected") {
    Tensor<double> logits({1, 3});
    CHECK_THROWS_AS(ce.forward(logits, {3}, {}), std::invalid_argument);
  }

  SUBCASE("masked rows get exactly zero gradient") {
    std::mt19937_64 rng(31);
    Tensor<double> logits({4, 3});
    testutil::fill_separated(logits, rng);
    ce.forward(logits, {0, 2, 1, 0}, {1, 0, 1, 0});
    const Tensor<double> gx = ce.backward();
    for (std::int64_t j = 0; j < 3; ++j) {
      CHECK(gx.at(1, j) == 0.0);
      CHECK(gx.at(3, j) == 0.0);
      CHECK(gx.at(0, j) != 0.0);
    }
  }

  SUBCASE("gradients match finite differences on several shapes") {
    struct Shape {
      std::int64_t n, c;
      bool masked;
    };
    const Shape shapes[] = {{6, 4, true}, {3, 2, false}, {8, 5, true}};
    int seed = 500;
    for (const Shape& s : shapes) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
      Tensor<double> logits({s.n, s.c});
      testutil::fill_separated(logits, rng);
      std::vector<std::int64_t> labels(static_cast<size_t>(s.n));
      std::vector<std::uint8_t> mask;
      for (std::int64_t i = 0; i < s.n; ++i)
        labels[static_cast<size_t>(i)] = i % s.c;
      if (s.masked) {
        mask.assign(static_cast<size_t>(s.n), 1);
        mask[0] = 0;
        mask[static_cast<size_t>(s.n - 1)] = 0;
      }

      SoftmaxCrossEntropy<double> ce2;
      ce2.forward(logits, labels, mask);
      const Tensor<double> gx = ce2.backward();
      std::vector<GradSlot> slots = {{"logits", &logits, &gx}};
      const auto report = grad_check(
          [&]() { return ce2.forward(logits, labels, mask); }, slots);
      CHECK(report.max_rel_err < 1e-4);
    }
  }
}
