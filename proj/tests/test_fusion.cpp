#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "nemo/fusion.hpp"
#include "nemo/gradcheck.hpp"
#include "test_util.hpp"

using namespace nemo;

namespace {

FeatureFrame frame_with(const GridSpec& spec, std::int64_t k,
                        std::mt19937_64& rng, double valid_rate) {
  FeatureFrame f = make_frame(spec, k);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::int64_t i = 0; i < f.features.numel(); ++i)
    f.features[i] = dist(rng);
  for (auto& v : f.valid) v = coin(rng) < valid_rate ? 1 : 0;
  return f;
}

FusionConfig tiny_config(StemMode mode) {
  FusionConfig cfg;
  cfg.k = 4;
  cfg.stem_mode = mode;
  cfg.stem_channels = {3, 4, 5};
  cfg.hidden1 = 3;
  cfg.mlp1_out = 4;
  cfg.hidden2 = 2;
  cfg.mlp_mid = 3;
  return cfg;
}

bool frames_equal(const FeatureFrame& a, const FeatureFrame& b) {
  if (a.valid != b.valid) return false;
  for (std::int64_t i = 0; i < a.features.numel(); ++i)
    if (a.features[i] != b.features[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("overwrite fusion lets the newest valid observation win") {
  std::mt19937_64 rng(41);
  const GridSpec ego = make_ego_spec(4, 4, 0.15);

  SUBCASE("all-valid current replaces everything") {
    const FeatureFrame hist = frame_with(ego, 4, rng, 1.0);
    const FeatureFrame cur = frame_with(ego, 4, rng, 1.0);
    const FeatureFrame out = fuse_overwrite(hist, cur);
    CHECK(frames_equal(out, cur));
  }

  SUBCASE("all-invalid current leaves history untouched") {
    const FeatureFrame hist = frame_with(ego, 4, rng, 1.0);
    FeatureFrame cur = frame_with(ego, 4, rng, 1.0);
    std::fill(cur.valid.begin(), cur.valid.end(), 0);
    const FeatureFrame out = fuse_overwrite(hist, cur);
    CHECK(frames_equal(out, hist));
  }

  SUBCASE("checkerboard validity interleaves exactly") {
    const FeatureFrame hist = frame_with(ego, 4, rng, 1.0);
    FeatureFrame cur = frame_with(ego, 4, rng, 1.0);
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t w = 0; w < 4; ++w)
        cur.valid[static_cast<size_t>(h * 4 + w)] = (h + w) % 2;
    const FeatureFrame out = fuse_overwrite(hist, cur);
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t w = 0; w < 4; ++w) {
        const FeatureFrame& want = ((h + w) % 2) ? cur : hist;
        for (std::int64_t c = 0; c < 4; ++c)
          CHECK(out.features.at(h, w, c) == want.features.at(h, w, c));
        CHECK(out.valid[static_cast<size_t>(h * 4 + w)] == 1);
      }
  }

  SUBCASE("applying the same current twice changes nothing more") {
    const FeatureFrame hist = frame_with(ego, 4, rng, 0.7);
    const FeatureFrame cur = frame_with(ego, 4, rng, 0.5);
    const FeatureFrame once = fuse_overwrite(hist, cur);
    const FeatureFrame twice = fuse_overwrite(once, cur);
    CHECK(frames_equal(once, twice));
  }
}

TEST_CASE("maxpool fusion is a per-channel maximum with pass-through") {
  std::mt19937_64 rng(43);
  GridSpec one = make_ego_spec(1, 1, 0.15);

  SUBCASE("channelwise maximum on a single cell") {
    FeatureFrame hist = make_frame(one, 2);
    FeatureFrame cur = make_frame(one, 2);
    hist.features[0] = 0.2f;
    hist.features[1] = 0.8f;
    cur.features[0] = 0.5f;
    cur.features[1] = 0.1f;
    hist.valid[0] = cur.valid[0] = 1;
    const FeatureFrame out = fuse_maxpool(hist, cur);
    CHECK(out.features[0] == 0.5f);
    CHECK(out.features[1] == 0.8f);
  }

  SUBCASE("invalid history passes the current through") {
    FeatureFrame hist = make_frame(one, 2);
    FeatureFrame cur = make_frame(one, 2);
    hist.features[0] = 9.0f;
    cur.features[0] = 0.5f;
    cur.features[1] = 0.25f;
    cur.valid[0] = 1;
    const FeatureFrame out = fuse_maxpool(hist, cur);
    CHECK(out.valid[0] == 1);
    CHECK(out.features[0] == 0.5f);
    CHECK(out.features[1] == 0.25f);
  }

  SUBCASE("commutative, associative, idempotent on random frames") {
    const GridSpec ego = make_ego_spec(5, 3, 0.15);
    const FeatureFrame a = frame_with(ego, 3, rng, 0.6);
    const FeatureFrame b = frame_with(ego, 3, rng, 0.6);
    const FeatureFrame c = frame_with(ego, 3, rng, 0.6);
    CHECK(frames_equal(fuse_maxpool(a, b), fuse_maxpool(b, a)));
    CHECK(frames_equal(fuse_maxpool(fuse_maxpool(a, b), c),
                       fuse_maxpool(a, fuse_maxpool(b, c))));
    CHECK(frames_equal(fuse_maxpool(a, a), a));
  }
}

TEST_CASE("fusion variants preserve the spec and never shrink the mask") {
  std::mt19937_64 rng(47);
  const GridSpec ego = make_ego_spec(6, 4, 0.2);
  const FeatureFrame hist = frame_with(ego, 4, rng, 0.5);
  const FeatureFrame cur = frame_with(ego, 4, rng, 0.5);

  std::mt19937_64 model_rng(1);
  HomoGridFusion<float> model(tiny_config(StemMode::conv3x3), model_rng);

  const FeatureFrame outs[] = {fuse_overwrite(hist, cur),
                               fuse_maxpool(hist, cur),
                               homo_fuse_step(hist, cur, model)};
  for (const FeatureFrame& out : outs) {
    CHECK(out.spec.height_cells == ego.height_cells);
    CHECK(out.spec.width_cells == ego.width_cells);
    CHECK(out.spec.resolution == ego.resolution);
    for (size_t i = 0; i < out.valid.size(); ++i) {
      const std::uint8_t want = (hist.valid[i] || cur.valid[i]) ? 1 : 0;
      CHECK(out.valid[i] == want);
    }
  }
}

TEST_CASE("conv stem keeps spatial dims and maps zero input to zero") {
  std::mt19937_64 rng(53);
  HomoGridFusion<double> model(tiny_config(StemMode::conv3x3), rng);

  Tensor<double> x({2, 6, 6, 4});
  fill_normal(x, 0.0, 1.0, rng);
  const Tensor<double> y = model.forward_stem(x, NormMode::train);
  REQUIRE((y.shape() == std::vector<std::int64_t>{2, 6, 6, 5}));

  Tensor<double> zeros({2, 6, 6, 4});
  const Tensor<double> yz = model.forward_stem(zeros, NormMode::train);
  for (std::int64_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.0);
  const Tensor<double> yz_eval = model.forward_stem(zeros, NormMode::eval);
  for (std::int64_t i = 0; i < yz_eval.numel(); ++i) CHECK(yz_eval[i] == 0.0);
}

TEST_CASE("conv stem gradients match finite differences") {
  std::mt19937_64 rng(59);
  HomoGridFusion<double> model(tiny_config(StemMode::conv3x3), rng);

  Tensor<double> x({2, 6, 6, 4});
  testutil::fill_separated(x, rng);
  const Tensor<double> y0 = model.forward_stem(x, NormMode::train);
  testutil::WeightedSumLoss head(y0.shape(), rng);
  ParamStore<double> store;
  model.conv1.register_params(store, "conv1");
  model.conv2.register_params(store, "conv2");
  model.conv3.register_params(store, "conv3");
  model.bn.register_params(store, "bn");
  store.zero_grads();
  const Tensor<double> gx = model.backward_stem(head.grad());

  std::vector<GradSlot> slots = slots_from(store);
  slots.push_back({"x", &x, &gx});
  const auto report = grad_check(
      [&]() { return head.value(model.forward_stem(x, NormMode::train)); },
      slots);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("a pointwise stem makes the whole network permutation-homogeneous") {
  std::mt19937_64 rng(61);
  HomoGridFusion<double> model(tiny_config(StemMode::conv1x1), rng);

  const std::int64_t H = 4, W = 5, T = 3;
  Tensor<double> seq({1, T, H, W, 4});
  fill_normal(seq, 0.0, 1.0, rng);

  std::vector<std::int64_t> perm(static_cast<size_t>(H * W));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  Tensor<double> shuffled({1, T, H, W, 4});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t cell = 0; cell < H * W; ++cell) {
      const std::int64_t p = perm[static_cast<size_t>(cell)];
      for (std::int64_t c = 0; c < 4; ++c)
        shuffled.at(0, t, p / W, p % W, c) = seq.at(0, t, cell / W, cell % W, c);
    }

  const Tensor<double> out = model.forward(seq, NormMode::eval);
  const Tensor<double> out_shuffled = model.forward(shuffled, NormMode::eval);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t cell = 0; cell < H * W; ++cell) {
      const std::int64_t p = perm[static_cast<size_t>(cell)];
      for (std::int64_t c = 0; c < 4; ++c)
        CHECK(out_shuffled.at(0, t, p / W, p % W, c) ==
              out.at(0, t, cell / W, cell % W, c));
    }
}

TEST_CASE("a length-1 sequence still produces finite outputs") {
  std::mt19937_64 rng(67);
  HomoGridFusion<float> model(tiny_config(StemMode::conv3x3), rng);
  Tensor<float> seq({1, 1, 3, 3, 4});
  fill_normal(seq, 0.0, 1.0, rng);
  const Tensor<float> out = model.forward(seq, NormMode::eval);
  REQUIRE((out.shape() == std::vector<std::int64_t>{1, 1, 3, 3, 4}));
  for (std::int64_t i = 0; i < out.numel(); ++i)
    CHECK(std::isfinite(out[i]));
}

TEST_CASE("full fusion stack gradients match finite differences") {
  std::mt19937_64 rng(71);
  HomoGridFusion<double> model(tiny_config(StemMode::conv3x3), rng);
  ParamStore<double> store;
  model.register_params(store, "fusion");

  Tensor<double> x({1, 4, 4, 4, 4});
  testutil::fill_separated(x, rng);
  const Tensor<double> y0 = model.forward(x, NormMode::train);
  testutil::WeightedSumLoss head(y0.shape(), rng);
  store.zero_grads();
  const Tensor<double> gx = model.backward(head.grad());

  std::vector<GradSlot> slots = slots_from(store);
  slots.push_back({"x", &x, &gx});
  const auto report = grad_check(
      [&]() { return head.value(model.forward(x, NormMode::train)); }, slots);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("stepwise fusion follows the per-cell validity rules") {
  std::mt19937_64 rng(73);
  const GridSpec ego = make_ego_spec(4, 4, 0.15);
  FeatureFrame hist = frame_with(ego, 4, rng, 1.0);
  FeatureFrame cur = frame_with(ego, 4, rng, 1.0);
  // Row 0: both invalid. Row 1: only cur. Row 2: only hist. Row 3: both.
  for (std::int64_t w = 0; w < 4; ++w) {
    hist.valid[static_cast<size_t>(0 * 4 + w)] = 0;
    cur.valid[static_cast<size_t>(0 * 4 + w)] = 0;
    hist.valid[static_cast<size_t>(1 * 4 + w)] = 0;
    cur.valid[static_cast<size_t>(2 * 4 + w)] = 0;
  }

  std::mt19937_64 model_rng(2);
  HomoGridFusion<float> model(tiny_config(StemMode::conv3x3), model_rng);
  const FeatureFrame out = homo_fuse_step(hist, cur, model);

  // Mirror the documented rule: feed [first, second] per cell and keep the
  // last timestamp of the sequence output.
  Tensor<float> seq({1, 2, 4, 4, 4});
  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w) {
      const size_t idx = static_cast<size_t>(h * 4 + w);
      if (!hist.valid[idx] && !cur.valid[idx]) continue;
      const FeatureFrame& first = hist.valid[idx] ? hist : cur;
      const FeatureFrame& second = cur.valid[idx] ? cur : hist;
      for (std::int64_t c = 0; c < 4; ++c) {
        seq.at(0, 0, h, w, c) = first.features.at(h, w, c);
        seq.at(0, 1, h, w, c) = second.features.at(h, w, c);
      }
    }
  const Tensor<float> fused = model.forward(seq, NormMode::eval);

  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w) {
      const size_t idx = static_cast<size_t>(h * 4 + w);
      if (h == 0) {
        CHECK(out.valid[idx] == 0);
        for (std::int64_t c = 0; c < 4; ++c)
          CHECK(out.features.at(h, w, c) == 0.0f);
        continue;
      }
      CHECK(out.valid[idx] == 1);
      for (std::int64_t c = 0; c < 4; ++c)
        CHECK(out.features.at(h, w, c) ==
              doctest::Approx(fused.at(0, 1, h, w, c)).epsilon(1e-5));
    }
}
