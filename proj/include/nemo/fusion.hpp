#pragma once

#include <array>
#include <string>

#include "nemo/bigmap.hpp"
#include "nemo/layers.hpp"
#include "nemo/lstm.hpp"

// HomoGridFusion: a conv stem over each timestamp's grid plane, then one
// shared recurrent fusion network applied to every grid cell's length-T
// feature sequence (the cells of the plane form the batch), reducing back to
// the stored feature width. Plus the two non-parametric baselines.

namespace nemo {

enum class StemMode {
  conv3x3,  // 3x3 convs with interleaved 3x3/s1/p1 maxpools
  conv1x1,  // pointwise convs only: strictly per-grid, no spatial mixing
  none,     // identity stem; recurrent blocks see raw K channels
};

struct FusionConfig {
  std::int64_t k = 4;
  StemMode stem_mode = StemMode::conv3x3;
  std::array<std::int64_t, 3> stem_channels{64, 128, 256};
  std::int64_t hidden1 = 256;   // first biLSTM hidden width
  std::int64_t mlp1_out = 256;  // first MLP output width
  std::int64_t hidden2 = 128;   // second biLSTM hidden width
  std::int64_t mlp_mid = 64;    // second MLP bottleneck before reducing to k

  std::int64_t stem_out() const {
    return stem_mode == StemMode::none ? k : stem_channels[2];
  }
};

template <typename T>
struct HomoGridFusion {
  FusionConfig cfg;
  Conv2d<T> conv1, conv2, conv3;
  Relu<T> relu1, relu2, relu3;
  MaxPool2d<T> pool1{3, 1, 1}, pool2{3, 1, 1};
  BatchNorm2d<T> bn;
  BiLstm<T> lstm1, lstm2;
  Mlp<T> mlp1, mlp2;

  std::int64_t b_ = 0, t_ = 0, h_ = 0, w_ = 0;

  HomoGridFusion() = default;
  HomoGridFusion(const FusionConfig& c, Rng& rng) : cfg(c) {
    const int ksz = cfg.stem_mode == StemMode::conv1x1 ? 1 : 3;
    const int pad = cfg.stem_mode == StemMode::conv1x1 ? 0 : 1;
    if (cfg.stem_mode != StemMode::none) {
      conv1 = Conv2d<T>(ksz, ksz, cfg.k, cfg.stem_channels[0], 1, pad, rng);
      conv2 = Conv2d<T>(ksz, ksz, cfg.stem_channels[0], cfg.stem_channels[1], 1, pad, rng);
      conv3 = Conv2d<T>(ksz, ksz, cfg.stem_channels[1], cfg.stem_channels[2], 1, pad, rng);
      bn = BatchNorm2d<T>(cfg.stem_channels[2]);
    }
    lstm1 = BiLstm<T>(cfg.stem_out(), cfg.hidden1, rng);
    mlp1 = Mlp<T>({2 * cfg.hidden1, cfg.mlp1_out}, rng);
    lstm2 = BiLstm<T>(cfg.mlp1_out, cfg.hidden2, rng);
    mlp2 = Mlp<T>({2 * cfg.hidden2, cfg.mlp_mid, cfg.k}, rng);
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    if (cfg.stem_mode != StemMode::none) {
      conv1.register_params(store, prefix + ".conv1");
      conv2.register_params(store, prefix + ".conv2");
      conv3.register_params(store, prefix + ".conv3");
      bn.register_params(store, prefix + ".bn");
    }
    lstm1.register_params(store, prefix + ".lstm1");
    mlp1.register_params(store, prefix + ".mlp1");
    lstm2.register_params(store, prefix + ".lstm2");
    mlp2.register_params(store, prefix + ".mlp2");
  }

  // seq: [B x T x H x W x K] -> per-timestamp outputs [B x T x H x W x K]
  Tensor<T> forward(const Tensor<T>& seq, NormMode mode) {
    if (seq.rank() != 5 || seq.dim(4) != cfg.k)
      throw std::invalid_argument("homo fusion: input " + shape_str(seq) +
                                  " does not match k=" + std::to_string(cfg.k));
    b_ = seq.dim(0);
    t_ = seq.dim(1);
    h_ = seq.dim(2);
    w_ = seq.dim(3);

    // Timestamps fold into the conv batch; layout is already row-major.
    Tensor<T> x = seq;
    x.reshape({b_ * t_, h_, w_, cfg.k});
    Tensor<T> stem = forward_stem(x, mode);
    const std::int64_t c = cfg.stem_out();

    // Unfold grids: every cell becomes one sequence in the recurrent batch.
    const std::int64_t n = b_ * h_ * w_;
    Tensor<T> grid_seq({n, t_, c});
    for (std::int64_t b = 0; b < b_; ++b)
      for (std::int64_t t = 0; t < t_; ++t)
        for (std::int64_t h = 0; h < h_; ++h)
          for (std::int64_t w = 0; w < w_; ++w)
            std::copy_n(&stem.at(b * t_ + t, h, w, 0), c,
                        &grid_seq.at((b * h_ + h) * w_ + w, t, 0));

    Tensor<T> y1 = lstm1.forward(grid_seq);
    y1.reshape({n * t_, 2 * cfg.hidden1});
    Tensor<T> y2 = mlp1.forward(y1);
    y2.reshape({n, t_, cfg.mlp1_out});
    Tensor<T> y3 = lstm2.forward(y2);
    y3.reshape({n * t_, 2 * cfg.hidden2});
    Tensor<T> y4 = mlp2.forward(y3);

    Tensor<T> out({b_, t_, h_, w_, cfg.k});
    for (std::int64_t b = 0; b < b_; ++b)
      for (std::int64_t t = 0; t < t_; ++t)
        for (std::int64_t h = 0; h < h_; ++h)
          for (std::int64_t w = 0; w < w_; ++w)
            std::copy_n(&y4.at(((b * h_ + h) * w_ + w) * t_ + t, 0), cfg.k,
                        &out.at(b, t, h, w, 0));
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t n = b_ * h_ * w_;
    Tensor<T> g4({n * t_, cfg.k});
    for (std::int64_t b = 0; b < b_; ++b)
      for (std::int64_t t = 0; t < t_; ++t)
        for (std::int64_t h = 0; h < h_; ++h)
          for (std::int64_t w = 0; w < w_; ++w)
            std::copy_n(&gy.at(b, t, h, w, 0), cfg.k,
                        &g4.at(((b * h_ + h) * w_ + w) * t_ + t, 0));

    Tensor<T> g3 = mlp2.backward(g4);
    g3.reshape({n, t_, 2 * cfg.hidden2});
    Tensor<T> g2 = lstm2.backward(g3);
    g2.reshape({n * t_, cfg.mlp1_out});
    Tensor<T> g1 = mlp1.backward(g2);
    g1.reshape({n, t_, 2 * cfg.hidden1});
    Tensor<T> g0 = lstm1.backward(g1);

    const std::int64_t c = cfg.stem_out();
    Tensor<T> gstem({b_ * t_, h_, w_, c});
    for (std::int64_t b = 0; b < b_; ++b)
      for (std::int64_t t = 0; t < t_; ++t)
        for (std::int64_t h = 0; h < h_; ++h)
          for (std::int64_t w = 0; w < w_; ++w)
            std::copy_n(&g0.at((b * h_ + h) * w_ + w, t, 0), c,
                        &gstem.at(b * t_ + t, h, w, 0));

    Tensor<T> gx = backward_stem(gstem);
    gx.reshape({b_, t_, h_, w_, cfg.k});
    return gx;
  }

  Tensor<T> forward_stem(const Tensor<T>& x, NormMode mode) {
    if (cfg.stem_mode == StemMode::none) return x;
    Tensor<T> y = conv1.forward(x);
    y = relu1.forward(y);
    if (cfg.stem_mode == StemMode::conv3x3) y = pool1.forward(y);
    y = conv2.forward(y);
    y = relu2.forward(y);
    if (cfg.stem_mode == StemMode::conv3x3) y = pool2.forward(y);
    y = conv3.forward(y);
    y = bn.forward(y, mode);
    return relu3.forward(y);
  }

  Tensor<T> backward_stem(const Tensor<T>& gy) {
    if (cfg.stem_mode == StemMode::none) return gy;
    Tensor<T> g = relu3.backward(gy);
    g = bn.backward(g);
    g = conv3.backward(g);
    if (cfg.stem_mode == StemMode::conv3x3) g = pool2.backward(g);
    g = relu2.backward(g);
    g = conv2.backward(g);
    if (cfg.stem_mode == StemMode::conv3x3) g = pool1.backward(g);
    g = relu1.backward(g);
    return conv1.backward(g);
  }
};

// Last valid observation wins; history fills the gaps.
FeatureFrame fuse_overwrite(const FeatureFrame& hist, const FeatureFrame& cur);

// Per-cell per-channel temporal maximum where both are valid.
FeatureFrame fuse_maxpool(const FeatureFrame& hist, const FeatureFrame& cur);

// Learned fusion of one [hist, cur] step: each cell runs the recurrent model
// on its length-2 sequence (single-valid cells duplicate the valid feature)
// and keeps the last timestamp; batchnorm uses running stats.
FeatureFrame homo_fuse_step(const FeatureFrame& hist, const FeatureFrame& cur,
                            HomoGridFusion<float>& model);

}  // namespace nemo
