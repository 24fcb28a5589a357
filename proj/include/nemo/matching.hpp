#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nemo/attention.hpp"
#include "nemo/bigmap.hpp"
#include "nemo/tensor.hpp"

// Coarse-to-fine matching: pose-based map reads (coarse) and the per-grid
// local cross-attention that realigns the current frame (fine). Attention
// queries come from the cell's positional code; keys and values are the
// cell's local feature neighborhood.

namespace nemo {

// Sinusoidal code of an (h, w) grid position. Dimension must be a multiple
// of 4; frequency ladder follows the usual 10000^(-i/D) spacing, split
// between the two axes.
template <typename T>
void positional_encoding(std::int64_t h, std::int64_t w, std::int64_t dim,
                         T* out) {
  const std::int64_t quarter = dim / 4;
  for (std::int64_t i = 0; i < quarter; ++i) {
    const double freq = std::pow(
        10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
    out[4 * i + 0] = static_cast<T>(std::sin(static_cast<double>(h) * freq));
    out[4 * i + 1] = static_cast<T>(std::cos(static_cast<double>(h) * freq));
    out[4 * i + 2] = static_cast<T>(std::sin(static_cast<double>(w) * freq));
    out[4 * i + 3] = static_cast<T>(std::cos(static_cast<double>(w) * freq));
  }
}

struct LsaConfig {
  int radius = 2;             // kernel = (2r+1)^2 cells
  std::int64_t pe_dim = 16;   // positional code width (multiple of 4)
  std::int64_t attn_dim = 16; // Q/K and V projection width
  bool bypass = false;        // identity: reproduces the input bit-exactly
};

// The full fine-matching block: per grid cell, attend over its local kernel
// and reduce back to the feature width with a bias-free output projection.
// Forward caches support one backward pass; positional queries carry no
// gradient.
template <typename T>
struct LsaBlock {
  LsaConfig cfg;
  CrossAttention<T> attn;
  Tensor<T> wo, gwo;  // [attn_dim x K]

  // caches
  Tensor<T> pe_cache;         // [N x pe_dim], rebuilt when H/W change
  std::int64_t pe_h = -1, pe_w = -1;
  std::vector<std::int64_t> gather_idx;  // N*M source cells, -1 = zero pad
  Tensor<T> attn_out;                    // [N x attn_dim]
  std::vector<std::int64_t> in_shape;

  LsaBlock() = default;
  LsaBlock(const LsaConfig& cfg_, std::int64_t k, Rng& rng) : cfg(cfg_) {
    if (cfg.pe_dim % 4 != 0)
      throw std::invalid_argument("lsa: pe_dim must be a multiple of 4");
    attn = CrossAttention<T>(cfg.pe_dim, k, k, cfg.attn_dim, cfg.attn_dim, rng);
    wo = Tensor<T>({cfg.attn_dim, k});
    fill_normal(wo, 0.0, std::sqrt(1.0 / static_cast<double>(cfg.attn_dim)), rng);
    gwo = Tensor<T>(wo.shape());
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    attn.register_params(store, prefix + ".attn");
    store.add(prefix + ".wo", &wo, &gwo);
  }

  // feat: [H x W x K] -> [H x W x K]
  Tensor<T> forward(const Tensor<T>& feat) {
    if (cfg.bypass) return feat;
    const std::int64_t h = feat.dim(0), w = feat.dim(1), k = feat.dim(2);
    const std::int64_t n = h * w;
    const int r = cfg.radius;
    const std::int64_t m = static_cast<std::int64_t>(2 * r + 1) * (2 * r + 1);
    in_shape = {h, w, k};

    if (pe_h != h || pe_w != w) {
      pe_cache = Tensor<T>({n, cfg.pe_dim});
      for (std::int64_t hh = 0; hh < h; ++hh)
        for (std::int64_t ww = 0; ww < w; ++ww)
          positional_encoding(hh, ww, cfg.pe_dim, &pe_cache.at(hh * w + ww, 0));
      pe_h = h;
      pe_w = w;
    }

    gather_idx.assign(static_cast<size_t>(n * m), -1);
    Tensor<T> kv({n, m, k});
    for (std::int64_t hh = 0; hh < h; ++hh)
      for (std::int64_t ww = 0; ww < w; ++ww) {
        const std::int64_t cell = hh * w + ww;
        std::int64_t mi = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++mi) {
            const std::int64_t y = hh + dy, x = ww + dx;
            if (y < 0 || y >= h || x < 0 || x >= w) continue;
            const std::int64_t src = y * w + x;
            gather_idx[static_cast<size_t>(cell * m + mi)] = src;
            std::copy_n(feat.data() + src * k, k, &kv.at(cell, mi, 0));
          }
      }

    attn_out = attn.forward(pe_cache, kv, kv);
    Tensor<T> out({h, w, k});
    for (std::int64_t i = 0; i < n; ++i) {
      const T* a = &attn_out.at(i, 0);
      T* o = out.data() + i * k;
      for (std::int64_t d = 0; d < cfg.attn_dim; ++d) {
        const T av = a[d];
        const T* row = wo.data() + d * k;
        for (std::int64_t c = 0; c < k; ++c) o[c] += av * row[c];
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (cfg.bypass) return gy;
    const std::int64_t h = in_shape[0], w = in_shape[1], k = in_shape[2];
    const std::int64_t n = h * w;
    const int r = cfg.radius;
    const std::int64_t m = static_cast<std::int64_t>(2 * r + 1) * (2 * r + 1);

    Tensor<T> ga({n, cfg.attn_dim});
    for (std::int64_t i = 0; i < n; ++i) {
      const T* g = gy.data() + i * k;
      const T* a = &attn_out.at(i, 0);
      T* gai = &ga.at(i, 0);
      for (std::int64_t d = 0; d < cfg.attn_dim; ++d) {
        T* grow = gwo.data() + d * k;
        const T* row = wo.data() + d * k;
        T acc = T(0);
        for (std::int64_t c = 0; c < k; ++c) {
          grow[c] += a[d] * g[c];
          acc += row[c] * g[c];
        }
        gai[d] = acc;
      }
    }

    auto grads = attn.backward(ga);
    Tensor<T> gx({h, w, k});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t mi = 0; mi < m; ++mi) {
        const std::int64_t src = gather_idx[static_cast<size_t>(i * m + mi)];
        if (src < 0) continue;
        const T* gk = &grads.gk.at(i, mi, 0);
        const T* gv = &grads.gv.at(i, mi, 0);
        T* dst = gx.data() + src * k;
        for (std::int64_t c = 0; c < k; ++c) dst[c] += gk[c] + gv[c];
      }
    return gx;
  }
};

// Pose-based sampling of historical features from the big map.
FeatureFrame coarse_match(const BigFeatureMap& map, const Pose& pose,
                          const GridSpec& ego_spec);

// The (2r+1)^2 neighborhood around the cell nearest `center`, zero-padded at
// the borders, row-major.
Tensor<float> local_kernel_sample(const FeatureFrame& frame,
                                  const GridCoord& center, int r);

// Runs the attention block over every grid cell; validity passes through.
FeatureFrame lsa_fine_match(const FeatureFrame& f_cur, LsaBlock<float>& lsa);

}  // namespace nemo
