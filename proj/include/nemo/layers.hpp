#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nemo/params.hpp"
#include "nemo/tensor.hpp"

// Forward/backward kernels for the layers the fusion and matching networks
// need. Layers cache what their backward pass requires; forward must be
// called before backward. Activations use channel-last layout
// [N x H x W x C] (or [N x C] for dense layers).

namespace nemo {

template <typename T>
void check_shape(const Tensor<T>& t, const std::vector<std::int64_t>& want,
                 const char* what) {
  if (t.shape() != want) {
    Tensor<T> dummy(want);
    throw std::invalid_argument(std::string(what) + ": got " + shape_str(t) +
                                ", want " + shape_str(dummy));
  }
}

template <typename T>
struct Linear {
  Tensor<T> w;  // [in x out]
  Tensor<T> b;  // [out]
  Tensor<T> gw, gb;
  Tensor<T> x_cache;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng) {
    w = Tensor<T>({in, out});
    b = Tensor<T>({out});
    fill_normal(w, 0.0, std::sqrt(2.0 / static_cast<double>(in)), rng);
    gw = Tensor<T>(w.shape());
    gb = Tensor<T>(b.shape());
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".w", &w, &gw);
    store.add(prefix + ".b", &b, &gb);
  }

  // x: [N x in] -> [N x out]
  Tensor<T> forward(const Tensor<T>& x) {
    const std::int64_t n = x.dim(0), in = w.dim(0), out = w.dim(1);
    if (x.rank() != 2 || x.dim(1) != in)
      throw std::invalid_argument("linear: input " + shape_str(x) +
                                  " does not match weight " + shape_str(w));
    x_cache = x;
    Tensor<T> y({n, out});
    for (std::int64_t i = 0; i < n; ++i) {
      const T* xi = x.data() + i * in;
      T* yi = y.data() + i * out;
      for (std::int64_t o = 0; o < out; ++o) yi[o] = b[o];
      for (std::int64_t k = 0; k < in; ++k) {
        const T xv = xi[k];
        const T* wk = w.data() + k * out;
        for (std::int64_t o = 0; o < out; ++o) yi[o] += xv * wk[o];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t n = x_cache.dim(0), in = w.dim(0), out = w.dim(1);
    Tensor<T> gx({n, in});
    for (std::int64_t i = 0; i < n; ++i) {
      const T* xi = x_cache.data() + i * in;
      const T* gyi = gy.data() + i * out;
      T* gxi = gx.data() + i * in;
      for (std::int64_t o = 0; o < out; ++o) gb[o] += gyi[o];
      for (std::int64_t k = 0; k < in; ++k) {
        T* gwk = gw.data() + k * out;
        const T* wk = w.data() + k * out;
        T acc = T(0);
        for (std::int64_t o = 0; o < out; ++o) {
          gwk[o] += xi[k] * gyi[o];
          acc += wk[o] * gyi[o];
        }
        gxi[k] = acc;
      }
    }
    return gx;
  }
};

template <typename T>
struct Relu {
  Tensor<T> mask;

  Tensor<T> forward(const Tensor<T>& x) {
    mask = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const bool pos = x[i] > T(0);
      mask[i] = pos ? T(1) : T(0);
      y[i] = pos ? x[i] : T(0);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.shape());
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] = gy[i] * mask[i];
    return gx;
  }
};

// Affine + ReLU chain; the last layer stays linear.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  std::vector<Relu<T>> relus;

  Mlp() = default;
  Mlp(const std::vector<std::int64_t>& widths, Rng& rng) {
    for (size_t i = 0; i + 1 < widths.size(); ++i)
      layers.emplace_back(widths[i], widths[i + 1], rng);
    relus.resize(layers.empty() ? 0 : layers.size() - 1);
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].register_params(store, prefix + ".fc" + std::to_string(i));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size()) h = relus[i].forward(h);
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = gy;
    for (size_t i = layers.size(); i-- > 0;) {
      if (i + 1 < layers.size()) g = relus[i].backward(g);
      g = layers[i].backward(g);
    }
    return g;
  }
};

// Cross-correlation over [N x H x W x Cin] with kernel [kh x kw x Cin x Cout].
template <typename T>
struct Conv2d {
  Tensor<T> w;  // [kh x kw x cin x cout]
  Tensor<T> b;  // [cout]
  Tensor<T> gw, gb;
  int stride = 1;
  int padding = 0;
  Tensor<T> x_cache;

  Conv2d() = default;
  Conv2d(int kh, int kw, std::int64_t cin, std::int64_t cout, int stride_,
         int padding_, Rng& rng)
      : stride(stride_), padding(padding_) {
    w = Tensor<T>({kh, kw, cin, cout});
    b = Tensor<T>({cout});
    const double fan_in = static_cast<double>(kh * kw) * static_cast<double>(cin);
    fill_normal(w, 0.0, std::sqrt(2.0 / fan_in), rng);
    gw = Tensor<T>(w.shape());
    gb = Tensor<T>(b.shape());
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".w", &w, &gw);
    store.add(prefix + ".b", &b, &gb);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::int64_t kh = w.dim(0), kw = w.dim(1), cin = w.dim(2),
                       cout = w.dim(3);
    if (x.rank() != 4 || x.dim(3) != cin)
      throw std::invalid_argument("conv2d: input " + shape_str(x) +
                                  " does not match kernel " + shape_str(w));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    x_cache = x;
    const std::int64_t n = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t wo = (ww + 2 * padding - kw) / stride + 1;
    Tensor<T> y({n, ho, wo, cout});
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          T* out = &y.at(ni, oy, ox, 0);
          for (std::int64_t c = 0; c < cout; ++c) out[c] = b[c];
          const std::int64_t iy0 = oy * stride - padding;
          const std::int64_t ix0 = ox * stride - padding;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ix0 + kx;
              if (ix < 0 || ix >= ww) continue;
              const T* xin = &x.at(ni, iy, ix, 0);
              const T* wk = &w.at(ky, kx, 0, 0);
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                const T xv = xin[ci];
                const T* wc = wk + ci * cout;
                for (std::int64_t c = 0; c < cout; ++c) out[c] += xv * wc[c];
              }
            }
          }
        }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t kh = w.dim(0), kw = w.dim(1), cin = w.dim(2),
                       cout = w.dim(3);
    const std::int64_t n = x_cache.dim(0), h = x_cache.dim(1),
                       ww = x_cache.dim(2);
    const std::int64_t ho = gy.dim(1), wo = gy.dim(2);
    Tensor<T> gx(x_cache.shape());
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const T* g = &gy.at(ni, oy, ox, 0);
          for (std::int64_t c = 0; c < cout; ++c) gb[c] += g[c];
          const std::int64_t iy0 = oy * stride - padding;
          const std::int64_t ix0 = ox * stride - padding;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ix0 + kx;
              if (ix < 0 || ix >= ww) continue;
              const T* xin = &x_cache.at(ni, iy, ix, 0);
              T* gxin = &gx.at(ni, iy, ix, 0);
              T* gwk = &gw.at(ky, kx, 0, 0);
              const T* wk = &w.at(ky, kx, 0, 0);
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                T* gwc = gwk + ci * cout;
                const T* wc = wk + ci * cout;
                T acc = T(0);
                for (std::int64_t c = 0; c < cout; ++c) {
                  gwc[c] += xin[ci] * g[c];
                  acc += wc[c] * g[c];
                }
                gxin[ci] += acc;
              }
            }
          }
        }
    return gx;
  }
};

// Max pooling; out-of-bounds taps are skipped, so a constant field stays
// constant for any padding. Ties route the gradient to the lowest linear
// index (row-major scan keeps the first maximum).
template <typename T>
struct MaxPool2d {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  std::vector<std::int64_t> argmax;  // input (h, w) linear index per output
  std::vector<std::int64_t> x_shape;

  MaxPool2d() = default;
  MaxPool2d(int k, int s, int p) : kernel(k), stride(s), padding(p) {}

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("maxpool2d: rank-4 input required");
    const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::int64_t ho = (h + 2 * padding - kernel) / stride + 1;
    const std::int64_t wo = (w + 2 * padding - kernel) / stride + 1;
    x_shape = {n, h, w, c};
    Tensor<T> y({n, ho, wo, c});
    argmax.assign(static_cast<size_t>(y.numel()), -1);
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox)
          for (std::int64_t ci = 0; ci < c; ++ci) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = -1;
            for (int ky = 0; ky < kernel; ++ky) {
              const std::int64_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const std::int64_t ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= w) continue;
                const T v = x.at(ni, iy, ix, ci);
                if (v > best) {
                  best = v;
                  best_idx = iy * w + ix;
                }
              }
            }
            y.at(ni, oy, ox, ci) = best;
            argmax[static_cast<size_t>(((ni * ho + oy) * wo + ox) * c + ci)] =
                best_idx;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> gx(x_shape);
    const std::int64_t w = x_shape[2], c = x_shape[3];
    for (std::int64_t i = 0; i < gy.numel(); ++i) {
      const std::int64_t src = argmax[static_cast<size_t>(i)];
      if (src < 0) continue;
      const std::int64_t ni = i / (gy.dim(1) * gy.dim(2) * c);
      const std::int64_t ci = i % c;
      gx[((ni * x_shape[1] + src / w) * w + src % w) * c + ci] += gy[i];
    }
    return gx;
  }
};

enum class NormMode { train, eval };

// Per-channel batch normalization over [N x H x W x C]. Train mode uses
// batch statistics (biased variance) and updates running stats with momentum
// 0.1; eval mode uses the running stats (init mean 0 / var 1, so eval before
// any train step is the identity up to gamma/beta).
template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> ggamma, gbeta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  // backward caches
  Tensor<T> xhat_cache;
  std::vector<double> inv_std_cache;
  NormMode mode_cache = NormMode::train;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t c) {
    gamma = Tensor<T>::full({c}, T(1));
    beta = Tensor<T>({c});
    ggamma = Tensor<T>({c});
    gbeta = Tensor<T>({c});
    running_mean = Tensor<T>({c});
    running_var = Tensor<T>::full({c}, T(1));
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".gamma", &gamma, &ggamma);
    store.add(prefix + ".beta", &beta, &gbeta);
    store.add_buffer(prefix + ".running_mean", &running_mean);
    store.add_buffer(prefix + ".running_var", &running_var);
  }

  Tensor<T> forward(const Tensor<T>& x, NormMode mode) {
    if (x.rank() != 4 || x.dim(3) != gamma.dim(0))
      throw std::invalid_argument("batchnorm2d: input " + shape_str(x) +
                                  " does not match channels " +
                                  shape_str(gamma));
    const std::int64_t c = gamma.dim(0);
    const std::int64_t count = x.numel() / c;
    mode_cache = mode;
    Tensor<T> y(x.shape());
    xhat_cache = Tensor<T>(x.shape());
    inv_std_cache.assign(static_cast<size_t>(c), 0.0);

    for (std::int64_t ci = 0; ci < c; ++ci) {
      double mean, var;
      if (mode == NormMode::train) {
        double sum = 0.0, sq = 0.0;
        for (std::int64_t i = 0; i < count; ++i) {
          const double v = static_cast<double>(x[i * c + ci]);
          sum += v;
          sq += v * v;
        }
        mean = sum / static_cast<double>(count);
        var = sq / static_cast<double>(count) - mean * mean;
        if (var < 0.0) var = 0.0;
        const double unbiased =
            count > 1 ? var * static_cast<double>(count) /
                            static_cast<double>(count - 1)
                      : var;
        running_mean[ci] = static_cast<T>(
            (1.0 - momentum) * static_cast<double>(running_mean[ci]) +
            momentum * mean);
        running_var[ci] = static_cast<T>(
            (1.0 - momentum) * static_cast<double>(running_var[ci]) +
            momentum * unbiased);
      } else {
        mean = static_cast<double>(running_mean[ci]);
        var = static_cast<double>(running_var[ci]);
      }
      const double inv_std = 1.0 / std::sqrt(var + eps);
      inv_std_cache[static_cast<size_t>(ci)] = inv_std;
      for (std::int64_t i = 0; i < count; ++i) {
        const double xh = (static_cast<double>(x[i * c + ci]) - mean) * inv_std;
        xhat_cache[i * c + ci] = static_cast<T>(xh);
        y[i * c + ci] = static_cast<T>(static_cast<double>(gamma[ci]) * xh +
                                       static_cast<double>(beta[ci]));
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t c = gamma.dim(0);
    const std::int64_t count = gy.numel() / c;
    Tensor<T> gx(gy.shape());
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double inv_std = inv_std_cache[static_cast<size_t>(ci)];
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (std::int64_t i = 0; i < count; ++i) {
        const double g = static_cast<double>(gy[i * c + ci]);
        sum_gy += g;
        sum_gy_xhat += g * static_cast<double>(xhat_cache[i * c + ci]);
      }
      ggamma[ci] += static_cast<T>(sum_gy_xhat);
      gbeta[ci] += static_cast<T>(sum_gy);
      const double gam = static_cast<double>(gamma[ci]);
      if (mode_cache == NormMode::train) {
        const double n = static_cast<double>(count);
        for (std::int64_t i = 0; i < count; ++i) {
          const double g = static_cast<double>(gy[i * c + ci]);
          const double xh = static_cast<double>(xhat_cache[i * c + ci]);
          gx[i * c + ci] = static_cast<T>(
              gam * inv_std * (g - sum_gy / n - xh * sum_gy_xhat / n));
        }
      } else {
        for (std::int64_t i = 0; i < count; ++i)
          gx[i * c + ci] = static_cast<T>(
              static_cast<double>(gy[i * c + ci]) * gam * inv_std);
      }
    }
    return gx;
  }
};

// Mean negative log-softmax over unmasked rows. `mask` entries are 1 to
// include a row, 0 to ignore it (mask may be empty = all rows count).
template <typename T>
struct SoftmaxCrossEntropy {
  Tensor<T> probs_cache;
  std::vector<std::int64_t> labels_cache;
  std::vector<std::uint8_t> mask_cache;
  std::int64_t included = 0;

  double forward(const Tensor<T>& logits, const std::vector<std::int64_t>& labels,
                 const std::vector<std::uint8_t>& mask) {
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
      throw std::invalid_argument("cross entropy: label count mismatch");
    if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n)
      throw std::invalid_argument("cross entropy: mask size mismatch");
    probs_cache = Tensor<T>(logits.shape());
    labels_cache = labels;
    mask_cache = mask;
    included = 0;
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const bool use = mask.empty() || mask[static_cast<size_t>(i)];
      const T* row = logits.data() + i * c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < c; ++j)
        mx = std::max(mx, static_cast<double>(row[j]));
      double denom = 0.0;
      for (std::int64_t j = 0; j < c; ++j)
        denom += std::exp(static_cast<double>(row[j]) - mx);
      for (std::int64_t j = 0; j < c; ++j)
        probs_cache[i * c + j] = static_cast<T>(
            std::exp(static_cast<double>(row[j]) - mx) / denom);
      if (!use) continue;
      const std::int64_t label = labels[static_cast<size_t>(i)];
      if (label < 0 || label >= c)
        throw std::invalid_argument("cross entropy: label out of range");
      loss += -(static_cast<double>(row[label]) - mx - std::log(denom));
      ++included;
    }
    if (included == 0) throw std::runtime_error("empty supervision set");
    return loss / static_cast<double>(included);
  }

  // d(loss)/d(logits), scaled by upstream gradient `gloss`.
  Tensor<T> backward(double gloss = 1.0) {
    const std::int64_t n = probs_cache.dim(0), c = probs_cache.dim(1);
    Tensor<T> gx(probs_cache.shape());
    const double scale = gloss / static_cast<double>(included);
    for (std::int64_t i = 0; i < n; ++i) {
      const bool use =
          mask_cache.empty() || mask_cache[static_cast<size_t>(i)];
      if (!use) continue;
      const std::int64_t label = labels_cache[static_cast<size_t>(i)];
      for (std::int64_t j = 0; j < c; ++j) {
        double g = static_cast<double>(probs_cache[i * c + j]);
        if (j == label) g -= 1.0;
        gx[i * c + j] = static_cast<T>(g * scale);
      }
    }
    return gx;
  }
};

}  // namespace nemo
