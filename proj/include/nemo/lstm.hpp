#pragma once

#include <cmath>
#include <string>

#include "nemo/params.hpp"
#include "nemo/tensor.hpp"

// LSTM over channel-last sequences [N x T x C]. Gate layout inside the
// packed weight matrices is (input, forget, cell, output); the forget gate
// bias starts at +1 so early training does not flush state.

namespace nemo {

template <typename T>
struct LstmCell {
  Tensor<T> wx;  // [in x 4H]
  Tensor<T> wh;  // [H x 4H]
  Tensor<T> b;   // [4H]
  Tensor<T> gwx, gwh, gb;
  std::int64_t hidden = 0;

  // caches for backward, all [N x T x ...]
  Tensor<T> x_cache;
  Tensor<T> h_all;     // [N x (T+1) x H], row 0 is the initial state
  Tensor<T> c_all;     // [N x (T+1) x H]
  Tensor<T> gates;     // [N x T x 4H], post-activation
  Tensor<T> tanh_c;    // [N x T x H]

  LstmCell() = default;
  LstmCell(std::int64_t in, std::int64_t hidden_, Rng& rng) : hidden(hidden_) {
    wx = Tensor<T>({in, 4 * hidden});
    wh = Tensor<T>({hidden, 4 * hidden});
    b = Tensor<T>({4 * hidden});
    const double scale = std::sqrt(1.0 / static_cast<double>(hidden));
    fill_uniform(wx, -scale, scale, rng);
    fill_uniform(wh, -scale, scale, rng);
    for (std::int64_t j = hidden; j < 2 * hidden; ++j) b[j] = T(1);
    gwx = Tensor<T>(wx.shape());
    gwh = Tensor<T>(wh.shape());
    gb = Tensor<T>(b.shape());
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".wx", &wx, &gwx);
    store.add(prefix + ".wh", &wh, &gwh);
    store.add(prefix + ".b", &b, &gb);
  }

  static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }

  // x: [N x T x in] -> outputs h over time [N x T x H]; zero initial state.
  Tensor<T> forward(const Tensor<T>& x) {
    const std::int64_t in = wx.dim(0);
    if (x.rank() != 3 || x.dim(2) != in)
      throw std::invalid_argument("lstm: input " + shape_str(x) +
                                  " does not match weight " + shape_str(wx));
    const std::int64_t n = x.dim(0), t_len = x.dim(1), hid = hidden;
    x_cache = x;
    h_all = Tensor<T>({n, t_len + 1, hid});
    c_all = Tensor<T>({n, t_len + 1, hid});
    gates = Tensor<T>({n, t_len, 4 * hid});
    tanh_c = Tensor<T>({n, t_len, hid});
    Tensor<T> out({n, t_len, hid});
    std::vector<T> z(static_cast<size_t>(4 * hid));

    for (std::int64_t ni = 0; ni < n; ++ni) {
      for (std::int64_t t = 0; t < t_len; ++t) {
        const T* xt = &x.at(ni, t, 0);
        const T* hp = &h_all.at(ni, t, 0);
        const T* cp = &c_all.at(ni, t, 0);
        for (std::int64_t j = 0; j < 4 * hid; ++j) z[static_cast<size_t>(j)] = b[j];
        for (std::int64_t k = 0; k < in; ++k) {
          const T xv = xt[k];
          const T* row = wx.data() + k * 4 * hid;
          for (std::int64_t j = 0; j < 4 * hid; ++j)
            z[static_cast<size_t>(j)] += xv * row[j];
        }
        for (std::int64_t k = 0; k < hid; ++k) {
          const T hv = hp[k];
          const T* row = wh.data() + k * 4 * hid;
          for (std::int64_t j = 0; j < 4 * hid; ++j)
            z[static_cast<size_t>(j)] += hv * row[j];
        }
        T* gt = &gates.at(ni, t, 0);
        T* hn = &h_all.at(ni, t + 1, 0);
        T* cn = &c_all.at(ni, t + 1, 0);
        T* tc = &tanh_c.at(ni, t, 0);
        T* ot = &out.at(ni, t, 0);
        for (std::int64_t j = 0; j < hid; ++j) {
          const T ig = sigmoid(z[static_cast<size_t>(j)]);
          const T fg = sigmoid(z[static_cast<size_t>(hid + j)]);
          const T gg = std::tanh(z[static_cast<size_t>(2 * hid + j)]);
          const T og = sigmoid(z[static_cast<size_t>(3 * hid + j)]);
          gt[j] = ig;
          gt[hid + j] = fg;
          gt[2 * hid + j] = gg;
          gt[3 * hid + j] = og;
          cn[j] = fg * cp[j] + ig * gg;
          tc[j] = std::tanh(cn[j]);
          hn[j] = og * tc[j];
          ot[j] = hn[j];
        }
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t in = wx.dim(0);
    const std::int64_t n = x_cache.dim(0), t_len = x_cache.dim(1), hid = hidden;
    Tensor<T> gx(x_cache.shape());
    std::vector<T> dh(static_cast<size_t>(hid));
    std::vector<T> dc(static_cast<size_t>(hid));
    std::vector<T> dz(static_cast<size_t>(4 * hid));

    for (std::int64_t ni = 0; ni < n; ++ni) {
      std::fill(dh.begin(), dh.end(), T(0));
      std::fill(dc.begin(), dc.end(), T(0));
      for (std::int64_t t = t_len - 1; t >= 0; --t) {
        const T* gt = &gates.at(ni, t, 0);
        const T* tc = &tanh_c.at(ni, t, 0);
        const T* cp = &c_all.at(ni, t, 0);
        const T* gyt = &gy.at(ni, t, 0);
        for (std::int64_t j = 0; j < hid; ++j) {
          const T ig = gt[j], fg = gt[hid + j], gg = gt[2 * hid + j],
                  og = gt[3 * hid + j];
          const T dht = dh[static_cast<size_t>(j)] + gyt[j];
          const T dct =
              dc[static_cast<size_t>(j)] + dht * og * (T(1) - tc[j] * tc[j]);
          dz[static_cast<size_t>(j)] = dct * gg * ig * (T(1) - ig);
          dz[static_cast<size_t>(hid + j)] = dct * cp[j] * fg * (T(1) - fg);
          dz[static_cast<size_t>(2 * hid + j)] = dct * ig * (T(1) - gg * gg);
          dz[static_cast<size_t>(3 * hid + j)] =
              dht * tc[j] * og * (T(1) - og);
          dc[static_cast<size_t>(j)] = dct * fg;
        }
        const T* xt = &x_cache.at(ni, t, 0);
        const T* hp = &h_all.at(ni, t, 0);
        T* gxt = &gx.at(ni, t, 0);
        for (std::int64_t j = 0; j < 4 * hid; ++j) gb[j] += dz[static_cast<size_t>(j)];
        for (std::int64_t k = 0; k < in; ++k) {
          T* grow = gwx.data() + k * 4 * hid;
          const T* row = wx.data() + k * 4 * hid;
          T acc = T(0);
          for (std::int64_t j = 0; j < 4 * hid; ++j) {
            grow[j] += xt[k] * dz[static_cast<size_t>(j)];
            acc += row[j] * dz[static_cast<size_t>(j)];
          }
          gxt[k] = acc;
        }
        for (std::int64_t k = 0; k < hid; ++k) {
          T* grow = gwh.data() + k * 4 * hid;
          const T* row = wh.data() + k * 4 * hid;
          T acc = T(0);
          for (std::int64_t j = 0; j < 4 * hid; ++j) {
            grow[j] += hp[k] * dz[static_cast<size_t>(j)];
            acc += row[j] * dz[static_cast<size_t>(j)];
          }
          dh[static_cast<size_t>(k)] = acc;
        }
      }
    }
    return gx;
  }
};

// Runs one cell forward in time and a second cell over the reversed
// sequence, concatenating per-timestep outputs to [N x T x 2H].
template <typename T>
struct BiLstm {
  LstmCell<T> fwd;
  LstmCell<T> bwd;
  std::int64_t hidden = 0;

  BiLstm() = default;
  BiLstm(std::int64_t in, std::int64_t hidden_, Rng& rng)
      : fwd(in, hidden_, rng), bwd(in, hidden_, rng), hidden(hidden_) {}

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    fwd.register_params(store, prefix + ".fwd");
    bwd.register_params(store, prefix + ".bwd");
  }

  static Tensor<T> reverse_time(const Tensor<T>& x) {
    const std::int64_t n = x.dim(0), t_len = x.dim(1), c = x.dim(2);
    Tensor<T> r(x.shape());
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t t = 0; t < t_len; ++t)
        std::copy_n(&x.at(ni, t, 0), c, &r.at(ni, t_len - 1 - t, 0));
    return r;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const Tensor<T> hf = fwd.forward(x);
    const Tensor<T> hb = reverse_time(bwd.forward(reverse_time(x)));
    const std::int64_t n = x.dim(0), t_len = x.dim(1), hid = hidden;
    Tensor<T> y({n, t_len, 2 * hid});
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t t = 0; t < t_len; ++t) {
        std::copy_n(&hf.at(ni, t, 0), hid, &y.at(ni, t, 0));
        std::copy_n(&hb.at(ni, t, 0), hid, &y.at(ni, t, 0) + hid);
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::int64_t n = gy.dim(0), t_len = gy.dim(1), hid = hidden;
    Tensor<T> gf({n, t_len, hid});
    Tensor<T> gb_({n, t_len, hid});
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t t = 0; t < t_len; ++t) {
        std::copy_n(&gy.at(ni, t, 0), hid, &gf.at(ni, t, 0));
        std::copy_n(&gy.at(ni, t, 0) + hid, hid, &gb_.at(ni, t, 0));
      }
    Tensor<T> gx = fwd.backward(gf);
    const Tensor<T> gxb = bwd.backward(reverse_time(gb_));
    const Tensor<T> gxb_r = reverse_time(gxb);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gxb_r[i];
    return gx;
  }
};

}  // namespace nemo
