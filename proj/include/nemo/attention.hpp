#pragma once

#include <cmath>
#include <string>

#include "nemo/geometry.hpp"
#include "nemo/params.hpp"
#include "nemo/tensor.hpp"

// Single-head scaled dot-product cross-attention. Each query row attends
// over its own set of M key/value rows. Projections are bias-free; there is
// no output projection here (callers add one if they need to change width).

namespace nemo {

template <typename T>
struct CrossAttention {
  Tensor<T> wq;  // [dq x d]
  Tensor<T> wk;  // [dk x d]
  Tensor<T> wv;  // [cv x c]
  Tensor<T> gwq, gwk, gwv;

  // caches
  Tensor<T> q_cache, k_cache, v_cache;
  Tensor<T> qp, kp, vp;
  Tensor<T> attn;  // [N x M], rows sum to 1

  CrossAttention() = default;
  CrossAttention(std::int64_t dq, std::int64_t dk, std::int64_t cv,
                 std::int64_t d, std::int64_t c, Rng& rng) {
    wq = Tensor<T>({dq, d});
    wk = Tensor<T>({dk, d});
    wv = Tensor<T>({cv, c});
    fill_normal(wq, 0.0, std::sqrt(1.0 / static_cast<double>(dq)), rng);
    fill_normal(wk, 0.0, std::sqrt(1.0 / static_cast<double>(dk)), rng);
    fill_normal(wv, 0.0, std::sqrt(1.0 / static_cast<double>(cv)), rng);
    gwq = Tensor<T>(wq.shape());
    gwk = Tensor<T>(wk.shape());
    gwv = Tensor<T>(wv.shape());
  }

  void register_params(ParamStore<T>& store, const std::string& prefix) {
    store.add(prefix + ".wq", &wq, &gwq);
    store.add(prefix + ".wk", &wk, &gwk);
    store.add(prefix + ".wv", &wv, &gwv);
  }

  // q: [N x dq], k: [N x M x dk], v: [N x M x cv] -> [N x c]
  Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v) {
    if (q.rank() != 2 || k.rank() != 3 || v.rank() != 3)
      throw std::invalid_argument("cross attention: expected q[N,dq], k[N,M,dk], v[N,M,cv]");
    if (k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0) || v.dim(1) != k.dim(1))
      throw std::invalid_argument("cross attention: batch/kernel mismatch: q " +
                                  shape_str(q) + ", k " + shape_str(k) +
                                  ", v " + shape_str(v));
    if (q.dim(1) != wq.dim(0) || k.dim(2) != wk.dim(0) || v.dim(2) != wv.dim(0))
      throw std::invalid_argument("cross attention: channel widths do not match projections");
    const std::int64_t n = q.dim(0), m = k.dim(1);
    const std::int64_t d = wq.dim(1), c = wv.dim(1);
    const std::int64_t dq = wq.dim(0), dk = wk.dim(0), cv = wv.dim(0);
    q_cache = q;
    k_cache = k;
    v_cache = v;

    qp = Tensor<T>({n, d});
    kp = Tensor<T>({n, m, d});
    vp = Tensor<T>({n, m, c});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t a = 0; a < dq; ++a) {
        const T xv = q.at(i, a);
        const T* row = wq.data() + a * d;
        T* out = &qp.at(i, 0);
        for (std::int64_t j = 0; j < d; ++j) out[j] += xv * row[j];
      }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t mi = 0; mi < m; ++mi) {
        T* kout = &kp.at(i, mi, 0);
        T* vout = &vp.at(i, mi, 0);
        const T* kin = &k.at(i, mi, 0);
        const T* vin = &v.at(i, mi, 0);
        for (std::int64_t a = 0; a < dk; ++a) {
          const T* row = wk.data() + a * d;
          for (std::int64_t j = 0; j < d; ++j) kout[j] += kin[a] * row[j];
        }
        for (std::int64_t a = 0; a < cv; ++a) {
          const T* row = wv.data() + a * c;
          for (std::int64_t j = 0; j < c; ++j) vout[j] += vin[a] * row[j];
        }
      }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    attn = Tensor<T>({n, m});
    Tensor<T> out({n, c});
    std::vector<double> s(static_cast<size_t>(m));
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t mi = 0; mi < m; ++mi) {
        double dot = 0.0;
        const T* qi = &qp.at(i, 0);
        const T* ki = &kp.at(i, mi, 0);
        for (std::int64_t j = 0; j < d; ++j)
          dot += static_cast<double>(qi[j]) * static_cast<double>(ki[j]);
        s[static_cast<size_t>(mi)] = dot * scale;
        mx = std::max(mx, s[static_cast<size_t>(mi)]);
      }
      double denom = 0.0;
      for (std::int64_t mi = 0; mi < m; ++mi)
        denom += std::exp(s[static_cast<size_t>(mi)] - mx);
      T* oi = &out.at(i, 0);
      for (std::int64_t mi = 0; mi < m; ++mi) {
        const T a = static_cast<T>(std::exp(s[static_cast<size_t>(mi)] - mx) / denom);
        attn.at(i, mi) = a;
        const T* vi = &vp.at(i, mi, 0);
        for (std::int64_t j = 0; j < c; ++j) oi[j] += a * vi[j];
      }
    }
    return out;
  }

  struct Grads {
    Tensor<T> gq;  // [N x dq]
    Tensor<T> gk;  // [N x M x dk]
    Tensor<T> gv;  // [N x M x cv]
  };

  Grads backward(const Tensor<T>& gy) {
    const std::int64_t n = q_cache.dim(0), m = k_cache.dim(1);
    const std::int64_t d = wq.dim(1), c = wv.dim(1);
    const std::int64_t dq = wq.dim(0), dk = wk.dim(0), cv = wv.dim(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor<T> gqp({n, d});
    Tensor<T> gkp({n, m, d});
    Tensor<T> gvp({n, m, c});
    std::vector<double> da(static_cast<size_t>(m));
    for (std::int64_t i = 0; i < n; ++i) {
      const T* gyi = &gy.at(i, 0);
      double dot_a_da = 0.0;
      for (std::int64_t mi = 0; mi < m; ++mi) {
        const T a = attn.at(i, mi);
        const T* vi = &vp.at(i, mi, 0);
        T* gvi = &gvp.at(i, mi, 0);
        double dai = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
          gvi[j] += a * gyi[j];
          dai += static_cast<double>(gyi[j]) * static_cast<double>(vi[j]);
        }
        da[static_cast<size_t>(mi)] = dai;
        dot_a_da += static_cast<double>(a) * dai;
      }
      T* gqi = &gqp.at(i, 0);
      const T* qi = &qp.at(i, 0);
      for (std::int64_t mi = 0; mi < m; ++mi) {
        const double a = static_cast<double>(attn.at(i, mi));
        const double ds = a * (da[static_cast<size_t>(mi)] - dot_a_da) * scale;
        const T* ki = &kp.at(i, mi, 0);
        T* gki = &gkp.at(i, mi, 0);
        for (std::int64_t j = 0; j < d; ++j) {
          gqi[j] += static_cast<T>(ds) * ki[j];
          gki[j] += static_cast<T>(ds) * qi[j];
        }
      }
    }

    Grads g;
    g.gq = Tensor<T>(q_cache.shape());
    g.gk = Tensor<T>(k_cache.shape());
    g.gv = Tensor<T>(v_cache.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t a = 0; a < dq; ++a) {
        T* grow = gwq.data() + a * d;
        const T* row = wq.data() + a * d;
        const T* gout = &gqp.at(i, 0);
        T acc = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
          grow[j] += q_cache.at(i, a) * gout[j];
          acc += row[j] * gout[j];
        }
        g.gq.at(i, a) = acc;
      }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t mi = 0; mi < m; ++mi) {
        const T* kin = &k_cache.at(i, mi, 0);
        const T* vin = &v_cache.at(i, mi, 0);
        const T* gkout = &gkp.at(i, mi, 0);
        const T* gvout = &gvp.at(i, mi, 0);
        T* gki = &g.gk.at(i, mi, 0);
        T* gvi = &g.gv.at(i, mi, 0);
        for (std::int64_t a = 0; a < dk; ++a) {
          T* grow = gwk.data() + a * d;
          const T* row = wk.data() + a * d;
          T acc = T(0);
          for (std::int64_t j = 0; j < d; ++j) {
            grow[j] += kin[a] * gkout[j];
            acc += row[j] * gkout[j];
          }
          gki[a] = acc;
        }
        for (std::int64_t a = 0; a < cv; ++a) {
          T* grow = gwv.data() + a * c;
          const T* row = wv.data() + a * c;
          T acc = T(0);
          for (std::int64_t j = 0; j < c; ++j) {
            grow[j] += vin[a] * gvout[j];
            acc += row[j] * gvout[j];
          }
          gvi[a] = acc;
        }
      }
    return g;
  }
};

}  // namespace nemo
