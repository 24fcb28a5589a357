#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "nemo/attention.hpp"
#include "nemo/gradcheck.hpp"
#include "nemo/lstm.hpp"
#include "test_util.hpp"

using namespace nemo;

TEST_CASE("lstm cell: init layout and zero-weight fixed point") {
  std::mt19937_64 rng(3);

  SUBCASE("forget gate bias starts at one, the rest at zero") {
    LstmCell<double> cell(2, 3, rng);
    for (std::int64_t j = 0; j < 12; ++j)
      CHECK(cell.b[j] == ((j >= 3 && j < 6) ? 1.0 : 0.0));
  }

  SUBCASE("all-zero weights emit exactly zero for any input") {
    LstmCell<double> cell(3, 4, rng);
    cell.wx.zero();
    cell.wh.zero();
    cell.b.zero();
    Tensor<double> x({2, 5, 3});
    fill_normal(x, 0.0, 2.0, rng);
    const Tensor<double> y = cell.forward(x);
    REQUIRE((y.shape() == std::vector<std::int64_t>{2, 5, 4}));
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  }

  SUBCASE("bidirectional wrapper with zero weights is also a fixed point") {
    BiLstm<double> bl(3, 2, rng);
    bl.fwd.wx.zero();
    bl.fwd.wh.zero();
    bl.fwd.b.zero();
    bl.bwd.wx.zero();
    bl.bwd.wh.zero();
    bl.bwd.b.zero();
    Tensor<double> x({1, 4, 3});
    fill_normal(x, 0.0, 1.0, rng);
    const Tensor<double> y = bl.forward(x);
    REQUIRE((y.shape() == std::vector<std::int64_t>{1, 4, 4}));
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  }
}

TEST_CASE("bilstm with mirrored weights emits identical halves at T=1") {
  std::mt19937_64 rng(7);
  BiLstm<double> bl(4, 3, rng);
  bl.bwd.wx = bl.fwd.wx;
  bl.bwd.wh = bl.fwd.wh;
  bl.bwd.b = bl.fwd.b;
  Tensor<double> x({3, 1, 4});
  fill_normal(x, 0.0, 1.0, rng);
  const Tensor<double> y = bl.forward(x);
  REQUIRE((y.shape() == std::vector<std::int64_t>{3, 1, 6}));
  for (std::int64_t n = 0; n < 3; ++n)
    for (std::int64_t j = 0; j < 3; ++j)
      CHECK(y.at(n, 0, j) == y.at(n, 0, 3 + j));
}

TEST_CASE("bilstm gradients match finite differences on several shapes") {
  struct Shape {
    std::int64_t n, t, c, h;
  };
  const Shape shapes[] = {{2, 4, 3, 5}, {1, 1, 2, 3}, {3, 2, 4, 2}};
  int seed = 600;
  for (const Shape& s : shapes) {
    CAPTURE(s.t);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
    BiLstm<double> bl(s.c, s.h, rng);
    ParamStore<double> store;
    bl.register_params(store, "lstm");
    Tensor<double> x({s.n, s.t, s.c});
    fill_normal(x, 0.0, 1.0, rng);

    const Tensor<double> y0 = bl.forward(x);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    store.zero_grads();
    const Tensor<double> gx = bl.backward(head.grad());

    std::vector<GradSlot> slots = slots_from(store);
    slots.push_back({"x", &x, &gx});
    const auto report =
        grad_check([&]() { return head.value(bl.forward(x)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross attention: degenerate pools and row normalization") {
  std::mt19937_64 rng(11);

  SUBCASE("a single key-value pair gets weight one") {
    CrossAttention<double> ca(3, 4, 5, 6, 2, rng);
    Tensor<double> q({2, 3});
    Tensor<double> k({2, 1, 4});
    Tensor<double> v({2, 1, 5});
    fill_normal(q, 0.0, 1.0, rng);
    fill_normal(k, 0.0, 1.0, rng);
    fill_normal(v, 0.0, 1.0, rng);
    const Tensor<double> y = ca.forward(q, k, v);
    REQUIRE((y.shape() == std::vector<std::int64_t>{2, 2}));
    for (std::int64_t n = 0; n < 2; ++n) {
      CHECK(ca.attn.at(n, 0) == 1.0);
      for (std::int64_t ch = 0; ch < 2; ++ch) {
        double want = 0.0;
        for (std::int64_t cvi = 0; cvi < 5; ++cvi)
          want += v.at(n, 0, cvi) * ca.wv.at(cvi, ch);
        CHECK(y.at(n, ch) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  SUBCASE("identical keys spread attention uniformly and average the values") {
    const std::int64_t m = 5;
    CrossAttention<double> ca(3, 3, 4, 6, 4, rng);
    Tensor<double> q({2, 3});
    Tensor<double> k({2, m, 3});
    Tensor<double> v({2, m, 4});
    fill_normal(q, 0.0, 1.0, rng);
    fill_normal(v, 0.0, 1.0, rng);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t mi = 0; mi < m; ++mi)
        for (std::int64_t j = 0; j < 3; ++j)
          k.at(n, mi, j) = 0.3 * static_cast<double>(n + j);
    const Tensor<double> y = ca.forward(q, k, v);
    for (std::int64_t n = 0; n < 2; ++n) {
      for (std::int64_t mi = 0; mi < m; ++mi)
        CHECK(ca.attn.at(n, mi) == doctest::Approx(1.0 / m).epsilon(1e-12));
      for (std::int64_t ch = 0; ch < 4; ++ch) {
        double want = 0.0;
        for (std::int64_t mi = 0; mi < m; ++mi)
          for (std::int64_t cvi = 0; cvi < 4; ++cvi)
            want += v.at(n, mi, cvi) * ca.wv.at(cvi, ch) / m;
        CHECK(y.at(n, ch) == doctest::Approx(want).epsilon(1e-9));
      }
    }
  }

  SUBCASE("attention rows always sum to one") {
    CrossAttention<double> ca(4, 4, 4, 8, 4, rng);
    Tensor<double> q({6, 4});
    Tensor<double> k({6, 7, 4});
    Tensor<double> v({6, 7, 4});
    fill_normal(q, 0.0, 2.0, rng);
    fill_normal(k, 0.0, 2.0, rng);
    fill_normal(v, 0.0, 2.0, rng);
    ca.forward(q, k, v);
    for (std::int64_t n = 0; n < 6; ++n) {
      double row = 0.0;
      for (std::int64_t mi = 0; mi < 7; ++mi) row += ca.attn.at(n, mi);
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  SUBCASE("identity value projection keeps outputs inside the value range") {
    CrossAttention<double> ca(3, 3, 4, 5, 4, rng);
    ca.wv.zero();
    for (std::int64_t i = 0; i < 4; ++i) ca.wv.at(i, i) = 1.0;
    Tensor<double> q({3, 3});
    Tensor<double> k({3, 6, 3});
    Tensor<double> v({3, 6, 4});
    fill_normal(q, 0.0, 1.5, rng);
    fill_normal(k, 0.0, 1.5, rng);
    fill_normal(v, 0.0, 1.5, rng);
    const Tensor<double> y = ca.forward(q, k, v);
    for (std::int64_t n = 0; n < 3; ++n)
      for (std::int64_t ch = 0; ch < 4; ++ch) {
        double lo = v.at(n, 0, ch), hi = v.at(n, 0, ch);
        for (std::int64_t mi = 1; mi < 6; ++mi) {
          lo = std::min(lo, v.at(n, mi, ch));
          hi = std::max(hi, v.at(n, mi, ch));
        }
        CHECK(y.at(n, ch) >= lo - 1e-12);
        CHECK(y.at(n, ch) <= hi + 1e-12);
      }
  }

  SUBCASE("mismatched batch sizes are rejected") {
    CrossAttention<double> ca(3, 3, 3, 4, 3, rng);
    Tensor<double> q({2, 3});
    Tensor<double> k({3, 4, 3});
    Tensor<double> v({3, 4, 3});
    CHECK_THROWS_AS(ca.forward(q, k, v), std::invalid_argument);
  }
}

TEST_CASE("cross attention gradients match finite differences") {
  struct Shape {
    std::int64_t n, m, dq, dk, cv, d, c;
  };
  const Shape shapes[] = {
      {4, 9, 8, 8, 8, 8, 8},
      {2, 4, 4, 3, 5, 6, 2},
      {5, 1, 2, 2, 2, 3, 4},
  };
  int seed = 700;
  for (const Shape& s : shapes) {
    CAPTURE(s.m);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed++));
    CrossAttention<double> ca(s.dq, s.dk, s.cv, s.d, s.c, rng);
    ParamStore<double> store;
    ca.register_params(store, "ca");
    Tensor<double> q({s.n, s.dq});
    Tensor<double> k({s.n, s.m, s.dk});
    Tensor<double> v({s.n, s.m, s.cv});
    fill_normal(q, 0.0, 1.0, rng);
    fill_normal(k, 0.0, 1.0, rng);
    fill_normal(v, 0.0, 1.0, rng);

    const Tensor<double> y0 = ca.forward(q, k, v);
    testutil::WeightedSumLoss head(y0.shape(), rng);
    store.zero_grads();
    const auto grads = ca.backward(head.grad());

    std::vector<GradSlot> slots = slots_from(store);
    slots.push_back({"q", &q, &grads.gq});
    slots.push_back({"k", &k, &grads.gk});
    slots.push_back({"v", &v, &grads.gv});
    const auto report =
        grad_check([&]() { return head.value(ca.forward(q, k, v)); }, slots);
    CHECK(report.max_rel_err < 1e-4);
  }
}
