#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <random>

#include "doctest.h"
#include "nemo/params.hpp"
#include "nemo/tensor.hpp"
#include "test_util.hpp"

using namespace nemo;

TEST_CASE("tensor indexing agrees with row-major arithmetic") {
  Tensor<float> t({2, 3, 4, 5, 6});
  CHECK(t.numel() == 2 * 3 * 4 * 5 * 6);
  CHECK(t.rank() == 5);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i);

  CHECK(t.at(1, 2, 3, 4, 5) == static_cast<float>(t.numel() - 1));
  CHECK(t.at(0, 0, 0, 0, 3) == 3.0f);
  CHECK(t.at(1, 0, 0, 0, 0) == static_cast<float>(3 * 4 * 5 * 6));

  Tensor<float> m({3, 4});
  m.at(2, 1) = 7.0f;
  CHECK(m[2 * 4 + 1] == 7.0f);

  Tensor<float> r({2, 3, 4});
  r.at(1, 2, 3) = -1.0f;
  CHECK(r[(1 * 3 + 2) * 4 + 3] == -1.0f);
}

TEST_CASE("tensor reshape, fill, cast, and shape checks") {
  Tensor<double> t({4, 6});
  t.fill(2.5);
  CHECK(t[23] == 2.5);
  t.reshape({2, 12});
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 12);
  CHECK_THROWS_AS(t.reshape({5, 5}), std::invalid_argument);

  const Tensor<float> f = t.cast<float>();
  CHECK(f.numel() == t.numel());
  CHECK(f[0] == 2.5f);

  CHECK(Tensor<float>::full({2, 2}, 3.0f)[3] == 3.0f);
  CHECK(Tensor<float>::zeros({2, 2})[0] == 0.0f);
  CHECK_THROWS_AS(Tensor<float>({-1, 4}), std::invalid_argument);
}

TEST_CASE("param store tracks entries, buffers, and zeroing") {
  ParamStore<float> store;
  Tensor<float> w({3, 4}), gw({3, 4});
  Tensor<float> b({4}), gb({4});
  Tensor<float> stat({4});
  gw.fill(1.0f);
  gb.fill(2.0f);
  store.add("layer.w", &w, &gw);
  store.add("layer.b", &b, &gb);
  store.add_buffer("layer.stat", &stat);

  CHECK(store.entries().size() == 3);
  CHECK(store.entries()[0].name == "layer.w");
  CHECK(store.entries()[2].trainable == false);
  CHECK(store.trainable_count() == 12 + 4);

  store.zero_grads();
  CHECK(gw[0] == 0.0f);
  CHECK(gb[3] == 0.0f);
}

TEST_CASE("adam: no-op cases, descent direction, quadratic convergence") {
  SUBCASE("zero gradients and zero weight decay leave parameters unchanged") {
    ParamStore<double> store;
    Tensor<double> w({3}), gw({3});
    w[0] = 1.0;
    w[1] = -2.0;
    w[2] = 0.5;
    store.add("w", &w, &gw);
    AdamState<double> state;
    state.cfg.weight_decay = 0.0;
    adam_step(store, state);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.0);
    CHECK(w[2] == 0.5);
  }

  SUBCASE("lr = 0 is bit-identical even with gradients") {
    ParamStore<double> store;
    Tensor<double> w({2}), gw({2});
    w[0] = 0.75;
    w[1] = -1.25;
    gw[0] = 3.0;
    gw[1] = -4.0;
    store.add("w", &w, &gw);
    AdamState<double> state;
    state.cfg.lr = 0.0;
    for (int i = 0; i < 5; ++i) adam_step(store, state);
    CHECK(w[0] == 0.75);
    CHECK(w[1] == -1.25);
  }

  SUBCASE("one step on f(w) = w^2 moves w toward zero") {
    ParamStore<double> store;
    Tensor<double> w({1}), gw({1});
    w[0] = 1.0;
    gw[0] = 2.0 * w[0];
    store.add("w", &w, &gw);
    AdamState<double> state;
    adam_step(store, state);
    CHECK(w[0] < 1.0);
  }

  SUBCASE("200 steps on a 2-D quadratic reach the minimum within 1e-3") {
    ParamStore<double> store;
    Tensor<double> w({2}), gw({2});
    w[0] = 1.0;
    w[1] = -0.7;
    store.add("w", &w, &gw);
    AdamState<double> state;
    state.cfg.lr = 0.05;
    state.cfg.weight_decay = 0.0;
    for (int step = 0; step < 200; ++step) {
      gw[0] = 2.0 * w[0];
      gw[1] = 6.0 * w[1];
      adam_step(store, state);
    }
    CHECK(std::hypot(w[0], w[1]) < 1e-3);
  }

  SUBCASE("state shaped for a different store is rejected") {
    ParamStore<double> a;
    Tensor<double> w({2}), gw({2});
    a.add("w", &w, &gw);
    AdamState<double> state;
    adam_step(a, state);
    Tensor<double> v({3}), gv({3});
    a.add("v", &v, &gv);
    CHECK_THROWS_AS(adam_step(a, state), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round trip preserves values by name") {
  auto dir = testutil::scratch_dir("nemp");
  const std::string path = (dir / "ckpt.nemp").string();

  std::mt19937_64 rng(3);
  ParamStore<float> store;
  Tensor<float> w({4, 5}), gw({4, 5});
  Tensor<float> b({5}), gb({5});
  Tensor<float> stat({5});
  fill_normal(w, 0.0, 1.0, rng);
  fill_normal(b, 0.0, 1.0, rng);
  fill_normal(stat, 0.0, 1.0, rng);
  store.add("fc.w", &w, &gw);
  store.add("fc.b", &b, &gb);
  store.add_buffer("fc.stat", &stat);
  nemp::save(store, path);

  ParamStore<float> loaded;
  Tensor<float> w2({4, 5}), gw2({4, 5});
  Tensor<float> b2({5}), gb2({5});
  Tensor<float> stat2({5});
  loaded.add("fc.w", &w2, &gw2);
  loaded.add("fc.b", &b2, &gb2);
  loaded.add_buffer("fc.stat", &stat2);
  nemp::load(loaded, path);

  for (std::int64_t i = 0; i < w.numel(); ++i) CHECK(w2[i] == w[i]);
  for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(b2[i] == b[i]);
  for (std::int64_t i = 0; i < stat.numel(); ++i) CHECK(stat2[i] == stat[i]);

  SUBCASE("unknown records in the file are tolerated") {
    ParamStore<float> partial;
    Tensor<float> only({4, 5}), gonly({4, 5});
    partial.add("fc.w", &only, &gonly);
    nemp::load(partial, path);
    CHECK(only[3] == w[3]);
  }

  SUBCASE("a store entry missing from the file is an error") {
    ParamStore<float> wide;
    Tensor<float> extra({2}), gextra({2});
    wide.add("fc.w", &w2, &gw2);
    wide.add("fc.extra", &extra, &gextra);
    CHECK_THROWS_WITH_AS(nemp::load(wide, path),
                         doctest::Contains("missing tensor"),
                         std::runtime_error);
  }

  SUBCASE("shape mismatch is an error") {
    ParamStore<float> wrong;
    Tensor<float> bad({5, 4}), gbad({5, 4});
    wrong.add("fc.w", &bad, &gbad);
    CHECK_THROWS_WITH_AS(nemp::load(wrong, path),
                         doctest::Contains("shape mismatch"),
                         std::runtime_error);
  }

  SUBCASE("bad magic is rejected") {
    const std::string junk = (dir / "junk.nemp").string();
    std::ofstream f(junk, std::ios::binary);
    f << "XXXX junk";
    f.close();
    ParamStore<float> any;
    Tensor<float> t({1}), gt({1});
    any.add("t", &t, &gt);
    CHECK_THROWS_WITH_AS(nemp::load(any, junk), doctest::Contains("magic"),
                         std::runtime_error);
  }
}

TEST_CASE("checkpoint header bytes follow the format") {
  auto dir = testutil::scratch_dir("nemp_hdr");
  const std::string path = (dir / "one.nemp").string();
  ParamStore<float> store;
  Tensor<float> t({2, 3}), gt({2, 3});
  for (std::int64_t i = 0; i < 6; ++i) t[i] = static_cast<float>(i + 1);
  store.add("ab", &t, &gt);
  nemp::save(store, path);

  std::ifstream f(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 4 + 1 + 2 + 2 + 1 + 8 + 24);
  CHECK(bytes.substr(0, 4) == "NEMP");
  CHECK(bytes[4] == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 2);  // name length u16 LE
  CHECK(static_cast<unsigned char>(bytes[6]) == 0);
  CHECK(bytes.substr(7, 2) == "ab");
  CHECK(bytes[9] == 2);  // rank
  std::uint32_t d0, d1;
  std::memcpy(&d0, bytes.data() + 10, 4);
  std::memcpy(&d1, bytes.data() + 14, 4);
  CHECK(d0 == 2);
  CHECK(d1 == 3);
  float v0;
  std::memcpy(&v0, bytes.data() + 18, 4);
  CHECK(v0 == 1.0f);
}
