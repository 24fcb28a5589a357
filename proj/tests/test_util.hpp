#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "nemo/tensor.hpp"

// Shared helpers for the test binaries: scratch directories, random tensor
// content with a gap guarantee (so finite differences never straddle a
// max/ReLU tie), and a weighted-sum loss head for gradient checks.

namespace testutil {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nemo_tests_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Values drawn from a shuffled lattice with spacing `gap`, plus a hair of
// jitter far smaller than the lattice step. Distinct elements stay at least
// gap/2 apart, so +-1e-5 probes cannot flip an argmax or a ReLU sign.
inline void fill_separated(nemo::Tensor<double>& t, std::mt19937_64& rng,
                           double gap = 0.05) {
  std::vector<double> grid(static_cast<size_t>(t.numel()));
  for (size_t i = 0; i < grid.size(); ++i)
    grid[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(grid.size())) * gap;
  std::shuffle(grid.begin(), grid.end(), rng);
  std::uniform_real_distribution<double> jitter(-gap * 1e-3, gap * 1e-3);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = grid[static_cast<size_t>(i)] + jitter(rng);
}

// loss = sum_i r_i * y_i with fixed random coefficients, which makes the
// upstream gradient non-uniform without adding its own nonlinearities.
struct WeightedSumLoss {
  nemo::Tensor<double> r;

  explicit WeightedSumLoss(const std::vector<std::int64_t>& shape,
                           std::mt19937_64& rng)
      : r(shape) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = d(rng);
  }

  double value(const nemo::Tensor<double>& y) const {
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) s += r[i] * y[i];
    return s;
  }

  nemo::Tensor<double> grad() const { return r; }
};

inline bool bytes_equal(const std::filesystem::path& a,
                        const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string sa((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  return sa == sb;
}

}  // namespace testutil
