#include "nemo/matching.hpp"

#include <algorithm>
#include <cmath>

namespace nemo {

FeatureFrame coarse_match(const BigFeatureMap& map, const Pose& pose,
                          const GridSpec& ego_spec) {
  return read_region(map, pose, ego_spec);
}

Tensor<float> local_kernel_sample(const FeatureFrame& frame,
                                  const GridCoord& center, int r) {
  if (r < 0) throw std::invalid_argument("local_kernel_sample: r must be >= 0");
  const std::int64_t h = frame.spec.height_cells, w = frame.spec.width_cells;
  const std::int64_t k = frame.channels();
  const std::int64_t ch = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(center.v)), 0, h - 1);
  const std::int64_t cw = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(center.u)), 0, w - 1);
  const std::int64_t m = static_cast<std::int64_t>(2 * r + 1) * (2 * r + 1);
  Tensor<float> out({m, k});
  std::int64_t mi = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx, ++mi) {
      const std::int64_t y = ch + dy, x = cw + dx;
      if (y < 0 || y >= h || x < 0 || x >= w) continue;
      std::copy_n(frame.features.data() + (y * w + x) * k, k,
                  out.data() + mi * k);
    }
  return out;
}

FeatureFrame lsa_fine_match(const FeatureFrame& f_cur, LsaBlock<float>& lsa) {
  FeatureFrame out = f_cur;
  out.features = lsa.forward(f_cur.features);
  return out;
}

}  // namespace nemo
