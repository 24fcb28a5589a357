#include "nemo/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace nemo {

namespace {

void check_pair(const FeatureFrame& hist, const FeatureFrame& cur) {
  if (hist.spec.height_cells != cur.spec.height_cells ||
      hist.spec.width_cells != cur.spec.width_cells ||
      hist.channels() != cur.channels())
    throw std::invalid_argument("fuse: frames disagree in shape: hist " +
                                shape_str(hist.features) + ", cur " +
                                shape_str(cur.features));
}

}  // namespace

FeatureFrame fuse_overwrite(const FeatureFrame& hist, const FeatureFrame& cur) {
  check_pair(hist, cur);
  FeatureFrame out = make_frame(cur.spec, cur.channels());
  const std::int64_t cells = cur.spec.cell_count(), k = cur.channels();
  for (std::int64_t i = 0; i < cells; ++i) {
    const FeatureFrame* src = nullptr;
    if (cur.valid[static_cast<size_t>(i)]) {
      src = &cur;
    } else if (hist.valid[static_cast<size_t>(i)]) {
      src = &hist;
    } else {
      continue;
    }
    std::copy_n(src->features.data() + i * k, k, out.features.data() + i * k);
    out.valid[static_cast<size_t>(i)] = 1;
  }
  return out;
}

FeatureFrame fuse_maxpool(const FeatureFrame& hist, const FeatureFrame& cur) {
  check_pair(hist, cur);
  FeatureFrame out = make_frame(cur.spec, cur.channels());
  const std::int64_t cells = cur.spec.cell_count(), k = cur.channels();
  for (std::int64_t i = 0; i < cells; ++i) {
    const bool hv = hist.valid[static_cast<size_t>(i)];
    const bool cv = cur.valid[static_cast<size_t>(i)];
    if (!hv && !cv) continue;
    float* dst = out.features.data() + i * k;
    if (hv && cv) {
      const float* a = hist.features.data() + i * k;
      const float* b = cur.features.data() + i * k;
      for (std::int64_t c = 0; c < k; ++c) dst[c] = std::max(a[c], b[c]);
    } else {
      const float* a = (hv ? hist : cur).features.data() + i * k;
      std::copy_n(a, k, dst);
    }
    out.valid[static_cast<size_t>(i)] = 1;
  }
  return out;
}

FeatureFrame homo_fuse_step(const FeatureFrame& hist, const FeatureFrame& cur,
                            HomoGridFusion<float>& model) {
  check_pair(hist, cur);
  const std::int64_t h = cur.spec.height_cells, w = cur.spec.width_cells;
  const std::int64_t k = cur.channels();
  Tensor<float> seq({1, 2, h, w, k});
  for (std::int64_t i = 0; i < h * w; ++i) {
    const bool hv = hist.valid[static_cast<size_t>(i)];
    const bool cv = cur.valid[static_cast<size_t>(i)];
    if (!hv && !cv) continue;
    const float* first = (hv ? hist : cur).features.data() + i * k;
    const float* second = (cv ? cur : hist).features.data() + i * k;
    std::copy_n(first, k, &seq.at(0, 0, i / w, i % w, 0));
    std::copy_n(second, k, &seq.at(0, 1, i / w, i % w, 0));
  }

  const Tensor<float> fused = model.forward(seq, NormMode::eval);
  FeatureFrame out = make_frame(cur.spec, k);
  for (std::int64_t i = 0; i < h * w; ++i) {
    if (!hist.valid[static_cast<size_t>(i)] && !cur.valid[static_cast<size_t>(i)])
      continue;
    std::copy_n(&fused.at(0, 1, i / w, i % w, 0), k,
                out.features.data() + i * k);
    out.valid[static_cast<size_t>(i)] = 1;
  }
  return out;
}

}  // namespace nemo
