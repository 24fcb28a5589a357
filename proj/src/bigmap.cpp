#include "nemo/bigmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nemo {

namespace {

constexpr double kSnapEps = 1e-9;

// Splits a center-relative coordinate into a base index and fraction,
// snapping near-integer fractions so lattice-aligned samples stay exact.
void split_coord(double x, std::int64_t& base, double& frac) {
  const double f = x - 0.5;
  base = static_cast<std::int64_t>(std::floor(f));
  frac = f - static_cast<double>(base);
  if (frac < kSnapEps) {
    frac = 0.0;
  } else if (frac > 1.0 - kSnapEps) {
    base += 1;
    frac = 0.0;
  }
}

}  // namespace

BilinearSample bilinear_at(const GridSpec& spec, double u, double v) {
  std::int64_t w0, h0;
  double du, dv;
  split_coord(u, w0, du);
  split_coord(v, h0, dv);

  const double weights[4] = {(1.0 - du) * (1.0 - dv), du * (1.0 - dv),
                             (1.0 - du) * dv, du * dv};
  const std::int64_t hh[4] = {h0, h0, h0 + 1, h0 + 1};
  const std::int64_t ww[4] = {w0, w0 + 1, w0, w0 + 1};

  BilinearSample s;
  for (int i = 0; i < 4; ++i) {
    s.taps[i].weight = weights[i];
    const bool inside = hh[i] >= 0 && hh[i] < spec.height_cells &&
                        ww[i] >= 0 && ww[i] < spec.width_cells;
    s.taps[i].cell = inside ? hh[i] * spec.width_cells + ww[i] : -1;
  }
  return s;
}

BilinearSample bilinear_at_clamped(const GridSpec& spec, double u, double v) {
  std::int64_t w0, h0;
  double du, dv;
  split_coord(u, w0, du);
  split_coord(v, h0, dv);

  const double weights[4] = {(1.0 - du) * (1.0 - dv), du * (1.0 - dv),
                             (1.0 - du) * dv, du * dv};
  const std::int64_t hh[4] = {h0, h0, h0 + 1, h0 + 1};
  const std::int64_t ww[4] = {w0, w0 + 1, w0, w0 + 1};

  BilinearSample s;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t h = std::clamp<std::int64_t>(hh[i], 0, spec.height_cells - 1);
    const std::int64_t w = std::clamp<std::int64_t>(ww[i], 0, spec.width_cells - 1);
    s.taps[i].weight = weights[i];
    s.taps[i].cell = h * spec.width_cells + w;
  }
  return s;
}

BigFeatureMap init_map(const GridSpec& spec, std::int64_t k) {
  if (spec.height_cells <= 0 || spec.width_cells <= 0 || spec.resolution <= 0)
    throw std::invalid_argument("init_map: grid spec must have positive dims");
  BigFeatureMap map;
  map.spec = spec;
  map.spec.frame_tag = FrameTag::world;
  map.features = Tensor<float>({spec.height_cells, spec.width_cells, k});
  map.observed.assign(static_cast<size_t>(spec.cell_count()), 0);
  return map;
}

FeatureFrame make_frame(const GridSpec& spec, std::int64_t k) {
  FeatureFrame f;
  f.spec = spec;
  f.features = Tensor<float>({spec.height_cells, spec.width_cells, k});
  f.valid.assign(static_cast<size_t>(spec.cell_count()), 0);
  return f;
}

FeatureFrame read_region(const BigFeatureMap& map, const Pose& pose,
                         const GridSpec& ego_spec) {
  const std::int64_t k = map.channels();
  FeatureFrame out = make_frame(ego_spec, k);
  for (int h = 0; h < ego_spec.height_cells; ++h)
    for (int w = 0; w < ego_spec.width_cells; ++w) {
      const Vec2 pw = apply_planar(pose, ego_spec.cell_center(h, w));
      const GridCoord c = map.spec.point_to_grid(pw);
      const BilinearSample s = bilinear_at(map.spec, c.u, c.v);
      bool ok = true;
      for (const auto& tap : s.taps) {
        if (tap.weight == 0.0) continue;
        if (tap.cell < 0 || !map.observed[static_cast<size_t>(tap.cell)]) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      const std::int64_t dst = (static_cast<std::int64_t>(h) * ego_spec.width_cells + w) * k;
      for (const auto& tap : s.taps) {
        if (tap.weight == 0.0) continue;
        const float* src = map.features.data() + tap.cell * k;
        const float wgt = static_cast<float>(tap.weight);
        for (std::int64_t c2 = 0; c2 < k; ++c2)
          out.features[dst + c2] += wgt * src[c2];
      }
      out.valid[static_cast<size_t>(h * ego_spec.width_cells + w)] = 1;
    }
  return out;
}

std::vector<Vec2> footprint_corners(const GridSpec& ego_spec,
                                    const Pose& pose) {
  const double hu = ego_spec.width_cells, hv = ego_spec.height_cells;
  const double corners[4][2] = {{0, 0}, {hu, 0}, {0, hv}, {hu, hv}};
  std::vector<Vec2> out;
  out.reserve(4);
  for (const auto& c : corners)
    out.push_back(apply_planar(pose, ego_spec.grid_to_point(c[0], c[1])));
  return out;
}

namespace {

// Whole-cell margins needed for value `g` to lie inside [0, cells].
void needed_margin(double g, double cells, std::int64_t& lo, std::int64_t& hi) {
  if (g < 0.0) lo = std::max(lo, static_cast<std::int64_t>(std::ceil(-g - kSnapEps)));
  if (g > cells) hi = std::max(hi, static_cast<std::int64_t>(std::ceil(g - cells - kSnapEps)));
}

// Applies the 1.5x growth policy to one axis; lo/hi are margins before cell 0
// and after the last cell.
void grow_axis(std::int64_t old_cells, std::int64_t& lo, std::int64_t& hi) {
  if (lo == 0 && hi == 0) return;
  const std::int64_t needed = old_cells + lo + hi;
  const std::int64_t target = std::max(
      needed, static_cast<std::int64_t>(std::ceil(1.5 * static_cast<double>(old_cells))));
  std::int64_t surplus = target - needed;
  if (lo > 0 && hi > 0) {
    hi += surplus / 2 + surplus % 2;
    lo += surplus / 2;
  } else if (lo > 0) {
    lo += surplus;
  } else {
    hi += surplus;
  }
}

}  // namespace

ExpandOffset expand_to_cover(BigFeatureMap& map,
                             const std::vector<Vec2>& footprint) {
  // Margins: "lo" grows toward +x (new rows before row 0) / +y (new columns
  // before column 0); "hi" grows past the last row/column.
  std::int64_t row_lo = 0, row_hi = 0, col_lo = 0, col_hi = 0;
  for (const Vec2& p : footprint) {
    const GridCoord c = map.spec.point_to_grid(p);
    needed_margin(c.v, map.spec.height_cells, row_lo, row_hi);
    needed_margin(c.u, map.spec.width_cells, col_lo, col_hi);
  }
  ExpandOffset off;
  if (row_lo == 0 && row_hi == 0 && col_lo == 0 && col_hi == 0) return off;

  grow_axis(map.spec.height_cells, row_lo, row_hi);
  grow_axis(map.spec.width_cells, col_lo, col_hi);

  GridSpec spec = map.spec;
  spec.height_cells += static_cast<int>(row_lo + row_hi);
  spec.width_cells += static_cast<int>(col_lo + col_hi);
  spec.origin_x += static_cast<double>(row_lo) * spec.resolution;
  spec.origin_y += static_cast<double>(col_lo) * spec.resolution;

  const std::int64_t k = map.channels();
  Tensor<float> features({spec.height_cells, spec.width_cells, k});
  std::vector<std::uint8_t> observed(static_cast<size_t>(spec.cell_count()), 0);
  for (int h = 0; h < map.spec.height_cells; ++h) {
    const std::int64_t src = static_cast<std::int64_t>(h) * map.spec.width_cells;
    const std::int64_t dst = (h + row_lo) * spec.width_cells + col_lo;
    std::copy_n(map.features.data() + src * k,
                static_cast<std::int64_t>(map.spec.width_cells) * k,
                features.data() + dst * k);
    std::copy_n(map.observed.data() + src, map.spec.width_cells,
                observed.data() + dst);
  }
  map.spec = spec;
  map.features = std::move(features);
  map.observed = std::move(observed);

  off.rows = static_cast<int>(row_lo);
  off.cols = static_cast<int>(col_lo);
  off.reallocated = true;
  return off;
}

ResamplePlan build_resample_plan(const GridSpec& ego_spec, const Pose& pose,
                                 const GridSpec& dst_spec) {
  // Candidate destination cells: bounding box of the posed corners.
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (const Vec2& p : footprint_corners(ego_spec, pose)) {
    const GridCoord c = dst_spec.point_to_grid(p);
    umin = std::min(umin, c.u);
    umax = std::max(umax, c.u);
    vmin = std::min(vmin, c.v);
    vmax = std::max(vmax, c.v);
  }
  const std::int64_t h0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(vmin)));
  const std::int64_t h1 = std::min<std::int64_t>(
      dst_spec.height_cells - 1, static_cast<std::int64_t>(std::ceil(vmax)));
  const std::int64_t w0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(umin)));
  const std::int64_t w1 = std::min<std::int64_t>(
      dst_spec.width_cells - 1, static_cast<std::int64_t>(std::ceil(umax)));

  constexpr double kInsideEps = 1e-9;
  ResamplePlan plan;
  for (std::int64_t h = h0; h <= h1; ++h)
    for (std::int64_t w = w0; w <= w1; ++w) {
      const Vec2 pw = dst_spec.cell_center(static_cast<int>(h), static_cast<int>(w));
      const Vec2 pe = apply_planar_inverse(pose, pw);
      const GridCoord c = ego_spec.point_to_grid(pe);
      if (c.u < -kInsideEps || c.u > ego_spec.width_cells + kInsideEps ||
          c.v < -kInsideEps || c.v > ego_spec.height_cells + kInsideEps)
        continue;
      ResamplePlan::Entry e;
      e.dst = h * dst_spec.width_cells + w;
      e.src = bilinear_at_clamped(ego_spec, c.u, c.v);
      plan.entries.push_back(e);
    }
  return plan;
}

void write_region(BigFeatureMap& map, const FeatureFrame& frame,
                  const Pose& pose) {
  const std::int64_t k = map.channels();
  if (frame.channels() != k)
    throw std::invalid_argument("write_region: channel mismatch");
  expand_to_cover(map, footprint_corners(frame.spec, pose));
  const ResamplePlan plan = build_resample_plan(frame.spec, pose, map.spec);
  for (const auto& e : plan.entries) {
    bool ok = true;
    for (const auto& tap : e.src.taps) {
      if (tap.weight == 0.0) continue;
      if (!frame.valid[static_cast<size_t>(tap.cell)]) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    float* dst = map.features.data() + e.dst * k;
    for (std::int64_t c = 0; c < k; ++c) dst[c] = 0.0f;
    for (const auto& tap : e.src.taps) {
      if (tap.weight == 0.0) continue;
      const float* src = frame.features.data() + tap.cell * k;
      const float wgt = static_cast<float>(tap.weight);
      for (std::int64_t c = 0; c < k; ++c) dst[c] += wgt * src[c];
    }
    map.observed[static_cast<size_t>(e.dst)] = 1;
  }
}

std::vector<std::uint8_t> decode_semantic(const Tensor<float>& features) {
  const std::int64_t cells = features.dim(0) * features.dim(1);
  const std::int64_t k = features.dim(2);
  std::vector<std::uint8_t> out(static_cast<size_t>(cells), 0);
  for (std::int64_t i = 0; i < cells; ++i) {
    const float* f = features.data() + i * k;
    int best = 0;
    for (std::int64_t c = 1; c < k; ++c)
      if (f[c] > f[best]) best = static_cast<int>(c);
    out[static_cast<size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::vector<std::uint8_t> decode_semantic(const BigFeatureMap& map) {
  std::vector<std::uint8_t> out = decode_semantic(map.features);
  for (size_t i = 0; i < out.size(); ++i)
    if (!map.observed[i]) out[i] = 0;
  return out;
}

}  // namespace nemo
