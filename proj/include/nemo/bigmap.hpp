#pragma once

#include <cstdint>
#include <vector>

#include "nemo/geometry.hpp"
#include "nemo/tensor.hpp"

// The growable world-frame feature map and the ego-frame feature rasters it
// exchanges with. Cells never written stay exactly zero and unobserved.

namespace nemo {

struct FeatureFrame {
  GridSpec spec;           // frame O_e
  Tensor<float> features;  // [H x W x K]
  std::vector<std::uint8_t> valid;  // H*W, 1 = cell actually observed

  std::int64_t channels() const {
    return features.rank() == 3 ? features.dim(2) : 0;
  }
};

struct BigFeatureMap {
  GridSpec spec;           // frame O_g
  Tensor<float> features;  // [H x W x K]
  std::vector<std::uint8_t> observed;  // H*W

  std::int64_t channels() const {
    return features.rank() == 3 ? features.dim(2) : 0;
  }
};

// One bilinear sample: up to 4 taps; cell = -1 marks an out-of-bounds tap.
// Taps whose weight is zero carry no information (and may be out of bounds).
struct BilinearTap {
  std::int64_t cell = -1;
  double weight = 0.0;
};

struct BilinearSample {
  BilinearTap taps[4];
};

// Samples at continuous grid coordinate (u, v), treating stored values as
// living at cell centers. Coordinates within 1e-9 of a cell center snap to
// it, so lattice-aligned samples are single-tap and bit-exact.
BilinearSample bilinear_at(const GridSpec& spec, double u, double v);

// Same, but with source taps clamped into bounds (border replication).
BilinearSample bilinear_at_clamped(const GridSpec& spec, double u, double v);

// Target-driven resampling of an ego raster into a destination grid: one
// entry per destination cell whose center lies inside the posed ego
// footprint.
struct ResamplePlan {
  struct Entry {
    std::int64_t dst = 0;  // destination cell linear index
    BilinearSample src;    // taps into the ego raster (always in bounds)
  };
  std::vector<Entry> entries;
};

ResamplePlan build_resample_plan(const GridSpec& ego_spec, const Pose& pose,
                                 const GridSpec& dst_spec);

BigFeatureMap init_map(const GridSpec& spec, std::int64_t k);

FeatureFrame make_frame(const GridSpec& spec, std::int64_t k);

// Bilinear read of the posed ego footprint. A cell is valid only when every
// nonzero-weight tap lands on an observed map cell; invalid cells are zero.
FeatureFrame read_region(const BigFeatureMap& map, const Pose& pose,
                         const GridSpec& ego_spec);

// Expands the map so every point of `footprint` (world meters) is covered,
// growing by whole cells. A growing dimension jumps to at least 1.5x its old
// size so repeated writes amortize. Returns the index shift of old cells.
struct ExpandOffset {
  int rows = 0;
  int cols = 0;
  bool reallocated = false;
};

ExpandOffset expand_to_cover(BigFeatureMap& map,
                             const std::vector<Vec2>& footprint);

// Writes the frame into the map under `pose`: expands first, then every map
// cell center inside the footprint samples the ego raster bilinearly
// (border-clamped) and is marked observed. Cells whose sample support
// includes an invalid frame cell are left untouched.
void write_region(BigFeatureMap& map, const FeatureFrame& frame,
                  const Pose& pose);

// Per-cell argmax over channels; unobserved cells decode to background 0;
// ties resolve to the lowest channel index.
std::vector<std::uint8_t> decode_semantic(const BigFeatureMap& map);
std::vector<std::uint8_t> decode_semantic(const Tensor<float>& features);

// World-frame corner points of the posed ego plane.
std::vector<Vec2> footprint_corners(const GridSpec& ego_spec,
                                    const Pose& pose);

}  // namespace nemo
