#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nemo/bigmap.hpp"
#include "nemo/geometry.hpp"

// Synthetic road worlds and per-frame observations standing in for the
// perception frontend. Ground truth exists both as vector elements and as a
// class raster; observations are noisy logit crops of that raster so fusion
// quality is measurable exactly.
//
// Classes: 0 background, 1 lane divider, 2 pedestrian crossing, 3 boundary.

namespace nemo {

inline constexpr int kNumClasses = 4;

enum class RoadProfile { straight, turning, curving };

RoadProfile road_profile_from_string(const std::string& s);
std::string to_string(RoadProfile p);

struct WorldConfig {
  double extent_m = 60.0;
  double resolution = 0.3;
  int lanes = 2;
  double lane_width_m = 3.0;
  int crossings = 2;
  double crossing_depth_m = 2.4;  // extent along the road
  RoadProfile profile = RoadProfile::straight;
  double max_curvature = 0.02;  // 1/m
  int stroke_cells = 1;  // rasterized width of line classes
  std::uint64_t seed = 1;
};

struct World {
  WorldConfig cfg;
  GridSpec spec;  // O_g raster frame
  std::vector<std::uint8_t> gt;  // H*W class raster
  std::vector<Vec2> centerline;  // dense polyline along the road
  std::vector<double> heading;   // tangent angle per centerline point
};

World generate_world(const WorldConfig& cfg);

// Poses along the road at step_m spacing, offset half a lane to the right.
// Truncates (rather than errors) when the next footprint would leave the
// world extent minus margin_m.
std::vector<Pose> generate_trajectory(const World& world, int n_frames,
                                      double step_m, double margin_m);

struct ObsNoise {
  double margin = 2.0;           // logit value of the true class
  double sigma_near = 0.0;       // channel noise at the vehicle
  double sigma_far = 0.0;        // channel noise at the far plane edge
  double occlusion_fraction = 0.0;  // target plane fraction hidden per frame
  double speckle_rate = 0.0;     // per-cell false-positive probability
};

// Nearest-cell ground-truth crop under the posed ego footprint, encoded as
// margin-scaled one-hot logits, then corrupted: occlusion patches flip cells
// to background, speckle flips cells to a random foreground class, and
// per-channel Gaussian noise grows linearly with distance from the vehicle.
// With all noise at zero the argmax equals the crop exactly.
FeatureFrame render_observation(const World& world, const Pose& pose,
                                const GridSpec& ego_spec, const ObsNoise& noise,
                                Rng& rng);

// Ground-truth class of the world cell containing `p`; background outside.
std::uint8_t world_class_at(const World& world, const Vec2& p);

}  // namespace nemo
