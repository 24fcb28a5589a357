#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

// Coordinate conventions used throughout:
//   Ego frame O_e: x forward, y left, z up. The vehicle sits at the ego origin.
//   World frame O_g: planar, z up.
//   Grid rasters are row-major. Row index h increases along -x starting from
//   the plane's far (max-x) edge; column index w increases along -y starting
//   from the max-y edge. A continuous grid coordinate (u, v) measures cells
//   along width (u in [0, W]) and height (v in [0, H]); the center of cell
//   (h, w) is (u, v) = (w + 0.5, h + 0.5).

namespace nemo {

using Rng = std::mt19937_64;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// 6-DoF ego pose. Rotation is applied in Z*Y*X (yaw, pitch, roll) order.
// Planar mapping uses only (yaw, x, y); roll/pitch/z are carried for noise
// injection and calibration.
struct Pose {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const Pose& p);
Pose pose_from_rotation(const Mat3& r, double x, double y, double z);

Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& p);

// Planar (yaw, x, y) application of the pose to an ego-frame point.
Vec2 apply_planar(const Pose& p, const Vec2& ego_point);
Vec2 apply_planar_inverse(const Pose& p, const Vec2& world_point);

// Independent Gaussian noise on the three Euler angles (sigma in degrees)
// and on x/y (sigma in meters). z is untouched. Zero sigmas leave the pose
// bit-identical and do not consume rng state.
Pose perturb_pose(const Pose& pose, double sigma_deg, double sigma_m, Rng& rng);

enum class FrameTag : std::uint8_t { ego = 0, world = 1 };

// Continuous coordinate in a tagged grid frame.
struct GridCoord {
  double u = 0.0;
  double v = 0.0;
  FrameTag frame = FrameTag::ego;
};

// Resolution-anchored raster frame. `origin` is the frame coordinate of the
// corner of cell (0, 0), i.e. the max-x / max-y corner of the raster.
struct GridSpec {
  int height_cells = 0;
  int width_cells = 0;
  double resolution = 0.0;  // meters per cell
  double origin_x = 0.0;
  double origin_y = 0.0;
  FrameTag frame_tag = FrameTag::ego;

  Vec2 grid_to_point(double u, double v) const {
    return {origin_x - v * resolution, origin_y - u * resolution};
  }
  GridCoord point_to_grid(const Vec2& p) const {
    return {(origin_y - p.y) / resolution, (origin_x - p.x) / resolution,
            frame_tag};
  }
  Vec2 cell_center(int h, int w) const {
    return grid_to_point(w + 0.5, h + 0.5);
  }
  bool contains(const GridCoord& c) const {
    return c.u >= 0.0 && c.u <= width_cells && c.v >= 0.0 &&
           c.v <= height_cells;
  }
  std::int64_t cell_count() const {
    return static_cast<std::int64_t>(height_cells) * width_cells;
  }
};

// Centered ego plane of h x w cells: the vehicle sits at the plane center.
GridSpec make_ego_spec(int height_cells, int width_cells, double resolution);

// Maps ego-frame grid coordinates through `pose` into continuous world-grid
// coordinates. Order is preserved; out-of-map outputs are legal.
std::vector<GridCoord> ego_to_world_coords(const std::vector<GridCoord>& coords,
                                           const GridSpec& ego_spec,
                                           const Pose& pose,
                                           const GridSpec& world_spec);

std::vector<GridCoord> world_to_ego_coords(const std::vector<GridCoord>& coords,
                                           const GridSpec& world_spec,
                                           const Pose& pose,
                                           const GridSpec& ego_spec);

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace nemo
