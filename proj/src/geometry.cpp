#include "nemo/geometry.hpp"

#include <cmath>

namespace nemo {

Mat3 rotation_matrix(const Pose& p) {
  const double cr = std::cos(p.roll), sr = std::sin(p.roll);
  const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);
  const double cy = std::cos(p.yaw), sy = std::sin(p.yaw);
  // R = Rz(yaw) * Ry(pitch) * Rx(roll)
  Mat3 r;
  r[0] = {cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr};
  r[1] = {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr};
  r[2] = {-sp, cp * sr, cp * cr};
  return r;
}

Pose pose_from_rotation(const Mat3& r, double x, double y, double z) {
  Pose p;
  p.pitch = std::asin(std::clamp(-r[2][0], -1.0, 1.0));
  p.yaw = std::atan2(r[1][0], r[0][0]);
  p.roll = std::atan2(r[2][1], r[2][2]);
  p.x = x;
  p.y = y;
  p.z = z;
  return p;
}

static Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

static std::array<double, 3> mat_vec(const Mat3& m,
                                     const std::array<double, 3>& v) {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i)
    out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
  return out;
}

Pose compose(const Pose& a, const Pose& b) {
  const Mat3 ra = rotation_matrix(a);
  const Mat3 rb = rotation_matrix(b);
  const Mat3 r = mat_mul(ra, rb);
  const auto t = mat_vec(ra, {b.x, b.y, b.z});
  return pose_from_rotation(r, t[0] + a.x, t[1] + a.y, t[2] + a.z);
}

Pose invert(const Pose& p) {
  Mat3 r = rotation_matrix(p);
  Mat3 rt;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rt[i][j] = r[j][i];
  const auto t = mat_vec(rt, {p.x, p.y, p.z});
  return pose_from_rotation(rt, -t[0], -t[1], -t[2]);
}

Vec2 apply_planar(const Pose& p, const Vec2& e) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {c * e.x - s * e.y + p.x, s * e.x + c * e.y + p.y};
}

Vec2 apply_planar_inverse(const Pose& p, const Vec2& w) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double dx = w.x - p.x, dy = w.y - p.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Pose perturb_pose(const Pose& pose, double sigma_deg, double sigma_m,
                  Rng& rng) {
  Pose out = pose;
  if (sigma_deg > 0.0) {
    std::normal_distribution<double> ang(0.0, deg_to_rad(sigma_deg));
    out.roll += ang(rng);
    out.pitch += ang(rng);
    out.yaw += ang(rng);
  }
  if (sigma_m > 0.0) {
    std::normal_distribution<double> lin(0.0, sigma_m);
    out.x += lin(rng);
    out.y += lin(rng);
  }
  return out;
}

GridSpec make_ego_spec(int height_cells, int width_cells, double resolution) {
  GridSpec s;
  s.height_cells = height_cells;
  s.width_cells = width_cells;
  s.resolution = resolution;
  s.origin_x = 0.5 * height_cells * resolution;
  s.origin_y = 0.5 * width_cells * resolution;
  s.frame_tag = FrameTag::ego;
  return s;
}

std::vector<GridCoord> ego_to_world_coords(const std::vector<GridCoord>& coords,
                                           const GridSpec& ego_spec,
                                           const Pose& pose,
                                           const GridSpec& world_spec) {
  std::vector<GridCoord> out;
  out.reserve(coords.size());
  for (const GridCoord& c : coords) {
    const Vec2 pe = ego_spec.grid_to_point(c.u, c.v);
    const Vec2 pw = apply_planar(pose, pe);
    out.push_back(world_spec.point_to_grid(pw));
  }
  return out;
}

std::vector<GridCoord> world_to_ego_coords(const std::vector<GridCoord>& coords,
                                           const GridSpec& world_spec,
                                           const Pose& pose,
                                           const GridSpec& ego_spec) {
  std::vector<GridCoord> out;
  out.reserve(coords.size());
  for (const GridCoord& c : coords) {
    const Vec2 pw = world_spec.grid_to_point(c.u, c.v);
    const Vec2 pe = apply_planar_inverse(pose, pw);
    out.push_back(ego_spec.point_to_grid(pe));
  }
  return out;
}

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace nemo
