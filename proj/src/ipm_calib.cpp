#include "nemo/ipm_calib.hpp"

#include <algorithm>
#include <cmath>

#include "nemo/errors.hpp"

namespace nemo {

namespace {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Camera axes expressed in the ground frame at zero rotation: the optical
// axis (+z) maps to ground +x, pixel-right (+x) to ground -y, pixel-down
// (+y) to ground -z.
Vec3 cam_to_ground_base(const Vec3& c) { return {c.z, -c.x, -c.y}; }
Vec3 ground_to_cam_base(const Vec3& g) { return {-g.y, -g.z, g.x}; }

Mat3 extrinsic_rotation(const ExtrinsicEstimate& ext) {
  Pose p;
  p.pitch = ext.pitch;
  p.yaw = ext.yaw;
  return rotation_matrix(p);
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
          m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
          m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Vec3 mat_apply_transposed(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
          m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
          m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
}

std::vector<Vec2> project_polyline(const std::vector<Vec2>& px,
                                   const CameraIntrinsics& intr,
                                   const ExtrinsicEstimate& ext) {
  std::vector<Vec2> out;
  out.reserve(px.size());
  for (const Vec2& p : px) out.push_back(ipm_point(p, intr, ext));
  return out;
}

// Resamples a polyline to n points spaced evenly by arc length.
std::vector<Vec2> resample_by_arc(const std::vector<Vec2>& line, int n) {
  std::vector<double> cum(line.size(), 0.0);
  for (size_t i = 1; i < line.size(); ++i)
    cum[i] = cum[i - 1] + std::hypot(line[i].x - line[i - 1].x,
                                     line[i].y - line[i - 1].y);
  const double total = cum.back();
  std::vector<Vec2> out;
  out.reserve(static_cast<size_t>(n));
  size_t seg = 1;
  for (int i = 0; i < n; ++i) {
    const double s = total * static_cast<double>(i) / static_cast<double>(n - 1);
    while (seg + 1 < line.size() && cum[seg] < s) ++seg;
    const double span = cum[seg] - cum[seg - 1];
    const double t = span > 0 ? (s - cum[seg - 1]) / span : 0.0;
    out.push_back({line[seg - 1].x + t * (line[seg].x - line[seg - 1].x),
                   line[seg - 1].y + t * (line[seg].y - line[seg - 1].y)});
  }
  return out;
}

// Dominant direction of a point set (principal axis of its covariance),
// normalized to point along +x.
Vec2 principal_direction(const std::vector<Vec2>& pts) {
  double mx = 0.0, my = 0.0;
  for (const Vec2& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const Vec2& p : pts) {
    const double dx = p.x - mx, dy = p.y - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx + syy <= 0.0)
    throw DataError("degenerate lane geometry: points coincide");
  // Largest eigenvector of [[sxx, sxy], [sxy, syy]].
  const double tr = sxx + syy;
  const double det = sxx * syy - sxy * sxy;
  const double lambda = 0.5 * (tr + std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
  Vec2 d{sxy, lambda - sxx};
  if (std::hypot(d.x, d.y) < 1e-12 * tr) d = sxx >= syy ? Vec2{1, 0} : Vec2{0, 1};
  const double norm = std::hypot(d.x, d.y);
  d.x /= norm;
  d.y /= norm;
  if (d.x < 0) {
    d.x = -d.x;
    d.y = -d.y;
  }
  return d;
}

void check_pair(const LanePairObservation& pair) {
  if (pair.left.size() < 2 || pair.right.size() < 2)
    throw DataError("lane polylines need at least two points each");
}

constexpr int kResamplePoints = 33;

// Angle between the two lane direction fits, folded to [0, pi/2]; failed
// projections earn a flat penalty larger than any real angle.
double parallelism_residual(const LanePairObservation& pair,
                            const CameraIntrinsics& intr,
                            const ExtrinsicEstimate& ext) {
  try {
    const Vec2 dl = principal_direction(
        resample_by_arc(project_polyline(pair.left, intr, ext), kResamplePoints));
    const Vec2 dr = principal_direction(
        resample_by_arc(project_polyline(pair.right, intr, ext), kResamplePoints));
    const double dot = std::clamp(dl.x * dr.x + dl.y * dr.y, -1.0, 1.0);
    const double ang = std::acos(std::abs(dot));
    return ang;
  } catch (const DataError&) {
    return kPi;
  }
}

}  // namespace

Vec2 ipm_point(const Vec2& px, const CameraIntrinsics& intr,
               const ExtrinsicEstimate& ext) {
  const Vec3 ray_cam{(px.x - intr.cx) / intr.focal,
                     (px.y - intr.cy) / intr.focal, 1.0};
  const Vec3 d = mat_apply(extrinsic_rotation(ext), cam_to_ground_base(ray_cam));
  if (d.z >= -1e-12) throw DataError("no ground intersection");
  const double t = ext.height_m / -d.z;
  return {t * d.x, t * d.y};
}

Vec2 project_to_image(const Vec2& ground, const CameraIntrinsics& intr,
                      const ExtrinsicEstimate& ext) {
  const Vec3 w{ground.x, ground.y, -ext.height_m};
  const Vec3 c =
      ground_to_cam_base(mat_apply_transposed(extrinsic_rotation(ext), w));
  if (c.z <= 1e-12) throw DataError("point is behind the camera");
  return {intr.cx + intr.focal * c.x / c.z, intr.cy + intr.focal * c.y / c.z};
}

double estimate_yaw(const LanePairObservation& pair,
                    const CameraIntrinsics& intr,
                    const ExtrinsicEstimate& ext_with_pitch) {
  check_pair(pair);
  ExtrinsicEstimate ext = ext_with_pitch;
  ext.yaw = 0.0;
  const auto left =
      resample_by_arc(project_polyline(pair.left, intr, ext), kResamplePoints);
  const auto right =
      resample_by_arc(project_polyline(pair.right, intr, ext), kResamplePoints);

  double min_gap = 1e300;
  std::vector<Vec2> mid(left.size());
  for (size_t i = 0; i < left.size(); ++i) {
    mid[i] = {(left[i].x + right[i].x) / 2.0, (left[i].y + right[i].y) / 2.0};
    min_gap = std::min(min_gap, std::hypot(left[i].x - right[i].x,
                                           left[i].y - right[i].y));
  }
  if (min_gap < 0.05) throw DataError("lane polylines are coincident");

  const Vec2 d = principal_direction(mid);
  return -std::atan2(d.y, d.x);
}

double estimate_pitch(const LanePairObservation& pair,
                      const CameraIntrinsics& intr, double yaw) {
  check_pair(pair);
  const double lo = deg_to_rad(-15.0), hi = deg_to_rad(25.0);
  const double tol = deg_to_rad(0.01);
  auto objective = [&](double pitch) {
    ExtrinsicEstimate ext;
    ext.pitch = pitch;
    ext.yaw = yaw;
    return parallelism_residual(pair, intr, ext);
  };

  // Coarse scan brackets the valley (failed projections plateau at the
  // penalty value), then golden-section refines it.
  const int steps = 81;
  double best = lo, best_val = objective(lo);
  for (int i = 1; i < steps; ++i) {
    const double p = lo + (hi - lo) * static_cast<double>(i) / (steps - 1);
    const double v = objective(p);
    if (v < best_val) {
      best_val = v;
      best = p;
    }
  }
  double a = std::max(lo, best - (hi - lo) / (steps - 1));
  double b = std::min(hi, best + (hi - lo) / (steps - 1));

  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = objective(x1), f2 = objective(x2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = objective(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = objective(x2);
    }
  }
  const double pitch = (a + b) / 2.0;
  const double residual = objective(pitch);
  if (residual >= deg_to_rad(1.0))
    throw DataError("no pitch achieves lane parallelism; best residual " +
                    std::to_string(rad_to_deg(residual)) + " deg");
  return pitch;
}

ExtrinsicEstimate calibrate(const LanePairObservation& pair,
                            const CameraIntrinsics& intr, double height_m) {
  ExtrinsicEstimate ext;
  ext.height_m = height_m;
  // Pitch first: with a bad pitch guess the lanes may not even reach the
  // ground plane, while the pitch search tolerates that via its penalty.
  for (int iter = 0; iter < 3; ++iter) {
    ext.pitch = estimate_pitch(pair, intr, ext.yaw);
    ext.yaw = estimate_yaw(pair, intr, ext);
  }
  ext.pitch = estimate_pitch(pair, intr, ext.yaw);
  return ext;
}

std::vector<Pose> interpolate_poses(const std::vector<Pose>& keys, int factor) {
  if (keys.empty()) throw DataError("no poses to interpolate");
  if (factor < 1) throw ConfigError("interpolation factor must be >= 1");
  std::vector<Pose> out;
  auto lerp_angle = [](double a, double b, double t) {
    return wrap_angle(a + t * wrap_angle(b - a));
  };
  for (size_t i = 0; i + 1 < keys.size(); ++i) {
    const Pose& a = keys[i];
    const Pose& b = keys[i + 1];
    for (int j = 0; j < factor; ++j) {
      const double t = static_cast<double>(j) / factor;
      Pose p;
      p.x = a.x + t * (b.x - a.x);
      p.y = a.y + t * (b.y - a.y);
      p.z = a.z + t * (b.z - a.z);
      p.roll = lerp_angle(a.roll, b.roll, t);
      p.pitch = lerp_angle(a.pitch, b.pitch, t);
      p.yaw = lerp_angle(a.yaw, b.yaw, t);
      out.push_back(p);
    }
  }
  out.push_back(keys.back());
  return out;
}

StitchResult stitch_pixel_map(const std::vector<StitchFrame>& frames,
                              const CameraIntrinsics& intr,
                              const ExtrinsicEstimate& ext,
                              const GridSpec& ground_spec) {
  int channels = frames.empty() ? 3 : frames.front().image.channels;
  StitchResult result;
  result.values.assign(
      static_cast<size_t>(ground_spec.cell_count()) * channels, 0);
  result.touched.assign(static_cast<size_t>(ground_spec.cell_count()), 0);

  const Mat3 rot = extrinsic_rotation(ext);
  for (const StitchFrame& frame : frames) {
    if (frame.image.channels != channels)
      throw DataError("stitch frames disagree on channel count");
    const double cy = std::cos(frame.pose.yaw), sy = std::sin(frame.pose.yaw);
    for (int h = 0; h < ground_spec.height_cells; ++h)
      for (int w = 0; w < ground_spec.width_cells; ++w) {
        const Vec2 pw = ground_spec.cell_center(h, w);
        // World offset -> vehicle frame -> camera frame.
        const double rx = pw.x - frame.pose.x, ry = pw.y - frame.pose.y;
        const Vec3 veh{cy * rx + sy * ry, -sy * rx + cy * ry, -ext.height_m};
        const Vec3 c = ground_to_cam_base(mat_apply_transposed(rot, veh));
        if (c.z <= 1e-9) continue;
        const int u = static_cast<int>(std::llround(intr.cx + intr.focal * c.x / c.z));
        const int v = static_cast<int>(std::llround(intr.cy + intr.focal * c.y / c.z));
        if (u < 0 || u >= frame.image.width || v < 0 || v >= frame.image.height)
          continue;
        const std::uint8_t* src = frame.image.at(v, u);
        std::uint8_t* dst =
            result.values.data() +
            static_cast<size_t>(h * ground_spec.width_cells + w) * channels;
        std::copy_n(src, channels, dst);
        result.touched[static_cast<size_t>(h * ground_spec.width_cells + w)] = 1;
      }
  }
  return result;
}

}  // namespace nemo
