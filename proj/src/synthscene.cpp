#include "nemo/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nemo/errors.hpp"

namespace nemo {

RoadProfile road_profile_from_string(const std::string& s) {
  if (s == "straight") return RoadProfile::straight;
  if (s == "turning") return RoadProfile::turning;
  if (s == "curving") return RoadProfile::curving;
  throw ConfigError("unknown road profile: " + s);
}

std::string to_string(RoadProfile p) {
  switch (p) {
    case RoadProfile::straight: return "straight";
    case RoadProfile::turning: return "turning";
    default: return "curving";
  }
}

namespace {

struct OffsetSample {
  Vec2 point;
  Vec2 normal;  // left of the driving direction
};

void set_class(World& world, const Vec2& p, std::uint8_t cls) {
  const GridCoord c = world.spec.point_to_grid(p);
  const std::int64_t h = static_cast<std::int64_t>(std::floor(c.v));
  const std::int64_t w = static_cast<std::int64_t>(std::floor(c.u));
  if (h < 0 || h >= world.spec.height_cells || w < 0 ||
      w >= world.spec.width_cells)
    return;
  world.gt[static_cast<size_t>(h * world.spec.width_cells + w)] = cls;
}

void stroke_offset_polyline(World& world, double offset, std::uint8_t cls) {
  const int width = std::max(1, world.cfg.stroke_cells);
  const double res = world.spec.resolution;
  for (size_t i = 0; i < world.centerline.size(); ++i) {
    const double th = world.heading[i];
    const Vec2 n{-std::sin(th), std::cos(th)};
    for (int j = 0; j < width; ++j) {
      const double o = offset + (j - 0.5 * (width - 1)) * res;
      set_class(world,
                {world.centerline[i].x + o * n.x,
                 world.centerline[i].y + o * n.y},
                cls);
    }
  }
}

void fill_convex_quad(World& world, const Vec2 quad[4], std::uint8_t cls) {
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (int i = 0; i < 4; ++i) {
    const GridCoord c = world.spec.point_to_grid(quad[i]);
    umin = std::min(umin, c.u);
    umax = std::max(umax, c.u);
    vmin = std::min(vmin, c.v);
    vmax = std::max(vmax, c.v);
  }
  const std::int64_t h0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(vmin)));
  const std::int64_t h1 = std::min<std::int64_t>(world.spec.height_cells - 1,
                                                 static_cast<std::int64_t>(std::ceil(vmax)));
  const std::int64_t w0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(umin)));
  const std::int64_t w1 = std::min<std::int64_t>(world.spec.width_cells - 1,
                                                 static_cast<std::int64_t>(std::ceil(umax)));
  for (std::int64_t h = h0; h <= h1; ++h)
    for (std::int64_t w = w0; w <= w1; ++w) {
      const Vec2 p = world.spec.cell_center(static_cast<int>(h), static_cast<int>(w));
      bool pos = false, neg = false;
      for (int i = 0; i < 4; ++i) {
        const Vec2& a = quad[i];
        const Vec2& b = quad[(i + 1) % 4];
        const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if (cross > 0) pos = true;
        if (cross < 0) neg = true;
      }
      if (pos && neg) continue;
      world.gt[static_cast<size_t>(h * world.spec.width_cells + w)] = cls;
    }
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
  if (cfg.extent_m <= 0 || cfg.resolution <= 0)
    throw ConfigError("world extent and resolution must be positive");
  if (cfg.lanes < 1) throw ConfigError("world needs at least one lane");

  World world;
  world.cfg = cfg;
  const int cells = static_cast<int>(std::llround(cfg.extent_m / cfg.resolution));
  world.spec.height_cells = cells;
  world.spec.width_cells = cells;
  world.spec.resolution = cfg.resolution;
  world.spec.origin_x = cfg.extent_m / 2.0;
  world.spec.origin_y = cfg.extent_m / 2.0;
  world.spec.frame_tag = FrameTag::world;
  world.gt.assign(static_cast<size_t>(world.spec.cell_count()), 0);

  Rng rng(cfg.seed);
  double turn_sign = 1.0;
  if (cfg.profile == RoadProfile::turning)
    turn_sign = (rng() & 1u) ? 1.0 : -1.0;

  // March the centerline from the left edge; curvature shape depends on the
  // profile. Stops short of the world border.
  const double ds = cfg.resolution / 2.0;
  const double limit = 0.47 * cfg.extent_m;
  double x = -0.45 * cfg.extent_m, y = 0.0, th = 0.0, s = 0.0;
  while (std::abs(x) <= limit && std::abs(y) <= limit &&
         s <= 2.5 * cfg.extent_m) {
    world.centerline.push_back({x, y});
    world.heading.push_back(th);
    double kappa = 0.0;
    if (cfg.profile == RoadProfile::turning && s > 0.35 * cfg.extent_m)
      kappa = turn_sign * cfg.max_curvature;
    else if (cfg.profile == RoadProfile::curving)
      kappa = cfg.max_curvature * std::sin(2.0 * kPi * s / (0.8 * cfg.extent_m));
    x += ds * std::cos(th);
    y += ds * std::sin(th);
    th += ds * kappa;
    s += ds;
  }
  if (world.centerline.size() < 2)
    throw ConfigError("world extent too small for a road");

  const double half = cfg.lanes * cfg.lane_width_m / 2.0;

  for (int i = 1; i < cfg.lanes; ++i)
    stroke_offset_polyline(world, -half + i * cfg.lane_width_m, 1);

  // Pedestrian crossings: transverse quads at stratified arc positions.
  const size_t n_pts = world.centerline.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < cfg.crossings; ++i) {
    const double frac =
        0.25 + 0.5 * (static_cast<double>(i) + 0.8 * unit(rng)) /
                   static_cast<double>(cfg.crossings);
    const size_t j = std::min(n_pts - 1, static_cast<size_t>(frac * static_cast<double>(n_pts)));
    const Vec2 c = world.centerline[j];
    const double hth = world.heading[j];
    const Vec2 along{std::cos(hth), std::sin(hth)};
    const Vec2 normal{-std::sin(hth), std::cos(hth)};
    const double d = cfg.crossing_depth_m / 2.0;
    const Vec2 quad[4] = {
        {c.x - d * along.x - half * normal.x, c.y - d * along.y - half * normal.y},
        {c.x + d * along.x - half * normal.x, c.y + d * along.y - half * normal.y},
        {c.x + d * along.x + half * normal.x, c.y + d * along.y + half * normal.y},
        {c.x - d * along.x + half * normal.x, c.y - d * along.y + half * normal.y}};
    fill_convex_quad(world, quad, 2);
  }

  stroke_offset_polyline(world, half, 3);
  stroke_offset_polyline(world, -half, 3);
  return world;
}

std::vector<Pose> generate_trajectory(const World& world, int n_frames,
                                      double step_m, double margin_m) {
  if (n_frames < 1 || step_m <= 0)
    throw ConfigError("trajectory needs n_frames >= 1 and step_m > 0");
  const double offset = -world.cfg.lane_width_m / 2.0;  // drive in a lane
  const double limit = world.cfg.extent_m / 2.0 - margin_m;
  const double ds = world.cfg.resolution / 2.0;
  const size_t stride = std::max<size_t>(1, static_cast<size_t>(std::llround(step_m / ds)));

  std::vector<Pose> poses;
  for (size_t i = 0; i < world.centerline.size() && static_cast<int>(poses.size()) < n_frames;
       i += stride) {
    const double th = world.heading[i];
    const Vec2 n{-std::sin(th), std::cos(th)};
    Pose p;
    p.x = world.centerline[i].x + offset * n.x;
    p.y = world.centerline[i].y + offset * n.y;
    p.yaw = th;
    if (std::abs(p.x) > limit || std::abs(p.y) > limit) {
      if (poses.empty()) continue;  // still approaching the margin band
      break;
    }
    poses.push_back(p);
  }
  return poses;
}

std::uint8_t world_class_at(const World& world, const Vec2& p) {
  const GridCoord c = world.spec.point_to_grid(p);
  const std::int64_t h = static_cast<std::int64_t>(std::floor(c.v));
  const std::int64_t w = static_cast<std::int64_t>(std::floor(c.u));
  if (h < 0 || h >= world.spec.height_cells || w < 0 ||
      w >= world.spec.width_cells)
    return 0;
  return world.gt[static_cast<size_t>(h * world.spec.width_cells + w)];
}

FeatureFrame render_observation(const World& world, const Pose& pose,
                                const GridSpec& ego_spec, const ObsNoise& noise,
                                Rng& rng) {
  const int hc = ego_spec.height_cells, wc = ego_spec.width_cells;
  const std::int64_t cells = ego_spec.cell_count();

  std::vector<std::uint8_t> crop(static_cast<size_t>(cells), 0);
  for (int h = 0; h < hc; ++h)
    for (int w = 0; w < wc; ++w)
      crop[static_cast<size_t>(h * wc + w)] =
          world_class_at(world, apply_planar(pose, ego_spec.cell_center(h, w)));

  // Occlusion patches: rectangles flipped to background until the target
  // fraction of the plane is covered.
  if (noise.occlusion_fraction > 0.0) {
    std::vector<std::uint8_t> covered(static_cast<size_t>(cells), 0);
    const std::int64_t target = static_cast<std::int64_t>(
        noise.occlusion_fraction * static_cast<double>(cells));
    std::int64_t done = 0;
    std::uniform_int_distribution<int> side_h(std::max(2, hc / 10), std::max(3, hc / 5));
    std::uniform_int_distribution<int> side_w(std::max(2, wc / 10), std::max(3, wc / 5));
    while (done < target) {
      const int sh = side_h(rng);
      const int sw = side_w(rng);
      const int h0 = std::uniform_int_distribution<int>(0, std::max(0, hc - sh))(rng);
      const int w0 = std::uniform_int_distribution<int>(0, std::max(0, wc - sw))(rng);
      for (int h = h0; h < std::min(hc, h0 + sh); ++h)
        for (int w = w0; w < std::min(wc, w0 + sw); ++w) {
          const size_t i = static_cast<size_t>(h * wc + w);
          crop[i] = 0;
          if (!covered[i]) {
            covered[i] = 1;
            ++done;
          }
        }
    }
  }

  if (noise.speckle_rate > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> fg(1, kNumClasses - 1);
    for (std::int64_t i = 0; i < cells; ++i)
      if (unit(rng) < noise.speckle_rate)
        crop[static_cast<size_t>(i)] = static_cast<std::uint8_t>(fg(rng));
  }

  FeatureFrame obs = make_frame(ego_spec, kNumClasses);
  std::fill(obs.valid.begin(), obs.valid.end(), 1);
  for (std::int64_t i = 0; i < cells; ++i)
    obs.features[i * kNumClasses + crop[static_cast<size_t>(i)]] =
        static_cast<float>(noise.margin);

  if (noise.sigma_near > 0.0 || noise.sigma_far > 0.0) {
    const Vec2 far1 = ego_spec.grid_to_point(0, 0);
    const Vec2 far2 = ego_spec.grid_to_point(ego_spec.width_cells, ego_spec.height_cells);
    const double d_max = std::max(std::hypot(far1.x, far1.y), std::hypot(far2.x, far2.y));
    for (int h = 0; h < hc; ++h)
      for (int w = 0; w < wc; ++w) {
        const Vec2 p = ego_spec.cell_center(h, w);
        const double d = std::hypot(p.x, p.y);
        const double sigma =
            noise.sigma_near + (noise.sigma_far - noise.sigma_near) * (d / d_max);
        if (sigma <= 0.0) continue;
        std::normal_distribution<double> gauss(0.0, sigma);
        float* f = obs.features.data() + static_cast<std::int64_t>(h * wc + w) * kNumClasses;
        for (int c = 0; c < kNumClasses; ++c) f[c] += static_cast<float>(gauss(rng));
      }
  }
  return obs;
}

}  // namespace nemo
