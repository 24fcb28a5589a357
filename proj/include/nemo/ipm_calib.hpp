#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nemo/geometry.hpp"

// Inverse-perspective-mapping calibration of a forward camera against lane
// markings, plus ground-plane pixel-map stitching.
//
// Camera conventions: pixel u grows right, v grows down; the camera frame
// has +z along the optical axis, +x right, +y down. With zero rotation the
// optical axis points along ground +x at `height_m` above the z=0 plane.
// Positive pitch tilts the axis toward the ground; positive yaw turns it
// left (counterclockwise from above), matching the pose convention.

namespace nemo {

struct CameraIntrinsics {
  double focal = 700.0;  // pixels, same for both axes, zero distortion
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

struct ExtrinsicEstimate {
  double pitch = 0.0;     // radians
  double yaw = 0.0;       // radians; roll is fixed at zero
  double height_m = 1.5;  // camera height above the ground plane
};

// Left/right lane polylines in pixel coordinates from one key frame.
struct LanePairObservation {
  std::vector<Vec2> left;   // Vec2.x = u, Vec2.y = v
  std::vector<Vec2> right;
};

// Back-projects a pixel onto the z=0 ground plane, in the camera's own
// ground frame (origin under the camera). Rays at or above the horizon
// raise "no ground intersection".
Vec2 ipm_point(const Vec2& px, const CameraIntrinsics& intr,
               const ExtrinsicEstimate& ext);

// Forward projection of a ground point to pixels; errors when the point is
// not in front of the camera.
Vec2 project_to_image(const Vec2& ground, const CameraIntrinsics& intr,
                      const ExtrinsicEstimate& ext);

// Projects both lanes to the ground with the estimate's pitch (and zero
// yaw), fits the symmetry axis through arc-length-matched midpoints, and
// returns the rotation that aligns it with the forward axis. A camera
// mounted yawed to the left yields a positive angle.
double estimate_yaw(const LanePairObservation& pair,
                    const CameraIntrinsics& intr,
                    const ExtrinsicEstimate& ext_with_pitch);

// Golden-section search over pitch in [-15 deg, +25 deg] (0.01 deg
// tolerance) minimizing the angle between the two ground-projected lane
// direction fits; `yaw` is applied during projection. Errors when no pitch
// brings the residual under 1 degree.
double estimate_pitch(const LanePairObservation& pair,
                      const CameraIntrinsics& intr, double yaw);

// Alternates pitch and yaw estimation until both settle.
ExtrinsicEstimate calibrate(const LanePairObservation& pair,
                            const CameraIntrinsics& intr, double height_m);

struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, channel-last

  const std::uint8_t* at(int v, int u) const {
    return pixels.data() +
           (static_cast<size_t>(v) * static_cast<size_t>(width) +
            static_cast<size_t>(u)) *
               static_cast<size_t>(channels);
  }
};

struct StitchFrame {
  ImageU8 image;
  Pose pose;  // vehicle pose in the world frame
};

// Densifies a low-rate trajectory by `factor`: positions interpolate
// linearly, angles along the shortest arc.
std::vector<Pose> interpolate_poses(const std::vector<Pose>& keys, int factor);

// IPM-projects each frame onto the ground raster in list order; overlapping
// cells keep the most recent frame's pixels. Untouched cells stay zero;
// `touched` reports coverage.
struct StitchResult {
  std::vector<std::uint8_t> values;   // H*W*C
  std::vector<std::uint8_t> touched;  // H*W
};

StitchResult stitch_pixel_map(const std::vector<StitchFrame>& frames,
                              const CameraIntrinsics& intr,
                              const ExtrinsicEstimate& ext,
                              const GridSpec& ground_spec);

}  // namespace nemo
