#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nemo/bigmap.hpp"
#include "nemo/geometry.hpp"
#include "nemo/tensor.hpp"

// "NEMO" raster container: magic, version u8=1, dtype u8 (0 = f32 features,
// 1 = u8 classes/pixels), channels u16, height u32, width u32, origin_x f64,
// origin_y f64, resolution f64, then the row-major channel-last
// little-endian payload. For dtype 0 an observation mask follows, packed
// LSB-first, 8 cells per byte in row-major cell order.

namespace nemo {

struct Raster {
  GridSpec spec;  // frame tag not stored in the file; defaults to world
  std::uint8_t dtype = 0;
  std::int64_t channels = 0;
  Tensor<float> f32;               // [H x W x C] when dtype 0
  std::vector<std::uint8_t> u8;    // H*W*C when dtype 1
  std::vector<std::uint8_t> mask;  // H*W when dtype 0
};

void save_feature_raster(const std::string& path, const GridSpec& spec,
                         const Tensor<float>& features,
                         const std::vector<std::uint8_t>& mask);

void save_class_raster(const std::string& path, const GridSpec& spec,
                       const std::vector<std::uint8_t>& values,
                       std::int64_t channels = 1);

Raster load_raster(const std::string& path);

// Pose text file: one line per frame, "frame_index roll pitch yaw x y z".
void save_poses(const std::string& path, const std::vector<Pose>& poses);
std::vector<Pose> load_poses(const std::string& path);

// Polyline text file: one point per line, "u v".
void save_polyline(const std::string& path, const std::vector<Vec2>& points);
std::vector<Vec2> load_polyline(const std::string& path);

// Plain key=value config files ('#' starts a comment line).
void save_kv(const std::string& path,
             const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> load_kv(const std::string& path);
std::string kv_get(const std::vector<std::pair<std::string, std::string>>& kv,
                   const std::string& key);

// Comma-separated tables; the first row is the header. Cells are plain
// (no quoting or embedded commas).
void save_csv(const std::string& path,
              const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> load_csv(const std::string& path);

}  // namespace nemo
