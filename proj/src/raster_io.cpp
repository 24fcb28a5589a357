#include "nemo/raster_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nemo/errors.hpp"

namespace nemo {

namespace {

constexpr char kMagic[4] = {'N', 'E', 'M', 'O'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError("truncated raster file: " + path);
  return v;
}

void write_header(std::ofstream& f, std::uint8_t dtype, std::int64_t channels,
                  const GridSpec& spec) {
  f.write(kMagic, 4);
  put<std::uint8_t>(f, kVersion);
  put<std::uint8_t>(f, dtype);
  put<std::uint16_t>(f, static_cast<std::uint16_t>(channels));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(spec.height_cells));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(spec.width_cells));
  put<double>(f, spec.origin_x);
  put<double>(f, spec.origin_y);
  put<double>(f, spec.resolution);
}

}  // namespace

void save_feature_raster(const std::string& path, const GridSpec& spec,
                         const Tensor<float>& features,
                         const std::vector<std::uint8_t>& mask) {
  const std::int64_t cells = spec.cell_count();
  if (features.rank() != 3 || features.dim(0) != spec.height_cells ||
      features.dim(1) != spec.width_cells)
    throw std::invalid_argument("save_feature_raster: features " +
                                shape_str(features) + " do not match spec");
  if (static_cast<std::int64_t>(mask.size()) != cells)
    throw std::invalid_argument("save_feature_raster: mask size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path);
  write_header(f, 0, features.dim(2), spec);
  f.write(reinterpret_cast<const char*>(features.data()),
          static_cast<std::streamsize>(features.numel() * 4));
  std::vector<std::uint8_t> packed(static_cast<size_t>((cells + 7) / 8), 0);
  for (std::int64_t i = 0; i < cells; ++i)
    if (mask[static_cast<size_t>(i)])
      packed[static_cast<size_t>(i / 8)] |= static_cast<std::uint8_t>(1u << (i % 8));
  f.write(reinterpret_cast<const char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  if (!f) throw DataError("write failed: " + path);
}

void save_class_raster(const std::string& path, const GridSpec& spec,
                       const std::vector<std::uint8_t>& values,
                       std::int64_t channels) {
  if (static_cast<std::int64_t>(values.size()) != spec.cell_count() * channels)
    throw std::invalid_argument("save_class_raster: value count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path);
  write_header(f, 1, channels, spec);
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size()));
  if (!f) throw DataError("write failed: " + path);
}

Raster load_raster(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open raster: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad raster magic: " + path);
  const auto version = get<std::uint8_t>(f, path);
  if (version != kVersion)
    throw DataError("unsupported raster version in " + path);

  Raster r;
  r.dtype = get<std::uint8_t>(f, path);
  r.channels = get<std::uint16_t>(f, path);
  r.spec.height_cells = static_cast<int>(get<std::uint32_t>(f, path));
  r.spec.width_cells = static_cast<int>(get<std::uint32_t>(f, path));
  r.spec.origin_x = get<double>(f, path);
  r.spec.origin_y = get<double>(f, path);
  r.spec.resolution = get<double>(f, path);
  r.spec.frame_tag = FrameTag::world;

  const std::int64_t cells = r.spec.cell_count();
  if (r.dtype == 0) {
    r.f32 = Tensor<float>({r.spec.height_cells, r.spec.width_cells, r.channels});
    f.read(reinterpret_cast<char*>(r.f32.data()),
           static_cast<std::streamsize>(r.f32.numel() * 4));
    if (!f) throw DataError("truncated raster payload: " + path);
    std::vector<std::uint8_t> packed(static_cast<size_t>((cells + 7) / 8));
    f.read(reinterpret_cast<char*>(packed.data()),
           static_cast<std::streamsize>(packed.size()));
    if (!f) throw DataError("truncated raster mask: " + path);
    r.mask.assign(static_cast<size_t>(cells), 0);
    for (std::int64_t i = 0; i < cells; ++i)
      r.mask[static_cast<size_t>(i)] =
          (packed[static_cast<size_t>(i / 8)] >> (i % 8)) & 1u;
  } else if (r.dtype == 1) {
    r.u8.assign(static_cast<size_t>(cells * r.channels), 0);
    f.read(reinterpret_cast<char*>(r.u8.data()),
           static_cast<std::streamsize>(r.u8.size()));
    if (!f) throw DataError("truncated raster payload: " + path);
  } else {
    throw DataError("unknown raster dtype in " + path);
  }
  return r;
}

void save_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for write: " + path);
  char line[256];
  for (size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    std::snprintf(line, sizeof(line), "%zu %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  i, p.roll, p.pitch, p.yaw, p.x, p.y, p.z);
    f << line;
  }
  if (!f) throw DataError("write failed: " + path);
}

std::vector<Pose> load_poses(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open pose file: " + path);
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::size_t idx;
    Pose p;
    if (!(is >> idx >> p.roll >> p.pitch >> p.yaw >> p.x >> p.y >> p.z))
      throw DataError("malformed pose line in " + path + ": " + line);
    if (idx != poses.size())
      throw DataError("non-sequential frame index in " + path);
    poses.push_back(p);
  }
  return poses;
}

void save_polyline(const std::string& path, const std::vector<Vec2>& points) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for write: " + path);
  char line[128];
  for (const Vec2& p : points) {
    std::snprintf(line, sizeof(line), "%.17g %.17g\n", p.x, p.y);
    f << line;
  }
  if (!f) throw DataError("write failed: " + path);
}

std::vector<Vec2> load_polyline(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open polyline: " + path);
  std::vector<Vec2> pts;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    Vec2 p;
    if (!(is >> p.x >> p.y))
      throw DataError("malformed polyline line in " + path + ": " + line);
    pts.push_back(p);
  }
  return pts;
}

void save_kv(const std::string& path,
             const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for write: " + path);
  for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
  if (!f) throw DataError("write failed: " + path);
}

std::vector<std::pair<std::string, std::string>> load_kv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config: " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(f, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError("malformed config line in " + path + ": " + line);
    kv.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

std::string kv_get(const std::vector<std::pair<std::string, std::string>>& kv,
                   const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw DataError("missing config key: " + key);
}

void save_csv(const std::string& path,
              const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for write: " + path);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) f << ',';
      f << row[i];
    }
    f << '\n';
  }
  if (!f) throw DataError("write failed: " + path);
}

std::vector<std::vector<std::string>> load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open csv: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      row.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace nemo
