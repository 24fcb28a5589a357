#include "nemo/cli.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "nemo/errors.hpp"
#include "nemo/ipm_calib.hpp"
#include "nemo/pipeline.hpp"
#include "nemo/raster_io.hpp"

namespace nemo {

namespace fs = std::filesystem;

namespace {

std::uint64_t resolve_seed(long long flag_seed) {
  if (flag_seed >= 0) return static_cast<std::uint64_t>(flag_seed);
  if (const char* env = std::getenv("NEMO_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw ConfigError(std::string("NEMO_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return 1;
}

// Index-sharded loop; outputs must depend only on the index so results are
// identical for any worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 0; t < std::min(workers, n); ++t) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

std::string fmt6(double v) {
  char b[48];
  std::snprintf(b, sizeof(b), "%.6f", v);
  return b;
}

std::string fmtg(double v) {
  char b[48];
  std::snprintf(b, sizeof(b), "%.9g", v);
  return b;
}

std::vector<double> parse_number_list(const std::string& s, char sep) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    try {
      size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("malformed number list: " + s);
    }
  }
  return out;
}

std::vector<std::string> read_scene_list(const std::string& data_dir,
                                         const std::string& which,
                                         int max_scenes) {
  const std::string path =
      (fs::path(data_dir) / (which + "_scenes.txt")).string();
  std::ifstream f(path);
  if (!f) throw DataError("cannot open scene list: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (max_scenes > 0 && static_cast<int>(lines.size()) > max_scenes)
    lines.resize(static_cast<size_t>(max_scenes));
  if (lines.empty()) throw DataError("scene list is empty: " + path);
  return lines;
}

std::string scene_id(const std::string& rel_path) {
  return fs::path(rel_path).filename().string();
}

// Observation confidence scale recorded when the dataset was generated;
// learned growth renormalizes stored map state to this scale before feeding
// it back through the network.
double data_noise_margin(const std::string& data_dir) {
  const std::string path =
      (fs::path(data_dir) / "config_used.cfg").string();
  if (!fs::exists(path)) return 2.0;
  for (const auto& [k, v] : load_kv(path))
    if (k == "noise_margin") return std::stod(v);
  return 2.0;
}

void write_snapshot(const std::string& out_dir,
                    std::vector<std::pair<std::string, std::string>> kv) {
  fs::create_directories(out_dir);
  save_kv((fs::path(out_dir) / "config_used.cfg").string(), std::move(kv));
}

// ---- gen-data ----

struct GenArgs {
  std::string out;
  long long seed = -1;
  int workers = 1;
  int n_scenes = 10;
  double train_frac = 0.8;
  int n_frames = 20;
  double step_m = 1.2;
  std::string profile = "mixed";
  double extent_m = 60.0;
  double res = 0.3;
  int lanes = 2;
  double lane_width = 3.0;
  int crossings = 2;
  double max_curvature = 0.02;
  int stroke_cells = 1;
  int ego_h = 24;
  int ego_w = 32;
  double noise_margin = 2.0;
  double sigma_near = 0.0;
  double sigma_far = 0.0;
  double occlusion = 0.0;
  double speckle = 0.0;
};

int cmd_gen_data(const GenArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const GridSpec ego_spec = make_ego_spec(a.ego_h, a.ego_w, a.res);
  const double margin =
      0.5 * std::hypot(a.ego_h * a.res, a.ego_w * a.res) + 2.0;

  const std::vector<std::string> cycle = {"straight", "turning", "curving"};
  fs::create_directories(fs::path(a.out) / "scenes");

  parallel_for(a.n_scenes, a.workers, [&](int i) {
    WorldConfig wc;
    wc.extent_m = a.extent_m;
    wc.resolution = a.res;
    wc.lanes = a.lanes;
    wc.lane_width_m = a.lane_width;
    wc.crossings = a.crossings;
    wc.max_curvature = a.max_curvature;
    wc.stroke_cells = a.stroke_cells;
    wc.profile = road_profile_from_string(
        a.profile == "mixed" ? cycle[static_cast<size_t>(i % 3)] : a.profile);
    wc.seed = seed + 1000003ULL * static_cast<std::uint64_t>(i);

    const World world = generate_world(wc);
    const std::vector<Pose> poses =
        generate_trajectory(world, a.n_frames, a.step_m, margin);
    if (poses.empty())
      throw DataError("scene " + std::to_string(i) + " has no usable poses");

    ObsNoise noise;
    noise.margin = a.noise_margin;
    noise.sigma_near = a.sigma_near;
    noise.sigma_far = a.sigma_far;
    noise.occlusion_fraction = a.occlusion;
    noise.speckle_rate = a.speckle;

    Rng obs_rng(wc.seed + 1);
    const Scene scene = make_scene(world, poses, ego_spec, noise, obs_rng);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    save_scene(scene, (fs::path(a.out) / "scenes" / name).string());
  });

  const int n_train = static_cast<int>(std::llround(a.n_scenes * a.train_frac));
  std::ofstream train_list((fs::path(a.out) / "train_scenes.txt").string());
  std::ofstream eval_list((fs::path(a.out) / "eval_scenes.txt").string());
  for (int i = 0; i < a.n_scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scenes/scene_%03d", i);
    (i < n_train ? train_list : eval_list) << name << "\n";
  }
  train_list.close();
  eval_list.close();

  write_snapshot(a.out,
                 {{"command", "gen-data"},
                  {"seed", std::to_string(seed)},
                  {"n_scenes", std::to_string(a.n_scenes)},
                  {"train_frac", fmtg(a.train_frac)},
                  {"n_frames", std::to_string(a.n_frames)},
                  {"step_m", fmtg(a.step_m)},
                  {"profile", a.profile},
                  {"extent_m", fmtg(a.extent_m)},
                  {"res", fmtg(a.res)},
                  {"lanes", std::to_string(a.lanes)},
                  {"lane_width", fmtg(a.lane_width)},
                  {"crossings", std::to_string(a.crossings)},
                  {"max_curvature", fmtg(a.max_curvature)},
                  {"stroke_cells", std::to_string(a.stroke_cells)},
                  {"ego_h", std::to_string(a.ego_h)},
                  {"ego_w", std::to_string(a.ego_w)},
                  {"noise_margin", fmtg(a.noise_margin)},
                  {"sigma_near", fmtg(a.sigma_near)},
                  {"sigma_far", fmtg(a.sigma_far)},
                  {"occlusion", fmtg(a.occlusion)},
                  {"speckle", fmtg(a.speckle)},
                  {"workers", std::to_string(a.workers)}});
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string out;
  long long seed = -1;
  int workers = 1;
  int epochs = 6;
  int batch = 4;
  double lr = 1e-3;
  double wd = 1e-7;
  int clip_len = 4;
  int clip_stride = 4;
  int plane_cells = 384;
  std::string supervision = "many_to_one";
  bool lsa = true;
  bool blur = true;
  std::string stem = "conv3x3";
  std::string stem_channels = "64,128,256";
  long long hidden1 = 256;
  long long mlp1_out = 256;
  long long hidden2 = 128;
  long long mlp_mid = 64;
  int lsa_radius = 2;
  long long pe_dim = 16;
  long long attn_dim = 16;
  int max_scenes = 0;
};

TrainConfig train_config_from_args(const TrainArgs& a, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.weight_decay = a.wd;
  tc.clip_len = a.clip_len;
  tc.clip_stride = a.clip_stride;
  tc.plane_cells = a.plane_cells;
  tc.supervision = supervision_from_string(a.supervision);
  tc.lsa = a.lsa;
  tc.blur = a.blur;
  tc.seed = seed;

  if (a.stem == "conv3x3")
    tc.fusion.stem_mode = StemMode::conv3x3;
  else if (a.stem == "conv1x1")
    tc.fusion.stem_mode = StemMode::conv1x1;
  else if (a.stem == "none")
    tc.fusion.stem_mode = StemMode::none;
  else
    throw ConfigError("unknown stem mode: " + a.stem);

  const std::vector<double> ch = parse_number_list(a.stem_channels, ',');
  if (ch.size() != 3) throw ConfigError("stem_channels needs three values");
  for (int i = 0; i < 3; ++i)
    tc.fusion.stem_channels[static_cast<size_t>(i)] =
        static_cast<std::int64_t>(ch[static_cast<size_t>(i)]);
  tc.fusion.hidden1 = a.hidden1;
  tc.fusion.mlp1_out = a.mlp1_out;
  tc.fusion.hidden2 = a.hidden2;
  tc.fusion.mlp_mid = a.mlp_mid;

  tc.lsa_cfg.radius = a.lsa_radius;
  tc.lsa_cfg.pe_dim = a.pe_dim;
  tc.lsa_cfg.attn_dim = a.attn_dim;
  return tc;
}

int cmd_train(const TrainArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const TrainConfig tc = train_config_from_args(a, seed);

  std::vector<Scene> scenes;
  for (const std::string& rel : read_scene_list(a.data, "train", a.max_scenes))
    scenes.push_back(load_scene((fs::path(a.data) / rel).string()));

  Model model = make_model(tc.fusion, tc.lsa_cfg, tc.lsa, seed);
  const TrainResult result = train(model, scenes, tc);
  save_model(model, a.out);

  std::vector<std::vector<std::string>> rows = {{"epoch", "loss"}};
  for (size_t e = 0; e < result.epoch_loss.size(); ++e)
    rows.push_back({std::to_string(e), fmtg(result.epoch_loss[e])});
  save_csv((fs::path(a.out) / "loss.csv").string(), rows);

  write_snapshot(a.out,
                 {{"command", "train"},
                  {"seed", std::to_string(seed)},
                  {"data", a.data},
                  {"epochs", std::to_string(a.epochs)},
                  {"batch", std::to_string(a.batch)},
                  {"lr", fmtg(a.lr)},
                  {"wd", fmtg(a.wd)},
                  {"clip_len", std::to_string(a.clip_len)},
                  {"clip_stride", std::to_string(a.clip_stride)},
                  {"plane_cells", std::to_string(a.plane_cells)},
                  {"supervision", a.supervision},
                  {"lsa", a.lsa ? "1" : "0"},
                  {"blur", a.blur ? "1" : "0"},
                  {"stem", a.stem},
                  {"stem_channels", a.stem_channels},
                  {"hidden1", std::to_string(a.hidden1)},
                  {"mlp1_out", std::to_string(a.mlp1_out)},
                  {"hidden2", std::to_string(a.hidden2)},
                  {"mlp_mid", std::to_string(a.mlp_mid)},
                  {"lsa_radius", std::to_string(a.lsa_radius)},
                  {"pe_dim", std::to_string(a.pe_dim)},
                  {"attn_dim", std::to_string(a.attn_dim)},
                  {"max_scenes", std::to_string(a.max_scenes)},
                  {"workers", std::to_string(a.workers)}});
  return 0;
}

// ---- grow ----

struct GrowArgs {
  std::string data;
  std::string out;
  std::string model_dir;
  std::string scenes = "eval";
  std::string fusion = "overwrite";
  std::string noise = "0,0";
  long long seed = -1;
  int workers = 1;
  int max_scenes = 0;
  bool expect_exact = false;
};

int cmd_grow(const GrowArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const FuseOp op = fuse_op_from_string(a.fusion);
  const std::vector<double> sig = parse_number_list(a.noise, ',');
  if (sig.size() != 2)
    throw ConfigError("noise must be \"sigma_deg,sigma_m\": " + a.noise);
  if (op == FuseOp::learned && a.model_dir.empty())
    throw ConfigError("learned fusion requires --model");

  const std::vector<std::string> list =
      read_scene_list(a.data, a.scenes, a.max_scenes);
  const double state_margin = data_noise_margin(a.data);
  fs::create_directories(a.out);

  std::vector<char> exact(list.size(), 1);
  parallel_for(static_cast<int>(list.size()), a.workers, [&](int i) {
    const Scene scene =
        load_scene((fs::path(a.data) / list[static_cast<size_t>(i)]).string());
    GridSpec ego_spec = scene.obs.front().spec;
    ego_spec.frame_tag = FrameTag::ego;

    // Each task loads its own model copy: fusion forward caches are
    // stateful, so a shared instance is not safe across workers.
    Model model;
    Model* model_ptr = nullptr;
    GrowConfig gc;
    gc.op = op;
    gc.sigma_deg = sig[0];
    gc.sigma_m = sig[1];
    gc.state_margin = state_margin;
    gc.seed = seed + 31337ULL * static_cast<std::uint64_t>(i);
    if (op == FuseOp::learned) {
      model = load_model(a.model_dir);
      model_ptr = &model;
      gc.blur = model.blur_input;
      gc.lsa = model.lsa_enabled;
    }

    const BigFeatureMap map = grow_map(scene, ego_spec, gc, model_ptr);
    const std::string id = scene_id(list[static_cast<size_t>(i)]);
    save_feature_raster((fs::path(a.out) / (id + "_map.nemo")).string(),
                        map.spec, map.features, map.observed);
    save_class_raster((fs::path(a.out) / (id + "_decoded.nemo")).string(),
                      map.spec, decode_semantic(map));
    if (a.expect_exact && evaluate_map(map, scene).miou != 1.0)
      exact[static_cast<size_t>(i)] = 0;
  });

  write_snapshot(a.out, {{"command", "grow"},
                         {"seed", std::to_string(seed)},
                         {"data", a.data},
                         {"model", a.model_dir},
                         {"scenes", a.scenes},
                         {"fusion", a.fusion},
                         {"noise", a.noise},
                         {"max_scenes", std::to_string(a.max_scenes)},
                         {"expect_exact", a.expect_exact ? "1" : "0"},
                         {"workers", std::to_string(a.workers)}});

  for (size_t i = 0; i < exact.size(); ++i)
    if (!exact[i]) {
      std::cerr << "self-test failed: " << scene_id(list[i])
                << " does not reproduce ground truth exactly\n";
      return 1;
    }
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string data;
  std::string maps;
  std::string out;
  std::string scenes = "eval";
  long long seed = -1;
  int workers = 1;
  int max_scenes = 0;
};

int cmd_eval(const EvalArgs& a) {
  const std::string out_dir = a.out.empty() ? a.maps : a.out;
  const std::vector<std::string> list =
      read_scene_list(a.data, a.scenes, a.max_scenes);

  std::vector<IouResult> results(list.size());
  parallel_for(static_cast<int>(list.size()), a.workers, [&](int i) {
    const Scene scene =
        load_scene((fs::path(a.data) / list[static_cast<size_t>(i)]).string());
    const std::string id = scene_id(list[static_cast<size_t>(i)]);
    Raster r = load_raster((fs::path(a.maps) / (id + "_map.nemo")).string());
    if (r.dtype != 0)
      throw DataError("map raster has wrong dtype: " + id);
    BigFeatureMap map;
    map.spec = r.spec;
    map.features = std::move(r.f32);
    map.observed = std::move(r.mask);
    results[static_cast<size_t>(i)] = evaluate_map(map, scene);
  });

  std::vector<std::vector<std::string>> rows = {
      {"scene_id", "divider", "ped_crossing", "boundary", "miou"}};
  std::array<double, kNumClasses> sums{};
  std::array<int, kNumClasses> counts{};
  double miou_sum = 0.0;
  for (size_t i = 0; i < results.size(); ++i) {
    const IouResult& r = results[i];
    std::vector<std::string> row = {scene_id(list[i])};
    for (int c = 1; c < kNumClasses; ++c) {
      if (r.has[static_cast<size_t>(c)]) {
        row.push_back(fmt6(r.iou[static_cast<size_t>(c)]));
        sums[static_cast<size_t>(c)] += r.iou[static_cast<size_t>(c)];
        counts[static_cast<size_t>(c)] += 1;
      } else {
        row.push_back("nan");
      }
    }
    row.push_back(fmt6(r.miou));
    miou_sum += r.miou;
    rows.push_back(std::move(row));
  }
  std::vector<std::string> mean_row = {"mean"};
  for (int c = 1; c < kNumClasses; ++c)
    mean_row.push_back(counts[static_cast<size_t>(c)]
                           ? fmt6(sums[static_cast<size_t>(c)] /
                                  counts[static_cast<size_t>(c)])
                           : "nan");
  mean_row.push_back(fmt6(miou_sum / static_cast<double>(results.size())));
  rows.push_back(std::move(mean_row));

  fs::create_directories(out_dir);
  save_csv((fs::path(out_dir) / "results.csv").string(), rows);
  write_snapshot(out_dir, {{"command", "eval"},
                           {"data", a.data},
                           {"maps", a.maps},
                           {"scenes", a.scenes},
                           {"max_scenes", std::to_string(a.max_scenes)},
                           {"workers", std::to_string(a.workers)}});
  return 0;
}

// ---- noise-sweep ----

struct SweepArgs {
  std::string data;
  std::string model_dir;
  std::string out;
  std::string scenes = "eval";
  std::string levels = "0,0;0.1,0.1;0.5,0.5";
  long long seed = -1;
  int workers = 1;
  int max_scenes = 0;
};

int cmd_noise_sweep(const SweepArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  if (a.model_dir.empty())
    throw ConfigError("noise-sweep requires --model for the learned operator");

  std::vector<std::pair<double, double>> levels;
  {
    std::stringstream ss(a.levels);
    std::string item;
    while (std::getline(ss, item, ';')) {
      const std::vector<double> v = parse_number_list(item, ',');
      if (v.size() != 2)
        throw ConfigError("malformed noise level entry: " + item);
      levels.emplace_back(v[0], v[1]);
    }
  }
  if (levels.empty()) throw ConfigError("no noise levels given");

  const std::vector<std::string> list =
      read_scene_list(a.data, a.scenes, a.max_scenes);
  const double state_margin = data_noise_margin(a.data);
  std::vector<Scene> scenes(list.size());
  for (size_t i = 0; i < list.size(); ++i)
    scenes[i] = load_scene((fs::path(a.data) / list[i]).string());

  const FuseOp ops[3] = {FuseOp::overwrite, FuseOp::maxpool, FuseOp::learned};
  std::vector<std::vector<std::string>> rows = {
      {"operator", "sigma_deg", "sigma_m", "metric", "value"}};

  for (const FuseOp op : ops) {
    for (size_t l = 0; l < levels.size(); ++l) {
      std::vector<IouResult> results(scenes.size());
      parallel_for(static_cast<int>(scenes.size()), a.workers, [&](int i) {
        const Scene& scene = scenes[static_cast<size_t>(i)];
        GridSpec ego_spec = scene.obs.front().spec;
        ego_spec.frame_tag = FrameTag::ego;

        Model model;
        Model* model_ptr = nullptr;
        GrowConfig gc;
        gc.op = op;
        gc.sigma_deg = levels[l].first;
        gc.sigma_m = levels[l].second;
        gc.state_margin = state_margin;
        // Seed depends on scene and level but not operator, so every
        // operator sees identical pose perturbations.
        gc.seed = seed + 31337ULL * static_cast<std::uint64_t>(i) +
                  7919ULL * static_cast<std::uint64_t>(l);
        if (op == FuseOp::learned) {
          model = load_model(a.model_dir);
          model_ptr = &model;
          gc.blur = model.blur_input;
          gc.lsa = model.lsa_enabled;
        }
        results[static_cast<size_t>(i)] =
            evaluate_map(grow_map(scene, ego_spec, gc, model_ptr), scene);
      });

      std::array<double, kNumClasses> sums{};
      std::array<int, kNumClasses> counts{};
      double miou_sum = 0.0;
      for (const IouResult& r : results) {
        for (int c = 1; c < kNumClasses; ++c)
          if (r.has[static_cast<size_t>(c)]) {
            sums[static_cast<size_t>(c)] += r.iou[static_cast<size_t>(c)];
            counts[static_cast<size_t>(c)] += 1;
          }
        miou_sum += r.miou;
      }
      const char* metric_names[4] = {"divider", "ped_crossing", "boundary",
                                     "miou"};
      for (int m = 0; m < 4; ++m) {
        double value;
        if (m == 3) {
          value = miou_sum / static_cast<double>(results.size());
        } else {
          const int c = m + 1;
          value = counts[static_cast<size_t>(c)]
                      ? sums[static_cast<size_t>(c)] / counts[static_cast<size_t>(c)]
                      : std::nan("");
        }
        rows.push_back({to_string(op), fmtg(levels[l].first),
                        fmtg(levels[l].second), metric_names[m], fmt6(value)});
      }
    }
  }

  fs::create_directories(a.out);
  save_csv((fs::path(a.out) / "sweep.csv").string(), rows);
  write_snapshot(a.out, {{"command", "noise-sweep"},
                         {"seed", std::to_string(seed)},
                         {"data", a.data},
                         {"model", a.model_dir},
                         {"scenes", a.scenes},
                         {"levels", a.levels},
                         {"max_scenes", std::to_string(a.max_scenes)},
                         {"workers", std::to_string(a.workers)}});
  return 0;
}

// ---- calib ----

struct CalibArgs {
  std::string out;
  std::string lanes_left;
  std::string lanes_right;
  bool synthetic = false;
  double true_yaw_deg = 2.0;
  double true_pitch_deg = 5.0;
  double focal = 700.0;
  int img_w = 1280;
  int img_h = 720;
  double cx = -1.0;
  double cy = -1.0;
  double cam_height = 1.5;
  double lane_half = 1.85;
  double lane_x0 = 5.0;
  double lane_x1 = 30.0;
  bool stitch = true;
  double stitch_res = 0.15;
  int stitch_cells = 200;
  int interp_factor = 30;
};

// Forward-projects straight lanes at y = +/-lane_half through the true
// camera, keeping pixels inside the image.
LanePairObservation synth_lane_pair(const CalibArgs& a,
                                    const CameraIntrinsics& intr,
                                    const ExtrinsicEstimate& truth) {
  LanePairObservation pair;
  for (double x = a.lane_x0; x <= a.lane_x1 + 1e-9; x += 0.5) {
    for (int side = 0; side < 2; ++side) {
      const Vec2 ground{x, side == 0 ? a.lane_half : -a.lane_half};
      Vec2 px;
      try {
        px = project_to_image(ground, intr, truth);
      } catch (const DataError&) {
        continue;
      }
      if (px.x < 0 || px.x >= intr.width || px.y < 0 || px.y >= intr.height)
        continue;
      (side == 0 ? pair.left : pair.right).push_back(px);
    }
  }
  if (pair.left.size() < 2 || pair.right.size() < 2)
    throw DataError("synthetic lane fixture leaves the image frame");
  return pair;
}

ImageU8 synth_image(const CameraIntrinsics& intr, int frame_index) {
  ImageU8 img;
  img.width = intr.width;
  img.height = intr.height;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      std::uint8_t* p = img.pixels.data() +
                        (static_cast<size_t>(v) * img.width + u) * 3;
      p[0] = static_cast<std::uint8_t>(u * 255 / std::max(1, img.width - 1));
      p[1] = static_cast<std::uint8_t>(v * 255 / std::max(1, img.height - 1));
      p[2] = static_cast<std::uint8_t>((frame_index * 37) & 0xff);
    }
  return img;
}

int cmd_calib(const CalibArgs& a) {
  CameraIntrinsics intr;
  intr.focal = a.focal;
  intr.width = a.img_w;
  intr.height = a.img_h;
  intr.cx = a.cx >= 0 ? a.cx : a.img_w / 2.0;
  intr.cy = a.cy >= 0 ? a.cy : a.img_h / 2.0;
  if (intr.focal <= 0) throw ConfigError("focal length must be positive");

  LanePairObservation pair;
  ExtrinsicEstimate truth;
  truth.height_m = a.cam_height;
  if (a.synthetic) {
    truth.yaw = deg_to_rad(a.true_yaw_deg);
    truth.pitch = deg_to_rad(a.true_pitch_deg);
    pair = synth_lane_pair(a, intr, truth);
  } else {
    if (a.lanes_left.empty() || a.lanes_right.empty())
      throw ConfigError("calib needs --lanes-left/--lanes-right or --synthetic");
    pair.left = load_polyline(a.lanes_left);
    pair.right = load_polyline(a.lanes_right);
  }

  const ExtrinsicEstimate est = calibrate(pair, intr, a.cam_height);

  fs::create_directories(a.out);
  std::vector<std::pair<std::string, std::string>> calib_kv = {
      {"roll_deg", "0"},
      {"pitch_deg", fmtg(rad_to_deg(est.pitch))},
      {"yaw_deg", fmtg(rad_to_deg(est.yaw))},
      {"height_m", fmtg(est.height_m)}};
  if (a.synthetic) {
    calib_kv.emplace_back("true_pitch_deg", fmtg(a.true_pitch_deg));
    calib_kv.emplace_back("true_yaw_deg", fmtg(a.true_yaw_deg));
    calib_kv.emplace_back(
        "pitch_err_deg", fmtg(std::abs(rad_to_deg(est.pitch) - a.true_pitch_deg)));
    calib_kv.emplace_back(
        "yaw_err_deg", fmtg(std::abs(rad_to_deg(est.yaw) - a.true_yaw_deg)));
  }
  save_kv((fs::path(a.out) / "calib.cfg").string(), calib_kv);

  if (a.stitch && a.synthetic) {
    std::vector<Pose> keys(3);
    for (int i = 0; i < 3; ++i) keys[static_cast<size_t>(i)].x = 5.0 * i;
    const std::vector<Pose> dense = interpolate_poses(keys, a.interp_factor);
    std::vector<StitchFrame> frames;
    frames.reserve(dense.size());
    for (size_t i = 0; i < dense.size(); ++i)
      frames.push_back({synth_image(intr, static_cast<int>(i)), dense[i]});

    GridSpec ground;
    ground.height_cells = a.stitch_cells;
    ground.width_cells = a.stitch_cells;
    ground.resolution = a.stitch_res;
    ground.frame_tag = FrameTag::world;
    ground.origin_x = 0.75 * a.stitch_cells * a.stitch_res;
    ground.origin_y = 0.5 * a.stitch_cells * a.stitch_res;

    const StitchResult stitched = stitch_pixel_map(frames, intr, est, ground);
    save_class_raster((fs::path(a.out) / "stitched.nemo").string(), ground,
                      stitched.values, 3);
  }

  write_snapshot(a.out,
                 {{"command", "calib"},
                  {"synthetic", a.synthetic ? "1" : "0"},
                  {"lanes_left", a.lanes_left},
                  {"lanes_right", a.lanes_right},
                  {"true_yaw_deg", fmtg(a.true_yaw_deg)},
                  {"true_pitch_deg", fmtg(a.true_pitch_deg)},
                  {"focal", fmtg(a.focal)},
                  {"img_w", std::to_string(a.img_w)},
                  {"img_h", std::to_string(a.img_h)},
                  {"cam_height", fmtg(a.cam_height)},
                  {"stitch", a.stitch ? "1" : "0"},
                  {"stitch_res", fmtg(a.stitch_res)},
                  {"stitch_cells", std::to_string(a.stitch_cells)},
                  {"interp_factor", std::to_string(a.interp_factor)}});
  return 0;
}

void add_common(CLI::App* sub, long long* seed, int* workers) {
  sub->set_config("--config", "", "key=value config file; flags override it");
  sub->add_option("--seed", *seed,
                  "rng seed; -1 defers to NEMO_SEED, then 1");
  sub->add_option("--workers", *workers, "scene-level worker threads");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"growable BEV semantic map: data, training, fusion, calibration"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* sub_gen = app.add_subcommand("gen-data", "generate synthetic scenes");
  add_common(sub_gen, &gen.seed, &gen.workers);
  sub_gen->add_option("--out", gen.out, "output directory")->required();
  sub_gen->add_option("--n-scenes", gen.n_scenes);
  sub_gen->add_option("--train-frac", gen.train_frac);
  sub_gen->add_option("--n-frames", gen.n_frames);
  sub_gen->add_option("--step-m", gen.step_m);
  sub_gen->add_option("--profile", gen.profile,
                      "straight|turning|curving|mixed");
  sub_gen->add_option("--extent-m", gen.extent_m);
  sub_gen->add_option("--res", gen.res);
  sub_gen->add_option("--lanes", gen.lanes);
  sub_gen->add_option("--lane-width", gen.lane_width);
  sub_gen->add_option("--crossings", gen.crossings);
  sub_gen->add_option("--max-curvature", gen.max_curvature);
  sub_gen->add_option("--stroke-cells", gen.stroke_cells);
  sub_gen->add_option("--ego-h", gen.ego_h);
  sub_gen->add_option("--ego-w", gen.ego_w);
  sub_gen->add_option("--noise-margin", gen.noise_margin);
  sub_gen->add_option("--sigma-near", gen.sigma_near);
  sub_gen->add_option("--sigma-far", gen.sigma_far);
  sub_gen->add_option("--occlusion", gen.occlusion);
  sub_gen->add_option("--speckle", gen.speckle);

  TrainArgs tr;
  CLI::App* sub_train = app.add_subcommand("train", "train the fusion model");
  add_common(sub_train, &tr.seed, &tr.workers);
  sub_train->add_option("--data", tr.data, "gen-data output directory")->required();
  sub_train->add_option("--out", tr.out, "output directory")->required();
  sub_train->add_option("--epochs", tr.epochs);
  sub_train->add_option("--batch", tr.batch);
  sub_train->add_option("--lr", tr.lr);
  sub_train->add_option("--wd", tr.wd);
  sub_train->add_option("--clip-len", tr.clip_len);
  sub_train->add_option("--clip-stride", tr.clip_stride);
  sub_train->add_option("--plane-cells", tr.plane_cells);
  sub_train->add_option("--supervision", tr.supervision,
                        "many_to_one|many_to_many");
  sub_train->add_option("--lsa", tr.lsa);
  sub_train->add_option("--blur", tr.blur);
  sub_train->add_option("--stem", tr.stem, "conv3x3|conv1x1|none");
  sub_train->add_option("--stem-channels", tr.stem_channels);
  sub_train->add_option("--hidden1", tr.hidden1);
  sub_train->add_option("--mlp1-out", tr.mlp1_out);
  sub_train->add_option("--hidden2", tr.hidden2);
  sub_train->add_option("--mlp-mid", tr.mlp_mid);
  sub_train->add_option("--lsa-radius", tr.lsa_radius);
  sub_train->add_option("--pe-dim", tr.pe_dim);
  sub_train->add_option("--attn-dim", tr.attn_dim);
  sub_train->add_option("--max-scenes", tr.max_scenes);

  GrowArgs gr;
  CLI::App* sub_grow = app.add_subcommand("grow", "grow maps over scenes");
  add_common(sub_grow, &gr.seed, &gr.workers);
  sub_grow->add_option("--data", gr.data)->required();
  sub_grow->add_option("--out", gr.out)->required();
  sub_grow->add_option("--model", gr.model_dir, "trained model directory");
  sub_grow->add_option("--scenes", gr.scenes, "train|eval list");
  sub_grow->add_option("--fusion", gr.fusion, "overwrite|maxpool|learned");
  sub_grow->add_option("--noise", gr.noise, "sigma_deg,sigma_m");
  sub_grow->add_option("--max-scenes", gr.max_scenes);
  sub_grow->add_flag("--expect-exact", gr.expect_exact,
                     "exit 1 unless every map decodes to exact ground truth");

  EvalArgs ev;
  CLI::App* sub_eval = app.add_subcommand("eval", "score grown maps");
  add_common(sub_eval, &ev.seed, &ev.workers);
  sub_eval->add_option("--data", ev.data)->required();
  sub_eval->add_option("--maps", ev.maps)->required();
  sub_eval->add_option("--out", ev.out, "defaults to --maps");
  sub_eval->add_option("--scenes", ev.scenes, "train|eval list");
  sub_eval->add_option("--max-scenes", ev.max_scenes);

  SweepArgs sw;
  CLI::App* sub_sweep =
      app.add_subcommand("noise-sweep", "operators x noise levels table");
  add_common(sub_sweep, &sw.seed, &sw.workers);
  sub_sweep->add_option("--data", sw.data)->required();
  sub_sweep->add_option("--model", sw.model_dir)->required();
  sub_sweep->add_option("--out", sw.out)->required();
  sub_sweep->add_option("--scenes", sw.scenes);
  sub_sweep->add_option("--levels", sw.levels,
                        "semicolon-separated sigma_deg,sigma_m pairs");
  sub_sweep->add_option("--max-scenes", sw.max_scenes);

  CalibArgs ca;
  CLI::App* sub_calib =
      app.add_subcommand("calib", "IPM extrinsic calibration + stitching");
  long long calib_seed = -1;
  int calib_workers = 1;
  add_common(sub_calib, &calib_seed, &calib_workers);
  sub_calib->add_option("--out", ca.out)->required();
  sub_calib->add_option("--lanes-left", ca.lanes_left, "pixel polyline file");
  sub_calib->add_option("--lanes-right", ca.lanes_right, "pixel polyline file");
  sub_calib->add_flag("--synthetic", ca.synthetic,
                      "render the lane fixture instead of reading files");
  sub_calib->add_option("--true-yaw-deg", ca.true_yaw_deg);
  sub_calib->add_option("--true-pitch-deg", ca.true_pitch_deg);
  sub_calib->add_option("--focal", ca.focal);
  sub_calib->add_option("--img-w", ca.img_w);
  sub_calib->add_option("--img-h", ca.img_h);
  sub_calib->add_option("--cx", ca.cx, "defaults to image center");
  sub_calib->add_option("--cy", ca.cy, "defaults to image center");
  sub_calib->add_option("--cam-height", ca.cam_height);
  sub_calib->add_option("--lane-half", ca.lane_half);
  sub_calib->add_option("--lane-x0", ca.lane_x0);
  sub_calib->add_option("--lane-x1", ca.lane_x1);
  sub_calib->add_option("--stitch", ca.stitch);
  sub_calib->add_option("--stitch-res", ca.stitch_res);
  sub_calib->add_option("--stitch-cells", ca.stitch_cells);
  sub_calib->add_option("--interp-factor", ca.interp_factor);

  int rc = 0;
  sub_gen->callback([&] { rc = cmd_gen_data(gen); });
  sub_train->callback([&] { rc = cmd_train(tr); });
  sub_grow->callback([&] { rc = cmd_grow(gr); });
  sub_eval->callback([&] { rc = cmd_eval(ev); });
  sub_sweep->callback([&] { rc = cmd_noise_sweep(sw); });
  sub_calib->callback([&] { rc = cmd_calib(ca); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return rc;
}

}  // namespace nemo
