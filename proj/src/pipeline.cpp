#include "nemo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "nemo/errors.hpp"
#include "nemo/raster_io.hpp"

namespace nemo {

namespace fs = std::filesystem;

Scene make_scene(const World& world, const std::vector<Pose>& poses,
                 const GridSpec& ego_spec, const ObsNoise& noise, Rng& rng) {
  Scene scene;
  scene.world_spec = world.spec;
  scene.world_gt = world.gt;
  scene.poses = poses;
  scene.obs.reserve(poses.size());
  for (const Pose& p : poses)
    scene.obs.push_back(render_observation(world, p, ego_spec, noise, rng));
  return scene;
}

namespace {

std::string frame_path(const std::string& dir, int i) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%03d.nemo", i);
  return (fs::path(dir) / name).string();
}

}  // namespace

void save_scene(const Scene& scene, const std::string& dir) {
  fs::create_directories(dir);
  save_kv((fs::path(dir) / "scene.cfg").string(),
          {{"n_frames", std::to_string(scene.poses.size())},
           {"classes", std::to_string(kNumClasses)}});
  save_class_raster((fs::path(dir) / "world_gt.nemo").string(),
                    scene.world_spec, scene.world_gt);
  save_poses((fs::path(dir) / "poses.txt").string(), scene.poses);
  for (size_t i = 0; i < scene.obs.size(); ++i)
    save_feature_raster(frame_path(dir, static_cast<int>(i)),
                        scene.obs[i].spec, scene.obs[i].features,
                        scene.obs[i].valid);
}

Scene load_scene(const std::string& dir) {
  const auto kv = load_kv((fs::path(dir) / "scene.cfg").string());
  const int n = std::stoi(kv_get(kv, "n_frames"));

  Scene scene;
  Raster gt = load_raster((fs::path(dir) / "world_gt.nemo").string());
  if (gt.dtype != 1)
    throw DataError("scene ground truth is not a class raster: " + dir);
  scene.world_spec = gt.spec;
  scene.world_spec.frame_tag = FrameTag::world;
  scene.world_gt = std::move(gt.u8);
  scene.poses = load_poses((fs::path(dir) / "poses.txt").string());
  if (static_cast<int>(scene.poses.size()) != n)
    throw DataError("scene pose count does not match scene.cfg: " + dir);

  scene.obs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Raster r = load_raster(frame_path(dir, i));
    if (r.dtype != 0)
      throw DataError("scene frame is not a feature raster: " + frame_path(dir, i));
    FeatureFrame f;
    f.spec = r.spec;
    f.spec.frame_tag = FrameTag::ego;
    f.features = std::move(r.f32);
    f.valid = std::move(r.mask);
    scene.obs.push_back(std::move(f));
  }
  return scene;
}

std::vector<int> split_clips(int n_frames, int clip_len, int clip_stride) {
  if (clip_len < 1 || clip_stride < 1)
    throw ConfigError("clip length and stride must be positive");
  std::vector<int> starts;
  for (int s = 0; s + clip_len <= n_frames; s += clip_stride)
    starts.push_back(s);
  return starts;
}

void renormalize_state(FeatureFrame& frame, double margin) {
  const std::int64_t k = frame.channels();
  for (std::int64_t i = 0; i < frame.spec.cell_count(); ++i) {
    if (!frame.valid[static_cast<size_t>(i)]) continue;
    float* f = frame.features.data() + i * k;
    float mx = f[0];
    for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, f[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(f[c]) - mx);
    for (std::int64_t c = 0; c < k; ++c)
      f[c] = static_cast<float>(margin *
                                std::exp(static_cast<double>(f[c]) - mx) / z);
  }
}

FeatureFrame gaussian_blur(const FeatureFrame& frame, int ksize, double sigma) {
  if (ksize < 1 || ksize % 2 == 0)
    throw ConfigError("blur kernel size must be odd and positive");
  if (sigma <= 0) throw ConfigError("blur sigma must be positive");

  std::vector<double> kernel(static_cast<size_t>(ksize));
  const int r = ksize / 2;
  double sum = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - r;
    kernel[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += kernel[static_cast<size_t>(i)];
  }
  for (double& k : kernel) k /= sum;

  const std::int64_t hc = frame.spec.height_cells, wc = frame.spec.width_cells;
  const std::int64_t k = frame.features.dim(2);
  auto reflect = [](std::int64_t i, std::int64_t n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return std::clamp<std::int64_t>(i, 0, n - 1);
  };

  FeatureFrame out = frame;
  Tensor<float> tmp(frame.features.shape());
  for (std::int64_t h = 0; h < hc; ++h)
    for (std::int64_t w = 0; w < wc; ++w)
      for (std::int64_t c = 0; c < k; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] *
                 frame.features[(h * wc + reflect(w + i, wc)) * k + c];
        tmp[(h * wc + w) * k + c] = static_cast<float>(acc);
      }
  for (std::int64_t h = 0; h < hc; ++h)
    for (std::int64_t w = 0; w < wc; ++w)
      for (std::int64_t c = 0; c < k; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] *
                 tmp[(reflect(h + i, hc) * wc + w) * k + c];
        out.features[(h * wc + w) * k + c] = static_cast<float>(acc);
      }
  return out;
}

ClipPlane build_clip_plane(const Scene& scene, int start, int clip_len,
                           int plane_cells, bool blur) {
  if (start < 0 || start + clip_len > static_cast<int>(scene.poses.size()))
    throw ConfigError("clip range exceeds the scene's frame count");

  ClipPlane plane;
  double cx = 0.0, cy = 0.0;
  for (int t = 0; t < clip_len; ++t) {
    cx += scene.poses[static_cast<size_t>(start + t)].x;
    cy += scene.poses[static_cast<size_t>(start + t)].y;
  }
  cx /= clip_len;
  cy /= clip_len;

  const double res = scene.world_spec.resolution;
  const double half = 0.5 * plane_cells * res;
  plane.spec.height_cells = plane_cells;
  plane.spec.width_cells = plane_cells;
  plane.spec.resolution = res;
  plane.spec.frame_tag = FrameTag::world;
  plane.spec.origin_x =
      scene.world_spec.origin_x -
      std::round((scene.world_spec.origin_x - (cx + half)) / res) * res;
  plane.spec.origin_y =
      scene.world_spec.origin_y -
      std::round((scene.world_spec.origin_y - (cy + half)) / res) * res;

  // Ground-truth crop: plane and world grids share a lattice, so the crop is
  // an integer shift. Cells outside the world raster are background.
  const std::int64_t off_h = static_cast<std::int64_t>(
      std::llround((scene.world_spec.origin_x - plane.spec.origin_x) / res));
  const std::int64_t off_w = static_cast<std::int64_t>(
      std::llround((scene.world_spec.origin_y - plane.spec.origin_y) / res));
  plane.gt.assign(static_cast<size_t>(plane.spec.cell_count()), 0);
  for (int h = 0; h < plane_cells; ++h)
    for (int w = 0; w < plane_cells; ++w) {
      const std::int64_t wh = h + off_h, ww = w + off_w;
      if (wh < 0 || wh >= scene.world_spec.height_cells || ww < 0 ||
          ww >= scene.world_spec.width_cells)
        continue;
      plane.gt[static_cast<size_t>(h * plane_cells + w)] =
          scene.world_gt[static_cast<size_t>(wh * scene.world_spec.width_cells + ww)];
    }

  plane.m_clip.assign(static_cast<size_t>(plane.spec.cell_count()), 0);
  for (int t = 0; t < clip_len; ++t) {
    const int i = start + t;
    const Pose& pose = scene.poses[static_cast<size_t>(i)];
    const FeatureFrame& raw = scene.obs[static_cast<size_t>(i)];

    for (const Vec2& corner : footprint_corners(raw.spec, pose)) {
      const GridCoord c = plane.spec.point_to_grid(corner);
      if (c.u < 0 || c.u > plane.spec.width_cells || c.v < 0 ||
          c.v > plane.spec.height_cells) {
        const double span = 2.0 * std::max(std::abs(corner.x - cx),
                                           std::abs(corner.y - cy));
        throw ConfigError(
            "clip footprint leaves the plane; need at least " +
            std::to_string(static_cast<int>(std::ceil(span / res)) + 1) +
            " plane cells");
      }
    }

    plane.poses.push_back(pose);
    plane.obs.push_back(blur ? gaussian_blur(raw) : raw);

    ResamplePlan full = build_resample_plan(raw.spec, pose, plane.spec);
    ResamplePlan kept;
    std::vector<std::uint8_t> mask(static_cast<size_t>(plane.spec.cell_count()), 0);
    for (const auto& e : full.entries) {
      bool ok = true;
      for (const auto& tap : e.src.taps) {
        if (tap.weight == 0.0) continue;
        if (tap.cell < 0 || !raw.valid[static_cast<size_t>(tap.cell)]) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      kept.entries.push_back(e);
      mask[static_cast<size_t>(e.dst)] = 1;
      plane.m_clip[static_cast<size_t>(e.dst)] = 1;
    }
    plane.plans.push_back(std::move(kept));
    plane.m_t.push_back(std::move(mask));
  }
  return plane;
}

void gather_to_plane(const ClipPlane& plane, int t,
                     const Tensor<float>& ego_feat, float* plane_data) {
  const std::int64_t k = ego_feat.dim(2);
  for (const auto& e : plane.plans[static_cast<size_t>(t)].entries) {
    float* dst = plane_data + e.dst * k;
    for (const auto& tap : e.src.taps) {
      if (tap.weight == 0.0) continue;
      const float* src = ego_feat.data() + tap.cell * k;
      const float w = static_cast<float>(tap.weight);
      for (std::int64_t c = 0; c < k; ++c) dst[c] += w * src[c];
    }
  }
}

void scatter_from_plane(const ClipPlane& plane, int t, const float* plane_grad,
                        Tensor<float>& ego_grad) {
  const std::int64_t k = ego_grad.dim(2);
  for (const auto& e : plane.plans[static_cast<size_t>(t)].entries) {
    const float* g = plane_grad + e.dst * k;
    for (const auto& tap : e.src.taps) {
      if (tap.weight == 0.0) continue;
      float* dst = ego_grad.data() + tap.cell * k;
      const float w = static_cast<float>(tap.weight);
      for (std::int64_t c = 0; c < k; ++c) dst[c] += w * g[c];
    }
  }
}

Supervision supervision_from_string(const std::string& s) {
  if (s == "many_to_one") return Supervision::many_to_one;
  if (s == "many_to_many") return Supervision::many_to_many;
  throw ConfigError("unknown supervision mode: " + s);
}

std::string to_string(Supervision s) {
  return s == Supervision::many_to_one ? "many_to_one" : "many_to_many";
}

FuseOp fuse_op_from_string(const std::string& s) {
  if (s == "overwrite") return FuseOp::overwrite;
  if (s == "maxpool") return FuseOp::maxpool;
  if (s == "learned") return FuseOp::learned;
  throw ConfigError("unknown fusion operator: " + s);
}

std::string to_string(FuseOp op) {
  switch (op) {
    case FuseOp::overwrite: return "overwrite";
    case FuseOp::maxpool: return "maxpool";
    default: return "learned";
  }
}

Model make_model(const FusionConfig& fusion_cfg, const LsaConfig& lsa_cfg,
                 bool lsa_enabled, std::uint64_t seed) {
  Model model;
  model.fusion_cfg = fusion_cfg;
  model.lsa_cfg = lsa_cfg;
  model.lsa_enabled = lsa_enabled;
  Rng rng(seed);
  model.fusion = std::make_unique<HomoGridFusion<float>>(fusion_cfg, rng);
  model.fusion->register_params(model.params, "fusion");
  if (lsa_enabled) {
    model.lsa = std::make_unique<LsaBlock<float>>(lsa_cfg, fusion_cfg.k, rng);
    model.lsa->register_params(model.params, "lsa");
  }
  return model;
}

namespace {

std::string stem_mode_name(StemMode m) {
  switch (m) {
    case StemMode::conv3x3: return "conv3x3";
    case StemMode::conv1x1: return "conv1x1";
    default: return "none";
  }
}

StemMode stem_mode_from_name(const std::string& s) {
  if (s == "conv3x3") return StemMode::conv3x3;
  if (s == "conv1x1") return StemMode::conv1x1;
  if (s == "none") return StemMode::none;
  throw ConfigError("unknown stem mode: " + s);
}

}  // namespace

void save_model(const Model& model, const std::string& dir) {
  fs::create_directories(dir);
  const auto& f = model.fusion_cfg;
  const auto& l = model.lsa_cfg;
  save_kv((fs::path(dir) / "model.cfg").string(),
          {{"k", std::to_string(f.k)},
           {"stem", stem_mode_name(f.stem_mode)},
           {"stem_ch0", std::to_string(f.stem_channels[0])},
           {"stem_ch1", std::to_string(f.stem_channels[1])},
           {"stem_ch2", std::to_string(f.stem_channels[2])},
           {"hidden1", std::to_string(f.hidden1)},
           {"mlp1_out", std::to_string(f.mlp1_out)},
           {"hidden2", std::to_string(f.hidden2)},
           {"mlp_mid", std::to_string(f.mlp_mid)},
           {"lsa", model.lsa_enabled ? "1" : "0"},
           {"lsa_radius", std::to_string(l.radius)},
           {"pe_dim", std::to_string(l.pe_dim)},
           {"attn_dim", std::to_string(l.attn_dim)},
           {"blur", model.blur_input ? "1" : "0"}});
  nemp::save(model.params, (fs::path(dir) / "checkpoint.nemp").string());
}

Model load_model(const std::string& dir) {
  const auto kv = load_kv((fs::path(dir) / "model.cfg").string());
  FusionConfig f;
  f.k = std::stoll(kv_get(kv, "k"));
  f.stem_mode = stem_mode_from_name(kv_get(kv, "stem"));
  f.stem_channels = {std::stoll(kv_get(kv, "stem_ch0")),
                     std::stoll(kv_get(kv, "stem_ch1")),
                     std::stoll(kv_get(kv, "stem_ch2"))};
  f.hidden1 = std::stoll(kv_get(kv, "hidden1"));
  f.mlp1_out = std::stoll(kv_get(kv, "mlp1_out"));
  f.hidden2 = std::stoll(kv_get(kv, "hidden2"));
  f.mlp_mid = std::stoll(kv_get(kv, "mlp_mid"));
  LsaConfig l;
  l.radius = std::stoi(kv_get(kv, "lsa_radius"));
  l.pe_dim = std::stoll(kv_get(kv, "pe_dim"));
  l.attn_dim = std::stoll(kv_get(kv, "attn_dim"));
  Model model = make_model(f, l, kv_get(kv, "lsa") == "1", 0);
  model.blur_input = kv_get(kv, "blur") == "1";
  nemp::load(model.params, (fs::path(dir) / "checkpoint.nemp").string());
  return model;
}

TrainResult train(Model& model, const std::vector<Scene>& scenes,
                  const TrainConfig& cfg) {
  if (cfg.lsa && !model.lsa)
    throw ConfigError("training with attention requires a model that has it");
  model.blur_input = cfg.blur;

  std::vector<ClipPlane> planes;
  for (const Scene& scene : scenes)
    for (int start : split_clips(static_cast<int>(scene.poses.size()),
                                 cfg.clip_len, cfg.clip_stride))
      planes.push_back(build_clip_plane(scene, start, cfg.clip_len,
                                        cfg.plane_cells, cfg.blur));
  if (planes.empty()) throw ConfigError("no training clips");

  const std::int64_t hp = cfg.plane_cells, wp = cfg.plane_cells;
  const std::int64_t k = model.fusion_cfg.k;
  const std::int64_t t_len = cfg.clip_len;
  const std::int64_t cells = hp * wp;

  AdamState<float> adam;
  adam.cfg.lr = cfg.lr;
  adam.cfg.weight_decay = cfg.weight_decay;

  Rng order_rng(cfg.seed);
  std::vector<size_t> order(planes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    int n_batches = 0;

    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch)) {
      const std::int64_t b_n = std::min<std::int64_t>(
          cfg.batch, static_cast<std::int64_t>(order.size() - pos));

      Tensor<float> input({b_n, t_len, hp, wp, k});
      for (std::int64_t b = 0; b < b_n; ++b) {
        const ClipPlane& plane = planes[order[pos + static_cast<size_t>(b)]];
        for (std::int64_t t = 0; t < t_len; ++t) {
          float* dst = &input.at(b, t, 0, 0, 0);
          if (cfg.lsa) {
            Tensor<float> refined =
                model.lsa->forward(plane.obs[static_cast<size_t>(t)].features);
            gather_to_plane(plane, static_cast<int>(t), refined, dst);
          } else {
            gather_to_plane(plane, static_cast<int>(t),
                            plane.obs[static_cast<size_t>(t)].features, dst);
          }
        }
      }

      model.params.zero_grads();
      Tensor<float> out = model.fusion->forward(input, NormMode::train);

      double batch_loss = 0.0;
      Tensor<float> gout(out.shape());
      const std::int64_t rows = b_n * cells;
      Tensor<float> logits({rows, k});
      std::vector<std::int64_t> labels(static_cast<size_t>(rows));
      std::vector<std::uint8_t> mask(static_cast<size_t>(rows));

      auto run_timestamp = [&](std::int64_t t, bool use_clip_mask, double scale) {
        for (std::int64_t b = 0; b < b_n; ++b) {
          const ClipPlane& plane = planes[order[pos + static_cast<size_t>(b)]];
          const auto& m = use_clip_mask ? plane.m_clip
                                        : plane.m_t[static_cast<size_t>(t)];
          std::copy_n(&out.at(b, t, 0, 0, 0), cells * k,
                      logits.data() + b * cells * k);
          for (std::int64_t i = 0; i < cells; ++i) {
            labels[static_cast<size_t>(b * cells + i)] =
                plane.gt[static_cast<size_t>(i)];
            mask[static_cast<size_t>(b * cells + i)] = m[static_cast<size_t>(i)];
          }
        }
        SoftmaxCrossEntropy<float> ce;
        const double loss = ce.forward(logits, labels, mask);
        Tensor<float> gl = ce.backward(scale);
        for (std::int64_t b = 0; b < b_n; ++b)
          std::copy_n(gl.data() + b * cells * k, cells * k, &gout.at(b, t, 0, 0, 0));
        return loss;
      };

      if (cfg.supervision == Supervision::many_to_one) {
        batch_loss = run_timestamp(t_len - 1, true, 1.0);
      } else {
        for (std::int64_t t = 0; t < t_len; ++t)
          batch_loss += run_timestamp(t, false, 1.0 / static_cast<double>(t_len)) /
                        static_cast<double>(t_len);
      }

      if (!std::isfinite(batch_loss))
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(n_batches));

      Tensor<float> gin = model.fusion->backward(gout);
      if (cfg.lsa) {
        for (std::int64_t b = 0; b < b_n; ++b) {
          const ClipPlane& plane = planes[order[pos + static_cast<size_t>(b)]];
          for (std::int64_t t = 0; t < t_len; ++t) {
            const FeatureFrame& obs = plane.obs[static_cast<size_t>(t)];
            Tensor<float> gego(obs.features.shape());
            scatter_from_plane(plane, static_cast<int>(t),
                               &gin.at(b, t, 0, 0, 0), gego);
            // One attention block serves every timestamp, so rebuild its
            // forward caches for this input before backpropagating.
            model.lsa->forward(obs.features);
            model.lsa->backward(gego);
          }
        }
      }

      adam_step(model.params, adam);
      epoch_loss += batch_loss;
      ++n_batches;
    }
    result.epoch_loss.push_back(epoch_loss / std::max(1, n_batches));
  }
  return result;
}

BigFeatureMap grow_map(const Scene& scene, const GridSpec& ego_spec,
                       const GrowConfig& cfg, Model* model) {
  if (scene.poses.empty()) throw DataError("scene has no frames");
  if (cfg.op == FuseOp::learned && (model == nullptr || !model->fusion))
    throw ConfigError("learned fusion requires a trained model");
  if (cfg.lsa && (model == nullptr || !model->lsa))
    throw ConfigError("attention refinement requires a model that has it");

  const std::int64_t k = scene.obs.front().features.dim(2);
  const double res = scene.world_spec.resolution;

  // Start with a window just covering the first footprint, aligned to the
  // world lattice; growth handles the rest of the trajectory.
  const double diag = std::hypot(ego_spec.height_cells * res,
                                 ego_spec.width_cells * res);
  const int cells = static_cast<int>(std::ceil(diag / res)) + 4;
  GridSpec init;
  init.height_cells = cells;
  init.width_cells = cells;
  init.resolution = res;
  init.frame_tag = FrameTag::world;
  const Pose& first = scene.poses.front();
  const double half = 0.5 * cells * res;
  init.origin_x =
      scene.world_spec.origin_x -
      std::round((scene.world_spec.origin_x - (first.x + half)) / res) * res;
  init.origin_y =
      scene.world_spec.origin_y -
      std::round((scene.world_spec.origin_y - (first.y + half)) / res) * res;

  BigFeatureMap map = init_map(init, k);
  Rng rng(cfg.seed);
  for (size_t i = 0; i < scene.poses.size(); ++i) {
    const Pose pose =
        perturb_pose(scene.poses[i], cfg.sigma_deg, cfg.sigma_m, rng);
    FeatureFrame cur = cfg.blur ? gaussian_blur(scene.obs[i]) : scene.obs[i];
    if (cfg.op == FuseOp::learned && cfg.lsa)
      cur = lsa_fine_match(cur, *model->lsa);

    FeatureFrame hist = read_region(map, pose, ego_spec);
    if (cfg.op == FuseOp::learned) {
      // Fine matching treats history like one more observation: project the
      // stored logits back onto the observation scale, then refine. Without
      // this the network would see its own raw outputs, which drift far from
      // anything the training sequences contain.
      renormalize_state(hist, cfg.state_margin);
      if (cfg.blur) hist = gaussian_blur(hist);
      if (cfg.lsa) hist = lsa_fine_match(hist, *model->lsa);
    }
    FeatureFrame fused;
    switch (cfg.op) {
      case FuseOp::overwrite: fused = fuse_overwrite(hist, cur); break;
      case FuseOp::maxpool: fused = fuse_maxpool(hist, cur); break;
      case FuseOp::learned: fused = homo_fuse_step(hist, cur, *model->fusion); break;
    }
    write_region(map, fused, pose);
  }
  return map;
}

IouResult evaluate_miou(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& gt,
                        const std::vector<std::uint8_t>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw DataError("evaluation arrays differ in size");
  if (std::find(mask.begin(), mask.end(), std::uint8_t(1)) == mask.end())
    throw DataError("empty evaluation mask");

  IouResult r;
  double sum = 0.0;
  int counted = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (!mask[i]) continue;
      const bool p = pred[i] == c, g = gt[i] == c;
      inter += p && g;
      uni += p || g;
    }
    if (uni == 0) continue;
    r.has[static_cast<size_t>(c)] = true;
    r.iou[static_cast<size_t>(c)] =
        static_cast<double>(inter) / static_cast<double>(uni);
    sum += r.iou[static_cast<size_t>(c)];
    ++counted;
  }
  if (counted == 0)
    throw DataError("no foreground class present in the evaluation region");
  r.miou = sum / counted;
  return r;
}

IouResult evaluate_map(const BigFeatureMap& map, const Scene& scene) {
  const double res = scene.world_spec.resolution;
  const std::int64_t off_h = static_cast<std::int64_t>(
      std::llround((scene.world_spec.origin_x - map.spec.origin_x) / res));
  const std::int64_t off_w = static_cast<std::int64_t>(
      std::llround((scene.world_spec.origin_y - map.spec.origin_y) / res));

  const std::vector<std::uint8_t> pred = decode_semantic(map);
  std::vector<std::uint8_t> gt(pred.size(), 0);
  for (std::int64_t h = 0; h < map.spec.height_cells; ++h)
    for (std::int64_t w = 0; w < map.spec.width_cells; ++w) {
      const std::int64_t wh = h + off_h, ww = w + off_w;
      if (wh < 0 || wh >= scene.world_spec.height_cells || ww < 0 ||
          ww >= scene.world_spec.width_cells)
        continue;
      gt[static_cast<size_t>(h * map.spec.width_cells + w)] =
          scene.world_gt[static_cast<size_t>(wh * scene.world_spec.width_cells + ww)];
    }
  return evaluate_miou(pred, gt, map.observed);
}

}  // namespace nemo
