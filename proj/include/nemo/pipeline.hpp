#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "nemo/bigmap.hpp"
#include "nemo/fusion.hpp"
#include "nemo/matching.hpp"
#include "nemo/params.hpp"
#include "nemo/synthscene.hpp"

// End-to-end plumbing: scenes on disk, clip construction on the shared
// ground plane, the training loop, map growing with each fusion operator,
// and mIoU evaluation of grown maps.

namespace nemo {

struct Scene {
  GridSpec world_spec;
  std::vector<std::uint8_t> world_gt;  // H*W classes
  std::vector<Pose> poses;             // ground-truth trajectory
  std::vector<FeatureFrame> obs;       // one ego-frame observation per pose
};

Scene make_scene(const World& world, const std::vector<Pose>& poses,
                 const GridSpec& ego_spec, const ObsNoise& noise, Rng& rng);

// Directory layout: scene.cfg, world_gt.nemo, poses.txt, frame_%03d.nemo.
void save_scene(const Scene& scene, const std::string& dir);
Scene load_scene(const std::string& dir);

// Clip start indices: 0, stride, 2*stride, ...; starts whose clip would run
// past the end are dropped.
std::vector<int> split_clips(int n_frames, int clip_len, int clip_stride);

// Separable Gaussian blur of the feature channels (validity untouched).
// Reflect padding; the kernel is normalized so constants are preserved.
FeatureFrame gaussian_blur(const FeatureFrame& frame, int ksize = 7,
                           double sigma = 5.0);

// One training clip mapped onto its shared plane: a lattice-aligned window
// of the world grid centered on the clip's pose centroid. Resample plans are
// pre-filtered to destination cells with fully valid support, so they double
// as the per-timestamp masks.
struct ClipPlane {
  GridSpec spec;
  std::vector<std::uint8_t> gt;               // plane-sized class crop
  std::vector<FeatureFrame> obs;              // per t, blurred when asked
  std::vector<Pose> poses;                    // per t
  std::vector<ResamplePlan> plans;            // per t
  std::vector<std::vector<std::uint8_t>> m_t; // per-timestamp masks
  std::vector<std::uint8_t> m_clip;           // union of the m_t
};

ClipPlane build_clip_plane(const Scene& scene, int start, int clip_len,
                           int plane_cells, bool blur);

// Gather a (possibly refined) ego raster into plane layout, and scatter a
// plane-sized gradient back. `plane_data` / `ego_grad` are H*W*K buffers.
void gather_to_plane(const ClipPlane& plane, int t,
                     const Tensor<float>& ego_feat, float* plane_data);
void scatter_from_plane(const ClipPlane& plane, int t, const float* plane_grad,
                        Tensor<float>& ego_grad);

enum class Supervision { many_to_one, many_to_many };
Supervision supervision_from_string(const std::string& s);
std::string to_string(Supervision s);

enum class FuseOp { overwrite, maxpool, learned };
FuseOp fuse_op_from_string(const std::string& s);
std::string to_string(FuseOp op);

struct TrainConfig {
  int epochs = 6;
  int batch = 4;
  int clip_len = 4;
  int clip_stride = 4;
  int plane_cells = 48;
  bool blur = true;
  bool lsa = false;
  Supervision supervision = Supervision::many_to_one;
  double lr = 1e-3;
  double weight_decay = 1e-7;
  std::uint64_t seed = 1;
  FusionConfig fusion;
  LsaConfig lsa_cfg;
};

// A fusion network plus optional attention block with their registered
// parameter store. Heap members keep the store's pointers stable.
struct Model {
  FusionConfig fusion_cfg;
  LsaConfig lsa_cfg;
  bool lsa_enabled = false;
  bool blur_input = false;  // observations were blurred during training
  std::unique_ptr<HomoGridFusion<float>> fusion;
  std::unique_ptr<LsaBlock<float>> lsa;
  ParamStore<float> params;
};

Model make_model(const FusionConfig& fusion_cfg, const LsaConfig& lsa_cfg,
                 bool lsa_enabled, std::uint64_t seed);

// checkpoint.nemp holds the weights; model.cfg the hyperparameters the
// checkpoint format does not carry.
void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

struct TrainResult {
  std::vector<double> epoch_loss;
};

TrainResult train(Model& model, const std::vector<Scene>& scenes,
                  const TrainConfig& cfg);

struct GrowConfig {
  FuseOp op = FuseOp::overwrite;
  bool blur = false;    // preprocess each observation like training did
  bool lsa = false;     // refine each observation (learned operator only)
  double sigma_deg = 0; // per-angle pose noise
  double sigma_m = 0;   // per-axis x/y pose noise
  double state_margin = 2.0;  // confidence scale of stored class logits
  std::uint64_t seed = 1;
};

// Project class logits onto the observation encoding: margin * softmax per
// valid cell. Learned fusion consumes history through this projection so
// that map state re-enters the network in the same family as fresh
// observations regardless of how confident earlier fusions were.
void renormalize_state(FeatureFrame& frame, double margin);

// Sequential map building: for each frame, read history at the (noisy) pose,
// fuse with the current observation, write back. The map starts as a small
// window around the first pose and grows on demand; its lattice stays
// aligned with the scene's world grid.
BigFeatureMap grow_map(const Scene& scene, const GridSpec& ego_spec,
                       const GrowConfig& cfg, Model* model);

struct IouResult {
  std::array<double, kNumClasses> iou{};  // valid only where has[c]
  std::array<bool, kNumClasses> has{};    // union non-empty
  double miou = 0.0;                      // mean over foreground classes
};

// Intersection-over-union per foreground class over masked cells; classes
// with an empty union are excluded from the mean.
IouResult evaluate_miou(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& gt,
                        const std::vector<std::uint8_t>& mask);

// Decode the grown map and score it against the scene's ground truth over
// the observed cells. Observed cells outside the world raster count as
// background truth.
IouResult evaluate_map(const BigFeatureMap& map, const Scene& scene);

}  // namespace nemo
