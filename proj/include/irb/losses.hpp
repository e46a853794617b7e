#pragma once

#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "irb/correspond.hpp"
#include "irb/field.hpp"
#include "irb/geometry.hpp"
#include "irb/image.hpp"
#include "irb/kernels.hpp"

namespace irb {

struct CorrespondenceSamplingConfig {
  std::size_t pool = 10000;   // N_m
  double threshold = 0.2;     // t_m, keep alpha > threshold
  int budget = 256;           // per-iteration draws per directed pair: budget / |E|

  void validate() const;
};

// floor(budget / frame_set_size), at least 1.
int draws_per_pair(int frame_set_size, const CorrespondenceSamplingConfig& cfg);

// Uniform draw of min(pool, #confident) matches with alpha > threshold.
// Throws NoConfidentMatches when none pass.
CorrespondenceSet select_sparse(const CorrespondenceSet& set, const CorrespondenceSamplingConfig& cfg,
                                std::mt19937_64& rng);

// k distinct indices from [0, n), uniformly, in draw order. k is clamped to n.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng);

// Mean over pixels and channels of the squared color difference.
double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> target);

// Reprojects q (frame 1, camera-frame depth z) into frame 2 and returns
// p' - p. Throws NonPositiveDepth when the point lands behind camera 2.
Vec2 reprojection_residual(const Correspondence& m, const Pose& P1, const Pose& P2,
                           const Intrinsics& K, double z);

// (1 / N) sum alpha |p' - p| with depths from `depth_of(q)`; terms whose
// reprojection lands behind camera 2 are skipped and counted in *skipped.
double reprojection_loss(std::span<const Correspondence> matches, const Pose& P1, const Pose& P2,
                         const Intrinsics& K, const std::function<double(const Vec2&)>& depth_of,
                         int* skipped = nullptr);

// Gradients of a rendered-depth reprojection loss.
struct ReprojectionGradient {
  double value = 0.0;
  int skipped = 0;
  Vec3 d_rot1 = Vec3::Zero(), d_trans1 = Vec3::Zero();
  Vec3 d_rot2 = Vec3::Zero(), d_trans2 = Vec3::Zero();
  std::vector<double> d_field;  // empty unless requested
};

// Same loss with z(q) rendered through the field along frame 1's ray.
ReprojectionGradient reprojection_loss(std::span<const Correspondence> matches, const Pose& P1,
                                       const Pose& P2, const Intrinsics& K,
                                       const RadianceField& field, const TraceConfig& trace,
                                       std::span<const double> jitter = {},
                                       bool field_grad = false);

struct LossConfig {
  TraceConfig trace;
  CorrespondenceSamplingConfig corr;
  int ray_batch = 1024;
  bool disable_reprojection = false;
  bool disable_photometric = false;
};

enum class Stage { init, tracking, window, global, post, test };

const char* to_string(Stage stage);

// Optimization frame set E: ordered frame indices with per-frame learnable
// rotation / translation flags. Photometric rays are drawn from
// `photometric_frames`.
struct FrameSet {
  Stage stage = Stage::global;
  std::vector<int> frames;
  std::vector<bool> learn_rotation;
  std::vector<bool> learn_translation;
  bool learn_field = true;
  std::vector<int> photometric_frames;

  std::size_t size() const { return frames.size(); }
  int learnable_pose_count() const;
};

// Flat layout [Theta | rot_0 trans_0 | rot_1 trans_1 | ...].
struct ParamLayout {
  std::size_t field_size = 0;
  std::size_t frames = 0;

  std::size_t total() const { return field_size + 6 * frames; }
  std::ptrdiff_t rot_offset(std::size_t i) const { return std::ptrdiff_t(field_size + 6 * i); }
  std::ptrdiff_t trans_offset(std::size_t i) const { return rot_offset(i) + 3; }
};

struct LossBreakdown {
  double total = 0.0;
  double photometric = 0.0;
  double reprojection = 0.0;
  int directed_terms = 0;
  int correspondences = 0;
  int skipped = 0;
  int rays = 0;
};

// Sparse pools keyed by directed pair (i, j): q in frame i, p in frame j.
using SparsePools = std::map<FramePair, CorrespondenceSet>;

// Builds both directions of every pair in `corr` from one select_sparse draw
// per stored pair, seeded from `seed` and the pair ids.
SparsePools build_sparse_pools(const CorrespondenceMap& corr, const CorrespondenceSamplingConfig& cfg,
                               std::uint64_t seed);

// Combined loss L(E) = L_nrp(E) + L_photo(E) on one random draw of
// photometric rays and correspondences. Gradients accumulate into `grad`
// (layout above) for the learnable blocks of E only.
class JointObjective {
 public:
  JointObjective(const Intrinsics& K, const std::vector<Image>& images, const SparsePools& pools,
                 LossConfig cfg);

  const LossConfig& config() const { return cfg_; }
  LossConfig& config() { return cfg_; }

  LossBreakdown evaluate(const RadianceField& field, std::span<const Pose> poses, const FrameSet& E,
                         std::mt19937_64& rng, std::span<double> grad, bool jitter = true);

  // Directed neighbor terms (a, b) of E that have a pool, in evaluation order.
  std::vector<FramePair> directed_terms(const FrameSet& E) const;

  // Mean unweighted pixel residual |p' - p| of pair (a, b) with midpoint
  // rendering, over at most max_matches pooled matches.
  double mean_residual(const RadianceField& field, std::span<const Pose> poses, int a, int b,
                       std::size_t max_matches = 256);

  RayTracer& tracer() { return tracer_; }
  ParamLayout layout(const RadianceField& field, std::size_t frames) const {
    return {field.param_count(), frames};
  }

 private:
  Intrinsics K_;
  const std::vector<Image>& images_;
  const SparsePools& pools_;
  LossConfig cfg_;
  RayTracer tracer_;
};

}  // namespace irb
