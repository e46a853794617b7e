#include "irb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irb/errors.hpp"
#include "irb/random.hpp"

namespace irb {

void CorrespondenceSamplingConfig::validate() const {
  if (pool < 1) throw InvalidSpec("correspondence pool must be nonempty");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidSpec("confidence threshold must be in (0, 1)");
  if (budget < 1) throw InvalidSpec("correspondence budget must be positive");
}

int draws_per_pair(int frame_set_size, const CorrespondenceSamplingConfig& cfg) {
  return std::max(1, cfg.budget / std::max(frame_set_size, 1));
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  k = std::min(k, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

CorrespondenceSet select_sparse(const CorrespondenceSet& set, const CorrespondenceSamplingConfig& cfg,
                                std::mt19937_64& rng) {
  std::vector<std::size_t> confident;
  for (std::size_t i = 0; i < set.matches.size(); ++i)
    if (set.matches[i].alpha > cfg.threshold) confident.push_back(i);
  if (confident.empty())
    throw NoConfidentMatches("no match of pair (" + std::to_string(set.frame_i) + ", " +
                             std::to_string(set.frame_j) + ") exceeds the confidence threshold");
  CorrespondenceSet out;
  out.frame_i = set.frame_i;
  out.frame_j = set.frame_j;
  out.provenance = set.provenance;
  for (std::size_t k : sample_without_replacement(confident.size(), cfg.pool, rng))
    out.matches.push_back(set.matches[confident[k]]);
  return out;
}

double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> target) {
  if (rendered.size() != target.size()) throw ShapeMismatch("photometric batch shapes differ");
  if (rendered.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) acc += (rendered[i] - target[i]).squaredNorm();
  return acc / (3.0 * static_cast<double>(rendered.size()));
}

Vec2 reprojection_residual(const Correspondence& m, const Pose& P1, const Pose& P2,
                           const Intrinsics& K, double z) {
  return project(backproject(m.q, P1, K, z), P2, K) - m.p;
}

double reprojection_loss(std::span<const Correspondence> matches, const Pose& P1, const Pose& P2,
                         const Intrinsics& K, const std::function<double(const Vec2&)>& depth_of,
                         int* skipped) {
  if (matches.empty()) return 0.0;
  double acc = 0.0;
  int skip = 0;
  for (const auto& m : matches) {
    try {
      acc += m.alpha * reprojection_residual(m, P1, P2, K, depth_of(m.q)).norm();
    } catch (const NonPositiveDepth&) {
      ++skip;
    }
  }
  if (skipped) *skipped = skip;
  return acc / static_cast<double>(matches.size());
}

namespace {

// One reprojection term: the ray of `task` is frame 1's ray through q, the
// rendered distance along it gives the 3D point, which is projected into P2.
RayLoss reprojection_term(const RenderResult& res, const RayTask& task, const Vec2& p, double weight,
                          const Pose& P2, const FramePoseJacobian& J2, const Intrinsics& K,
                          GradientSink& sink, bool& skipped) {
  RayLoss out;
  const Vec3 x = task.origin + res.depth * task.direction;
  ProjectionJacobian jac;
  Vec2 pix;
  try {
    pix = project(x, P2, K, &jac);
  } catch (const NonPositiveDepth&) {
    skipped = true;
    return out;
  }
  const Vec2 r = pix - p;
  const double n = r.norm();
  out.value = weight * n;
  if (n <= 1e-12) return out;
  const Vec2 g = (weight / n) * r;
  const Vec3 g_x = jac.d_point.transpose() * g;
  out.d_origin = g_x;
  out.d_direction = res.depth * g_x;
  out.d_depth = g_x.dot(task.direction);
  if (J2.rot_offset >= 0) sink.add(J2.rot_offset, jac.d_rotation.transpose() * g);
  if (J2.trans_offset >= 0) sink.add(J2.trans_offset, jac.d_translation.transpose() * g);
  return out;
}

RayTask ray_task(const Pose& pose, const Mat3& R, const Vec2& pixel, const Intrinsics& K, int frame) {
  RayTask t;
  t.dir_camera = camera_direction(pixel, K);
  t.origin = pose.translation;
  t.direction = R * t.dir_camera;
  t.frame = frame;
  return t;
}

}  // namespace

ReprojectionGradient reprojection_loss(std::span<const Correspondence> matches, const Pose& P1,
                                       const Pose& P2, const Intrinsics& K,
                                       const RadianceField& field, const TraceConfig& trace,
                                       std::span<const double> jitter, bool field_grad) {
  ReprojectionGradient out;
  if (matches.empty()) return out;
  const std::size_t fs = field_grad ? field.param_count() : 0;
  std::vector<double> grad(fs + 12, 0.0);
  std::vector<FramePoseJacobian> frames = {
      FramePoseJacobian::from_pose(P1, std::ptrdiff_t(fs), std::ptrdiff_t(fs + 3)),
      FramePoseJacobian::from_pose(P2, std::ptrdiff_t(fs + 6), std::ptrdiff_t(fs + 9))};

  std::vector<RayTask> tasks;
  for (const auto& m : matches) tasks.push_back(ray_task(P1, frames[0].R, m.q, K, 0));
  std::vector<char> skipped(tasks.size(), 0);
  const double scale = 1.0 / static_cast<double>(matches.size());

  TraceConfig cfg = trace;
  cfg.field_grad = field_grad;
  cfg.field_offset = 0;
  RayTracer tracer;
  const auto result = tracer.trace(
      field, cfg, tasks, jitter, frames,
      [&](std::size_t i, const RenderResult& res, GradientSink& sink) {
        bool skip = false;
        auto loss = reprojection_term(res, tasks[i], matches[i].p, scale * matches[i].alpha, P2,
                                      frames[1], K, sink, skip);
        skipped[i] = skip;
        return loss;
      },
      grad);

  out.value = result.loss;
  out.skipped = static_cast<int>(std::count(skipped.begin(), skipped.end(), 1));
  out.d_rot1 = Eigen::Map<const Vec3>(grad.data() + fs);
  out.d_trans1 = Eigen::Map<const Vec3>(grad.data() + fs + 3);
  out.d_rot2 = Eigen::Map<const Vec3>(grad.data() + fs + 6);
  out.d_trans2 = Eigen::Map<const Vec3>(grad.data() + fs + 9);
  if (field_grad) out.d_field.assign(grad.begin(), grad.begin() + std::ptrdiff_t(fs));
  return out;
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::init: return "init";
    case Stage::tracking: return "tracking";
    case Stage::window: return "window";
    case Stage::global: return "global";
    case Stage::post: return "post";
    case Stage::test: return "test";
  }
  return "?";
}

int FrameSet::learnable_pose_count() const {
  int n = 0;
  for (std::size_t k = 0; k < frames.size(); ++k) n += (learn_rotation[k] || learn_translation[k]);
  return n;
}

SparsePools build_sparse_pools(const CorrespondenceMap& corr, const CorrespondenceSamplingConfig& cfg,
                               std::uint64_t seed) {
  SparsePools pools;
  for (const auto& [key, set] : corr) {
    std::mt19937_64 rng(derive_seed(seed, {std::uint64_t(key.first), std::uint64_t(key.second)}));
    CorrespondenceSet sparse;
    try {
      sparse = select_sparse(set, cfg, rng);
    } catch (const NoConfidentMatches&) {
      continue;
    }
    pools[{key.second, key.first}] = sparse.reversed();
    pools[key] = std::move(sparse);
  }
  // Explicitly stored reversed pairs take precedence over derived reversals.
  for (const auto& [key, set] : corr) {
    if (!corr.count({key.second, key.first})) continue;
    std::mt19937_64 rng(derive_seed(seed, {std::uint64_t(key.first), std::uint64_t(key.second)}));
    try {
      pools[key] = select_sparse(set, cfg, rng);
    } catch (const NoConfidentMatches&) {
    }
  }
  return pools;
}

JointObjective::JointObjective(const Intrinsics& K, const std::vector<Image>& images,
                               const SparsePools& pools, LossConfig cfg)
    : K_(K), images_(images), pools_(pools), cfg_(std::move(cfg)) {}

std::vector<FramePair> JointObjective::directed_terms(const FrameSet& E) const {
  std::vector<FramePair> terms;
  const int n = static_cast<int>(E.frames.size());
  for (int k = 0; k < n; ++k)
    for (int nb : {k - 1, k + 1}) {
      if (nb < 0 || nb >= n) continue;
      const FramePair key{E.frames[k], E.frames[nb]};
      if (pools_.count(key)) terms.push_back(key);
    }
  return terms;
}

namespace {

struct TaskInfo {
  bool photometric = true;
  Vec3 target = Vec3::Zero();
  int other = -1;
  Vec2 p = Vec2::Zero();
  double weight = 0.0;
};

}  // namespace

LossBreakdown JointObjective::evaluate(const RadianceField& field, std::span<const Pose> poses,
                                       const FrameSet& E, std::mt19937_64& rng,
                                       std::span<double> grad, bool jitter) {
  if (cfg_.disable_photometric && cfg_.disable_reprojection)
    throw InvalidSpec("both loss terms are disabled");
  const ParamLayout layout = this->layout(field, poses.size());

  std::vector<FramePoseJacobian> jac(poses.size());
  for (std::size_t k = 0; k < E.frames.size(); ++k) {
    const int f = E.frames[k];
    jac[f] = FramePoseJacobian::from_pose(poses[f], E.learn_rotation[k] ? layout.rot_offset(f) : -1,
                                          E.learn_translation[k] ? layout.trans_offset(f) : -1);
  }

  std::vector<RayTask> tasks;
  std::vector<TaskInfo> info;
  LossBreakdown out;

  if (!cfg_.disable_photometric && !E.photometric_frames.empty()) {
    std::uniform_int_distribution<std::size_t> pick_frame(0, E.photometric_frames.size() - 1);
    std::uniform_int_distribution<int> pick_x(0, K_.width - 1), pick_y(0, K_.height - 1);
    for (int b = 0; b < cfg_.ray_batch; ++b) {
      const int f = E.photometric_frames[pick_frame(rng)];
      const int x = pick_x(rng);
      const int y = pick_y(rng);
      tasks.push_back(ray_task(poses[f], jac[f].R, Vec2(x + 0.5, y + 0.5), K_, f));
      info.push_back({true, images_[f].at(x, y), -1, Vec2::Zero(), 0.0});
    }
  }
  const std::size_t n_photo = tasks.size();

  if (!cfg_.disable_reprojection && E.size() >= 2) {
    const auto terms = directed_terms(E);
    const int ns = draws_per_pair(static_cast<int>(E.size()), cfg_.corr);
    out.directed_terms = static_cast<int>(terms.size());
    for (const auto& [a, b] : terms) {
      const auto& pool = pools_.at({a, b});
      const auto idx = sample_without_replacement(pool.matches.size(), std::size_t(ns), rng);
      const double scale = 1.0 / (static_cast<double>(idx.size()) * terms.size());
      for (std::size_t k : idx) {
        const auto& m = pool.matches[k];
        tasks.push_back(ray_task(poses[a], jac[a].R, m.q, K_, a));
        info.push_back({false, Vec3::Zero(), b, m.p, scale * m.alpha});
      }
    }
  }
  out.rays = static_cast<int>(tasks.size());
  out.correspondences = static_cast<int>(tasks.size() - n_photo);

  std::vector<double> jit;
  if (jitter) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    jit.resize(tasks.size() * std::size_t(cfg_.trace.samp.n_samples));
    for (auto& j : jit) j = u(rng);
  }

  TraceConfig tcfg = cfg_.trace;
  tcfg.field_grad = E.learn_field;
  tcfg.field_offset = 0;
  std::vector<char> skipped(tasks.size(), 0);
  const double photo_scale = n_photo ? 1.0 / (3.0 * static_cast<double>(n_photo)) : 0.0;

  const auto result = tracer_.trace(
      field, tcfg, tasks, jit, jac,
      [&](std::size_t i, const RenderResult& res, GradientSink& sink) {
        const TaskInfo& ti = info[i];
        if (ti.photometric) {
          RayLoss l;
          const Vec3 diff = res.color - ti.target;
          l.value = photo_scale * diff.squaredNorm();
          l.d_color = 2.0 * photo_scale * diff;
          return l;
        }
        bool skip = false;
        auto l = reprojection_term(res, tasks[i], ti.p, ti.weight, poses[ti.other], jac[ti.other], K_,
                                   sink, skip);
        skipped[i] = skip;
        return l;
      },
      grad);

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i < n_photo)
      out.photometric += result.rays[i].loss;
    else
      out.reprojection += result.rays[i].loss;
  }
  out.skipped = static_cast<int>(std::count(skipped.begin(), skipped.end(), 1));
  out.total = out.photometric + out.reprojection;
  return out;
}

double JointObjective::mean_residual(const RadianceField& field, std::span<const Pose> poses, int a,
                                     int b, std::size_t max_matches) {
  auto it = pools_.find({a, b});
  if (it == pools_.end()) return 0.0;
  const auto& matches = it->second.matches;
  const std::size_t n = std::min(max_matches, matches.size());
  std::vector<Ray> rays;
  for (std::size_t k = 0; k < n; ++k) rays.push_back(camera_ray(matches[k].q, poses[a], K_));
  const auto out = tracer_.render(field, cfg_.trace, rays);
  double acc = 0.0;
  int valid = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 x = rays[k].origin + out[k].depth * rays[k].direction;
    try {
      acc += (project(x, poses[b], K_) - matches[k].p).norm();
      ++valid;
    } catch (const NonPositiveDepth&) {
    }
  }
  return valid ? acc / valid : 0.0;
}

}  // namespace irb
