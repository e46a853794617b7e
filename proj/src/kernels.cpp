#include "irb/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <exception>

namespace irb {

FramePoseJacobian FramePoseJacobian::from_pose(const Pose& pose, std::ptrdiff_t rot_offset,
                                               std::ptrdiff_t trans_offset) {
  FramePoseJacobian J;
  J.R = pose.R();
  J.dR = so3_exp_derivatives(pose.rotation);
  J.rot_offset = rot_offset;
  J.trans_offset = trans_offset;
  return J;
}

void GradientSink::add_pose(const FramePoseJacobian& J, const Mat3& d_R, const Vec3& d_t) {
  if (J.rot_offset >= 0)
    for (int k = 0; k < 3; ++k) g_[J.rot_offset + k] += d_R.cwiseProduct(J.dR[k]).sum();
  add(J.trans_offset, d_t);
}

namespace {

struct Block {
  std::vector<double> s;
  Eigen::Matrix3Xd points, dirs;
  FieldWorkspace ws;
};

void sample_block(const TraceConfig& cfg, std::span<const RayTask> tasks, std::size_t begin,
                  std::size_t end, std::span<const double> jitter, Block& b) {
  const std::size_t S = cfg.samp.n_samples;
  const std::size_t N = (end - begin) * S;
  b.s.resize(N);
  b.points.resize(3, static_cast<Eigen::Index>(N));
  b.dirs.resize(3, static_cast<Eigen::Index>(N));
  for (std::size_t r = begin; r < end; ++r) {
    const std::size_t base = (r - begin) * S;
    std::span<double> s(b.s.data() + base, S);
    sample_ray(cfg.samp, jitter.empty() ? jitter : jitter.subspan(r * S, S), s);
    for (std::size_t i = 0; i < S; ++i) {
      const auto col = static_cast<Eigen::Index>(base + i);
      b.points.col(col) = tasks[r].origin + s[i] * tasks[r].direction;
      b.dirs.col(col) = tasks[r].direction;
    }
  }
}

// Forward, loss terms, and backward for tasks [begin, end), accumulating into
// grad. Returns the summed loss.
double process_block(const RadianceField& field, const TraceConfig& cfg,
                     std::span<const RayTask> tasks, std::size_t begin, std::size_t end,
                     std::span<const double> jitter, std::span<const FramePoseJacobian> frames,
                     const RayTermFn& term, std::span<double> grad, Block& b,
                     std::span<RayOutput> outputs) {
  const std::size_t S = cfg.samp.n_samples;
  const std::size_t nr = end - begin;
  sample_block(cfg, tasks, begin, end, jitter, b);
  b.ws.forward(field, cfg.enc, b.points, b.dirs);

  const auto N = static_cast<Eigen::Index>(nr * S);
  Eigen::RowVectorXd d_density = Eigen::RowVectorXd::Zero(N);
  Eigen::Matrix3Xd d_color = Eigen::Matrix3Xd::Zero(3, N);
  std::vector<RayLoss> losses(nr);
  bool need_backward = false;
  bool need_points = false;
  GradientSink sink(grad);
  double total = 0.0;

  for (std::size_t r = 0; r < nr; ++r) {
    const std::size_t base = r * S;
    const auto col0 = static_cast<Eigen::Index>(base);
    std::span<const double> s(b.s.data() + base, S);
    std::span<const double> sigma(b.ws.density().data() + base, S);
    const auto colors = b.ws.color().middleCols(col0, static_cast<Eigen::Index>(S));
    const RenderResult res = composite(s, sigma, colors, cfg.samp.far_cap, cfg.background);
    const RayLoss loss = term(begin + r, res, sink);
    losses[r] = loss;
    total += loss.value;
    outputs[r] = {res.color, res.depth, res.weight_sum, loss.value};

    const int frame = tasks[begin + r].frame;
    const bool tracked = frame >= 0 && frames[frame].tracked();
    const bool upstream = loss.d_color.squaredNorm() > 0.0 || loss.d_depth != 0.0;
    if (upstream && (cfg.field_grad || tracked)) {
      composite_backward(s, sigma, colors, cfg.samp.far_cap, cfg.background, res, loss.d_color,
                         loss.d_depth, {d_density.data() + base, S},
                         d_color.middleCols(col0, static_cast<Eigen::Index>(S)));
      need_backward = true;
      need_points = need_points || tracked;
    }
  }

  Eigen::Matrix3Xd d_points, d_dirs;
  if (need_backward) {
    std::span<double> d_params;
    if (cfg.field_grad) d_params = grad.subspan(cfg.field_offset, field.param_count());
    b.ws.backward(field, cfg.enc, d_density, d_color, d_params, need_points ? &d_points : nullptr,
                  need_points ? &d_dirs : nullptr);
  }

  for (std::size_t r = 0; r < nr; ++r) {
    const RayTask& task = tasks[begin + r];
    if (task.frame < 0 || !frames[task.frame].tracked()) continue;
    Vec3 g_o = losses[r].d_origin;
    Vec3 g_d = losses[r].d_direction;
    if (need_points) {
      const std::size_t base = r * S;
      for (std::size_t i = 0; i < S; ++i) {
        const auto c = static_cast<Eigen::Index>(base + i);
        g_o += d_points.col(c);
        g_d += b.s[base + i] * d_points.col(c) + d_dirs.col(c);
      }
    }
    // direction = R * dir_camera, origin = t
    sink.add_pose(frames[task.frame], g_d * task.dir_camera.transpose(), g_o);
  }
  return total;
}

}  // namespace

TraceResult RayTracer::trace(const RadianceField& field, const TraceConfig& cfg,
                             std::span<const RayTask> tasks, std::span<const double> jitter,
                             std::span<const FramePoseJacobian> frames, const RayTermFn& term,
                             std::span<double> grad) {
  const std::size_t chunk = std::max(cfg.chunk_rays, 1);
  const std::size_t n_chunks = (tasks.size() + chunk - 1) / chunk;
  if (chunk_grads_.size() < n_chunks) chunk_grads_.resize(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) chunk_grads_[c].assign(grad.size(), 0.0);

  TraceResult result;
  result.rays.resize(tasks.size());
  std::vector<double> chunk_loss(n_chunks, 0.0);
  std::exception_ptr error;

#pragma omp parallel
  {
    Block block;
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
      const std::size_t begin = c * chunk;
      const std::size_t end = std::min(tasks.size(), begin + chunk);
      try {
        chunk_loss[c] = process_block(field, cfg, tasks, begin, end, jitter, frames, term,
                                      chunk_grads_[c], block,
                                      std::span(result.rays).subspan(begin, end - begin));
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);

  for (std::size_t c = 0; c < n_chunks; ++c) {
    result.loss += chunk_loss[c];
    const auto& g = chunk_grads_[c];
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  return result;
}

TraceResult RayTracer::trace_serial(const RadianceField& field, const TraceConfig& cfg,
                                    std::span<const RayTask> tasks, std::span<const double> jitter,
                                    std::span<const FramePoseJacobian> frames,
                                    const RayTermFn& term, std::span<double> grad) {
  TraceResult result;
  result.rays.resize(tasks.size());
  Block block;
  for (std::size_t r = 0; r < tasks.size(); ++r)
    result.loss += process_block(field, cfg, tasks, r, r + 1, jitter, frames, term, grad, block,
                                 std::span(result.rays).subspan(r, 1));
  return result;
}

std::vector<RayOutput> RayTracer::render(const RadianceField& field, const TraceConfig& cfg,
                                         std::span<const Ray> rays,
                                         std::span<const double> jitter) {
  const std::size_t chunk = std::max(cfg.chunk_rays, 1);
  const std::size_t n_chunks = (rays.size() + chunk - 1) / chunk;
  const std::size_t S = cfg.samp.n_samples;
  std::vector<RayOutput> out(rays.size());
  std::vector<RayTask> tasks(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    tasks[r].origin = rays[r].origin;
    tasks[r].direction = rays[r].direction;
  }

#pragma omp parallel
  {
    Block b;
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
      const std::size_t begin = c * chunk;
      const std::size_t end = std::min(rays.size(), begin + chunk);
      sample_block(cfg, tasks, begin, end, jitter, b);
      b.ws.forward(field, cfg.enc, b.points, b.dirs);
      for (std::size_t r = begin; r < end; ++r) {
        const std::size_t base = (r - begin) * S;
        const RenderResult res =
            composite({b.s.data() + base, S}, {b.ws.density().data() + base, S},
                      b.ws.color().middleCols(static_cast<Eigen::Index>(base),
                                              static_cast<Eigen::Index>(S)),
                      cfg.samp.far_cap, cfg.background);
        out[r] = {res.color, res.depth, res.weight_sum, 0.0};
      }
    }
  }
  return out;
}

}  // namespace irb
