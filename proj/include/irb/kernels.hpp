#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "irb/field.hpp"
#include "irb/geometry.hpp"
#include "irb/render.hpp"

namespace irb {

// Rotation matrix, its parameter derivatives, and where the frame's pose
// gradient lives in the flat gradient vector (-1: not tracked).
struct FramePoseJacobian {
  Mat3 R = Mat3::Identity();
  std::array<Mat3, 3> dR{};
  std::ptrdiff_t rot_offset = -1;
  std::ptrdiff_t trans_offset = -1;

  static FramePoseJacobian from_pose(const Pose& pose, std::ptrdiff_t rot_offset,
                                     std::ptrdiff_t trans_offset);
  bool tracked() const { return rot_offset >= 0 || trans_offset >= 0; }
};

struct RayTask {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();   // world frame, unit length
  Vec3 dir_camera = Vec3::UnitZ();  // camera frame, unit length
  int frame = -1;                   // index into the FramePoseJacobian list
};

// Gradient accumulator handed to loss terms. Writes go to the buffer of the
// chunk being processed, so terms never race.
class GradientSink {
 public:
  explicit GradientSink(std::span<double> g) : g_(g) {}
  void add(std::ptrdiff_t offset, const Vec3& v) {
    if (offset < 0) return;
    g_[offset] += v.x();
    g_[offset + 1] += v.y();
    g_[offset + 2] += v.z();
  }
  // Adds dL/dR (through dR/domega) and dL/dt for a camera pose.
  void add_pose(const FramePoseJacobian& J, const Mat3& d_R, const Vec3& d_t);

 private:
  std::span<double> g_;
};

// What a loss term reports for one rendered ray: its contribution to the loss
// and the gradient with respect to the ray's rendered color, rendered depth,
// origin and direction. Anything else (e.g. a second pose) goes to the sink.
struct RayLoss {
  double value = 0.0;
  Vec3 d_color = Vec3::Zero();
  double d_depth = 0.0;
  Vec3 d_origin = Vec3::Zero();
  Vec3 d_direction = Vec3::Zero();
};

using RayTermFn = std::function<RayLoss(std::size_t task, const RenderResult& r, GradientSink& sink)>;

struct TraceConfig {
  EncodingConfig enc;
  SamplingConfig samp;
  Vec3 background = Vec3::Zero();
  bool field_grad = true;        // accumulate dL/dTheta
  std::size_t field_offset = 0;  // Theta's offset in the gradient vector
  int chunk_rays = 32;           // rays per work unit and per-chunk buffer
};

struct RayOutput {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double weight_sum = 0.0;
  double loss = 0.0;
};

struct TraceResult {
  double loss = 0.0;
  std::vector<RayOutput> rays;
};

// Forward + backward over batches of rays. trace() splits the rays into fixed
// chunks, runs them under OpenMP with one gradient buffer per chunk, and sums
// the buffers in chunk order, so the result does not depend on the thread
// count. trace_serial() is the one-ray-at-a-time reference.
class RayTracer {
 public:
  TraceResult trace(const RadianceField& field, const TraceConfig& cfg,
                    std::span<const RayTask> tasks, std::span<const double> jitter,
                    std::span<const FramePoseJacobian> frames, const RayTermFn& term,
                    std::span<double> grad);

  TraceResult trace_serial(const RadianceField& field, const TraceConfig& cfg,
                           std::span<const RayTask> tasks, std::span<const double> jitter,
                           std::span<const FramePoseJacobian> frames, const RayTermFn& term,
                           std::span<double> grad);

  // Forward only, midpoint samples unless jitter is given.
  std::vector<RayOutput> render(const RadianceField& field, const TraceConfig& cfg,
                                std::span<const Ray> rays, std::span<const double> jitter = {});

 private:
  std::vector<std::vector<double>> chunk_grads_;
};

}  // namespace irb
