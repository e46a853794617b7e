#pragma once

#include <map>
#include <string>
#include <vector>

#include "irb/field.hpp"
#include "irb/geometry.hpp"
#include "irb/image.hpp"
#include "irb/kernels.hpp"

namespace irb {

// 10 log10(1 / MSE) over all pixels and channels; `cap` when MSE is zero or
// the value would exceed it.
double psnr(const Image& a, const Image& b, double cap = 100.0);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) of the luma
// channels, C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);
// Luma 0.299 R + 0.587 G + 0.114 B, row-major.
std::vector<double> luma(const Image& img);

enum class TestInit { neighbor, sim3 };
std::string to_string(TestInit mode);
TestInit parse_test_init(const std::string& s);

struct EvalConfig {
  int stride = 8;  // frame i is held out when i % stride == stride - 1; 0 disables
  TestInit init = TestInit::sim3;
  int iterations = 100;
  double lr = 1e-3;
  int pixels = 512;  // fixed photometric subset per test view
  double psnr_cap = 100.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Held-out frame ids among 0..n-1 under cfg.stride.
std::vector<int> test_frame_ids(int n, int stride);
bool is_test_frame(int id, int stride);

struct ViewMetrics {
  int frame_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double loss_initial = 0.0;  // photometric loss on the subset
  double loss_final = 0.0;
  Pose init_pose, final_pose;
};

struct RenderedView {
  Image color;
  DepthMap depth;  // distance along each pixel's unit ray
};

// Midpoint rendering of a full image.
RenderedView render_view(const RadianceField& field, const TraceConfig& trace, const Pose& pose,
                         const Intrinsics& K);

// Index of the training frame whose GT center is nearest to the test frame's
// GT center, lowest index on ties.
std::size_t nearest_training_frame(const Trajectory& train_gt, const Pose& test_gt);

struct TestView {
  int frame_id = 0;
  Image image;
  Pose gt;
};

// Test-time pose optimization for the held-out views: photometric loss on a
// fixed pixel subset, only the view's pose learnable, best iterate kept. The
// field and training poses are read-only.
std::vector<ViewMetrics> evaluate_test_views(const RadianceField& field, const TraceConfig& trace,
                                             const Intrinsics& K, const Trajectory& train_est,
                                             const Trajectory& train_gt,
                                             const std::vector<TestView>& views,
                                             const EvalConfig& cfg,
                                             std::vector<RenderedView>* renders = nullptr);

struct EvalReport {
  PoseErrorReport centers;
  PoseErrorReport with_rotation;
  Sim3 alignment_centers, alignment_with_rotation;
  double extent = 0.0;  // GT trajectory extent
  std::vector<ViewMetrics> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::map<std::string, std::string> flags;  // ablation switches and run settings, echoed
};

// Pose errors under both alignments plus the view metrics means.
EvalReport make_report(const Trajectory& est, const Trajectory& gt, std::vector<ViewMetrics> views,
                       std::map<std::string, std::string> flags = {});

// JSON line-delimited records: "summary", "frame" (pose errors), "view".
std::string report_jsonl(const EvalReport& r);
EvalReport parse_report_jsonl(const std::string& text);
std::string report_table(const EvalReport& r);

}  // namespace irb
