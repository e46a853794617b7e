#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irb/correspond.hpp"
#include "irb/field.hpp"
#include "irb/geometry.hpp"
#include "irb/grad.hpp"
#include "irb/image.hpp"
#include "irb/losses.hpp"

namespace irb {

struct PipelineConfig {
  int n_init = 3;
  int n_window = 4;

  int beta_init = 200;
  int beta_tracking = 10;
  int beta_window = 20;
  int beta_global = 50;
  int beta_post = 20000;
  int ramp_start = 2000;  // post iterations at which alpha_pe leaves alpha_start
  int ramp_end = 10000;   // ... and reaches L_pos
  double alpha_start = 0.0;

  double lr_field_start = 1e-3, lr_field_end = 1e-4;
  double lr_pose_start = 3e-3, lr_pose_end = 1e-5;

  double tracking_lost_px = 20.0;

  // Stage-skip switches for ablations.
  bool skip_tracking = false;
  bool skip_window = false;
  bool skip_global = false;

  FieldSpec field;
  LossConfig loss;
  AdamConfig adam;
  bool jitter = true;
  std::uint64_t seed = 1;

  void validate() const;
};

// One entry of the stage schedule. `frame` is the frame being added (-1 for
// init and post).
struct StagePlan {
  Stage stage = Stage::init;
  int frame = -1;
  int iterations = 0;
};

struct StageRecord {
  Stage stage = Stage::init;
  int frame = -1;
  int index = 0;  // position in the plan
  int iterations = 0;
  double loss_first = 0.0;
  double loss_last = 0.0;
  double photometric = 0.0;   // last iteration
  double reprojection = 0.0;  // last iteration
  double residual_px = 0.0;   // tracking only: mean residual to the previous frame
  bool tracking_lost = false;
  int skipped = 0;
  double seconds = 0.0;
};

struct LossSample {
  long iteration = 0;  // global iteration counter
  Stage stage = Stage::init;
  double total = 0.0, photometric = 0.0, reprojection = 0.0;
};

// Everything needed to continue a run from a stage boundary.
struct ReconstructionState {
  RadianceField field;
  EncodingConfig enc;
  std::vector<Pose> poses;  // one per training frame; valid for [0, added)
  int added = 0;
  int cursor = 0;  // next plan entry
  long iterations = 0;
  std::vector<StageRecord> stages;
  std::vector<LossSample> losses;
  AdamOptimizer adam;
  std::uint64_t seed = 1;
};

class Reconstruction {
 public:
  // images[k] is training frame k with dataset id frame_ids[k] (defaults to
  // k). Correspondences are keyed by dataset ids; pairs touching non-training
  // frames are ignored.
  Reconstruction(PipelineConfig cfg, const Intrinsics& K, std::vector<Image> images,
                 const CorrespondenceMap& corr, std::vector<int> frame_ids = {});
  Reconstruction(const Reconstruction&) = delete;
  Reconstruction& operator=(const Reconstruction&) = delete;

  const PipelineConfig& config() const { return cfg_; }
  const std::vector<StagePlan>& plan() const { return plan_; }
  ReconstructionState& state() { return state_; }
  const ReconstructionState& state() const { return state_; }
  JointObjective& objective() { return objective_; }
  const SparsePools& pools() const { return pools_; }
  const std::vector<int>& frame_ids() const { return frame_ids_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool done() const { return state_.cursor >= static_cast<int>(plan_.size()); }

  // Frame set of a plan entry given the current state.
  FrameSet frame_set(const StagePlan& plan) const;

  // Runs the next plan entry.
  StageRecord run_stage();
  // Runs to completion; on_stage may return false to stop early. On a stage
  // error the state at that stage's start is written to snapshot_dir (when
  // set) before rethrowing.
  void run(const std::function<bool(const StageRecord&)>& on_stage = {},
           const std::string& snapshot_dir = {});

  // Stage-boundary checkpoint: field.bin, adam.bin, state.json.
  void save_checkpoint(const std::string& dir) const;
  void load_checkpoint(const std::string& dir);

  Trajectory trajectory() const;
  std::function<void(const std::string&)> log;

 private:
  void optimize(const FrameSet& E, const StagePlan& plan, StageRecord& rec);
  void log_line(const std::string& s) const;

  PipelineConfig cfg_;
  Intrinsics K_;
  std::vector<Image> images_;
  std::vector<int> frame_ids_;
  SparsePools pools_;
  std::vector<StagePlan> plan_;
  std::vector<std::string> warnings_;
  ReconstructionState state_;
  JointObjective objective_;
};

// Builds the stage schedule for n_frames training frames.
std::vector<StagePlan> make_plan(const PipelineConfig& cfg, int n_frames);

// Learning rates and alpha_pe at post-optimization iteration k.
double post_lr_field(const PipelineConfig& cfg, long k);
double post_lr_pose(const PipelineConfig& cfg, long k);
double post_alpha(const PipelineConfig& cfg, long k);

// JSON line-delimited report records.
std::string to_json(const StageRecord& rec);
std::string to_json(const LossSample& s);

}  // namespace irb
