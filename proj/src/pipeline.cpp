#include "irb/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "irb/errors.hpp"
#include "irb/random.hpp"

namespace irb {

using nlohmann::json;

void PipelineConfig::validate() const {
  if (n_init < 2) throw ConfigError("n_init must be at least 2");
  if (n_window < 2) throw ConfigError("n_window must be at least 2");
  for (int b : {beta_init, beta_tracking, beta_window, beta_global, beta_post})
    if (b < 1) throw ConfigError("every stage needs at least one iteration");
  if (!(ramp_start < ramp_end && ramp_end <= beta_post))
    throw ConfigError("alpha_pe ramp needs ramp_start < ramp_end <= beta_post");
  if (alpha_start < 0.0 || alpha_start > field.l_pos) throw ConfigError("alpha_start outside [0, l_pos]");
  for (double lr : {lr_field_start, lr_field_end, lr_pose_start, lr_pose_end})
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (loss.ray_batch < 0) throw ConfigError("ray_batch must be nonnegative");
  if (loss.disable_photometric && loss.disable_reprojection)
    throw ConfigError("at least one loss term must stay enabled");
  loss.corr.validate();
  loss.trace.samp.validate();
}

std::vector<StagePlan> make_plan(const PipelineConfig& cfg, int n_frames) {
  if (n_frames < cfg.n_init)
    throw ConfigError("need at least n_init = " + std::to_string(cfg.n_init) + " frames, got " +
                      std::to_string(n_frames));
  std::vector<StagePlan> plan;
  plan.push_back({Stage::init, -1, cfg.beta_init});
  for (int i = cfg.n_init; i < n_frames; ++i) {
    if (!cfg.skip_tracking) plan.push_back({Stage::tracking, i, cfg.beta_tracking});
    if (!cfg.skip_window) plan.push_back({Stage::window, i, cfg.beta_window});
    if (!cfg.skip_global) plan.push_back({Stage::global, i, cfg.beta_global});
  }
  plan.push_back({Stage::post, -1, cfg.beta_post});
  return plan;
}

double post_lr_field(const PipelineConfig& cfg, long k) {
  return ExponentialSchedule{cfg.lr_field_start, cfg.lr_field_end, cfg.beta_post}.at(k);
}

double post_lr_pose(const PipelineConfig& cfg, long k) {
  return ExponentialSchedule{cfg.lr_pose_start, cfg.lr_pose_end, cfg.beta_post}.at(k);
}

double post_alpha(const PipelineConfig& cfg, long k) {
  if (k <= cfg.ramp_start) return cfg.alpha_start;
  if (k >= cfg.ramp_end) return cfg.field.l_pos;
  const double u = double(k - cfg.ramp_start) / double(cfg.ramp_end - cfg.ramp_start);
  return cfg.alpha_start + u * (cfg.field.l_pos - cfg.alpha_start);
}

namespace {

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::init, Stage::tracking, Stage::window, Stage::global, Stage::post, Stage::test})
    if (s == to_string(st)) return st;
  throw ParseError("unknown stage '" + s + "'", 0);
}

json record_json(const StageRecord& r) {
  return {{"type", "stage"},          {"stage", to_string(r.stage)},
          {"frame", r.frame},         {"index", r.index},
          {"iterations", r.iterations}, {"loss_first", r.loss_first},
          {"loss_last", r.loss_last}, {"photometric", r.photometric},
          {"reprojection", r.reprojection}, {"residual_px", r.residual_px},
          {"tracking_lost", r.tracking_lost}, {"skipped", r.skipped},
          {"seconds", r.seconds}};
}

StageRecord record_from_json(const json& j) {
  StageRecord r;
  r.stage = parse_stage(j.at("stage").get<std::string>());
  r.frame = j.at("frame");
  r.index = j.at("index");
  r.iterations = j.at("iterations");
  r.loss_first = j.at("loss_first");
  r.loss_last = j.at("loss_last");
  r.photometric = j.at("photometric");
  r.reprojection = j.at("reprojection");
  r.residual_px = j.at("residual_px");
  r.tracking_lost = j.at("tracking_lost");
  r.skipped = j.at("skipped");
  r.seconds = j.at("seconds");
  return r;
}

json loss_json(const LossSample& s) {
  return {{"type", "loss"},         {"iteration", s.iteration},     {"stage", to_string(s.stage)},
          {"total", s.total},       {"photometric", s.photometric}, {"reprojection", s.reprojection}};
}

}  // namespace

std::string to_json(const StageRecord& rec) { return record_json(rec).dump(); }
std::string to_json(const LossSample& s) { return loss_json(s).dump(); }

namespace {

SparsePools local_pools(const CorrespondenceMap& corr, const std::vector<int>& ids,
                        const CorrespondenceSamplingConfig& cfg, std::uint64_t seed) {
  std::map<int, int> local;
  for (std::size_t k = 0; k < ids.size(); ++k) local[ids[k]] = static_cast<int>(k);
  CorrespondenceMap remapped;
  for (const auto& [key, set] : corr) {
    auto a = local.find(key.first), b = local.find(key.second);
    if (a == local.end() || b == local.end()) continue;
    CorrespondenceSet s = set;
    s.frame_i = a->second;
    s.frame_j = b->second;
    remapped[{a->second, b->second}] = std::move(s);
  }
  return build_sparse_pools(remapped, cfg, seed);
}

}  // namespace

Reconstruction::Reconstruction(PipelineConfig cfg, const Intrinsics& K, std::vector<Image> images,
                               const CorrespondenceMap& corr, std::vector<int> frame_ids)
    : cfg_(std::move(cfg)),
      K_(K),
      images_(std::move(images)),
      frame_ids_(std::move(frame_ids)),
      objective_(K_, images_, pools_, cfg_.loss) {
  cfg_.validate();
  K_.validate();
  const int n = static_cast<int>(images_.size());
  if (frame_ids_.empty())
    for (int k = 0; k < n; ++k) frame_ids_.push_back(k);
  if (static_cast<int>(frame_ids_.size()) != n) throw LengthMismatch("frame ids and images differ in count");
  for (const auto& img : images_)
    if (img.width != K_.width || img.height != K_.height)
      throw ShapeMismatch("image size does not match the intrinsics");
  plan_ = make_plan(cfg_, n);

  pools_ = local_pools(corr, frame_ids_, cfg_.loss.corr, derive_seed(cfg_.seed, {0x5eed}));
  std::vector<int> locals(n);
  for (int k = 0; k < n; ++k) locals[k] = k;
  CorrespondenceMap present;
  for (const auto& [key, set] : pools_) present.emplace(key, CorrespondenceSet{});
  for (const auto& w : build_pose_graph(locals, present).warnings) warnings_.push_back(w);

  state_.seed = cfg_.seed;
  state_.field = RadianceField(cfg_.field);
  state_.field.initialize(derive_seed(cfg_.seed, {0xf1e1d}));
  state_.enc = {cfg_.field.l_pos, cfg_.field.l_dir, cfg_.alpha_start};
  state_.poses.assign(n, Pose::identity());
  state_.adam = AdamOptimizer(cfg_.adam);
}

void Reconstruction::log_line(const std::string& s) const {
  if (log) log(s);
}

FrameSet Reconstruction::frame_set(const StagePlan& plan) const {
  FrameSet E;
  E.stage = plan.stage;
  const int n = static_cast<int>(images_.size());
  auto all_learnable = [&](int first, int last) {
    for (int f = first; f <= last; ++f) {
      E.frames.push_back(f);
      E.learn_rotation.push_back(true);
      E.learn_translation.push_back(true);
    }
    E.photometric_frames = E.frames;
  };
  switch (plan.stage) {
    case Stage::init:
      for (int f = 0; f < cfg_.n_init; ++f) {
        E.frames.push_back(f);
        E.learn_rotation.push_back(false);
        E.learn_translation.push_back(true);
      }
      E.photometric_frames = E.frames;
      break;
    case Stage::tracking:
      E.frames = {plan.frame - 1, plan.frame};
      E.learn_rotation = {false, true};
      E.learn_translation = {false, true};
      E.learn_field = false;
      E.photometric_frames = {plan.frame};
      break;
    case Stage::window:
      all_learnable(std::max(0, plan.frame + 1 - cfg_.n_window), plan.frame);
      break;
    case Stage::global:
      all_learnable(0, plan.frame);
      break;
    case Stage::post:
    case Stage::test:
      all_learnable(0, n - 1);
      break;
  }
  return E;
}

void Reconstruction::optimize(const FrameSet& E, const StagePlan& plan, StageRecord& rec) {
  auto& st = state_;
  const std::size_t n = st.poses.size();
  std::vector<char> learn_rot(n, 0), learn_trans(n, 0);
  for (std::size_t k = 0; k < E.size(); ++k) {
    learn_rot[E.frames[k]] = E.learn_rotation[k];
    learn_trans[E.frames[k]] = E.learn_translation[k];
  }
  ParamView view;
  view.add("field", st.field.params(), ParamGroup::field, E.learn_field);
  for (std::size_t f = 0; f < n; ++f) {
    view.add("rot_" + std::to_string(f), {st.poses[f].rotation.data(), 3}, ParamGroup::pose, learn_rot[f]);
    view.add("trans_" + std::to_string(f), {st.poses[f].translation.data(), 3}, ParamGroup::pose,
             learn_trans[f]);
  }

  std::mt19937_64 rng(derive_seed(st.seed, {std::uint64_t(st.cursor), std::uint64_t(plan.stage)}));
  std::vector<double> grad(view.size());
  const bool post = plan.stage == Stage::post;

  for (int k = 0; k < plan.iterations; ++k) {
    const double lr_field = post ? post_lr_field(cfg_, k) : cfg_.lr_field_start;
    const double lr_pose = post ? post_lr_pose(cfg_, k) : cfg_.lr_pose_start;
    st.enc.alpha_pe = post ? post_alpha(cfg_, k) : cfg_.alpha_start;
    objective_.config().trace.enc = st.enc;

    std::fill(grad.begin(), grad.end(), 0.0);
    const LossBreakdown br = objective_.evaluate(st.field, st.poses, E, rng, grad, cfg_.jitter);
    bool finite = std::isfinite(br.total);
    if (finite) {
      try {
        check_finite(grad);
      } catch (const NonFiniteGradient&) {
        finite = false;
      }
    }
    if (!finite) {
      const std::string where = std::string(to_string(plan.stage)) + " iteration " + std::to_string(k);
      if (plan.stage == Stage::init) throw InitializationDiverged("non-finite loss at " + where);
      throw NonFiniteGradient("non-finite loss or gradient at " + where);
    }
    clip_gradients(view, grad, cfg_.adam.clip_norm);
    st.adam.step(view, grad, {{ParamGroup::field, lr_field}, {ParamGroup::pose, lr_pose}});

    if (k == 0) rec.loss_first = br.total;
    rec.loss_last = br.total;
    rec.photometric = br.photometric;
    rec.reprojection = br.reprojection;
    rec.skipped += br.skipped;
    st.losses.push_back({st.iterations, plan.stage, br.total, br.photometric, br.reprojection});
    ++st.iterations;
  }
  rec.iterations = plan.iterations;
}

StageRecord Reconstruction::run_stage() {
  if (done()) throw ConfigError("reconstruction already finished");
  const auto t0 = std::chrono::steady_clock::now();
  auto& st = state_;
  const StagePlan& plan = plan_[st.cursor];

  // Frames join with the previous frame's pose.
  const int target = plan.frame >= 0 ? plan.frame + 1 : (plan.stage == Stage::post ? int(st.poses.size())
                                                                                     : cfg_.n_init);
  for (int f = std::max(st.added, 1); f < target; ++f) {
    if (plan.stage != Stage::init) st.poses[f] = st.poses[f - 1];
  }
  st.added = std::max(st.added, target);

  StageRecord rec;
  rec.stage = plan.stage;
  rec.frame = plan.frame;
  rec.index = st.cursor;
  const FrameSet E = frame_set(plan);
  optimize(E, plan, rec);

  if (plan.stage == Stage::tracking) {
    rec.residual_px = objective_.mean_residual(st.field, st.poses, plan.frame, plan.frame - 1);
    rec.tracking_lost = rec.residual_px > cfg_.tracking_lost_px;
    if (rec.tracking_lost)
      log_line("warning: tracking lost on frame " + std::to_string(frame_ids_[plan.frame]) +
               " (residual " + std::to_string(rec.residual_px) + " px)");
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  st.stages.push_back(rec);
  ++st.cursor;

  std::ostringstream msg;
  msg << "stage " << rec.index + 1 << "/" << plan_.size() << " " << to_string(rec.stage);
  if (rec.frame >= 0) msg << " frame " << frame_ids_[rec.frame];
  msg << " iterations " << rec.iterations << " (total " << st.iterations << ") loss "
      << rec.loss_first << " -> " << rec.loss_last;
  log_line(msg.str());
  return rec;
}

void Reconstruction::run(const std::function<bool(const StageRecord&)>& on_stage,
                         const std::string& snapshot_dir) {
  while (!done()) {
    ReconstructionState before = state_;
    StageRecord rec;
    try {
      rec = run_stage();
    } catch (const Error&) {
      if (!snapshot_dir.empty()) {
        state_ = std::move(before);
        save_checkpoint(snapshot_dir);
        log_line("stage failed; resumable state written to " + snapshot_dir);
      }
      throw;
    }
    if (on_stage && !on_stage(rec)) return;
  }
}

void Reconstruction::save_checkpoint(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  save_field(dir + "/field.bin", state_.field, state_.enc);
  {
    std::ofstream os(dir + "/adam.bin", std::ios::binary);
    if (!os) throw IoError("cannot write " + dir + "/adam.bin");
    state_.adam.save(os);
  }
  json j;
  j["format"] = "IRB-STATE-v1";
  j["frames"] = state_.poses.size();
  j["plan_size"] = plan_.size();
  j["added"] = state_.added;
  j["cursor"] = state_.cursor;
  j["iterations"] = state_.iterations;
  j["seed"] = state_.seed;
  json poses = json::array();
  for (const auto& p : state_.poses)
    poses.push_back({p.rotation.x(), p.rotation.y(), p.rotation.z(), p.translation.x(),
                     p.translation.y(), p.translation.z()});
  j["poses"] = poses;
  json stages = json::array();
  for (const auto& r : state_.stages) stages.push_back(record_json(r));
  j["stages"] = stages;
  json losses = json::array();
  for (const auto& s : state_.losses)
    losses.push_back({s.iteration, to_string(s.stage), s.total, s.photometric, s.reprojection});
  j["losses"] = losses;
  std::ofstream os(dir + "/state.json");
  if (!os) throw IoError("cannot write " + dir + "/state.json");
  os << j.dump() << '\n';
}

void Reconstruction::load_checkpoint(const std::string& dir) {
  std::ifstream is(dir + "/state.json");
  if (!is) throw IoError("cannot open " + dir + "/state.json");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(std::string("state.json: ") + e.what(), 1);
  }
  if (j.value("format", "") != "IRB-STATE-v1") throw ParseError("state.json: unknown format", 1);
  if (j.at("frames").get<std::size_t>() != state_.poses.size() ||
      j.at("plan_size").get<std::size_t>() != plan_.size())
    throw ConfigError("checkpoint was written for a different frame count or schedule");

  ReconstructionState st;
  EncodingConfig enc;
  st.field = load_field(dir + "/field.bin", &enc);
  if (!(st.field.spec() == cfg_.field)) throw ConfigError("checkpoint field spec differs from the config");
  st.enc = enc;
  st.adam = AdamOptimizer(cfg_.adam);
  {
    std::ifstream as(dir + "/adam.bin", std::ios::binary);
    if (!as) throw IoError("cannot open " + dir + "/adam.bin");
    st.adam.load(as);
  }
  st.added = j.at("added");
  st.cursor = j.at("cursor");
  st.iterations = j.at("iterations");
  st.seed = j.at("seed");
  for (const auto& p : j.at("poses")) {
    Pose pose;
    pose.rotation = Vec3(p[0], p[1], p[2]);
    pose.translation = Vec3(p[3], p[4], p[5]);
    st.poses.push_back(pose);
  }
  for (const auto& r : j.at("stages")) st.stages.push_back(record_from_json(r));
  for (const auto& s : j.at("losses"))
    st.losses.push_back({s[0].get<long>(), parse_stage(s[1].get<std::string>()), s[2], s[3], s[4]});
  state_ = std::move(st);
}

Trajectory Reconstruction::trajectory() const {
  Trajectory t;
  for (int f = 0; f < state_.added; ++f) t.push_back({frame_ids_[f], state_.poses[f]});
  return t;
}

}  // namespace irb
