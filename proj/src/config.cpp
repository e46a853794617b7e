#include "irb/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "irb/errors.hpp"

namespace irb {

Intrinsics SynthConfig::intrinsics() const {
  return {focal, focal, width / 2.0, height / 2.0, width, height};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key + ": expected a seed, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Vec3 to_vec3(const std::string& key, const std::string& v) {
  std::string s = v;
  for (auto& c : s)
    if (c == ',') c = ' ';
  std::istringstream is(s);
  Vec3 out;
  std::string extra;
  if (!(is >> out.x() >> out.y() >> out.z()) || (is >> extra))
    throw ConfigError(key + ": expected three comma-separated numbers, got '" + v + "'");
  return out;
}

std::string fmt(const Vec3& v) { return fmt(v.x()) + "," + fmt(v.y()) + "," + fmt(v.z()); }

template <class T, class M>
ConfigKey num_key(std::string name, std::string help, M member) {
  ConfigKey k{name, std::move(help), nullptr, nullptr};
  k.set = [name, member](RunConfig& c, const std::string& v) {
    auto& ref = member(c);
    if constexpr (std::is_same_v<T, double>)
      ref = to_double(name, v);
    else if constexpr (std::is_same_v<T, bool>)
      ref = to_bool(name, v);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      ref = to_u64(name, v);
    else
      ref = static_cast<T>(to_int(name, v));
  };
  k.get = [member](const RunConfig& c) {
    const auto& ref = member(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, double>)
      return fmt(ref);
    else if constexpr (std::is_same_v<T, bool>)
      return std::string(ref ? "true" : "false");
    else
      return std::to_string(ref);
  };
  return k;
}

#define IRB_NUM(T, name, help, expr) num_key<T>(name, help, [](RunConfig& c) -> auto& { return expr; })

std::vector<ConfigKey> build_schema() {
  std::vector<ConfigKey> s = {
      // paths
      {"scene", "scene bundle directory", [](RunConfig& c, const std::string& v) { c.scene = v; },
       [](const RunConfig& c) { return c.scene; }},
      {"output", "run output directory", [](RunConfig& c, const std::string& v) { c.output = v; },
       [](const RunConfig& c) { return c.output; }},
      IRB_NUM(int, "threads", "worker threads, 0 = default", c.threads),
      IRB_NUM(std::uint64_t, "seed", "run seed", c.pipeline.seed),
      // schedule
      IRB_NUM(int, "n_init", "frames in the initialization set", c.pipeline.n_init),
      IRB_NUM(int, "n_window", "frames in the optimization window", c.pipeline.n_window),
      IRB_NUM(int, "beta_init", "initialization iterations", c.pipeline.beta_init),
      IRB_NUM(int, "beta_tracking", "tracking iterations per frame", c.pipeline.beta_tracking),
      IRB_NUM(int, "beta_window", "window iterations per frame", c.pipeline.beta_window),
      IRB_NUM(int, "beta_global", "global iterations per frame", c.pipeline.beta_global),
      IRB_NUM(int, "beta_post", "post-optimization iterations", c.pipeline.beta_post),
      IRB_NUM(int, "ramp_start", "post iteration where alpha_pe starts rising", c.pipeline.ramp_start),
      IRB_NUM(int, "ramp_end", "post iteration where alpha_pe reaches l_pos", c.pipeline.ramp_end),
      IRB_NUM(double, "alpha_start", "alpha_pe before and at the ramp start", c.pipeline.alpha_start),
      IRB_NUM(double, "lr_field_start", "field learning rate before post / at post start", c.pipeline.lr_field_start),
      IRB_NUM(double, "lr_field_end", "field learning rate at the end of post", c.pipeline.lr_field_end),
      IRB_NUM(double, "lr_pose_start", "pose learning rate before post / at post start", c.pipeline.lr_pose_start),
      IRB_NUM(double, "lr_pose_end", "pose learning rate at the end of post", c.pipeline.lr_pose_end),
      IRB_NUM(double, "tracking_lost_px", "advisory tracking residual threshold", c.pipeline.tracking_lost_px),
      IRB_NUM(bool, "skip_tracking", "ablation: no tracking stage", c.pipeline.skip_tracking),
      IRB_NUM(bool, "skip_window", "ablation: no window stage", c.pipeline.skip_window),
      IRB_NUM(bool, "skip_global", "ablation: no per-frame global stage", c.pipeline.skip_global),
      IRB_NUM(bool, "disable_reprojection", "ablation: drop the reprojection term", c.pipeline.loss.disable_reprojection),
      IRB_NUM(bool, "disable_photometric", "ablation: drop the photometric term", c.pipeline.loss.disable_photometric),
      IRB_NUM(bool, "jitter", "stratified jitter during training", c.pipeline.jitter),
      IRB_NUM(double, "clip_norm", "global gradient-norm clip, <= 0 disables", c.pipeline.adam.clip_norm),
      // field
      IRB_NUM(int, "field_depth", "trunk layers", c.pipeline.field.depth),
      IRB_NUM(int, "field_width", "trunk width", c.pipeline.field.width),
      IRB_NUM(int, "field_color_width", "color head hidden width", c.pipeline.field.color_width),
      IRB_NUM(int, "l_pos", "position frequency bands", c.pipeline.field.l_pos),
      IRB_NUM(int, "l_dir", "direction frequency bands", c.pipeline.field.l_dir),
      // rendering and losses
      IRB_NUM(int, "ray_batch", "photometric rays per iteration", c.pipeline.loss.ray_batch),
      IRB_NUM(std::size_t, "corr_pool", "sparse correspondence pool per pair (N_m)", c.pipeline.loss.corr.pool),
      IRB_NUM(double, "corr_threshold", "confidence threshold (t_m)", c.pipeline.loss.corr.threshold),
      IRB_NUM(int, "corr_budget", "correspondence draws per iteration over |E|", c.pipeline.loss.corr.budget),
      IRB_NUM(int, "n_samples", "samples per ray", c.pipeline.loss.trace.samp.n_samples),
      {"sampling", "inverse_depth or uniform",
       [](RunConfig& c, const std::string& v) {
         try {
           c.pipeline.loss.trace.samp.mode = parse_sampling_mode(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("sampling: ") + e.what());
         }
       },
       [](const RunConfig& c) { return to_string(c.pipeline.loss.trace.samp.mode); }},
      IRB_NUM(double, "inv_near", "inverse depth of the first stratum edge", c.pipeline.loss.trace.samp.inv_near),
      IRB_NUM(double, "inv_far", "inverse depth of the last stratum edge", c.pipeline.loss.trace.samp.inv_far),
      IRB_NUM(double, "near", "uniform mode near depth", c.pipeline.loss.trace.samp.near),
      IRB_NUM(double, "far", "uniform mode far depth", c.pipeline.loss.trace.samp.far),
      IRB_NUM(double, "far_cap", "end of the last quadrature interval", c.pipeline.loss.trace.samp.far_cap),
      {"background", "background color r,g,b",
       [](RunConfig& c, const std::string& v) { c.pipeline.loss.trace.background = to_vec3("background", v); },
       [](const RunConfig& c) { return fmt(c.pipeline.loss.trace.background); }},
      IRB_NUM(int, "chunk_rays", "rays per parallel work unit", c.pipeline.loss.trace.chunk_rays),
      // evaluation
      IRB_NUM(int, "test_stride", "hold out frame i when i % stride == stride - 1; 0 = none", c.eval.stride),
      {"test_init", "neighbor or sim3",
       [](RunConfig& c, const std::string& v) { c.eval.init = parse_test_init(v); },
       [](const RunConfig& c) { return to_string(c.eval.init); }},
      IRB_NUM(int, "test_iterations", "test-time pose optimization iterations", c.eval.iterations),
      IRB_NUM(double, "test_lr", "test-time pose learning rate", c.eval.lr),
      IRB_NUM(int, "test_pixels", "test-time photometric pixel subset", c.eval.pixels),
      IRB_NUM(double, "psnr_cap", "PSNR reported for zero error", c.eval.psnr_cap),
      // synthesis
      IRB_NUM(int, "frames", "synthesized frames", c.synth.frames),
      IRB_NUM(int, "width", "image width", c.synth.width),
      IRB_NUM(int, "height", "image height", c.synth.height),
      IRB_NUM(double, "focal", "focal length in pixels", c.synth.focal),
      {"trajectory", "orbit or free",
       [](RunConfig& c, const std::string& v) {
         try {
           c.synth.trajectory.kind = parse_trajectory_kind(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("trajectory: ") + e.what());
         }
       },
       [](const RunConfig& c) { return to_string(c.synth.trajectory.kind); }},
      IRB_NUM(double, "radius", "orbit radius", c.synth.trajectory.radius),
      IRB_NUM(double, "camera_height", "camera height above the origin", c.synth.trajectory.height),
      IRB_NUM(double, "start_deg", "orbit start angle", c.synth.trajectory.start_deg),
      IRB_NUM(double, "arc_deg", "orbit arc", c.synth.trajectory.arc_deg),
      {"target", "look-at target x,y,z",
       [](RunConfig& c, const std::string& v) { c.synth.trajectory.target = to_vec3("target", v); },
       [](const RunConfig& c) { return fmt(c.synth.trajectory.target); }},
      IRB_NUM(double, "swing_deg", "free motion: look-away swing amplitude", c.synth.trajectory.swing_deg),
      IRB_NUM(double, "swing_start", "free motion: swing start (sequence fraction)", c.synth.trajectory.swing_start),
      IRB_NUM(double, "swing_end", "free motion: swing end (sequence fraction)", c.synth.trajectory.swing_end),
      IRB_NUM(double, "bob", "free motion: height oscillation", c.synth.trajectory.bob),
      IRB_NUM(double, "roll_deg", "free motion: roll amplitude", c.synth.trajectory.roll_deg),
      IRB_NUM(double, "scene_scale", "uniform scale of scene and trajectory", c.synth.scene_scale),
      IRB_NUM(int, "supersample", "per-axis supersampling of synthesized images", c.synth.supersample),
      IRB_NUM(int, "corr_count", "oracle matches per pair", c.synth.oracle.count),
      IRB_NUM(double, "pixel_noise", "oracle pixel noise sigma", c.synth.oracle.pixel_noise_sigma),
      {"confidence", "constant or noise_decay",
       [](RunConfig& c, const std::string& v) {
         try {
           c.synth.oracle.confidence = parse_confidence_model(v);
         } catch (const Error& e) {
           throw ConfigError(std::string("confidence: ") + e.what());
         }
       },
       [](const RunConfig& c) { return to_string(c.synth.oracle.confidence); }},
      IRB_NUM(int, "min_matches", "oracle overlap minimum", c.synth.oracle.min_matches),
      IRB_NUM(std::uint64_t, "synth_seed", "synthesis seed", c.synth.seed),
  };
  return s;
}

#undef IRB_NUM

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = build_schema();
  return schema;
}

namespace {

const ConfigKey& find_key(const std::string& key) {
  for (const auto& k : config_schema())
    if (k.name == key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return find_key(key).get(cfg);
}

void apply_config(std::istream& is, RunConfig& cfg) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  apply_config(is, cfg);
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : config_schema()) os << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

}  // namespace irb
