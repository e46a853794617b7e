// irb: synthesize scenes, reconstruct poses and field, evaluate, render.
#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "irb/bundle.hpp"
#include "irb/config.hpp"
#include "irb/errors.hpp"
#include "irb/eval.hpp"
#include "irb/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace irb;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::map<std::string, std::string> overrides;
  std::vector<std::string> argv;
};

void add_config_options(CLI::App* app, Common& common) {
  app->add_option("-c,--config", common.config, "key = value configuration file");
  for (const auto& key : config_schema()) {
    app->add_option_function<std::string>(
        "--" + key.name, [&common, name = key.name](const std::string& v) { common.overrides[name] = v; },
        key.help);
  }
}

// Defaults, then the config file, then flags.
RunConfig load_config(const Common& common) {
  RunConfig cfg;
  if (!common.config.empty()) {
    if (!fs::exists(common.config)) throw UsageError("config file not found: " + common.config);
    apply_config_file(common.config, cfg);
  }
  for (const auto& [k, v] : common.overrides) set_config_value(cfg, k, v);
  return cfg;
}

void set_threads(const RunConfig& cfg) {
  int n = cfg.threads;
  if (n <= 0)
    if (const char* env = std::getenv("IRB_THREADS")) n = std::atoi(env);
  if (n > 0) omp_set_num_threads(n);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

void write_manifest(const fs::path& dir, const std::string& sub, const Common& common,
                    const RunConfig& cfg) {
  fs::create_directories(dir);
  json params;
  for (const auto& key : config_schema()) params[key.name] = key.get(cfg);
  json m = {{"tool", "irb"},
            {"version", kVersion},
            {"subcommand", sub},
            {"config_path", common.config},
            {"output", dir.string()},
            {"seed", cfg.pipeline.seed},
            {"argv", common.argv},
            {"parameters", params}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  write_text(dir / "config.cfg", dump_config(cfg));
}

void log(const std::string& s) { std::cerr << "[irb] " << s << '\n'; }

std::vector<Image> select_images(const SceneBundle& b, const std::vector<int>& ids) {
  std::vector<Image> out;
  for (int id : ids) out.push_back(b.images[id]);
  return out;
}

// Runs the pipeline on the bundle's training frames; writes trajectory,
// field, report and per-stage checkpoints into dir.
void run_into(const fs::path& dir, const RunConfig& cfg, const SceneBundle& bundle,
              const std::string& resume) {
  const auto ids = bundle.training_ids();
  Reconstruction rec(cfg.pipeline, bundle.K, select_images(bundle, ids), bundle.corr, ids);
  rec.log = log;
  for (const auto& w : bundle.warnings) log("warning: " + w);
  for (const auto& w : rec.warnings()) log("warning: " + w);
  if (!resume.empty()) {
    rec.load_checkpoint(resume);
    log("resumed at stage " + std::to_string(rec.state().cursor + 1) + "/" + std::to_string(rec.plan().size()));
  }
  const fs::path ckpt = dir / "checkpoint";
  rec.run(
      [&](const StageRecord&) {
        rec.save_checkpoint(ckpt.string());
        return true;
      },
      (dir / "snapshot").string());

  write_trajectory((dir / "trajectory.txt").string(), rec.trajectory());
  save_field((dir / "field.bin").string(), rec.state().field, rec.state().enc);
  std::ostringstream report;
  for (const auto& r : rec.state().stages) report << to_json(r) << '\n';
  for (const auto& s : rec.state().losses) report << to_json(s) << '\n';
  write_text(dir / "report.jsonl", report.str());
}

std::map<std::string, std::string> flags_of(const RunConfig& cfg) {
  std::map<std::string, std::string> f;
  for (const char* k : {"disable_reprojection", "disable_photometric", "skip_tracking", "skip_window",
                        "skip_global", "seed", "test_init", "test_iterations"})
    f[k] = get_config_value(cfg, k);
  return f;
}

EvalReport evaluate_run(const fs::path& run_dir, const RunConfig& cfg, const SceneBundle& bundle,
                        bool write_renders) {
  const Trajectory est = read_trajectory((run_dir / "trajectory.txt").string());
  EncodingConfig enc;
  const RadianceField field = load_field((run_dir / "field.bin").string(), &enc);
  Trajectory gt_train;
  for (const auto& sp : est) {
    if (sp.frame_id < 0 || sp.frame_id >= static_cast<int>(bundle.gt.size()))
      throw LengthMismatch("trajectory frame " + std::to_string(sp.frame_id) + " is not in the scene");
    gt_train.push_back(bundle.gt[sp.frame_id]);
  }
  std::vector<TestView> views;
  for (int id : bundle.test_ids()) views.push_back({id, bundle.images[id], bundle.gt[id].pose});
  TraceConfig trace = cfg.pipeline.loss.trace;
  trace.enc = enc;
  std::vector<RenderedView> renders;
  auto metrics = evaluate_test_views(field, trace, bundle.K, est, gt_train, views, cfg.eval,
                                     write_renders ? &renders : nullptr);
  if (write_renders && !renders.empty()) {
    fs::create_directories(run_dir / "renders");
    for (std::size_t k = 0; k < renders.size(); ++k) {
      const std::string name = frame_name(views[k].frame_id);
      write_png((run_dir / "renders" / (name + ".png")).string(), renders[k].color);
      write_pfm((run_dir / "renders" / (name + "_depth.pfm")).string(), renders[k].depth);
    }
  }
  return make_report(est, gt_train, std::move(metrics), flags_of(cfg));
}

int cmd_synth(const Common& common, const std::string& out) {
  RunConfig cfg = load_config(common);
  const fs::path dir = out.empty() ? fs::path(cfg.scene) : fs::path(out);
  if (dir.empty()) throw UsageError("synth needs --out or scene = <dir>");
  write_manifest(dir, "synth", common, cfg);
  const SceneBundle b = synthesize(cfg.synth, cfg.eval.stride);
  write_bundle(dir.string(), b);
  for (const auto& w : b.warnings) log("warning: " + w);
  std::vector<Pose> poses = poses_of(b.gt);
  log("wrote " + std::to_string(b.images.size()) + " frames, " + std::to_string(b.corr.size()) +
      " correspondence files to " + dir.string() + " (largest step rotation " +
      std::to_string(max_step_rotation_deg(poses)) + " deg)");
  return 0;
}

int cmd_run(const Common& common, const std::string& resume) {
  RunConfig cfg = load_config(common);
  if (cfg.scene.empty() || cfg.output.empty()) throw UsageError("run needs --scene and --output");
  set_threads(cfg);
  const fs::path dir(cfg.output);
  write_manifest(dir, "run", common, cfg);
  const SceneBundle bundle = read_bundle(cfg.scene);
  const auto t0 = std::chrono::steady_clock::now();
  run_into(dir, cfg, bundle, resume);
  log("finished in " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  return 0;
}

int cmd_eval(const Common& common, const std::string& run) {
  RunConfig cfg = load_config(common);
  const fs::path run_dir = run.empty() ? fs::path(cfg.output) : fs::path(run);
  if (run_dir.empty()) throw UsageError("eval needs --run or output = <dir>");
  if (common.config.empty() && fs::exists(run_dir / "config.cfg")) {
    apply_config_file((run_dir / "config.cfg").string(), cfg);
    for (const auto& [k, v] : common.overrides) set_config_value(cfg, k, v);
  }
  if (cfg.scene.empty()) throw UsageError("eval needs --scene");
  set_threads(cfg);
  write_manifest(run_dir / "eval", "eval", common, cfg);
  const SceneBundle bundle = read_bundle(cfg.scene);
  const EvalReport rep = evaluate_run(run_dir, cfg, bundle, true);
  write_text(run_dir / "eval" / "report.jsonl", report_jsonl(rep));
  write_text(run_dir / "eval" / "report.txt", report_table(rep));
  std::cout << report_table(rep);
  return 0;
}

int cmd_render(const Common& common, const std::string& checkpoint, const std::string& poses_path,
               const std::string& out) {
  RunConfig cfg = load_config(common);
  if (checkpoint.empty() || poses_path.empty() || out.empty())
    throw UsageError("render needs --checkpoint, --poses and --out");
  set_threads(cfg);
  write_manifest(out, "render", common, cfg);
  const Intrinsics K = cfg.scene.empty() ? cfg.synth.intrinsics() : read_bundle(cfg.scene).K;
  EncodingConfig enc;
  const RadianceField field = load_field(checkpoint, &enc);
  TraceConfig trace = cfg.pipeline.loss.trace;
  trace.enc = enc;
  for (const auto& sp : read_trajectory(poses_path)) {
    const RenderedView v = render_view(field, trace, sp.pose, K);
    const std::string name = frame_name(sp.frame_id);
    write_png((fs::path(out) / (name + ".png")).string(), v.color);
    write_pfm((fs::path(out) / (name + "_depth.pfm")).string(), v.depth);
  }
  return 0;
}

int cmd_ablate(const Common& common, std::vector<std::string> variants) {
  RunConfig base = load_config(common);
  if (base.scene.empty() || base.output.empty()) throw UsageError("ablate needs --scene and --output");
  set_threads(base);
  const std::map<std::string, std::string> known = {{"full", ""},
                                                    {"no_reproj", "disable_reprojection"},
                                                    {"no_tracking", "skip_tracking"},
                                                    {"no_window", "skip_window"},
                                                    {"no_global", "skip_global"}};
  if (variants.empty()) variants = {"full", "no_reproj", "no_tracking", "no_window", "no_global"};
  for (const auto& v : variants)
    if (!known.count(v)) throw UsageError("unknown ablation variant '" + v + "'");
  const fs::path root(base.output);
  write_manifest(root, "ablate", common, base);
  const SceneBundle bundle = read_bundle(base.scene);

  std::ostringstream jsonl, table;
  table << "variant          dR (deg)    dT / extent   PSNR (dB)\n";
  for (const auto& v : variants) {
    RunConfig cfg = base;
    if (!known.at(v).empty()) set_config_value(cfg, known.at(v), "true");
    const fs::path dir = root / v;
    cfg.output = dir.string();
    log("ablation variant " + v);
    write_manifest(dir, "run", common, cfg);
    run_into(dir, cfg, bundle, "");
    const EvalReport rep = evaluate_run(dir, cfg, bundle, false);
    write_text(dir / "eval.jsonl", report_jsonl(rep));
    jsonl << json{{"type", "ablation"},
                  {"variant", v},
                  {"delta_r", rep.centers.delta_r},
                  {"delta_t", rep.centers.delta_t},
                  {"delta_t_rel", rep.extent > 0 ? rep.centers.delta_t / rep.extent : 0.0},
                  {"mean_psnr", rep.mean_psnr}}
                 .dump()
          << '\n';
    char line[128];
    std::snprintf(line, sizeof(line), "%-14s %10.4f %13.5f %11.3f\n", v.c_str(), rep.centers.delta_r,
                  rep.extent > 0 ? rep.centers.delta_t / rep.extent : 0.0, rep.mean_psnr);
    table << line;
  }
  write_text(root / "ablation.jsonl", jsonl.str());
  write_text(root / "ablation.txt", table.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental joint pose and radiance-field reconstruction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  for (int i = 0; i < argc; ++i) common.argv.push_back(argv[i]);
  std::string out, resume, run, checkpoint, poses;
  std::vector<std::string> variants;

  auto* synth = app.add_subcommand("synth", "write a synthetic scene bundle");
  add_config_options(synth, common);
  synth->add_option("-o,--out", out, "bundle directory (defaults to scene)");

  auto* runc = app.add_subcommand("run", "reconstruct poses and field from a bundle");
  add_config_options(runc, common);
  runc->add_option("--resume", resume, "checkpoint directory to continue from");

  auto* evalc = app.add_subcommand("eval", "pose errors and test-view metrics of a run");
  add_config_options(evalc, common);
  evalc->add_option("--run", run, "run directory (defaults to output)");

  auto* render = app.add_subcommand("render", "render a field checkpoint at given poses");
  add_config_options(render, common);
  render->add_option("--checkpoint", checkpoint, "field.bin");
  render->add_option("--poses", poses, "trajectory file");
  render->add_option("-o,--out", out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run the ablation switch matrix");
  add_config_options(ablate, common);
  ablate->add_option("--variants", variants, "subset of full, no_reproj, no_tracking, no_window, no_global");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(common, out);
    if (*runc) return cmd_run(common, resume);
    if (*evalc) return cmd_eval(common, run);
    if (*render) return cmd_render(common, checkpoint, poses, out);
    if (*ablate) return cmd_ablate(common, variants);
  } catch (const UsageError& e) {
    std::cerr << "irb: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "irb: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "irb: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
