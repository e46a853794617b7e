#include "irb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "irb/errors.hpp"
#include "irb/grad.hpp"
#include "irb/random.hpp"

namespace irb {

using nlohmann::json;

namespace {

void same_shape(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size())
    throw ShapeMismatch("images differ in size: " + std::to_string(a.width) + "x" +
                        std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                        std::to_string(b.height));
}

}  // namespace

double psnr(const Image& a, const Image& b, double cap) {
  same_shape(a, b);
  if (a.data.empty()) throw ShapeMismatch("empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.data.size());
  if (mse <= 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(mse));
}

std::vector<double> luma(const Image& img) {
  std::vector<double> y(std::size_t(img.width) * img.height);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
  return y;
}

double ssim(const Image& a, const Image& b) {
  same_shape(a, b);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin) throw ShapeMismatch("SSIM needs images of at least 11x11");

  std::array<double, kWin * kWin> g{};
  double total = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dx = x - kWin / 2, dy = y - kWin / 2;
      g[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      total += g[y * kWin + x];
    }
  for (auto& v : g) v /= total;

  const auto ya = luma(a), yb = luma(b);
  const int W = a.width;
  double acc = 0.0;
  long count = 0;
  for (int oy = 0; oy + kWin <= a.height; ++oy)
    for (int ox = 0; ox + kWin <= W; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          const double w = g[y * kWin + x];
          const double va = ya[std::size_t(oy + y) * W + ox + x];
          const double vb = yb[std::size_t(oy + y) * W + ox + x];
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

std::string to_string(TestInit mode) { return mode == TestInit::neighbor ? "neighbor" : "sim3"; }

TestInit parse_test_init(const std::string& s) {
  if (s == "neighbor") return TestInit::neighbor;
  if (s == "sim3") return TestInit::sim3;
  throw ConfigError("unknown test init mode '" + s + "'");
}

void EvalConfig::validate() const {
  if (stride != 0 && stride < 2) throw ConfigError("test stride must be 0 (none) or at least 2");
  if (iterations < 0) throw ConfigError("test-opt iterations must be nonnegative");
  if (pixels < 1) throw ConfigError("test-opt pixel subset must be nonempty");
  if (!(lr > 0.0)) throw ConfigError("test-opt learning rate must be positive");
}

bool is_test_frame(int id, int stride) { return stride >= 2 && id % stride == stride - 1; }

std::vector<int> test_frame_ids(int n, int stride) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (is_test_frame(i, stride)) out.push_back(i);
  return out;
}

RenderedView render_view(const RadianceField& field, const TraceConfig& trace, const Pose& pose,
                         const Intrinsics& K) {
  std::vector<Ray> rays;
  rays.reserve(std::size_t(K.width) * K.height);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) rays.push_back(camera_ray(Vec2(x + 0.5, y + 0.5), pose, K));
  RayTracer tracer;
  const auto out = tracer.render(field, trace, rays);
  RenderedView v{Image(K.width, K.height), DepthMap(K.width, K.height)};
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const auto& r = out[std::size_t(y) * K.width + x];
      v.color.set(x, y, r.color);
      v.depth.at(x, y) = r.depth;
    }
  return v;
}

std::size_t nearest_training_frame(const Trajectory& train_gt, const Pose& test_gt) {
  if (train_gt.empty()) throw LengthMismatch("no training frames");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < train_gt.size(); ++k) {
    const double d = (train_gt[k].pose.translation - test_gt.translation).norm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace {

// Photometric loss of one view on a fixed pixel subset, optionally with the
// pose gradient in grad[0..6).
double view_loss(RayTracer& tracer, const RadianceField& field, const TraceConfig& trace,
                 const Intrinsics& K, const Pose& pose, const std::vector<Vec2>& pixels,
                 const std::vector<Vec3>& targets, std::span<double> grad) {
  std::vector<FramePoseJacobian> frames = {FramePoseJacobian::from_pose(pose, 0, 3)};
  std::vector<RayTask> tasks(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    tasks[i].dir_camera = camera_direction(pixels[i], K);
    tasks[i].origin = pose.translation;
    tasks[i].direction = frames[0].R * tasks[i].dir_camera;
    tasks[i].frame = 0;
  }
  TraceConfig cfg = trace;
  cfg.field_grad = false;
  const double scale = 1.0 / (3.0 * static_cast<double>(pixels.size()));
  std::vector<double> local(6, 0.0);
  const auto res = tracer.trace(
      field, cfg, tasks, {}, frames,
      [&](std::size_t i, const RenderResult& r, GradientSink&) {
        RayLoss l;
        const Vec3 d = r.color - targets[i];
        l.value = scale * d.squaredNorm();
        l.d_color = 2.0 * scale * d;
        return l;
      },
      local);
  if (!grad.empty()) std::copy(local.begin(), local.end(), grad.begin());
  return res.loss;
}

}  // namespace

std::vector<ViewMetrics> evaluate_test_views(const RadianceField& field, const TraceConfig& trace,
                                             const Intrinsics& K, const Trajectory& train_est,
                                             const Trajectory& train_gt,
                                             const std::vector<TestView>& views,
                                             const EvalConfig& cfg,
                                             std::vector<RenderedView>* renders) {
  cfg.validate();
  if (train_est.size() != train_gt.size()) throw LengthMismatch("training trajectories differ in length");
  Sim3 to_est;
  if (cfg.init == TestInit::sim3 && !views.empty()) {
    const auto est = poses_of(train_est), gt = poses_of(train_gt);
    to_est = align_sim3(est, gt, AlignMode::centers).inverse();
  }
  std::vector<ViewMetrics> out;
  RayTracer tracer;
  for (const auto& view : views) {
    ViewMetrics m;
    m.frame_id = view.frame_id;
    if (cfg.init == TestInit::neighbor)
      m.init_pose = train_est[nearest_training_frame(train_gt, view.gt)].pose;
    else
      m.init_pose = to_est.apply(view.gt);

    std::mt19937_64 rng(derive_seed(cfg.seed, {std::uint64_t(view.frame_id)}));
    std::vector<int> order(std::size_t(K.width) * K.height);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min<std::size_t>(order.size(), std::size_t(cfg.pixels)));
    std::vector<Vec2> pixels;
    std::vector<Vec3> targets;
    for (int idx : order) {
      const int x = idx % K.width, y = idx / K.width;
      pixels.emplace_back(x + 0.5, y + 0.5);
      targets.push_back(view.image.at(x, y));
    }

    Pose pose = m.init_pose;
    Pose best = pose;
    std::vector<double> grad(6);
    m.loss_initial = view_loss(tracer, field, trace, K, pose, pixels, targets, grad);
    double best_loss = m.loss_initial;
    ParamView pv;
    pv.add("rot", {pose.rotation.data(), 3}, ParamGroup::pose);
    pv.add("trans", {pose.translation.data(), 3}, ParamGroup::pose);
    AdamOptimizer adam;
    for (int k = 0; k < cfg.iterations; ++k) {
      try {
        check_finite(grad);
      } catch (const NonFiniteGradient&) {
        break;
      }
      clip_gradients(pv, grad, adam.config().clip_norm);
      adam.step(pv, grad, {{ParamGroup::pose, cfg.lr}});
      const double loss = view_loss(tracer, field, trace, K, pose, pixels, targets, grad);
      if (std::isfinite(loss) && loss < best_loss) {
        best_loss = loss;
        best = pose;
      }
    }
    m.final_pose = best;
    m.loss_final = best_loss;
    RenderedView rv = render_view(field, trace, best, K);
    m.psnr = psnr(rv.color, view.image, cfg.psnr_cap);
    m.ssim = ssim(rv.color, view.image);
    if (renders) renders->push_back(std::move(rv));
    out.push_back(m);
  }
  return out;
}

EvalReport make_report(const Trajectory& est, const Trajectory& gt, std::vector<ViewMetrics> views,
                       std::map<std::string, std::string> flags) {
  EvalReport r;
  const auto e = poses_of(est), g = poses_of(gt);
  r.alignment_centers = align_sim3(e, g, AlignMode::centers);
  r.alignment_with_rotation = align_sim3(e, g, AlignMode::with_rotation);
  r.centers = pose_error(est, gt, r.alignment_centers);
  r.with_rotation = pose_error(est, gt, r.alignment_with_rotation);
  r.extent = trajectory_extent(gt);
  r.views = std::move(views);
  for (const auto& v : r.views) {
    r.mean_psnr += v.psnr;
    r.mean_ssim += v.ssim;
  }
  if (!r.views.empty()) {
    r.mean_psnr /= static_cast<double>(r.views.size());
    r.mean_ssim /= static_cast<double>(r.views.size());
  }
  r.flags = std::move(flags);
  return r;
}

namespace {

json pose_json(const Pose& p) {
  return {p.rotation.x(), p.rotation.y(), p.rotation.z(),
          p.translation.x(), p.translation.y(), p.translation.z()};
}

Pose pose_from(const json& j) {
  Pose p;
  p.rotation = Vec3(j[0], j[1], j[2]);
  p.translation = Vec3(j[3], j[4], j[5]);
  return p;
}

json sim3_json(const Sim3& s) {
  json rot = json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) rot.push_back(s.rotation(i, k));
  return {{"scale", s.scale},
          {"rotation", rot},
          {"translation", {s.translation.x(), s.translation.y(), s.translation.z()}}};
}

Sim3 sim3_from(const json& j) {
  Sim3 s;
  s.scale = j.at("scale");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) s.rotation(i, k) = j.at("rotation")[i * 3 + k];
  for (int i = 0; i < 3; ++i) s.translation[i] = j.at("translation")[i];
  return s;
}

}  // namespace

std::string report_jsonl(const EvalReport& r) {
  std::ostringstream os;
  json summary = {{"type", "summary"},
                  {"delta_r_centers", r.centers.delta_r},
                  {"delta_t_centers", r.centers.delta_t},
                  {"delta_r_with_rotation", r.with_rotation.delta_r},
                  {"delta_t_with_rotation", r.with_rotation.delta_t},
                  {"alignment_centers", sim3_json(r.alignment_centers)},
                  {"alignment_with_rotation", sim3_json(r.alignment_with_rotation)},
                  {"extent", r.extent},
                  {"mean_psnr", r.mean_psnr},
                  {"mean_ssim", r.mean_ssim},
                  {"lpips", "omitted: needs a pretrained network"},
                  {"flags", r.flags}};
  os << summary.dump() << '\n';
  for (std::size_t k = 0; k < r.centers.per_frame.size(); ++k) {
    const auto& c = r.centers.per_frame[k];
    const auto& w = r.with_rotation.per_frame[k];
    os << json{{"type", "frame"},
               {"frame", c.frame_id},
               {"rotation_deg_centers", c.rotation_deg},
               {"translation_centers", c.translation},
               {"rotation_deg_with_rotation", w.rotation_deg},
               {"translation_with_rotation", w.translation}}
              .dump()
       << '\n';
  }
  for (const auto& v : r.views)
    os << json{{"type", "view"},          {"frame", v.frame_id},
               {"psnr", v.psnr},          {"ssim", v.ssim},
               {"loss_initial", v.loss_initial}, {"loss_final", v.loss_final},
               {"init_pose", pose_json(v.init_pose)}, {"final_pose", pose_json(v.final_pose)}}
              .dump()
       << '\n';
  return os.str();
}

EvalReport parse_report_jsonl(const std::string& text) {
  EvalReport r;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string type = j.at("type");
      if (type == "summary") {
        r.centers.delta_r = j.at("delta_r_centers");
        r.centers.delta_t = j.at("delta_t_centers");
        r.with_rotation.delta_r = j.at("delta_r_with_rotation");
        r.with_rotation.delta_t = j.at("delta_t_with_rotation");
        r.alignment_centers = sim3_from(j.at("alignment_centers"));
        r.alignment_with_rotation = sim3_from(j.at("alignment_with_rotation"));
        r.extent = j.at("extent");
        r.mean_psnr = j.at("mean_psnr");
        r.mean_ssim = j.at("mean_ssim");
        r.flags = j.at("flags").get<std::map<std::string, std::string>>();
      } else if (type == "frame") {
        r.centers.per_frame.push_back({j.at("frame"), j.at("rotation_deg_centers"), j.at("translation_centers")});
        r.with_rotation.per_frame.push_back(
            {j.at("frame"), j.at("rotation_deg_with_rotation"), j.at("translation_with_rotation")});
      } else if (type == "view") {
        ViewMetrics v;
        v.frame_id = j.at("frame");
        v.psnr = j.at("psnr");
        v.ssim = j.at("ssim");
        v.loss_initial = j.at("loss_initial");
        v.loss_final = j.at("loss_final");
        v.init_pose = pose_from(j.at("init_pose"));
        v.final_pose = pose_from(j.at("final_pose"));
        r.views.push_back(v);
      } else {
        throw ParseError("unknown record type '" + type + "'", lineno);
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad report record: ") + e.what(), lineno);
    }
  }
  return r;
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "alignment       dR (deg)    dT (gt units)   dT / extent\n";
  auto row = [&](const char* name, const PoseErrorReport& p) {
    os << std::left << std::setw(14) << name << std::right << std::setw(10) << p.delta_r << std::setw(16)
       << p.delta_t << std::setw(14) << (r.extent > 0 ? p.delta_t / r.extent : 0.0) << '\n';
  };
  row("centers", r.centers);
  row("with_rotation", r.with_rotation);
  os << "trajectory extent " << r.extent << '\n';
  if (!r.views.empty()) {
    os << "\nview   PSNR (dB)   SSIM     loss init -> final\n";
    for (const auto& v : r.views)
      os << std::setw(4) << v.frame_id << std::setw(12) << v.psnr << std::setw(9) << v.ssim << "   "
         << std::scientific << std::setprecision(3) << v.loss_initial << " -> " << v.loss_final
         << std::fixed << std::setprecision(4) << '\n';
    os << "mean" << std::setw(12) << r.mean_psnr << std::setw(9) << r.mean_ssim << '\n';
  }
  os << "LPIPS omitted (needs a pretrained network)\n";
  for (const auto& [k, v] : r.flags) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace irb
