#include <doctest.h>

#include <cmath>
#include <random>

#include "irb/errors.hpp"
#include "irb/eval.hpp"

using namespace irb;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Straight transcription of windowed SSIM on luma, one window at a time.
double reference_ssim(const Image& a, const Image& b) {
  const int W = a.width, H = a.height, R = 5;
  double g[11], gs = 0.0;
  for (int k = -R; k <= R; ++k) gs += g[k + R] = std::exp(-(k * k) / (2.0 * 1.5 * 1.5));
  for (double& v : g) v /= gs;
  auto Y = [](const Image& im, int x, int y) {
    const Vec3 c = im.at(x, y);
    return 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z();
  };
  const double C1 = 1e-4, C2 = 9e-4;
  double total = 0.0;
  int count = 0;
  for (int cy = R; cy < H - R; ++cy)
    for (int cx = R; cx < W - R; ++cx) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          const double w = g[dy + R] * g[dx + R];
          const double x = Y(a, cx + dx, cy + dy), y = Y(b, cx + dx, cy + dy);
          mx += w * x;
          my += w * y;
          sxx += w * x * x;
          syy += w * y * y;
          sxy += w * x * y;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++count;
    }
  return total / count;
}

TraceConfig eval_trace() {
  TraceConfig t;
  t.enc.l_pos = 3;
  t.enc.l_dir = 1;
  t.enc.alpha_pe = 3.0;
  t.samp.mode = SamplingMode::uniform;
  t.samp.n_samples = 16;
  t.samp.near = 0.5;
  t.samp.far = 3.0;
  t.samp.far_cap = 3.2;
  return t;
}

RadianceField eval_field(std::uint64_t seed) {
  FieldSpec s;
  s.depth = 2;
  s.width = 16;
  s.color_width = 8;
  s.l_pos = 3;
  s.l_dir = 1;
  RadianceField f(s);
  f.initialize(seed);
  return f;
}

const Intrinsics K16{16, 16, 8, 8, 16, 16};

Trajectory line_trajectory(int n, const Sim3& s = {}) {
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    Pose p{Vec3(0.02 * i, 0.05 * i, 0.0), Vec3(0.1 * i, 0.03 * i * i, -2.0 + 0.02 * i)};
    t.push_back({i, s.apply(p)});
  }
  return t;
}

}  // namespace

TEST_CASE("psnr: uniform 0.1 error is 20 dB") {
  Image a(8, 6), b(8, 6);
  for (auto& v : a.data) v = 0.5;
  for (auto& v : b.data) v = 0.6;
  CHECK(std::abs(psnr(a, b) - 20.0) < 1e-10);
  // independent scalar recomputation
  const Image x = random_image(13, 7, 1), y = random_image(13, 7, 2);
  double se = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) se += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
  CHECK(std::abs(psnr(x, y) - 10.0 * std::log10(double(x.data.size()) / se)) < 1e-10);
}

TEST_CASE("psnr: identical images give the cap, shape mismatch throws") {
  const Image a = random_image(5, 5, 3);
  CHECK(psnr(a, a) == 100.0);
  CHECK(psnr(a, a, 60.0) == 60.0);
  Image near = a;
  near.data[0] += 1e-9;
  CHECK(psnr(near, a, 60.0) == 60.0);
  CHECK_THROWS_AS(psnr(a, random_image(5, 4, 1)), ShapeMismatch);
}

TEST_CASE("ssim: identity, symmetry and the windowed formula") {
  const Image a = random_image(24, 20, 4), b = random_image(24, 20, 5);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-12);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-14);
  CHECK(std::abs(ssim(a, b) - reference_ssim(a, b)) < 1e-10);
  Image blurred = a;
  for (std::size_t i = 3; i < blurred.data.size(); ++i) blurred.data[i] = 0.5 * (a.data[i] + a.data[i - 3]);
  CHECK(std::abs(ssim(a, blurred) - reference_ssim(a, blurred)) < 1e-10);
  CHECK(ssim(a, blurred) > ssim(a, b));
}

TEST_CASE("ssim: constant images and anticorrelation") {
  Image c(16, 16), d(16, 16);
  for (auto& v : c.data) v = 0.25;
  for (auto& v : d.data) v = 0.25;
  CHECK(std::abs(ssim(c, d) - 1.0) < 1e-12);
  const Image a = random_image(16, 16, 6);
  Image inv = a;
  for (auto& v : inv.data) v = 1.0 - v;
  CHECK(ssim(a, inv) < 0.0);
  CHECK(std::abs(ssim(a, inv) - reference_ssim(a, inv)) < 1e-10);
  CHECK_THROWS(ssim(random_image(8, 8, 1), random_image(8, 8, 2)));  // smaller than one window
}

TEST_CASE("luma weights") {
  Image img(1, 1);
  img.set(0, 0, Vec3(1.0, 0.0, 0.0));
  CHECK(luma(img)[0] == doctest::Approx(0.299));
  img.set(0, 0, Vec3(0.2, 0.4, 0.6));
  CHECK(std::abs(luma(img)[0] - (0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6)) < 1e-15);
}

TEST_CASE("held-out frames") {
  CHECK(test_frame_ids(20, 8) == std::vector<int>{7, 15});
  CHECK(test_frame_ids(20, 0).empty());
  CHECK(is_test_frame(7, 8));
  CHECK_FALSE(is_test_frame(8, 8));
  EvalConfig c;
  c.stride = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.stride = 0;
  CHECK_NOTHROW(c.validate());
  CHECK(parse_test_init(to_string(TestInit::neighbor)) == TestInit::neighbor);
  CHECK_THROWS(parse_test_init("nearest"));
}

TEST_CASE("nearest training frame, lowest index on ties") {
  Trajectory t;
  for (int i = 0; i < 4; ++i) t.push_back({i * 2, Pose{Vec3::Zero(), Vec3(double(i), 0, 0)}});
  CHECK(nearest_training_frame(t, Pose{Vec3::Zero(), Vec3(2.2, 0, 0)}) == 2u);
  CHECK(nearest_training_frame(t, Pose{Vec3::Zero(), Vec3(1.5, 0, 0)}) == 1u);
  CHECK_THROWS_AS(nearest_training_frame({}, Pose{}), LengthMismatch);
}

TEST_CASE("test-view optimization: sim3 init with zero iterations reproduces the view") {
  const RadianceField f = eval_field(1);
  const TraceConfig tr = eval_trace();
  Sim3 s;
  s.scale = 0.5;
  s.rotation = so3_exp(Vec3(0.1, -0.2, 0.3));
  s.translation = Vec3(0.3, -0.1, 0.2);
  // The training estimate lives in a frame related to the truth by s^-1.
  const Sim3 to_est = s.inverse();
  const Trajectory gt = line_trajectory(5), est = line_trajectory(5, to_est);
  const Pose held_gt{Vec3(0.05, 0.1, 0.0), Vec3(0.25, 0.1, -1.95)};
  const TestView view{9, render_view(f, tr, to_est.apply(held_gt), K16).color, held_gt};
  EvalConfig cfg;
  cfg.iterations = 0;
  const auto m = evaluate_test_views(f, tr, K16, est, gt, {view}, cfg);
  REQUIRE(m.size() == 1u);
  CHECK(m[0].psnr > 90.0);
  CHECK(m[0].loss_initial < 1e-18);
  CHECK(std::abs(m[0].ssim - 1.0) < 1e-9);
}

TEST_CASE("test-view optimization: keeps the best iterate and leaves inputs alone") {
  const RadianceField f = eval_field(2);
  const std::vector<double> theta(f.params().begin(), f.params().end());
  const TraceConfig tr = eval_trace();
  const Trajectory gt = line_trajectory(4), est = gt;
  const Pose held_gt{Vec3(0.03, 0.06, 0.0), Vec3(0.15, 0.02, -1.97)};
  std::vector<TestView> views{{3, render_view(f, tr, held_gt, K16).color, held_gt}};

  EvalConfig cfg;
  cfg.init = TestInit::neighbor;
  cfg.iterations = 60;
  cfg.lr = 2e-3;
  cfg.pixels = 256;
  std::vector<RenderedView> renders;
  const auto m = evaluate_test_views(f, tr, K16, est, gt, views, cfg, &renders);
  REQUIRE(m.size() == 1u);
  CHECK(m[0].loss_final <= m[0].loss_initial);
  CHECK(renders.size() == 1u);
  CHECK(std::equal(theta.begin(), theta.end(), f.params().begin()));
  // neighbor init takes the estimate of the nearest training frame
  const auto k = nearest_training_frame(gt, held_gt);
  CHECK(m[0].init_pose.translation == est[k].pose.translation);
  CHECK(m[0].psnr == doctest::Approx(psnr(renders[0].color, views[0].image)));
}

TEST_CASE("report: both alignments, JSON lines round-trip") {
  Sim3 s;
  s.scale = 2.0;
  s.rotation = so3_exp(Vec3(0.3, 0.1, -0.2));
  s.translation = Vec3(1, 2, 3);
  const Trajectory gt = line_trajectory(6), est = line_trajectory(6, s.inverse());
  ViewMetrics v;
  v.frame_id = 7;
  v.psnr = 25.0;
  v.ssim = 0.8;
  const EvalReport r = make_report(est, gt, {v}, {{"disable_reprojection", "false"}});
  CHECK(r.centers.delta_r < 1e-6);
  CHECK(r.centers.delta_t < 1e-9);
  CHECK(r.with_rotation.delta_r < 1e-6);
  CHECK(r.mean_psnr == 25.0);
  CHECK(r.extent == doctest::Approx(trajectory_extent(gt)));

  const std::string text = report_jsonl(r);
  const EvalReport back = parse_report_jsonl(text);
  CHECK(back.centers.delta_r == r.centers.delta_r);
  CHECK(back.with_rotation.delta_t == r.with_rotation.delta_t);
  CHECK(back.centers.per_frame.size() == 6u);
  REQUIRE(back.views.size() == 1u);
  CHECK(back.views[0].frame_id == 7);
  CHECK(back.flags.at("disable_reprojection") == "false");
  CHECK(report_jsonl(back) == text);
  CHECK(report_table(r).find("with_rotation") != std::string::npos);
}
