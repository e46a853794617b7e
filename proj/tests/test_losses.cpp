#include <doctest.h>

#include <cmath>
#include <set>

#include "irb/errors.hpp"
#include "irb/grad.hpp"
#include "irb/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace irb;
using namespace testing;

TEST_CASE("photometric_loss: examples") {
  std::vector<Vec3> a{{0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}}, b = a;
  CHECK(photometric_loss(a, b) == 0.0);
  for (auto& v : b) v.array() += 0.1;
  CHECK(std::abs(photometric_loss(a, b) - 0.01) < 1e-15);
  b.pop_back();
  CHECK_THROWS_AS(photometric_loss(a, b), ShapeMismatch);
}

TEST_CASE("draws_per_pair follows floor(256 / |E|) with a floor of one") {
  CorrespondenceSamplingConfig c;
  CHECK(draws_per_pair(2, c) == 128);
  CHECK(draws_per_pair(3, c) == 85);
  CHECK(draws_per_pair(4, c) == 64);
  CHECK(draws_per_pair(12, c) == 21);
  CHECK(draws_per_pair(256, c) == 1);
  CHECK(draws_per_pair(1000, c) == 1);
  CHECK_NOTHROW(c.validate());
  c.threshold = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidSpec);
  c.threshold = 0.2;
  c.pool = 0;
  CHECK_THROWS_AS(c.validate(), InvalidSpec);
}

TEST_CASE("sample_without_replacement: distinct, clamped, uniform") {
  std::mt19937_64 rng(1);
  const auto all = sample_without_replacement(5, 10, rng);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 5u);
  std::vector<int> hits(20, 0);
  for (int t = 0; t < 20000; ++t)
    for (std::size_t k : sample_without_replacement(20, 5, rng)) ++hits[k];
  // each index appears with probability 1/4; binomial std about 61
  for (int h : hits) CHECK(std::abs(h - 5000) < 4 * 61);
}

TEST_CASE("select_sparse: examples") {
  CorrespondenceSamplingConfig cfg;
  cfg.pool = 10;
  std::mt19937_64 rng(2);
  CorrespondenceSet s;
  s.frame_i = 3;
  s.frame_j = 4;
  for (int k = 0; k < 5; ++k) s.matches.push_back({{double(k), 0}, {0, double(k)}, 1.0});
  const auto sel = select_sparse(s, cfg, rng);
  CHECK(sel.matches.size() == 5u);
  CHECK(sel.frame_i == 3);
  CHECK(sel.frame_j == 4);
  for (auto& m : s.matches) m.alpha = 0.2;
  CHECK_THROWS_AS(select_sparse(s, cfg, rng), NoConfidentMatches);
  s.matches[0].alpha = 0.1;
  CHECK_THROWS_AS(select_sparse(s, cfg, rng), NoConfidentMatches);
}

TEST_CASE("select_sparse: never keeps a match at or below the threshold") {
  CorrespondenceSamplingConfig cfg;
  cfg.pool = 40;
  std::mt19937_64 gen(3);
  CorrespondenceSet s = random_set(0, 1, 100, K100, gen, 0.0);
  s.matches[7].alpha = 0.2;  // exactly at the threshold: excluded
  int confident = 0;
  for (const auto& m : s.matches) confident += m.alpha > cfg.threshold;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    const auto sel = select_sparse(s, cfg, rng);
    CHECK(sel.matches.size() == std::size_t(std::min(40, confident)));
    bool ok = true;
    for (const auto& m : sel.matches) ok = ok && m.alpha > cfg.threshold;
    CHECK(ok);
  }
}

TEST_CASE("reprojection: hand projection") {
  const Pose P1 = Pose::identity();
  const Pose P2{Vec3::Zero(), Vec3(0.1, 0.0, 0.0)};
  Correspondence m{{50, 50}, {45, 50}, 0.7};
  CHECK(reprojection_residual(m, P1, P2, K100, 2.0).norm() < 1e-12);
  const std::vector<Correspondence> good{m};
  const auto depth = [](const Vec2&) { return 2.0; };
  CHECK(reprojection_loss(good, P1, P2, K100, depth) < 1e-12);
  m.p = Vec2(50, 50);
  const std::vector<Correspondence> bad{m};
  CHECK(std::abs(reprojection_loss(bad, P1, P2, K100, depth) - 5.0 * 0.7) < 1e-12);
}

TEST_CASE("reprojection: behind-camera terms are skipped and counted") {
  const Pose P1 = Pose::identity();
  // Camera 2 sits beyond the point, looking further along +z.
  const Pose P2{Vec3::Zero(), Vec3(0.0, 0.0, 5.0)};
  std::vector<Correspondence> ms{{{50, 50}, {50, 50}, 1.0}, {{60, 50}, {50, 50}, 1.0}};
  int skipped = 0;
  const double v = reprojection_loss(ms, P1, P2, K100, [](const Vec2&) { return 2.0; }, &skipped);
  CHECK(skipped == 2);
  CHECK(v == 0.0);
}

TEST_CASE("reprojection: nonnegative and zero only when every residual is zero") {
  std::mt19937_64 rng(4);
  const Pose P1 = testing::random_pose(rng, 0.1, 0.1);
  const Pose P2{P1.rotation + Vec3(0.02, -0.01, 0.0), P1.translation + Vec3(0.1, 0.0, 0.02)};
  std::vector<Correspondence> exact;
  std::uniform_real_distribution<double> u(5.0, 95.0);
  for (int k = 0; k < 50; ++k) {
    const Vec2 q(u(rng), u(rng));
    exact.push_back({q, project(backproject(q, P1, K100, 3.0), P2, K100), 0.9});
  }
  const auto depth = [](const Vec2&) { return 3.0; };
  CHECK(reprojection_loss(exact, P1, P2, K100, depth) < 1e-12);
  auto one_off = exact;
  one_off[17].p.x() += 0.5;
  const double v = reprojection_loss(one_off, P1, P2, K100, depth);
  CHECK(v > 0.0);
  CHECK(std::abs(v - 0.9 * 0.5 / 50.0) < 1e-10);
}

TEST_CASE("reprojection resampling is an unbiased estimator of the pool mean") {
  std::mt19937_64 rng(5);
  const Pose P1 = Pose::identity();
  const Pose P2{Vec3(0.0, 0.05, 0.0), Vec3(0.2, 0.0, 0.0)};
  const CorrespondenceSet pool = random_set(0, 1, 300, K100, rng, 0.25);
  const auto depth = [](const Vec2& q) { return 2.0 + 0.01 * q.x(); };
  const double full = reprojection_loss(pool.matches, P1, P2, K100, depth);

  const int draws = 10000, ns = 32;
  double s1 = 0.0, s2 = 0.0;
  std::vector<Correspondence> batch(ns);
  for (int t = 0; t < draws; ++t) {
    const auto idx = sample_without_replacement(pool.matches.size(), ns, rng);
    for (int k = 0; k < ns; ++k) batch[k] = pool.matches[idx[k]];
    const double v = reprojection_loss(batch, P1, P2, K100, depth);
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / draws;
  const double se = std::sqrt((s2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - full) < 3.0 * se);
}

TEST_CASE("reprojection gradient w.r.t. both poses matches finite differences") {
  const ReprojClosure c = make_reproj_closure();
  const auto r = c.eval(kPoses12);
  REQUIRE(r.skipped == 0);
  REQUIRE(r.value > 0.0);
  const auto rep = check_gradients(std::cref(c), kPoses12, 1e-6, 12);
  CHECK(rep.checked == 12u);
  CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("reprojection gradient w.r.t. the field matches finite differences") {
  const ReprojClosure c = make_reproj_closure();
  const Pose P1{Vec3(0.05, -0.1, 0.02), Vec3(0.1, -0.05, 0.0)};
  const Pose P2{Vec3(0.1, 0.02, -0.05), Vec3(0.3, 0.05, -0.1)};
  const auto base = reprojection_loss(c.matches, P1, P2, K16, c.field, c.trace, c.jitter, true);
  REQUIRE(base.d_field.size() == c.field.param_count());
  const Closure f = [&](std::span<const double> th, std::span<double> g) {
    RadianceField h = c.field;
    std::copy(th.begin(), th.end(), h.params().begin());
    if (!g.empty()) std::copy(base.d_field.begin(), base.d_field.end(), g.begin());
    return reprojection_loss(c.matches, P1, P2, K16, h, c.trace, c.jitter).value;
  };
  std::vector<double> theta(c.field.params().begin(), c.field.params().end());
  CHECK(check_gradients(f, theta, 1e-6, 120).max_rel_error < 1e-4);
}

TEST_CASE("scaling confidences by lambda scales value and gradient by lambda") {
  ReprojClosure c = make_reproj_closure();
  const auto a = c.eval(kPoses12);
  const double lambda = 0.37;
  for (auto& m : c.matches) m.alpha *= lambda;
  const auto b = c.eval(kPoses12);
  CHECK(std::abs(b.value - lambda * a.value) < 1e-12 * a.value);
  CHECK((b.d_rot1 - lambda * a.d_rot1).norm() < 1e-12 * a.d_rot1.norm());
  CHECK((b.d_trans1 - lambda * a.d_trans1).norm() < 1e-12 * a.d_trans1.norm());
  CHECK((b.d_rot2 - lambda * a.d_rot2).norm() < 1e-12 * a.d_rot2.norm());
  CHECK((b.d_trans2 - lambda * a.d_trans2).norm() < 1e-12 * a.d_trans2.norm());
}

TEST_CASE("build_sparse_pools: both directions, explicit reversals win, empty pairs dropped") {
  CorrespondenceSamplingConfig cfg;
  cfg.pool = 8;
  std::mt19937_64 rng(8);
  CorrespondenceMap corr;
  corr[{0, 1}] = random_set(0, 1, 20, K16, rng);
  corr[{1, 2}] = random_set(1, 2, 20, K16, rng);
  corr[{2, 1}] = random_set(2, 1, 20, K16, rng);
  corr[{2, 3}] = random_set(2, 3, 5, K16, rng);
  for (auto& m : corr[{2, 3}].matches) m.alpha = 0.1;
  const auto pools = build_sparse_pools(corr, cfg, 11);
  CHECK(pools.count({0, 1}) == 1);
  CHECK(pools.count({1, 0}) == 1);
  CHECK(pools.count({2, 3}) == 0);
  CHECK(pools.count({3, 2}) == 0);
  CHECK(pools.at({0, 1}).matches.size() == 8u);
  // reversal of the same draw
  const auto& fwd = pools.at({0, 1}).matches;
  const auto& rev = pools.at({1, 0}).matches;
  for (std::size_t k = 0; k < fwd.size(); ++k) {
    CHECK(fwd[k].q == rev[k].p);
    CHECK(fwd[k].p == rev[k].q);
  }
  // the stored (2, 1) set is used for that direction
  const auto& s21 = corr.at({2, 1}).matches;
  for (const auto& m : pools.at({2, 1}).matches) {
    bool found = false;
    for (const auto& o : s21) found = found || (o.q == m.q && o.p == m.p);
    CHECK(found);
  }
  // deterministic in the seed
  const auto again = build_sparse_pools(corr, cfg, 11);
  CHECK(again.at({1, 2}).matches.front().q == pools.at({1, 2}).matches.front().q);
}

namespace {

// Every pose identical, so each q reprojects onto itself and a stored offset
// d gives a residual |d| regardless of the rendered depth.
SparsePools offset_pools(int frames, const std::map<FramePair, Vec2>& offsets, std::size_t n = 40) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(2.0, 14.0);
  SparsePools pools;
  for (int a = 0; a + 1 < frames; ++a)
    for (const FramePair& key : {FramePair{a, a + 1}, FramePair{a + 1, a}}) {
      CorrespondenceSet s;
      s.frame_i = key.first;
      s.frame_j = key.second;
      const Vec2 d = offsets.count(key) ? offsets.at(key) : Vec2::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        const Vec2 q(ux(rng), ux(rng));
        s.matches.push_back({q, q + d, 1.0});
      }
      pools[key] = s;
    }
  return pools;
}

LossConfig reproj_only() {
  LossConfig c;
  c.trace = small_trace();
  c.disable_photometric = true;
  c.ray_batch = 16;
  return c;
}

}  // namespace

TEST_CASE("nrp loss: two frames give two directed terms averaged") {
  const auto images = random_images(2, K16, 1);
  const SparsePools pools = offset_pools(2, {{{0, 1}, Vec2(3, 4)}, {{1, 0}, Vec2(0, 1)}});
  JointObjective obj(K16, images, pools, reproj_only());
  const RadianceField f = dense_field(10, 2.0);
  const std::vector<Pose> poses(2, Pose{Vec3(0.1, 0.0, 0.0), Vec3(0.0, 0.0, -2.0)});
  const FrameSet E = all_learnable(2);
  CHECK(obj.directed_terms(E).size() == 2u);
  std::mt19937_64 rng(1);
  std::vector<double> g(f.param_count() + 12, 0.0);
  const auto r = obj.evaluate(f, poses, E, rng, g);
  CHECK(r.directed_terms == 2);
  CHECK(r.correspondences == 80);  // min(128, 40) draws per directed pair
  CHECK(std::abs(r.reprojection - (5.0 + 1.0) / 2.0) < 1e-9);
  CHECK(r.photometric == 0.0);
}

TEST_CASE("nrp loss: zero residuals give zero, and a 4-chain divides by 6") {
  const auto images = random_images(4, K16, 2);
  const RadianceField f = dense_field(11, 2.0);
  const std::vector<Pose> poses(4, Pose{Vec3(0.0, 0.1, 0.0), Vec3(0.0, 0.0, -2.0)});
  const FrameSet E = all_learnable(4);
  std::vector<double> g(f.param_count() + 24, 0.0);
  {
    const SparsePools pools = offset_pools(4, {});
    JointObjective obj(K16, images, pools, reproj_only());
    std::mt19937_64 rng(2);
    CHECK(obj.evaluate(f, poses, E, rng, g).reprojection < 1e-9);
  }
  const SparsePools pools = offset_pools(4, {{{1, 2}, Vec2(6, 0)}});
  JointObjective obj(K16, images, pools, reproj_only());
  CHECK(obj.directed_terms(E).size() == 6u);
  std::mt19937_64 rng(3);
  const auto r = obj.evaluate(f, poses, E, rng, g);
  CHECK(r.directed_terms == 6);
  CHECK(std::abs(r.reprojection - 6.0 / 6.0) < 1e-9);
}

TEST_CASE("nrp loss: per-pair draws follow the frame-set size") {
  const auto images = random_images(5, K16, 3);
  const SparsePools pools = offset_pools(5, {}, 400);
  JointObjective obj(K16, images, pools, reproj_only());
  const RadianceField f = dense_field(12, 2.0);
  const std::vector<Pose> poses(5, Pose{Vec3::Zero(), Vec3(0, 0, -2)});
  for (int n = 2; n <= 5; ++n) {
    const FrameSet E = all_learnable(n);
    std::mt19937_64 rng(4);
    std::vector<double> g(f.param_count() + 30, 0.0);
    const auto r = obj.evaluate(f, poses, E, rng, g);
    CHECK(r.correspondences == (2 * n - 2) * (256 / n));
  }
}

TEST_CASE("combined loss: sum of terms and ablation switches") {
  const auto images = random_images(3, K16, 4);
  std::mt19937_64 prng(5);
  CorrespondenceMap corr;
  corr[{0, 1}] = random_set(0, 1, 50, K16, prng);
  corr[{1, 2}] = random_set(1, 2, 50, K16, prng);
  const SparsePools pools = build_sparse_pools(corr, {}, 3);
  LossConfig cfg;
  cfg.trace = small_trace();
  cfg.ray_batch = 64;
  const RadianceField f = dense_field(13, 1.0);
  std::vector<Pose> poses;
  for (int i = 0; i < 3; ++i) poses.push_back({Vec3(0.0, 0.05 * i, 0.0), Vec3(0.1 * i, 0.0, -2.0)});
  const FrameSet E = all_learnable(3);
  std::vector<double> g(f.param_count() + 18, 0.0);

  JointObjective both(K16, images, pools, cfg);
  std::mt19937_64 r1(6);
  const auto full = both.evaluate(f, poses, E, r1, g, false);
  CHECK(full.total == full.photometric + full.reprojection);
  CHECK(full.photometric > 0.0);
  CHECK(full.reprojection > 0.0);

  LossConfig no_rp = cfg;
  no_rp.disable_reprojection = true;
  JointObjective photo(K16, images, pools, no_rp);
  std::mt19937_64 r2(6);
  const auto p = photo.evaluate(f, poses, E, r2, g, false);
  CHECK(p.reprojection == 0.0);
  CHECK(p.total == full.photometric);

  LossConfig none = no_rp;
  none.disable_photometric = true;
  JointObjective neither(K16, images, pools, none);
  std::mt19937_64 r3(6);
  CHECK_THROWS_AS(neither.evaluate(f, poses, E, r3, g), InvalidSpec);
}

TEST_CASE("photometric objective gradients match finite differences") {
  const JointClosure c(true, false);
  const auto x = c.point();
  CHECK(check_gradients(std::cref(c), x, 1e-5, 100, 5).max_rel_error < 1e-4);
  CHECK(pose_block_error(c, x, 1e-5) < 1e-4);
}

TEST_CASE("joint objective gradients match finite differences") {
  const JointClosure c(true, true);
  const auto x = c.point();
  CHECK(check_gradients(std::cref(c), x, 1e-6, 100, 6).max_rel_error < 1e-4);
  CHECK(pose_block_error(c, x, 1e-6) < 1e-4);
}

TEST_CASE("joint objective: frozen blocks receive no gradient") {
  JointClosure c(true, true);
  c.E.learn_rotation = {false, true, false};
  c.E.learn_translation = {false, false, true};
  c.E.learn_field = false;
  const auto x = c.point();
  std::vector<double> g(x.size());
  c(x, g);
  const std::size_t n = c.field.param_count();
  for (std::size_t i = 0; i < n; ++i) REQUIRE(g[i] == 0.0);
  for (int k = 0; k < 6; ++k) CHECK(g[n + k] == 0.0);          // frame 0
  for (int k = 3; k < 6; ++k) CHECK(g[n + 6 + k] == 0.0);      // frame 1 translation
  for (int k = 0; k < 3; ++k) CHECK(g[n + 12 + k] == 0.0);     // frame 2 rotation
  double live = 0.0;
  for (int k = 0; k < 3; ++k) live += std::abs(g[n + 6 + k]) + std::abs(g[n + 15 + k]);
  CHECK(live > 0.0);
}
