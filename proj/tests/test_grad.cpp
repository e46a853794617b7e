#include <doctest.h>

#include <cmath>
#include <sstream>

#include "irb/errors.hpp"
#include "irb/grad.hpp"

using namespace irb;

TEST_CASE("ParamView: layout, lookup and masks") {
  std::vector<double> a(5, 1.0), b(3, 2.0), c(3, 3.0);
  ParamView v;
  v.add("field", a, ParamGroup::field);
  v.add("rot", b, ParamGroup::pose, false);
  v.add("trans", c, ParamGroup::pose);
  CHECK(v.size() == 11u);
  CHECK(v.segment("rot").offset == 5u);
  CHECK(v.segment("trans").offset == 8u);
  CHECK_FALSE(v.segment("rot").learnable);
  v.set_learnable("rot", true);
  CHECK(v.segment("rot").learnable);
  const auto flat = v.gather();
  CHECK(flat == std::vector<double>{1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3});
  CHECK_THROWS(v.segment("nope"));
}

TEST_CASE("check_gradients: quadratic closure") {
  const Closure f = [](std::span<const double> x, std::span<double> g) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      s += 0.5 * x[i] * x[i];
      if (!g.empty()) g[i] = x[i];
    }
    return s;
  };
  std::vector<double> x{0.3, -1.2, 2.5, 0.01, -0.7};
  const auto rep = check_gradients(f, x, 1e-3);
  CHECK(rep.checked == 5u);
  CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("check_gradients: detects a wrong gradient") {
  const Closure f = [](std::span<const double> x, std::span<double> g) {
    if (!g.empty()) {
      g[0] = 2.0 * x[0];
      g[1] = 0.0;  // should be cos(x1)
    }
    return x[0] * x[0] + std::sin(x[1]);
  };
  std::vector<double> x{0.5, 0.2};
  const auto rep = check_gradients(f, x, 1e-6);
  CHECK(rep.max_rel_error > 0.5);
  CHECK(rep.worst_index == 1u);
}

TEST_CASE("gradient checks and clipping") {
  std::vector<double> f(4, 0.0), p(2, 0.0);
  ParamView v;
  v.add("field", f, ParamGroup::field);
  v.add("pose", p, ParamGroup::pose, false);
  std::vector<double> g{3, 0, 0, 4, 100, 100};
  CHECK(learnable_norm(v, g) == doctest::Approx(5.0));
  const double before = clip_gradients(v, g, 1.0);
  CHECK(before == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[3] == doctest::Approx(0.8));
  CHECK(g[4] == 100.0);
  std::vector<double> h{3, 0, 0, 4, 1, 1};
  clip_gradients(v, h, 0.0);
  CHECK(h[0] == 3.0);
  std::vector<double> bad{1, NAN, 0, 0, 0, 0};
  CHECK_THROWS_AS(check_finite(bad), NonFiniteGradient);
  bad[1] = INFINITY;
  CHECK_THROWS_AS(check_finite(bad), NonFiniteGradient);
}

TEST_CASE("ExponentialSchedule: endpoints and geometric midpoint") {
  ExponentialSchedule s{1e-3, 1e-4, 1000};
  CHECK(s.at(0) == 1e-3);
  CHECK(std::abs(s.at(1000) - 1e-4) < 1e-19);
  CHECK(std::abs(s.at(500) - std::sqrt(1e-3 * 1e-4)) < 1e-15);
  CHECK(s.at(-5) == 1e-3);
  CHECK(std::abs(s.at(5000) - 1e-4) < 1e-19);
  ExponentialSchedule p{3e-3, 1e-5, 20000};
  CHECK(p.at(0) == 3e-3);
  CHECK(std::abs(p.at(20000) - 1e-5) < 1e-20);
}

TEST_CASE("Adam: zero gradient leaves parameters unchanged") {
  std::vector<double> x{0.5, -0.25, 2.0};
  const auto x0 = x;
  ParamView v;
  v.add("x", x, ParamGroup::field);
  AdamOptimizer opt;
  for (int i = 0; i < 5; ++i) opt.step(v, std::vector<double>(3, 0.0), {{ParamGroup::field, 1e-2}});
  CHECK(x == x0);
}

TEST_CASE("Adam: first step with a constant gradient") {
  std::vector<double> x{0.0, 0.0, 0.0};
  ParamView v;
  v.add("x", x, ParamGroup::field);
  AdamOptimizer opt;
  const std::vector<double> g{0.5, -2.0, 1e-3};
  const double lr = 1e-2;
  opt.step(v, g, {{ParamGroup::field, lr}});
  for (int i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    const double expect = -lr * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(std::abs(x[i] - expect) < 1e-15);
    CHECK(std::abs(std::abs(x[i]) - lr) < lr * 1e-5);
    CHECK(std::signbit(x[i]) != std::signbit(g[i]));
  }
}

TEST_CASE("Adam: masked segments never move, moments survive freezes") {
  std::vector<double> a{1.0, 1.0}, b{2.0, 2.0};
  AdamOptimizer opt;
  {
    ParamView v;
    v.add("a", a, ParamGroup::field);
    v.add("b", b, ParamGroup::pose, false);
    opt.step(v, std::vector<double>{1, 1, 5, 5}, {{ParamGroup::field, 0.1}, {ParamGroup::pose, 0.1}});
  }
  CHECK(b == std::vector<double>{2.0, 2.0});
  CHECK(a[0] < 1.0);
  CHECK(opt.state().at("a").steps == 1);
  CHECK(opt.state().count("b") == 0);
  {
    ParamView v;
    v.add("a", a, ParamGroup::field, false);
    opt.step(v, std::vector<double>{1, 1}, {{ParamGroup::field, 0.1}});
  }
  CHECK(opt.state().at("a").steps == 1);
}

TEST_CASE("Adam: per-group learning rates") {
  std::vector<double> a{0.0}, b{0.0};
  ParamView v;
  v.add("a", a, ParamGroup::field);
  v.add("b", b, ParamGroup::pose);
  AdamOptimizer opt;
  opt.step(v, std::vector<double>{1.0, 1.0}, {{ParamGroup::field, 1e-3}, {ParamGroup::pose, 3e-3}});
  CHECK(std::abs(a[0] + 1e-3) < 1e-10);
  CHECK(std::abs(b[0] + 3e-3) < 1e-10);
}

TEST_CASE("Adam: converges on a quadratic and state round-trips") {
  std::vector<double> x{3.0, -2.0, 1.0};
  ParamView v;
  v.add("x", x, ParamGroup::field);
  AdamOptimizer opt;
  for (int i = 0; i < 2000; ++i) opt.step(v, x, {{ParamGroup::field, 0.05}});
  for (double xi : x) CHECK(std::abs(xi) < 1e-2);

  std::stringstream ss;
  opt.save(ss);
  AdamOptimizer back;
  back.load(ss);
  REQUIRE(back.state().size() == opt.state().size());
  const auto& m0 = opt.state().at("x");
  const auto& m1 = back.state().at("x");
  CHECK(m0.steps == m1.steps);
  CHECK(m0.m == m1.m);
  CHECK(m0.v == m1.v);

  // Same state, same gradients: bit-identical continuation.
  std::vector<double> y = x;
  ParamView vy;
  vy.add("x", y, ParamGroup::field);
  for (int i = 0; i < 10; ++i) {
    opt.step(v, x, {{ParamGroup::field, 0.05}});
    back.step(vy, y, {{ParamGroup::field, 0.05}});
  }
  CHECK(x == y);
}
