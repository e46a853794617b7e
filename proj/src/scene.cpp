#include "irb/scene.hpp"

#include <cmath>
#include <numbers>

#include "irb/errors.hpp"

namespace irb {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDeg = std::numbers::pi / 180.0;

std::optional<double> hit_sphere(const Vec3& c, double r, const Vec3& o, const Vec3& d,
                                 double t_min, bool inside) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq, t1 = -b + sq;
  if (!inside && t0 > t_min) return t0;
  if (t1 > t_min) return t1;
  return std::nullopt;
}

}  // namespace

Vec3 Material::albedo(const Vec3& p) const {
  switch (pattern) {
    case Pattern::solid:
      return color_a;
    case Pattern::checker: {
      const long k = static_cast<long>(std::floor(frequency * p.x())) +
                     static_cast<long>(std::floor(frequency * p.y() + 1e-7)) +
                     static_cast<long>(std::floor(frequency * p.z()));
      return (k & 1) ? color_b : color_a;
    }
    case Pattern::waves: {
      const double s = std::sin(kTwoPi * frequency * p.x()) * std::sin(kTwoPi * frequency * p.y()) *
                       std::sin(kTwoPi * frequency * p.z());
      const double m = 0.5 + 0.5 * s;
      return (1.0 - m) * color_a + m * color_b;
    }
  }
  return color_a;
}

SyntheticScene SyntheticScene::standard() {
  SyntheticScene s;
  s.plane = PlanePrim{-1.0, {{0.85, 0.8, 0.7}, {0.3, 0.25, 0.2}, Pattern::checker, 2.0, true}};
  s.spheres.push_back({{0.0, -0.2, 0.0}, 0.8, {{0.9, 0.2, 0.15}, {0.95, 0.85, 0.2}, Pattern::waves, 1.2, true}});
  s.spheres.push_back({{-1.3, -0.55, 0.9}, 0.45, {{0.15, 0.3, 0.9}, {0.9, 0.9, 0.95}, Pattern::waves, 1.5, true}});
  s.boxes.push_back({{0.8, -1.0, -0.9}, {1.6, 0.0, -0.1}, {{0.2, 0.7, 0.3}, {0.1, 0.35, 0.4}, Pattern::checker, 3.0, true}});
  s.boxes.push_back({{-1.6, -1.0, -1.4}, {-0.9, 0.4, -0.7}, {{0.6, 0.3, 0.7}, {0.6, 0.3, 0.7}, Pattern::solid, 1.0, true}});
  s.backdrop = BackdropPrim{7.0, {{0.35, 0.45, 0.6}, {0.9, 0.6, 0.3}, Pattern::waves, 0.35, false}};
  return s;
}

SyntheticScene SyntheticScene::scaled(double f) const {
  if (!(f > 0.0)) throw InvalidSpec("scene scale must be positive");
  SyntheticScene s = *this;
  auto tex = [f](Material& m) { m.frequency /= f; };
  for (auto& sp : s.spheres) {
    sp.center *= f;
    sp.radius *= f;
    tex(sp.material);
  }
  for (auto& b : s.boxes) {
    b.lo *= f;
    b.hi *= f;
    tex(b.material);
  }
  if (s.plane) {
    s.plane->height *= f;
    tex(s.plane->material);
  }
  if (s.backdrop) {
    s.backdrop->radius *= f;
    tex(s.backdrop->material);
  }
  return s;
}

std::optional<SurfaceHit> SyntheticScene::intersect(const Vec3& o, const Vec3& d, double t_min) const {
  SurfaceHit best;
  best.t = std::numeric_limits<double>::infinity();
  auto consider = [&](double t, const Vec3& normal, const Material* m) {
    if (t < best.t) {
      best.t = t;
      best.normal = normal;
      best.material = m;
    }
  };

  for (const auto& sp : spheres)
    if (auto t = hit_sphere(sp.center, sp.radius, o, d, t_min, false))
      consider(*t, (o + *t * d - sp.center).normalized(), &sp.material);

  for (const auto& box : boxes) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 1.0;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(d[a]) < 1e-15) {
        if (o[a] < box.lo[a] || o[a] > box.hi[a]) miss = true;
        continue;
      }
      double t0 = (box.lo[a] - o[a]) / d[a];
      double t1 = (box.hi[a] - o[a]) / d[a];
      double s = -1.0;
      if (t0 > t1) {
        std::swap(t0, t1);
        s = 1.0;
      }
      if (t0 > t_near) {
        t_near = t0;
        axis = a;
        sign = s;
      }
      t_far = std::min(t_far, t1);
    }
    if (!miss && axis >= 0 && t_near <= t_far && t_near > t_min) {
      Vec3 n = Vec3::Zero();
      n[axis] = sign;
      consider(t_near, n, &box.material);
    }
  }

  if (plane && std::abs(d.y()) > 1e-15) {
    const double t = (plane->height - o.y()) / d.y();
    const Vec3 p = o + t * d;
    const bool inside = !backdrop || p.norm() < backdrop->radius;
    if (t > t_min && inside) consider(t, Vec3::UnitY(), &plane->material);
  }

  if (backdrop)
    if (auto t = hit_sphere(Vec3::Zero(), backdrop->radius, o, d, t_min, true))
      consider(*t, -(o + *t * d).normalized(), &backdrop->material);

  if (!best.material) return std::nullopt;
  best.point = o + best.t * d;
  return best;
}

Vec3 SyntheticScene::shade(const SurfaceHit& hit) const {
  const Vec3 a = hit.material->albedo(hit.point);
  if (!hit.material->lit) return a;
  return a * (0.35 + 0.65 * std::max(0.0, hit.normal.dot(light_dir)));
}

Vec3 SyntheticScene::radiance(const Vec3& o, const Vec3& d) const {
  const auto hit = intersect(o, d);
  return hit ? shade(*hit) : sky;
}

bool SyntheticScene::visible_from(const Vec3& x, const Vec3& c) const {
  const Vec3 v = x - c;
  const double dist = v.norm();
  const auto hit = intersect(c, v / dist);
  return hit && hit->t >= dist * (1.0 - 1e-7);
}

Image SyntheticScene::render(const Pose& pose, const Intrinsics& K, int supersample) const {
  Image img(K.width, K.height);
  const Mat3 R = pose.R();
  const int ss = std::max(supersample, 1);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int j = 0; j < ss; ++j)
        for (int i = 0; i < ss; ++i) {
          const Vec2 p(x + (i + 0.5) / ss, y + (j + 0.5) / ss);
          acc += radiance(pose.translation, R * camera_direction(p, K));
        }
      img.set(x, y, acc / double(ss * ss));
    }
  return img;
}

DepthMap SyntheticScene::depth(const Pose& pose, const Intrinsics& K) const {
  DepthMap d(K.width, K.height);
  const Mat3 R = pose.R();
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const Vec3 dc = camera_direction(Vec2(x + 0.5, y + 0.5), K);
      const auto hit = intersect(pose.translation, R * dc);
      d.at(x, y) = hit ? hit->t * dc.z() : 0.0;
    }
  return d;
}

Pose look_at(const Vec3& eye, const Vec3& target, double roll) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitY());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  R = R * Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix();
  return Pose::from_matrix(R, eye);
}

std::string to_string(TrajectoryKind kind) { return kind == TrajectoryKind::orbit ? "orbit" : "free"; }

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "orbit") return TrajectoryKind::orbit;
  if (s == "free") return TrajectoryKind::free;
  throw InvalidSpec("unknown trajectory kind '" + s + "'");
}

TrajectorySpec TrajectorySpec::scaled(double s) const {
  TrajectorySpec out = *this;
  out.radius *= s;
  out.height *= s;
  out.target *= s;
  out.bob *= s;
  return out;
}

std::vector<Pose> make_trajectory(const TrajectorySpec& spec) {
  if (spec.frames < 2) throw InvalidSpec("trajectory needs at least 2 frames");
  std::vector<Pose> poses;
  for (int i = 0; i < spec.frames; ++i) {
    const double u = static_cast<double>(i) / (spec.frames - 1);
    const double ang = (spec.start_deg + spec.arc_deg * u) * kDeg;
    Vec3 eye(spec.target.x() + spec.radius * std::sin(ang), spec.height,
             spec.target.z() - spec.radius * std::cos(ang));
    if (spec.kind == TrajectoryKind::orbit) {
      poses.push_back(look_at(eye, spec.target));
      continue;
    }
    eye.y() += spec.bob * std::sin(kTwoPi * 1.5 * u);
    double yaw = 0.0;
    if (u > spec.swing_start && u < spec.swing_end)
      yaw = spec.swing_deg * kDeg *
            std::sin(std::numbers::pi * (u - spec.swing_start) / (spec.swing_end - spec.swing_start));
    const Vec3 aim = eye + Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix() * (spec.target - eye);
    poses.push_back(look_at(eye, aim, spec.roll_deg * kDeg * std::sin(kTwoPi * u)));
  }
  return poses;
}

double max_step_rotation_deg(const std::vector<Pose>& poses) {
  double best = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i)
    best = std::max(best, rotation_angle(poses[i - 1].R().transpose() * poses[i].R()) / kDeg);
  return best;
}

}  // namespace irb
