#pragma once

#include <optional>
#include <string>
#include <vector>

#include "irb/geometry.hpp"
#include "irb/image.hpp"

namespace irb {

enum class Pattern { solid, checker, waves };

struct Material {
  Vec3 color_a = Vec3::Constant(0.8);
  Vec3 color_b = Vec3::Constant(0.2);
  Pattern pattern = Pattern::solid;
  double frequency = 1.0;  // checker cells or wave cycles per world unit
  bool lit = true;         // Lambertian shading under a fixed light

  Vec3 albedo(const Vec3& p) const;
};

struct SpherePrim {
  Vec3 center;
  double radius = 1.0;
  Material material;
};

struct BoxPrim {
  Vec3 lo, hi;
  Material material;
};

// Horizontal plane y = height, facing +y, clipped to the backdrop.
struct PlanePrim {
  double height = -1.0;
  Material material;
};

// Sphere around the origin seen from the inside; closes the scene so every
// camera ray terminates on a surface.
struct BackdropPrim {
  double radius = 8.0;
  Material material;
};

struct SurfaceHit {
  double t = 0.0;  // distance along the unit ray
  Vec3 point;
  Vec3 normal;
  const Material* material = nullptr;
};

// World convention: +y is up. Cameras follow the pinhole convention of
// geometry.hpp (x right, y down, z forward).
class SyntheticScene {
 public:
  std::vector<SpherePrim> spheres;
  std::vector<BoxPrim> boxes;
  std::optional<PlanePrim> plane;
  std::optional<BackdropPrim> backdrop;
  Vec3 light_dir = Vec3(0.4, 0.8, -0.45).normalized();
  Vec3 sky = Vec3(0.55, 0.65, 0.8);  // returned by rays that hit nothing

  // Textured spheres and boxes on a checkerboard floor inside a backdrop.
  static SyntheticScene standard();
  // Uniformly scaled copy: positions and sizes times s, textures stretched
  // to match, so images from scaled cameras are unchanged.
  SyntheticScene scaled(double s) const;

  std::optional<SurfaceHit> intersect(const Vec3& origin, const Vec3& dir, double t_min = 1e-9) const;
  Vec3 shade(const SurfaceHit& hit) const;
  Vec3 radiance(const Vec3& origin, const Vec3& dir) const;

  // True when the segment from the camera center to x is unobstructed.
  bool visible_from(const Vec3& x, const Vec3& camera_center) const;

  // supersample x supersample stratified samples per pixel, box filtered.
  Image render(const Pose& pose, const Intrinsics& K, int supersample = 3) const;
  // Camera-frame z depth at pixel centers; 0 where the ray escapes.
  DepthMap depth(const Pose& pose, const Intrinsics& K) const;
};

// Camera-to-world pose at `eye` looking at `target`, +y up.
Pose look_at(const Vec3& eye, const Vec3& target, double roll = 0.0);

enum class TrajectoryKind { orbit, free };

std::string to_string(TrajectoryKind kind);
TrajectoryKind parse_trajectory_kind(const std::string& s);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::free;
  int frames = 12;
  double radius = 3.6;
  double height = 0.4;
  double start_deg = -50.0;
  double arc_deg = 100.0;
  Vec3 target = Vec3(0.0, -0.2, 0.0);
  // free motion only: a fast look-away swing over the middle of the sequence,
  // plus height bobbing and roll.
  double swing_deg = 25.0;
  double swing_start = 0.4;  // fraction of the sequence
  double swing_end = 0.6;
  double bob = 0.25;
  double roll_deg = 4.0;

  // Lengths (radius, height, target, bob) times s.
  TrajectorySpec scaled(double s) const;
};

std::vector<Pose> make_trajectory(const TrajectorySpec& spec);

// Largest rotation between consecutive poses, degrees.
double max_step_rotation_deg(const std::vector<Pose>& poses);

}  // namespace irb
