#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace irb {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Pinhole camera shared by every frame of a sequence. Pixel (x, y) of an image
// covers [x, x+1) x [y, y+1); its center is at (x + 0.5, y + 0.5).
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  bool contains(const Vec2& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < width && p.y() < height;
  }
  // Camera-frame direction with unit z through pixel p.
  Vec3 unproject(const Vec2& p) const {
    return {(p.x() - cx) / fx, (p.y() - cy) / fy, 1.0};
  }
};

Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

Mat3 so3_exp(const Vec3& omega);
// Throws NotARotation if R is not orthonormal with det +1 (tolerance 1e-6).
Vec3 so3_log(const Mat3& R);
// dR/domega_k for k = 0..2, evaluated at omega.
std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega);
// Geodesic angle of R in radians, in [0, pi].
double rotation_angle(const Mat3& R);

// Camera-to-world rigid transform. Rotation and translation are stored as
// separate parameter blocks so either can be frozen during optimization.
struct Pose {
  Vec3 rotation = Vec3::Zero();     // axis-angle, exponentiated on use
  Vec3 translation = Vec3::Zero();  // camera center in world units

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat3& R, const Vec3& t);

  Mat3 R() const { return so3_exp(rotation); }
  const Vec3& center() const { return translation; }

  Vec3 to_world(const Vec3& x_cam) const { return R() * x_cam + translation; }
  Vec3 to_camera(const Vec3& x_world) const { return R().transpose() * (x_world - translation); }

  Pose inverse() const;
  // (this * other) as camera-to-world maps: x -> this(other(x)).
  Pose compose(const Pose& other) const;
};

// Partial derivatives of a projected pixel.
struct ProjectionJacobian {
  Mat23 d_point;        // w.r.t. the world point
  Mat23 d_rotation;     // w.r.t. the axis-angle rotation parameters
  Mat23 d_translation;  // w.r.t. the translation parameters
};

inline constexpr double kMinDepth = 1e-8;

// Throws NonPositiveDepth when the camera-frame depth is <= min_depth.
Vec2 project(const Vec3& x_world, const Pose& pose, const Intrinsics& K,
             ProjectionJacobian* jacobian = nullptr, double min_depth = kMinDepth);
// z is the camera-frame depth. Throws NonPositiveDepth when z <= 0.
Vec3 backproject(const Vec2& p, const Pose& pose, const Intrinsics& K, double z);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length, world frame
};

// Unit camera-frame direction through pixel p.
Vec3 camera_direction(const Vec2& p, const Intrinsics& K);
Ray camera_ray(const Vec2& p, const Pose& pose, const Intrinsics& K);

// x -> scale * rotation * x + translation
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  Sim3 inverse() const;
  // Maps a camera-to-world pose into the target frame (rotation composed,
  // center transformed).
  Pose apply(const Pose& pose) const;
};

enum class AlignMode { centers, with_rotation };

std::string to_string(AlignMode mode);
AlignMode parse_align_mode(const std::string& s);

// Least-squares similarity taking src camera placements onto dst ones.
// centers: Umeyama over camera centers. with_rotation: additionally aligns one
// virtual point per camera at unit depth along its optical axis (dst units;
// the src point sits at the equivalent depth under the center spread ratio).
Sim3 align_sim3(std::span<const Pose> src, std::span<const Pose> dst, AlignMode mode);

struct StampedPose {
  int frame_id = 0;
  Pose pose;
};
using Trajectory = std::vector<StampedPose>;

struct FrameError {
  int frame_id = 0;
  double rotation_deg = 0.0;
  double translation = 0.0;
};

struct PoseErrorReport {
  double delta_r = 0.0;  // mean rotation error, degrees
  double delta_t = 0.0;  // mean translation error, ground-truth units
  std::vector<FrameError> per_frame;
};

// Applies `alignment` to est and compares frame by frame with gt.
PoseErrorReport pose_error(const Trajectory& est, const Trajectory& gt, const Sim3& alignment);

std::vector<Pose> poses_of(const Trajectory& traj);
// Largest distance between any two camera centers.
double trajectory_extent(const Trajectory& traj);

// "frame_id tx ty tz qx qy qz qw" per line, camera-to-world, LF endings.
void write_trajectory(std::ostream& os, const Trajectory& traj);
void write_trajectory(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory(std::istream& is);
Trajectory read_trajectory(const std::string& path);

}  // namespace irb
