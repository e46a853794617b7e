#include "irb/geometry.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "irb/errors.hpp"

namespace irb {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidIntrinsics("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidIntrinsics("image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw InvalidIntrinsics("principal point outside the image");
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-4) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 W = hat(omega);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0)
    throw NotARotation("matrix is not a proper rotation");
  const Vec3 v = 0.5 * vee(R - R.transpose());  // sin(theta) * axis
  const double s = v.norm();
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);
  if (s < 1e-12 && c > 0.0) return v;
  if (c > -0.999) return (theta / s) * v;

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part, R_sym = c I + (1 - c) a a^T.
  const Mat3 aat = (0.5 * (R + R.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  int k = 0;
  aat.diagonal().maxCoeff(&k);
  Vec3 axis = aat.col(k) / std::sqrt(std::max(aat(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(v) < 0.0) axis = -axis;
  return theta * axis;
}

std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega) {
  std::array<Mat3, 3> out;
  const double theta2 = omega.squaredNorm();
  if (theta2 < 1e-10) {
    const Mat3 W = hat(omega);
    for (int i = 0; i < 3; ++i) {
      const Mat3 E = hat(Vec3::Unit(i));
      out[i] = E + 0.5 * (E * W + W * E);
    }
    return out;
  }
  const Mat3 R = so3_exp(omega);
  const Mat3 W = hat(omega);
  const Mat3 IminusR = Mat3::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    const Vec3 col = IminusR.col(i);
    out[i] = ((omega[i] * W + hat(omega.cross(col))) / theta2) * R;
  }
  return out;
}

double rotation_angle(const Mat3& R) {
  const double s = 0.5 * vee(R - R.transpose()).norm();
  const double c = 0.5 * (R.trace() - 1.0);
  return std::atan2(s, c);
}

Pose Pose::from_matrix(const Mat3& R, const Vec3& t) { return {so3_log(R), t}; }

Pose Pose::inverse() const {
  const Mat3 Rt = R().transpose();
  return {-rotation, -(Rt * translation)};
}

Pose Pose::compose(const Pose& other) const {
  const Mat3 Ra = R();
  return {so3_log(Ra * other.R()), Ra * other.translation + translation};
}

Vec2 project(const Vec3& x_world, const Pose& pose, const Intrinsics& K,
             ProjectionJacobian* jacobian, double min_depth) {
  const Mat3 R = pose.R();
  const Vec3 rel = x_world - pose.translation;
  const Vec3 xc = R.transpose() * rel;
  if (!(xc.z() > min_depth)) throw NonPositiveDepth("point is behind or on the camera plane");
  const double iz = 1.0 / xc.z();
  const Vec2 pixel{K.fx * xc.x() * iz + K.cx, K.fy * xc.y() * iz + K.cy};
  if (jacobian) {
    Mat23 d_cam;
    d_cam << K.fx * iz, 0.0, -K.fx * xc.x() * iz * iz,
             0.0, K.fy * iz, -K.fy * xc.y() * iz * iz;
    jacobian->d_point = d_cam * R.transpose();
    jacobian->d_translation = -jacobian->d_point;
    const auto dR = so3_exp_derivatives(pose.rotation);
    for (int k = 0; k < 3; ++k)
      jacobian->d_rotation.col(k) = d_cam * (dR[k].transpose() * rel);
  }
  return pixel;
}

Vec3 backproject(const Vec2& p, const Pose& pose, const Intrinsics& K, double z) {
  if (!(z > 0.0)) throw NonPositiveDepth("backprojection depth must be positive");
  return pose.to_world(z * K.unproject(p));
}

Vec3 camera_direction(const Vec2& p, const Intrinsics& K) { return K.unproject(p).normalized(); }

Ray camera_ray(const Vec2& p, const Pose& pose, const Intrinsics& K) {
  return {pose.translation, pose.R() * camera_direction(p, K)};
}

Sim3 Sim3::inverse() const {
  Sim3 inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation) / scale;
  return inv;
}

Pose Sim3::apply(const Pose& pose) const {
  return Pose::from_matrix(rotation * pose.R(), apply(pose.translation));
}

std::string to_string(AlignMode mode) {
  return mode == AlignMode::centers ? "centers" : "with_rotation";
}

AlignMode parse_align_mode(const std::string& s) {
  if (s == "centers") return AlignMode::centers;
  if (s == "with_rotation") return AlignMode::with_rotation;
  throw ConfigError("unknown alignment mode '" + s + "'");
}

namespace {

double mean_spread(std::span<const Vec3> pts) {
  Vec3 mu = Vec3::Zero();
  for (const auto& p : pts) mu += p;
  mu /= static_cast<double>(pts.size());
  double acc = 0.0;
  for (const auto& p : pts) acc += (p - mu).squaredNorm();
  return acc / static_cast<double>(pts.size());
}

Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst) {
  const double n = static_cast<double>(src.size());
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;

  Mat3 cov_src = Mat3::Zero();
  Mat3 cross = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - mu_s;
    const Vec3 b = dst[i] - mu_d;
    cov_src += a * a.transpose();
    cross += b * a.transpose();
    var_src += a.squaredNorm();
  }
  cov_src /= n;
  cross /= n;
  var_src /= n;

  // Rank < 2 leaves the rotation about the common line undetermined.
  Eigen::JacobiSVD<Mat3> src_svd(cov_src);
  const Vec3 sv = src_svd.singularValues();
  if (sv(0) <= 1e-12 || sv(1) <= 1e-12 * sv(0))
    throw DegenerateConfiguration("source points are coincident or collinear");

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;

  Sim3 out;
  out.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * S).trace() / var_src;
  out.translation = mu_d - out.scale * out.rotation * mu_s;
  return out;
}

}  // namespace

Sim3 align_sim3(std::span<const Pose> src, std::span<const Pose> dst, AlignMode mode) {
  if (src.size() != dst.size()) throw LengthMismatch("alignment needs matching pose lists");
  if (src.size() < 3) throw DegenerateConfiguration("alignment needs at least 3 pose pairs");

  std::vector<Vec3> a, b;
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.push_back(src[i].translation);
    b.push_back(dst[i].translation);
  }
  if (mode == AlignMode::centers) return umeyama(a, b);

  const double spread_src = mean_spread(a);
  const double spread_dst = mean_spread(b);
  const double ratio =
      (spread_src > 1e-24 && spread_dst > 1e-24) ? std::sqrt(spread_src / spread_dst) : 1.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.push_back(src[i].to_world(Vec3(0.0, 0.0, ratio)));
    b.push_back(dst[i].to_world(Vec3(0.0, 0.0, 1.0)));
  }
  return umeyama(a, b);
}

PoseErrorReport pose_error(const Trajectory& est, const Trajectory& gt, const Sim3& alignment) {
  if (est.size() != gt.size()) throw LengthMismatch("trajectories differ in length");
  PoseErrorReport report;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est[i].frame_id != gt[i].frame_id)
      throw LengthMismatch("trajectories differ in frame ordering at index " + std::to_string(i));
    const Mat3 R_est = alignment.rotation * est[i].pose.R();
    const Vec3 t_est = alignment.apply(est[i].pose.translation);
    FrameError fe;
    fe.frame_id = gt[i].frame_id;
    fe.rotation_deg = rotation_angle(R_est * gt[i].pose.R().transpose()) * 180.0 / std::numbers::pi;
    fe.translation = (t_est - gt[i].pose.translation).norm();
    report.delta_r += fe.rotation_deg;
    report.delta_t += fe.translation;
    report.per_frame.push_back(fe);
  }
  if (!est.empty()) {
    report.delta_r /= static_cast<double>(est.size());
    report.delta_t /= static_cast<double>(est.size());
  }
  return report;
}

std::vector<Pose> poses_of(const Trajectory& traj) {
  std::vector<Pose> out;
  out.reserve(traj.size());
  for (const auto& s : traj) out.push_back(s.pose);
  return out;
}

double trajectory_extent(const Trajectory& traj) {
  double best = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    for (std::size_t j = i + 1; j < traj.size(); ++j)
      best = std::max(best, (traj[i].pose.translation - traj[j].pose.translation).norm());
  return best;
}

void write_trajectory(std::ostream& os, const Trajectory& traj) {
  os << std::setprecision(17);
  for (const auto& s : traj) {
    const Eigen::Quaterniond q(s.pose.R());
    const Vec3& t = s.pose.translation;
    os << s.frame_id << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
       << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_trajectory(os, traj);
}

Trajectory read_trajectory(std::istream& is) {
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    StampedPose sp;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> sp.frame_id >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw ParseError("expected 'frame_id tx ty tz qx qy qz qw'", lineno);
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError("quaternion is not unit length", lineno);
    q.normalize();
    sp.pose = Pose::from_matrix(q.toRotationMatrix(), {tx, ty, tz});
    traj.push_back(sp);
  }
  return traj;
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_trajectory(is);
}

}  // namespace irb
