#include "irb/correspond.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "irb/errors.hpp"

namespace irb {

CorrespondenceSet CorrespondenceSet::reversed() const {
  CorrespondenceSet out;
  out.frame_i = frame_j;
  out.frame_j = frame_i;
  out.provenance = provenance;
  out.matches.reserve(matches.size());
  for (const auto& m : matches) out.matches.push_back({m.p, m.q, m.alpha});
  return out;
}

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void validate(const Correspondence& m, const Intrinsics* bounds, int lineno, const std::string& line) {
  if (!(m.alpha > 0.0 && m.alpha <= 1.0))
    throw BoundsViolation("line " + std::to_string(lineno) + ": confidence outside (0, 1]: " + line);
  auto ok = [&](const Vec2& v) {
    if (!std::isfinite(v.x()) || !std::isfinite(v.y())) return false;
    return bounds ? bounds->contains(v) : (v.x() >= 0.0 && v.y() >= 0.0);
  };
  if (!ok(m.q) || !ok(m.p))
    throw BoundsViolation("line " + std::to_string(lineno) + ": pixel outside image: " + line);
}

}  // namespace

void save_correspondences(std::ostream& os, const CorrespondenceSet& set) {
  os << "IRB-CORR-v1 " << set.frame_i << ' ' << set.frame_j << ' ' << set.matches.size() << '\n';
  for (const auto& m : set.matches)
    os << fmt9(m.q.x()) << ' ' << fmt9(m.q.y()) << ' ' << fmt9(m.p.x()) << ' ' << fmt9(m.p.y())
       << ' ' << fmt9(m.alpha) << '\n';
}

void save_correspondences(const std::string& path, const CorrespondenceSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save_correspondences(os, set);
}

CorrespondenceMap load_correspondences(std::istream& is, const Intrinsics* bounds) {
  CorrespondenceMap out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string magic;
    CorrespondenceSet set;
    long n = -1;
    if (!(hs >> magic >> set.frame_i >> set.frame_j >> n) || magic != "IRB-CORR-v1" || n < 0)
      throw ParseError("expected 'IRB-CORR-v1 <i> <j> <n>'", lineno);
    if (set.frame_i == set.frame_j) throw ParseError("a pair needs two distinct frames", lineno);
    set.provenance = Provenance::file;
    set.matches.reserve(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k) {
      if (!std::getline(is, line)) throw ParseError("unexpected end of file", lineno + 1);
      ++lineno;
      std::istringstream ls(line);
      Correspondence m;
      double qx, qy, px, py;
      std::string extra;
      if (!(ls >> qx >> qy >> px >> py >> m.alpha) || (ls >> extra))
        throw ParseError("expected 'qx qy px py alpha'", lineno);
      m.q = {qx, qy};
      m.p = {px, py};
      validate(m, bounds, lineno, line);
      set.matches.push_back(m);
    }
    const FramePair key{set.frame_i, set.frame_j};
    if (out.count(key)) throw ParseError("duplicate block for frame pair", lineno);
    out.emplace(key, std::move(set));
  }
  return out;
}

CorrespondenceMap load_correspondences(const std::string& path, const Intrinsics* bounds) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return load_correspondences(is, bounds);
}

CorrespondenceMap load_correspondence_dir(const std::string& dir, const Intrinsics* bounds) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".corr") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  CorrespondenceMap out;
  for (const auto& f : files) {
    auto part = load_correspondences(f.string(), bounds);
    for (auto& [k, v] : part) {
      if (out.count(k)) throw ParseError("duplicate frame pair across files: " + f.string(), 1);
      out.emplace(k, std::move(v));
    }
  }
  return out;
}

std::string to_string(ConfidenceModel model) {
  return model == ConfidenceModel::constant ? "constant" : "noise_decay";
}

ConfidenceModel parse_confidence_model(const std::string& s) {
  if (s == "constant") return ConfidenceModel::constant;
  if (s == "noise_decay") return ConfidenceModel::noise_decay;
  throw InvalidSpec("unknown confidence model '" + s + "'");
}

CorrespondenceSet oracle_correspondences(const SyntheticScene& scene, int frame_i, int frame_j,
                                         const Pose& pose_i, const Pose& pose_j,
                                         const Intrinsics& K, const OracleConfig& cfg,
                                         std::mt19937_64& rng) {
  CorrespondenceSet set;
  set.frame_i = frame_i;
  set.frame_j = frame_j;
  set.provenance = Provenance::oracle;

  std::vector<int> pixels(std::size_t(K.width) * K.height);
  std::iota(pixels.begin(), pixels.end(), 0);
  std::shuffle(pixels.begin(), pixels.end(), rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Mat3 Ri = pose_i.R();

  for (int idx : pixels) {
    if (static_cast<int>(set.matches.size()) >= cfg.count) break;
    const Vec2 q(idx % K.width + 0.5, idx / K.width + 0.5);
    const Vec3 dir = Ri * camera_direction(q, K);
    const auto hit = scene.intersect(pose_i.translation, dir);
    if (!hit) continue;
    if (pose_j.to_camera(hit->point).z() <= kMinDepth) continue;
    const Vec2 p_exact = project(hit->point, pose_j, K);
    if (!K.contains(p_exact) || !scene.visible_from(hit->point, pose_j.translation)) continue;

    Vec2 offset = Vec2::Zero();
    if (cfg.pixel_noise_sigma > 0.0) {
      offset.x() = cfg.pixel_noise_sigma * noise(rng);
      offset.y() = cfg.pixel_noise_sigma * noise(rng);
    }
    const Vec2 p = p_exact + offset;
    if (!K.contains(p)) continue;
    double alpha = 1.0;
    if (cfg.confidence == ConfidenceModel::noise_decay) alpha = std::exp(-offset.norm() / 2.0);
    if (!(alpha > 0.0)) continue;
    set.matches.push_back({q, p, alpha});
  }
  if (static_cast<int>(set.matches.size()) < cfg.min_matches)
    throw InsufficientOverlap("frames " + std::to_string(frame_i) + " and " +
                              std::to_string(frame_j) + " share only " +
                              std::to_string(set.matches.size()) + " visible points");
  return set;
}

bool find_pair(const CorrespondenceMap& corr, int a, int b, CorrespondenceSet* out) {
  if (auto it = corr.find({a, b}); it != corr.end()) {
    if (out) *out = it->second;
    return true;
  }
  if (auto it = corr.find({b, a}); it != corr.end()) {
    if (out) *out = it->second.reversed();
    return true;
  }
  return false;
}

PoseGraph build_pose_graph(const std::vector<int>& frames, const CorrespondenceMap& corr) {
  PoseGraph g;
  g.scene_edges = frames;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const int a = frames[k], b = frames[k + 1];
    if (corr.count({a, b}) || corr.count({b, a}))
      g.neighbor_edges.push_back({a, b});
    else
      g.warnings.push_back("no correspondences between frames " + std::to_string(a) + " and " +
                           std::to_string(b) + "; pose chain is broken");
  }
  return g;
}

}  // namespace irb
