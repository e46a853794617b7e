#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "irb/geometry.hpp"
#include "irb/scene.hpp"

namespace irb {

// Pixel q in frame i matched to pixel p in frame j with confidence alpha.
struct Correspondence {
  Vec2 q = Vec2::Zero();
  Vec2 p = Vec2::Zero();
  double alpha = 1.0;
};

enum class Provenance { oracle, file };

struct CorrespondenceSet {
  int frame_i = 0;
  int frame_j = 1;
  std::vector<Correspondence> matches;
  Provenance provenance = Provenance::file;

  // Same matches seen from frame j: (p, q, alpha) for pair (j, i).
  CorrespondenceSet reversed() const;
};

using FramePair = std::pair<int, int>;
using CorrespondenceMap = std::map<FramePair, CorrespondenceSet>;

// IRB-CORR-v1 text format. A file holds one or more blocks:
//   IRB-CORR-v1 <i> <j> <n>
//   qx qy px py alpha        (n lines, %.9g, LF endings)
// Pixel bounds are checked against `bounds` when given; alpha must be in (0, 1].
void save_correspondences(std::ostream& os, const CorrespondenceSet& set);
void save_correspondences(const std::string& path, const CorrespondenceSet& set);
CorrespondenceMap load_correspondences(std::istream& is, const Intrinsics* bounds = nullptr);
CorrespondenceMap load_correspondences(const std::string& path, const Intrinsics* bounds = nullptr);
// Merges every *.corr file of a directory, in lexicographic order.
CorrespondenceMap load_correspondence_dir(const std::string& dir, const Intrinsics* bounds = nullptr);

enum class ConfidenceModel { constant, noise_decay };

std::string to_string(ConfidenceModel model);
ConfidenceModel parse_confidence_model(const std::string& s);

struct OracleConfig {
  int count = 2000;
  double pixel_noise_sigma = 0.0;
  ConfidenceModel confidence = ConfidenceModel::constant;
  int min_matches = 8;
};

// Exact matches from scene geometry: q runs over frame-i pixel centers in a
// seeded random order, keeping those whose surface point is visible from
// frame j; p is its projection into frame j plus optional Gaussian noise.
// Throws InsufficientOverlap below min_matches.
CorrespondenceSet oracle_correspondences(const SyntheticScene& scene, int frame_i, int frame_j,
                                         const Pose& pose_i, const Pose& pose_j,
                                         const Intrinsics& K, const OracleConfig& cfg,
                                         std::mt19937_64& rng);

struct PoseGraph {
  std::vector<FramePair> neighbor_edges;  // (frames[k], frames[k+1]) with matches
  std::vector<int> scene_edges;           // every frame links to the field
  std::vector<std::string> warnings;
};

// Neighbor edges between consecutive frames whose correspondences exist in
// either direction; missing pairs break the chain and produce a warning.
PoseGraph build_pose_graph(const std::vector<int>& frames, const CorrespondenceMap& corr);

// Looks up (a, b), falling back to the reversal of (b, a). Returns false when
// neither exists.
bool find_pair(const CorrespondenceMap& corr, int a, int b, CorrespondenceSet* out);

}  // namespace irb
