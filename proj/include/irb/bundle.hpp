#pragma once

#include <string>
#include <vector>

#include "irb/config.hpp"
#include "irb/correspond.hpp"
#include "irb/geometry.hpp"
#include "irb/image.hpp"

namespace irb {

// A synthesized or ingested sequence. Frame ids are 0..n-1.
struct SceneBundle {
  Intrinsics K;
  Trajectory gt;
  std::vector<Image> images;
  std::vector<DepthMap> depths;  // camera-frame z; may be empty when not available
  CorrespondenceMap corr;
  int test_stride = 0;
  std::vector<std::string> warnings;

  std::vector<int> training_ids() const;
  std::vector<int> test_ids() const;
};

// Renders the scene along the configured trajectory and draws oracle matches
// between consecutive training frames (held-out frames are bridged over).
SceneBundle synthesize(const SynthConfig& cfg, int test_stride);

// Layout:
//   intrinsics.json, gt_trajectory.txt
//   images/frame_NNNN.png
//   depth/frame_NNNN.pfm and depth/frame_NNNN.depth64
//   corr/pair_IIII_JJJJ.corr
void write_bundle(const std::string& dir, const SceneBundle& bundle);
SceneBundle read_bundle(const std::string& dir, bool with_depths = false);

std::string frame_name(int id);

}  // namespace irb
