#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "irb/correspond.hpp"
#include "irb/pipeline.hpp"
#include "irb/random.hpp"
#include "irb/scene.hpp"

namespace testing {

// Small rendered sequence of the scaled standard scene with oracle matches
// between consecutive frames.
struct MiniScene {
  irb::Intrinsics K{32, 32, 16, 16, 32, 32};
  double scale = 0.25;
  irb::SyntheticScene scene = irb::SyntheticScene::standard().scaled(0.25);
  std::vector<irb::Pose> gt;
  std::vector<irb::Image> images;
  irb::CorrespondenceMap corr;

  void add_frame(const irb::Pose& p) {
    gt.push_back(p);
    images.push_back(scene.render(p, K, 2));
  }

  void link_all(int count = 600) {
    irb::OracleConfig oc;
    oc.count = count;
    corr.clear();
    for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
      std::mt19937_64 rng(irb::derive_seed(99, {i}));
      corr[{int(i), int(i + 1)}] =
          irb::oracle_correspondences(scene, int(i), int(i + 1), gt[i], gt[i + 1], K, oc, rng);
    }
  }
};

inline MiniScene orbit_scene(int frames) {
  MiniScene s;
  irb::TrajectorySpec ts;
  ts.frames = frames;
  ts.arc_deg = 4.0 * frames;
  ts.swing_deg = 0.0;
  ts = ts.scaled(s.scale);
  for (const auto& p : irb::make_trajectory(ts)) s.add_frame(p);
  s.link_all();
  return s;
}

// Desk-size configuration that trains in seconds.
inline irb::PipelineConfig mini_config() {
  irb::PipelineConfig c;
  c.field.depth = 3;
  c.field.width = 32;
  c.field.color_width = 16;
  c.beta_init = 150;
  c.beta_tracking = 20;
  c.beta_window = 10;
  c.beta_global = 10;
  c.beta_post = 40;
  c.ramp_start = 10;
  c.ramp_end = 30;
  c.loss.ray_batch = 128;
  c.loss.corr.budget = 128;
  c.loss.trace.samp.mode = irb::SamplingMode::uniform;
  c.loss.trace.samp.n_samples = 24;
  c.loss.trace.samp.near = 0.125;
  c.loss.trace.samp.far = 2.75;
  c.loss.trace.samp.far_cap = 2.9;
  return c;
}

inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("irb_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace testing
