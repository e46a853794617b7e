#include "irb/bundle.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "irb/errors.hpp"
#include "irb/random.hpp"

namespace irb {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> SceneBundle::training_ids() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(images.size()); ++i)
    if (!is_test_frame(i, test_stride)) out.push_back(i);
  return out;
}

std::vector<int> SceneBundle::test_ids() const {
  return test_frame_ids(static_cast<int>(images.size()), test_stride);
}

std::string frame_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d", id);
  return buf;
}

SceneBundle synthesize(const SynthConfig& cfg, int test_stride) {
  if (cfg.frames < 2) throw InvalidSpec("need at least 2 frames");
  if (cfg.width < 1 || cfg.height < 1 || !(cfg.focal > 0.0)) throw InvalidSpec("bad image size or focal length");
  if (cfg.supersample < 1) throw InvalidSpec("supersample must be positive");
  if (test_stride != 0 && test_stride < 2) throw InvalidSpec("test stride must be 0 or at least 2");
  if (!(cfg.scene_scale > 0.0)) throw InvalidSpec("scene scale must be positive");

  SceneBundle b;
  b.K = cfg.intrinsics();
  b.test_stride = test_stride;
  const SyntheticScene scene = SyntheticScene::standard().scaled(cfg.scene_scale);
  TrajectorySpec ts = cfg.trajectory.scaled(cfg.scene_scale);
  ts.frames = cfg.frames;
  const auto poses = make_trajectory(ts);
  for (int i = 0; i < cfg.frames; ++i) {
    b.gt.push_back({i, poses[i]});
    b.images.push_back(scene.render(poses[i], b.K, cfg.supersample));
    b.depths.push_back(scene.depth(poses[i], b.K));
  }
  const auto train = b.training_ids();
  for (std::size_t k = 0; k + 1 < train.size(); ++k) {
    const int i = train[k], j = train[k + 1];
    std::mt19937_64 rng(derive_seed(cfg.seed, {std::uint64_t(i), std::uint64_t(j)}));
    try {
      b.corr[{i, j}] = oracle_correspondences(scene, i, j, poses[i], poses[j], b.K, cfg.oracle, rng);
    } catch (const InsufficientOverlap& e) {
      b.warnings.push_back(e.what());
    }
  }
  return b;
}

void write_bundle(const std::string& dir, const SceneBundle& b) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  fs::create_directories(fs::path(dir) / "corr");
  {
    std::ofstream os(fs::path(dir) / "intrinsics.json");
    if (!os) throw IoError("cannot write " + dir + "/intrinsics.json");
    os << json{{"fx", b.K.fx}, {"fy", b.K.fy}, {"cx", b.K.cx},          {"cy", b.K.cy},
               {"width", b.K.width}, {"height", b.K.height}, {"frames", b.images.size()},
               {"test_stride", b.test_stride}}
              .dump(2)
       << '\n';
  }
  write_trajectory((fs::path(dir) / "gt_trajectory.txt").string(), b.gt);
  for (std::size_t i = 0; i < b.images.size(); ++i) {
    const std::string name = frame_name(static_cast<int>(i));
    write_png((fs::path(dir) / "images" / (name + ".png")).string(), b.images[i]);
    if (i < b.depths.size()) {
      write_pfm((fs::path(dir) / "depth" / (name + ".pfm")).string(), b.depths[i]);
      write_depth64((fs::path(dir) / "depth" / (name + ".depth64")).string(), b.depths[i]);
    }
  }
  for (const auto& [key, set] : b.corr) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pair_%04d_%04d.corr", key.first, key.second);
    save_correspondences((fs::path(dir) / "corr" / buf).string(), set);
  }
}

SceneBundle read_bundle(const std::string& dir, bool with_depths) {
  SceneBundle b;
  std::ifstream is(fs::path(dir) / "intrinsics.json");
  if (!is) throw IoError("not a scene bundle (no intrinsics.json): " + dir);
  json j;
  try {
    j = json::parse(is);
    b.K = {j.at("fx"), j.at("fy"), j.at("cx"), j.at("cy"), j.at("width"), j.at("height")};
    b.test_stride = j.value("test_stride", 0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("intrinsics.json: ") + e.what(), 1);
  }
  b.K.validate();
  b.gt = read_trajectory((fs::path(dir) / "gt_trajectory.txt").string());
  for (std::size_t i = 0; i < b.gt.size(); ++i) {
    if (b.gt[i].frame_id != static_cast<int>(i)) throw ParseError("gt_trajectory.txt: frame ids must be 0..n-1", int(i) + 1);
    const std::string name = frame_name(static_cast<int>(i));
    Image img = read_png((fs::path(dir) / "images" / (name + ".png")).string());
    if (img.width != b.K.width || img.height != b.K.height)
      throw ShapeMismatch(name + ".png does not match the intrinsics");
    b.images.push_back(std::move(img));
    if (with_depths) b.depths.push_back(read_depth64((fs::path(dir) / "depth" / (name + ".depth64")).string()));
  }
  if (fs::is_directory(fs::path(dir) / "corr"))
    b.corr = load_correspondence_dir((fs::path(dir) / "corr").string(), &b.K);
  return b;
}

}  // namespace irb
