#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "irb/correspond.hpp"
#include "irb/eval.hpp"
#include "irb/pipeline.hpp"
#include "irb/scene.hpp"

namespace irb {

struct SynthConfig {
  int frames = 12;
  int width = 64;
  int height = 64;
  double focal = 60.0;  // fx = fy, principal point at the image center
  TrajectorySpec trajectory;
  double scene_scale = 1.0;  // scales scene and trajectory lengths together
  int supersample = 3;
  OracleConfig oracle;
  std::uint64_t seed = 1;

  Intrinsics intrinsics() const;
};

struct RunConfig {
  PipelineConfig pipeline;
  EvalConfig eval;
  SynthConfig synth;
  std::string scene;   // scene bundle directory
  std::string output;  // run output directory
  int threads = 0;     // 0: OpenMP default (IRB_THREADS when set)
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every settable key, in documentation order.
const std::vector<ConfigKey>& config_schema();

// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// "key = value" lines; '#' starts a comment. Errors carry the line number.
void apply_config(std::istream& is, RunConfig& cfg);
void apply_config_file(const std::string& path, RunConfig& cfg);
// All keys in schema order, one "key = value" line each; apply_config on the
// output reproduces cfg.
std::string dump_config(const RunConfig& cfg);

}  // namespace irb
