#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace irb {

enum class ParamGroup { field, pose };

// Named slices over parameter storage, laid out back to back in one flat
// gradient vector. Masked (non-learnable) segments still receive gradients,
// but the optimizer never updates them.
class ParamView {
 public:
  struct Segment {
    std::string name;
    std::span<double> values;
    std::size_t offset = 0;  // position in the flat gradient vector
    ParamGroup group = ParamGroup::field;
    bool learnable = true;
  };

  void add(std::string name, std::span<double> values, ParamGroup group, bool learnable = true);

  std::size_t size() const { return size_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(const std::string& name) const;
  void set_learnable(const std::string& name, bool learnable);

  std::vector<double> gather() const;

 private:
  std::vector<Segment> segments_;
  std::map<std::string, std::size_t> index_;
  std::size_t size_ = 0;
};

// Throws NonFiniteGradient on any NaN or Inf.
void check_finite(std::span<const double> grads);
// L2 norm over the learnable segments only.
double learnable_norm(const ParamView& view, std::span<const double> grads);
// Rescales learnable gradients so their norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_gradients(const ParamView& view, std::span<double> grads, double max_norm);

// start * (end / start)^(k / span), clamped to the endpoints outside [0, span].
struct ExponentialSchedule {
  double start = 1e-3;
  double end = 1e-3;
  int span = 1;

  double at(long k) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;
};

// Adaptive-moment optimizer keyed by segment name, so moments survive across
// views that include or freeze different segments. Each segment keeps its own
// step count for bias correction.
class AdamOptimizer {
 public:
  struct Moments {
    std::vector<double> m, v;
    std::int64_t steps = 0;
  };

  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  // grads must be finite and laid out as view. lr is per parameter group.
  void step(const ParamView& view, std::span<const double> grads,
            const std::map<ParamGroup, double>& lr);

  const std::map<std::string, Moments>& state() const { return state_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
};

// Loss closure: returns the loss at x and, when grad is non-empty, writes the
// analytic gradient into it.
using Closure = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central differences over up to max_coords randomly chosen coordinates. The
// relative error of coordinate i is |a - n| / max(|a|, |n|, floor) with floor
// = 1e-3 * max |analytic| over all coordinates, so coordinates with
// negligible gradient do not dominate through round-off.
GradCheckReport check_gradients(const Closure& f, std::span<const double> x, double step,
                                std::size_t max_coords = 64, std::uint64_t seed = 1);

}  // namespace irb
