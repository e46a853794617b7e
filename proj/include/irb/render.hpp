#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "irb/field.hpp"
#include "irb/geometry.hpp"

namespace irb {

enum class SamplingMode { inverse_depth, uniform };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(const std::string& s);

struct SamplingConfig {
  int n_samples = 128;
  SamplingMode mode = SamplingMode::inverse_depth;
  // Inverse-depth interval [inv_near, inv_far); depth = 1 / u.
  double inv_near = 1.0;
  double inv_far = 0.0;
  // Depth interval for uniform mode.
  double near = 1.0;
  double far = 6.0;
  // The last interval runs from the final sample to this distance.
  double far_cap = 1e6;

  void validate() const;
};

// Stratified sample distances. With no jitter, each stratum contributes its
// midpoint; otherwise jitter[i] in [0, 1) places sample i inside stratum i.
void sample_ray(const SamplingConfig& cfg, std::span<const double> jitter, std::span<double> out);
std::vector<double> sample_ray(const SamplingConfig& cfg, std::mt19937_64* rng = nullptr);

struct RenderResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;       // expected termination distance along the unit ray
  double weight_sum = 0.0;  // accumulated opacity
  std::vector<double> transmittance;
  std::vector<double> weights;
};

// Discrete quadrature along one ray:
//   a_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - a_j), w_i = T_i a_i
//   color = sum w_i c_i + (1 - sum w_i) background, depth = sum w_i s_i
RenderResult composite(std::span<const double> s, std::span<const double> sigma,
                       const Eigen::Ref<const Eigen::Matrix3Xd>& colors, double far_cap,
                       const Vec3& background);

// Gradients of (d_color . color + d_depth * depth) with respect to sigma and
// the sample colors, given the forward result.
void composite_backward(std::span<const double> s, std::span<const double> sigma,
                        const Eigen::Ref<const Eigen::Matrix3Xd>& colors, double far_cap,
                        const Vec3& background, const RenderResult& fwd, const Vec3& d_color,
                        double d_depth, std::span<double> d_sigma,
                        Eigen::Ref<Eigen::Matrix3Xd> d_colors);

// Reference single-ray renderer built on RadianceField::eval.
RenderResult render_ray(const Vec3& origin, const Vec3& direction, const RadianceField& field,
                        const EncodingConfig& enc, const SamplingConfig& samp,
                        std::span<const double> jitter = {},
                        const Vec3& background = Vec3::Zero());

}  // namespace irb
