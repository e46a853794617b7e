#include "irb/render.hpp"

#include <cmath>

#include "irb/errors.hpp"

namespace irb {

std::string to_string(SamplingMode mode) {
  return mode == SamplingMode::inverse_depth ? "inverse_depth" : "uniform";
}

SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "inverse_depth") return SamplingMode::inverse_depth;
  if (s == "uniform") return SamplingMode::uniform;
  throw ConfigError("unknown sampling mode '" + s + "'");
}

void SamplingConfig::validate() const {
  if (n_samples < 2) throw InvalidSpec("n_samples must be at least 2");
  if (mode == SamplingMode::inverse_depth) {
    if (!(inv_near > inv_far && inv_far >= 0.0))
      throw InvalidSpec("inverse range must satisfy inv_near > inv_far >= 0");
  } else if (!(near > 0.0 && near < far)) {
    throw InvalidSpec("uniform range must satisfy 0 < near < far");
  }
}

void sample_ray(const SamplingConfig& cfg, std::span<const double> jitter, std::span<double> out) {
  const int n = cfg.n_samples;
  for (int i = 0; i < n; ++i) {
    const double xi = jitter.empty() ? 0.5 : jitter[i];
    const double f = (i + xi) / n;
    if (cfg.mode == SamplingMode::inverse_depth) {
      const double u = cfg.inv_near + (cfg.inv_far - cfg.inv_near) * f;
      out[i] = 1.0 / u;
    } else {
      out[i] = cfg.near + (cfg.far - cfg.near) * f;
    }
  }
}

std::vector<double> sample_ray(const SamplingConfig& cfg, std::mt19937_64* rng) {
  std::vector<double> jitter;
  if (rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    jitter.resize(cfg.n_samples);
    for (auto& j : jitter) j = u(*rng);
  }
  std::vector<double> s(cfg.n_samples);
  sample_ray(cfg, jitter, s);
  return s;
}

namespace {

inline double interval(std::span<const double> s, std::size_t i, double far_cap) {
  return i + 1 < s.size() ? s[i + 1] - s[i] : std::max(far_cap - s[i], 0.0);
}

}  // namespace

RenderResult composite(std::span<const double> s, std::span<const double> sigma,
                       const Eigen::Ref<const Eigen::Matrix3Xd>& colors, double far_cap,
                       const Vec3& background) {
  const std::size_t n = s.size();
  RenderResult r;
  r.transmittance.resize(n);
  r.weights.resize(n);
  double T = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = -std::expm1(-sigma[i] * interval(s, i, far_cap));
    r.transmittance[i] = T;
    const double w = T * a;
    r.weights[i] = w;
    r.color += w * colors.col(static_cast<Eigen::Index>(i));
    r.depth += w * s[i];
    r.weight_sum += w;
    T *= 1.0 - a;
  }
  r.color += (1.0 - r.weight_sum) * background;
  return r;
}

void composite_backward(std::span<const double> s, std::span<const double> sigma,
                        const Eigen::Ref<const Eigen::Matrix3Xd>& colors, double far_cap,
                        const Vec3& background, const RenderResult& fwd, const Vec3& d_color,
                        double d_depth, std::span<double> d_sigma,
                        Eigen::Ref<Eigen::Matrix3Xd> d_colors) {
  const std::size_t n = s.size();
  // d out / d sigma_k = delta_k (T_{k+1} v_k - sum_{i>k} w_i v_i)
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const auto col = static_cast<Eigen::Index>(k);
    const double v = d_color.dot(colors.col(col) - background) + d_depth * s[k];
    const double w = fwd.weights[k];
    const double delta = interval(s, k, far_cap);
    const double t_next = fwd.transmittance[k] - w;
    d_sigma[k] = delta * (t_next * v - suffix);
    suffix += w * v;
    d_colors.col(col) = w * d_color;
  }
  (void)sigma;
}

RenderResult render_ray(const Vec3& origin, const Vec3& direction, const RadianceField& field,
                        const EncodingConfig& enc, const SamplingConfig& samp,
                        std::span<const double> jitter, const Vec3& background) {
  std::vector<double> s(samp.n_samples);
  sample_ray(samp, jitter, s);
  std::vector<double> sigma(s.size());
  Eigen::Matrix3Xd colors(3, static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto out = field.eval(origin + s[i] * direction, direction, enc);
    sigma[i] = out.density;
    colors.col(static_cast<Eigen::Index>(i)) = out.color;
  }
  return composite(s, sigma, colors, samp.far_cap, background);
}

}  // namespace irb
