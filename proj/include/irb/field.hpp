#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "irb/geometry.hpp"

namespace irb {

struct EncodingConfig {
  int l_pos = 6;           // frequency bands for positions
  int l_dir = 2;           // frequency bands for view directions (never gated)
  double alpha_pe = 0.0;   // coarse-to-fine control, 0 <= alpha_pe <= l_pos
};

constexpr int encoded_width(int bands) { return 3 + 6 * bands; }

// Weight of band k: 0 below alpha, a raised-cosine ramp across [k, k+1],
// and 1 once alpha passes k + 1.
double band_weight(double alpha_pe, int k);

// Writes [x, w_0 sin(pi x), w_0 cos(pi x), ..., w_{L-1} sin(2^{L-1} pi x), ...]
// into out (size encoded_width(bands)). Pass alpha_pe >= bands for no gating.
void positional_encode(const Vec3& x, int bands, double alpha_pe, std::span<double> out);

struct FieldSpec {
  int depth = 4;         // trunk layers
  int width = 64;        // trunk width
  int color_width = 32;  // hidden width of the color head
  int l_pos = 6;
  int l_dir = 2;

  bool operator==(const FieldSpec&) const = default;
};

struct FieldSample {
  Vec3 color;
  double density = 0.0;
};

// MLP radiance field. Every weight and bias lives in one flat parameter
// vector; layers are stored weight matrix (column-major, out x in) then bias.
//
//   enc(x) -> [Linear, ReLU] x depth -> h
//   density = softplus(Linear(h))
//   color   = sigmoid(Linear(ReLU(Linear([h, enc(d)]))))
class RadianceField {
 public:
  struct Layer {
    std::size_t offset = 0;  // weights; bias follows at offset + rows * cols
    int rows = 0;
    int cols = 0;
  };

  RadianceField() : RadianceField(FieldSpec{}) {}
  explicit RadianceField(const FieldSpec& spec);

  // Uniform fan-in initialization, seeded.
  void initialize(std::uint64_t seed);

  const FieldSpec& spec() const { return spec_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  const std::vector<Layer>& trunk() const { return trunk_; }
  const Layer& density_layer() const { return density_; }
  const Layer& color_hidden_layer() const { return color_hidden_; }
  const Layer& color_out_layer() const { return color_out_; }

  // Throws NonFiniteParameters if any parameter is NaN or infinite.
  void check_finite() const;

  // Single-point evaluation, used as the reference path in tests.
  FieldSample eval(const Vec3& x, const Vec3& d, const EncodingConfig& enc) const;

 private:
  FieldSpec spec_;
  // Aligned so the vectorized products round the same way on every run.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
  std::vector<Layer> trunk_;
  Layer density_, color_hidden_, color_out_;
};

// Batched forward/backward over N points. Keeps the activations of the last
// forward call; backward must follow with the same inputs.
class FieldWorkspace {
 public:
  void forward(const RadianceField& field, const EncodingConfig& enc,
               const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs);

  const Eigen::RowVectorXd& density() const { return density_; }
  const Eigen::Matrix3Xd& color() const { return color_; }

  // Accumulates into d_params (may be empty to skip), and writes point and
  // direction gradients when the pointers are non-null.
  void backward(const RadianceField& field, const EncodingConfig& enc,
                const Eigen::RowVectorXd& d_density, const Eigen::Matrix3Xd& d_color,
                std::span<double> d_params, Eigen::Matrix3Xd* d_points,
                Eigen::Matrix3Xd* d_dirs);

 private:
  Eigen::Matrix3Xd points_, dirs_;
  Eigen::MatrixXd enc_pos_, enc_dir_;
  std::vector<Eigen::MatrixXd> hidden_;  // post-activation trunk outputs
  Eigen::RowVectorXd density_pre_, density_;
  Eigen::MatrixXd color_in_, color_hidden_;
  Eigen::Matrix3Xd color_;
  Eigen::VectorXd d_params_;  // aligned accumulator, added to the caller's buffer
};

// Versioned container: "IRB-FIELD-v1" line, one JSON line with the layer spec,
// encoding config and parameter count, then the parameters as little-endian
// float64.
void save_field(std::ostream& os, const RadianceField& field, const EncodingConfig& enc);
void save_field(const std::string& path, const RadianceField& field, const EncodingConfig& enc);
RadianceField load_field(std::istream& is, EncodingConfig* enc);
RadianceField load_field(const std::string& path, EncodingConfig* enc);

}  // namespace irb
