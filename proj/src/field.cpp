#include "irb/field.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "irb/errors.hpp"

namespace irb {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

double band_weight(double alpha_pe, int k) {
  const double a = alpha_pe - k;
  if (a <= 0.0) return 0.0;
  if (a >= 1.0) return 1.0;
  return 0.5 * (1.0 - std::cos(a * std::numbers::pi));
}

void positional_encode(const Vec3& x, int bands, double alpha_pe, std::span<double> out) {
  out[0] = x.x();
  out[1] = x.y();
  out[2] = x.z();
  double freq = std::numbers::pi;
  for (int k = 0; k < bands; ++k, freq *= 2.0) {
    const double w = band_weight(alpha_pe, k);
    double* band = out.data() + 3 + 6 * k;
    for (int a = 0; a < 3; ++a) {
      if (w == 0.0) {
        band[a] = 0.0;
        band[3 + a] = 0.0;
      } else {
        band[a] = w * std::sin(freq * x[a]);
        band[3 + a] = w * std::cos(freq * x[a]);
      }
    }
  }
}

namespace {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap weights(std::span<const double> p, const RadianceField::Layer& l) {
  return ConstMatMap(p.data() + l.offset, l.rows, l.cols);
}
ConstVecMap bias(std::span<const double> p, const RadianceField::Layer& l) {
  return ConstVecMap(p.data() + l.offset + std::size_t(l.rows) * l.cols, l.rows);
}
MatMap weights(std::span<double> p, const RadianceField::Layer& l) {
  return MatMap(p.data() + l.offset, l.rows, l.cols);
}
VecMap bias(std::span<double> p, const RadianceField::Layer& l) {
  return VecMap(p.data() + l.offset + std::size_t(l.rows) * l.cols, l.rows);
}

// Gradient of the encoding with respect to its input, for one point.
Vec3 encode_backward(const Vec3& x, int bands, double alpha_pe, const double* d_enc) {
  Vec3 g(d_enc[0], d_enc[1], d_enc[2]);
  double freq = std::numbers::pi;
  for (int k = 0; k < bands; ++k, freq *= 2.0) {
    const double w = band_weight(alpha_pe, k);
    if (w == 0.0) continue;
    const double* band = d_enc + 3 + 6 * k;
    for (int a = 0; a < 3; ++a) {
      const double arg = freq * x[a];
      g[a] += w * freq * (std::cos(arg) * band[a] - std::sin(arg) * band[3 + a]);
    }
  }
  return g;
}

}  // namespace

RadianceField::RadianceField(const FieldSpec& spec) : spec_(spec) {
  if (spec.depth < 1 || spec.width < 1 || spec.color_width < 1 || spec.l_pos < 0 || spec.l_dir < 0)
    throw InvalidSpec("field layer spec must have positive sizes");
  std::size_t offset = 0;
  auto add = [&](int rows, int cols) {
    Layer l{offset, rows, cols};
    offset += std::size_t(rows) * cols + rows;
    return l;
  };
  int in = encoded_width(spec.l_pos);
  for (int i = 0; i < spec.depth; ++i) {
    trunk_.push_back(add(spec.width, in));
    in = spec.width;
  }
  density_ = add(1, spec.width);
  color_hidden_ = add(spec.color_width, spec.width + encoded_width(spec.l_dir));
  color_out_ = add(3, spec.color_width);
  params_.assign(offset, 0.0);
}

void RadianceField::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](const Layer& l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t n = std::size_t(l.rows) * l.cols + l.rows;
    for (std::size_t i = 0; i < n; ++i) params_[l.offset + i] = u(rng);
  };
  for (const auto& l : trunk_) fill(l);
  fill(density_);
  fill(color_hidden_);
  fill(color_out_);
}

void RadianceField::check_finite() const {
  for (double v : params_)
    if (!std::isfinite(v)) throw NonFiniteParameters("field parameters contain NaN or Inf");
}

FieldSample RadianceField::eval(const Vec3& x, const Vec3& d, const EncodingConfig& enc) const {
  check_finite();
  auto dense = [&](const Layer& l, const std::vector<double>& in) {
    std::vector<double> out(l.rows);
    const double* W = params_.data() + l.offset;
    const double* b = W + std::size_t(l.rows) * l.cols;
    for (int r = 0; r < l.rows; ++r) {
      double acc = b[r];
      for (int c = 0; c < l.cols; ++c) acc += W[std::size_t(c) * l.rows + r] * in[c];
      out[r] = acc;
    }
    return out;
  };
  auto relu = [](std::vector<double> v) {
    for (auto& e : v) e = std::max(e, 0.0);
    return v;
  };

  std::vector<double> h(encoded_width(spec_.l_pos));
  positional_encode(x, spec_.l_pos, enc.alpha_pe, h);
  for (const auto& l : trunk_) h = relu(dense(l, h));

  FieldSample out;
  out.density = softplus(dense(density_, h)[0]);

  std::vector<double> with_dir = h;
  std::vector<double> denc(encoded_width(spec_.l_dir));
  positional_encode(d, spec_.l_dir, spec_.l_dir, denc);
  with_dir.insert(with_dir.end(), denc.begin(), denc.end());
  const auto hc = relu(dense(color_hidden_, with_dir));
  const auto co = dense(color_out_, hc);
  out.color = Vec3(sigmoid(co[0]), sigmoid(co[1]), sigmoid(co[2]));
  return out;
}

void FieldWorkspace::forward(const RadianceField& field, const EncodingConfig& enc,
                             const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs) {
  const auto& spec = field.spec();
  const auto p = field.params();
  const Eigen::Index n = points.cols();
  points_ = points;
  dirs_ = dirs;

  enc_pos_.resize(encoded_width(spec.l_pos), n);
  enc_dir_.resize(encoded_width(spec.l_dir), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    positional_encode(points.col(i), spec.l_pos, enc.alpha_pe,
                      {enc_pos_.col(i).data(), std::size_t(enc_pos_.rows())});
    positional_encode(dirs.col(i), spec.l_dir, spec.l_dir,
                      {enc_dir_.col(i).data(), std::size_t(enc_dir_.rows())});
  }

  hidden_.resize(field.trunk().size());
  const Eigen::MatrixXd* in = &enc_pos_;
  for (std::size_t l = 0; l < field.trunk().size(); ++l) {
    const auto& layer = field.trunk()[l];
    hidden_[l].noalias() = weights(p, layer) * (*in);
    hidden_[l].colwise() += bias(p, layer);
    hidden_[l] = hidden_[l].cwiseMax(0.0);
    in = &hidden_[l];
  }
  const Eigen::MatrixXd& h = hidden_.back();

  density_pre_.noalias() = weights(p, field.density_layer()) * h;
  density_pre_.array() += bias(p, field.density_layer())(0);
  density_ = density_pre_.unaryExpr([](double z) { return softplus(z); });

  color_in_.resize(h.rows() + enc_dir_.rows(), n);
  color_in_.topRows(h.rows()) = h;
  color_in_.bottomRows(enc_dir_.rows()) = enc_dir_;
  color_hidden_.noalias() = weights(p, field.color_hidden_layer()) * color_in_;
  color_hidden_.colwise() += bias(p, field.color_hidden_layer());
  color_hidden_ = color_hidden_.cwiseMax(0.0);
  Eigen::MatrixXd co = weights(p, field.color_out_layer()) * color_hidden_;
  co.colwise() += bias(p, field.color_out_layer());
  color_ = co.unaryExpr([](double z) { return sigmoid(z); });
}

void FieldWorkspace::backward(const RadianceField& field, const EncodingConfig& enc,
                              const Eigen::RowVectorXd& d_density,
                              const Eigen::Matrix3Xd& d_color, std::span<double> d_params,
                              Eigen::Matrix3Xd* d_points, Eigen::Matrix3Xd* d_dirs) {
  const auto& spec = field.spec();
  const auto p = field.params();
  const bool grads = !d_params.empty();
  const Eigen::Index n = points_.cols();
  const std::span<double> caller = d_params;
  if (grads) {
    d_params_.setZero(Eigen::Index(caller.size()));
    d_params = {d_params_.data(), caller.size()};
  }

  auto accumulate = [&](const RadianceField::Layer& layer, const Eigen::MatrixXd& dz,
                        const Eigen::MatrixXd& input) {
    if (!grads) return;
    weights(d_params, layer).noalias() += dz * input.transpose();
    bias(d_params, layer) += dz.rowwise().sum();
  };

  // color head
  Eigen::MatrixXd dz = d_color.array() * color_.array() * (1.0 - color_.array());
  accumulate(field.color_out_layer(), dz, color_hidden_);
  Eigen::MatrixXd dh = weights(p, field.color_out_layer()).transpose() * dz;
  dz = (color_hidden_.array() > 0.0).select(dh, 0.0);
  accumulate(field.color_hidden_layer(), dz, color_in_);
  const Eigen::MatrixXd d_color_in = weights(p, field.color_hidden_layer()).transpose() * dz;
  dh = d_color_in.topRows(spec.width);

  // density head
  const Eigen::RowVectorXd dzd =
      d_density.array() * density_pre_.unaryExpr([](double z) { return sigmoid(z); }).array();
  if (grads) {
    const auto& dl = field.density_layer();
    weights(d_params, dl).noalias() += dzd * hidden_.back().transpose();
    bias(d_params, dl)(0) += dzd.sum();
  }
  dh.noalias() += weights(p, field.density_layer()).transpose() * dzd;

  // trunk
  for (int l = static_cast<int>(field.trunk().size()) - 1; l >= 0; --l) {
    const auto& layer = field.trunk()[l];
    dz = (hidden_[l].array() > 0.0).select(dh, 0.0);
    const Eigen::MatrixXd& input = l > 0 ? hidden_[l - 1] : enc_pos_;
    accumulate(layer, dz, input);
    if (l > 0 || d_points) dh = weights(p, layer).transpose() * dz;
  }

  if (grads)
    for (std::size_t i = 0; i < caller.size(); ++i) caller[i] += d_params_[Eigen::Index(i)];

  if (d_points) {
    d_points->resize(3, n);
    for (Eigen::Index i = 0; i < n; ++i)
      d_points->col(i) = encode_backward(points_.col(i), spec.l_pos, enc.alpha_pe, dh.col(i).data());
  }
  if (d_dirs) {
    d_dirs->resize(3, n);
    const Eigen::MatrixXd d_enc_dir = d_color_in.bottomRows(encoded_width(spec.l_dir));
    for (Eigen::Index i = 0; i < n; ++i)
      d_dirs->col(i) = encode_backward(dirs_.col(i), spec.l_dir, spec.l_dir, d_enc_dir.col(i).data());
  }
}

void save_field(std::ostream& os, const RadianceField& field, const EncodingConfig& enc) {
  const auto& s = field.spec();
  nlohmann::json meta = {{"depth", s.depth},       {"width", s.width},
                         {"color_width", s.color_width}, {"l_pos", s.l_pos},
                         {"l_dir", s.l_dir},       {"alpha_pe", enc.alpha_pe},
                         {"param_count", field.param_count()}};
  os << "IRB-FIELD-v1\n" << meta.dump() << '\n';
  os.write(reinterpret_cast<const char*>(field.params().data()),
           static_cast<std::streamsize>(field.param_count() * sizeof(double)));
  if (!os) throw IoError("failed to write field checkpoint");
}

void save_field(const std::string& path, const RadianceField& field, const EncodingConfig& enc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save_field(os, field, enc);
}

RadianceField load_field(std::istream& is, EncodingConfig* enc) {
  std::string header, meta_line;
  if (!std::getline(is, header) || header != "IRB-FIELD-v1")
    throw ParseError("missing IRB-FIELD-v1 header", 1);
  if (!std::getline(is, meta_line)) throw ParseError("missing field metadata", 2);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad field metadata: ") + e.what(), 2);
  }
  FieldSpec spec;
  spec.depth = meta.at("depth");
  spec.width = meta.at("width");
  spec.color_width = meta.at("color_width");
  spec.l_pos = meta.at("l_pos");
  spec.l_dir = meta.at("l_dir");
  RadianceField field(spec);
  if (meta.at("param_count").get<std::size_t>() != field.param_count())
    throw ParseError("parameter count does not match layer spec", 2);
  is.read(reinterpret_cast<char*>(field.params().data()),
          static_cast<std::streamsize>(field.param_count() * sizeof(double)));
  if (!is) throw IoError("truncated field checkpoint");
  if (enc) {
    enc->l_pos = spec.l_pos;
    enc->l_dir = spec.l_dir;
    enc->alpha_pe = meta.at("alpha_pe");
  }
  return field;
}

RadianceField load_field(const std::string& path, EncodingConfig* enc) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return load_field(is, enc);
}

}  // namespace irb
