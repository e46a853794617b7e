#include "irb/grad.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "irb/errors.hpp"

namespace irb {

void ParamView::add(std::string name, std::span<double> values, ParamGroup group, bool learnable) {
  if (index_.count(name)) throw InvalidSpec("duplicate parameter segment '" + name + "'");
  index_[name] = segments_.size();
  segments_.push_back({std::move(name), values, size_, group, learnable});
  size_ += values.size();
}

const ParamView::Segment& ParamView::segment(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidSpec("unknown parameter segment '" + name + "'");
  return segments_[it->second];
}

void ParamView::set_learnable(const std::string& name, bool learnable) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidSpec("unknown parameter segment '" + name + "'");
  segments_[it->second].learnable = learnable;
}

std::vector<double> ParamView::gather() const {
  std::vector<double> out(size_);
  for (const auto& s : segments_) std::copy(s.values.begin(), s.values.end(), out.begin() + s.offset);
  return out;
}

void check_finite(std::span<const double> grads) {
  for (double g : grads)
    if (!std::isfinite(g)) throw NonFiniteGradient("gradient contains NaN or Inf");
}

double learnable_norm(const ParamView& view, std::span<const double> grads) {
  double acc = 0.0;
  for (const auto& s : view.segments()) {
    if (!s.learnable) continue;
    for (std::size_t i = 0; i < s.values.size(); ++i) acc += grads[s.offset + i] * grads[s.offset + i];
  }
  return std::sqrt(acc);
}

double clip_gradients(const ParamView& view, std::span<double> grads, double max_norm) {
  const double norm = learnable_norm(view, grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& s : view.segments()) {
      if (!s.learnable) continue;
      for (std::size_t i = 0; i < s.values.size(); ++i) grads[s.offset + i] *= scale;
    }
  }
  return norm;
}

double ExponentialSchedule::at(long k) const {
  if (k <= 0 || span <= 0) return start;
  if (k >= span) return end;
  return start * std::pow(end / start, static_cast<double>(k) / span);
}

void AdamOptimizer::step(const ParamView& view, std::span<const double> grads,
                         const std::map<ParamGroup, double>& lr) {
  for (const auto& s : view.segments()) {
    if (!s.learnable) continue;
    auto& mom = state_[s.name];
    if (mom.m.size() != s.values.size()) {
      mom.m.assign(s.values.size(), 0.0);
      mom.v.assign(s.values.size(), 0.0);
      mom.steps = 0;
    }
    ++mom.steps;
    const double rate = lr.at(s.group);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(mom.steps));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(mom.steps));
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double g = grads[s.offset + i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      s.values[i] -= rate * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

// "IRB-ADAM-v1" line, a JSON line listing segments, then the moment arrays as
// raw float64 in listing order.
void AdamOptimizer::save(std::ostream& os) const {
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& [name, mom] : state_)
    meta.push_back({{"name", name}, {"size", mom.m.size()}, {"steps", mom.steps}});
  os << "IRB-ADAM-v1\n" << meta.dump() << '\n';
  for (const auto& [name, mom] : state_) {
    os.write(reinterpret_cast<const char*>(mom.m.data()), std::streamsize(mom.m.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(mom.v.data()), std::streamsize(mom.v.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed to write optimizer state");
}

void AdamOptimizer::load(std::istream& is) {
  std::string header, line;
  if (!std::getline(is, header) || header != "IRB-ADAM-v1")
    throw ParseError("missing IRB-ADAM-v1 header", 1);
  if (!std::getline(is, line)) throw ParseError("missing optimizer metadata", 2);
  const auto meta = nlohmann::json::parse(line);
  state_.clear();
  for (const auto& entry : meta) {
    Moments mom;
    const std::size_t n = entry.at("size");
    mom.steps = entry.at("steps");
    mom.m.resize(n);
    mom.v.resize(n);
    is.read(reinterpret_cast<char*>(mom.m.data()), std::streamsize(n * sizeof(double)));
    is.read(reinterpret_cast<char*>(mom.v.data()), std::streamsize(n * sizeof(double)));
    state_[entry.at("name").get<std::string>()] = std::move(mom);
  }
  if (!is) throw IoError("truncated optimizer state");
}

GradCheckReport check_gradients(const Closure& f, std::span<const double> x0, double step,
                                std::size_t max_coords, std::uint64_t seed) {
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> analytic(x.size());
  f(x, analytic);

  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_coords);
  }

  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(1e-3 * scale, 1e-12);

  GradCheckReport rep;
  for (std::size_t i : idx) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x, {});
    x[i] = orig - step;
    const double fm = f(x, {});
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (err > rep.max_rel_error || rep.checked == 0) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace irb
