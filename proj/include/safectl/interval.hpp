#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safectl/error.hpp"
#include "safectl/neural.hpp"

namespace safectl {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return lo <= v && v <= hi; }
};

inline Interval operator-(const Interval& a, const Interval& b) { return {a.lo - b.hi, a.hi - b.lo}; }

/// Axis-aligned box, one closed interval per dimension.
class IntervalBox {
 public:
  IntervalBox() = default;
  explicit IntervalBox(std::vector<Interval> bounds) : bounds_(std::move(bounds)) { validate(); }
  IntervalBox(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    detail::require(lo.size() == hi.size(), "interval box: dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i) bounds_.push_back({lo[i], hi[i]});
    validate();
  }
  static IntervalBox point(const Eigen::VectorXd& x) { return IntervalBox(x, x); }

  Eigen::Index dim() const { return static_cast<Eigen::Index>(bounds_.size()); }
  const Interval& operator[](Eigen::Index i) const { return bounds_[static_cast<std::size_t>(i)]; }
  Interval& operator[](Eigen::Index i) { return bounds_[static_cast<std::size_t>(i)]; }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd v(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) v[i] = (*this)[i].lo;
    return v;
  }
  Eigen::VectorXd upper() const {
    Eigen::VectorXd v(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) v[i] = (*this)[i].hi;
    return v;
  }
  Eigen::VectorXd center() const { return 0.5 * (lower() + upper()); }
  Eigen::VectorXd radius() const { return 0.5 * (upper() - lower()); }

  Eigen::Index widest_dimension() const {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < dim(); ++i)
      if ((*this)[i].width() > (*this)[best].width()) best = i;
    return best;
  }
  double max_width() const { return (*this)[widest_dimension()].width(); }

  std::pair<IntervalBox, IntervalBox> bisect() const {
    const auto d = widest_dimension();
    IntervalBox left = *this, right = *this;
    const double m = (*this)[d].mid();
    left[d].hi = m;
    right[d].lo = m;
    return {left, right};
  }

  bool contains(const Eigen::VectorXd& x) const {
    for (Eigen::Index i = 0; i < dim(); ++i)
      if (!(*this)[i].contains(x[i])) return false;
    return true;
  }

  /// All 2^d corners.
  std::vector<Eigen::VectorXd> corners() const {
    std::vector<Eigen::VectorXd> out;
    const auto n = static_cast<unsigned>(dim());
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      Eigen::VectorXd c(dim());
      for (unsigned i = 0; i < n; ++i) c[i] = (mask >> i) & 1u ? (*this)[i].hi : (*this)[i].lo;
      out.push_back(std::move(c));
    }
    return out;
  }

 private:
  void validate() const {
    for (const auto& b : bounds_)
      detail::require(std::isfinite(b.lo) && std::isfinite(b.hi) && b.lo <= b.hi, "interval box: bad bounds");
  }

  std::vector<Interval> bounds_;
};

namespace detail {
// Outward padding covering floating-point rounding in the affine steps.
inline double rounding_pad(double magnitude) {
  return 4.0 * std::numeric_limits<double>::epsilon() * magnitude + std::numeric_limits<double>::denorm_min();
}

/// Enclosure of {W x + b : x in [center - radius, center + radius]} in center/radius form.
inline void affine_enclosure(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, Eigen::VectorXd& center,
                             Eigen::VectorXd& radius) {
  Eigen::VectorXd c = w * center + b;
  Eigen::VectorXd r = w.cwiseAbs() * radius;
  const Eigen::VectorXd magnitude = (w.cwiseAbs() * center.cwiseAbs()) + b.cwiseAbs() + r;
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] += rounding_pad(magnitude[i]);
  center = std::move(c);
  radius = std::move(r);
}
}  // namespace detail

/// Guaranteed enclosure of the network image of a box (all activations are monotone).
inline std::vector<Interval> interval_eval(const Mlp& net, const IntervalBox& box) {
  detail::require(box.dim() == net.input_dim(), "interval_eval: box dimension mismatch");
  Eigen::VectorXd center = box.center();
  Eigen::VectorXd radius = box.radius();
  for (const auto& layer : net.layers()) {
    detail::affine_enclosure(layer.weights, layer.bias, center, radius);
    if (layer.activation != Activation::linear) {
      for (Eigen::Index i = 0; i < center.size(); ++i) {
        const double lo = activate(layer.activation, center[i] - radius[i]);
        const double hi = activate(layer.activation, center[i] + radius[i]);
        center[i] = 0.5 * (lo + hi);
        radius[i] = 0.5 * (hi - lo) + detail::rounding_pad(std::abs(hi) + std::abs(lo));
      }
    }
  }
  std::vector<Interval> out;
  for (Eigen::Index i = 0; i < center.size(); ++i) out.push_back({center[i] - radius[i], center[i] + radius[i]});
  return out;
}

inline Interval interval_eval_scalar(const Mlp& net, const IntervalBox& box) {
  detail::require(net.output_dim() == 1, "interval_eval_scalar: network output must be scalar");
  return interval_eval(net, box).front();
}

}  // namespace safectl
