#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"
#include "safectl/systems.hpp"

namespace safectl {

struct LibraryExtras {
  bool sin = false;
  bool cos = false;
  bool exp = false;
};

struct BasisFunction {
  std::string name;
  // Exponent per state component; empty for the transcendental extras.
  std::vector<int> powers;
  enum class Kind { monomial, sin, cos, exp } kind = Kind::monomial;
  int component = 0;

  double operator()(const State& x) const {
    switch (kind) {
      case Kind::sin:
        return std::sin(x[component]);
      case Kind::cos:
        return std::cos(x[component]);
      case Kind::exp:
        return std::exp(x[component]);
      case Kind::monomial:
        break;
    }
    double v = 1.0;
    for (std::size_t i = 0; i < powers.size(); ++i)
      for (int p = 0; p < powers[i]; ++p) v *= x[static_cast<Eigen::Index>(i)];
    return v;
  }
};

class CandidateLibrary {
 public:
  CandidateLibrary(int dimension, int degree, LibraryExtras extras = {}, std::vector<std::string> names = {})
      : dimension_(dimension), degree_(degree), extras_(extras), names_(std::move(names)) {
    detail::require(dimension >= 1, "library: state dimension must be at least 1");
    detail::require(degree >= 1, "library: degree must be at least 1");
    if (names_.empty()) {
      if (dimension == 1) {
        names_.push_back("x");
      } else {
        for (int i = 0; i < dimension; ++i) names_.push_back("x" + std::to_string(i));
      }
    }
    detail::require(names_.size() == static_cast<std::size_t>(dimension), "library: one name per state component");

    functions_.push_back({"1", std::vector<int>(dimension, 0)});
    for (int d = 1; d <= degree; ++d) {
      std::vector<int> combo(d, 0);
      // Combinations with replacement in lexicographic order: a^2, ab, b^2.
      while (true) {
        std::vector<int> powers(dimension, 0);
        for (int c : combo) ++powers[c];
        functions_.push_back({monomial_name(powers), powers});
        int pos = d - 1;
        while (pos >= 0 && combo[pos] == dimension - 1) --pos;
        if (pos < 0) break;
        ++combo[pos];
        for (int j = pos + 1; j < d; ++j) combo[j] = combo[pos];
      }
    }
    for (int i = 0; i < dimension; ++i) {
      if (extras.sin) functions_.push_back({"sin(" + names_[i] + ")", {}, BasisFunction::Kind::sin, i});
      if (extras.cos) functions_.push_back({"cos(" + names_[i] + ")", {}, BasisFunction::Kind::cos, i});
      if (extras.exp) functions_.push_back({"exp(" + names_[i] + ")", {}, BasisFunction::Kind::exp, i});
    }
    std::set<std::string> unique;
    for (const auto& f : functions_)
      detail::require(unique.insert(f.name).second, "library: duplicate basis name '" + f.name + "'");
  }

  int dimension() const { return dimension_; }
  int degree() const { return degree_; }
  const LibraryExtras& extras() const { return extras_; }
  const std::vector<std::string>& state_names() const { return names_; }
  std::size_t size() const { return functions_.size(); }
  const std::vector<BasisFunction>& functions() const { return functions_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : functions_) out.push_back(f.name);
    return out;
  }

  Eigen::RowVectorXd evaluate(const State& x) const {
    detail::require(x.size() == dimension_, "library: state has wrong dimension");
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(functions_.size()));
    for (std::size_t j = 0; j < functions_.size(); ++j) row[static_cast<Eigen::Index>(j)] = functions_[j](x);
    return row;
  }

 private:
  int dimension_;
  int degree_;
  LibraryExtras extras_;
  std::vector<std::string> names_;
  std::vector<BasisFunction> functions_;

  std::string monomial_name(const std::vector<int>& powers) const {
    std::string out;
    for (std::size_t i = 0; i < powers.size(); ++i) {
      if (powers[i] == 0) continue;
      if (!out.empty()) out += "*";
      out += names_[i];
      if (powers[i] > 1) out += "^" + std::to_string(powers[i]);
    }
    return out;
  }
};

inline Eigen::MatrixXd build_library(const std::vector<State>& states, const CandidateLibrary& library) {
  Eigen::MatrixXd design(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(library.size()));
  for (std::size_t i = 0; i < states.size(); ++i) design.row(static_cast<Eigen::Index>(i)) = library.evaluate(states[i]);
  return design;
}

inline Eigen::MatrixXd build_library(const std::vector<State>& states, int degree, LibraryExtras extras = {}) {
  detail::require(!states.empty(), "build_library: no states");
  return build_library(states, CandidateLibrary(static_cast<int>(states.front().size()), degree, extras));
}

struct DerivativeData {
  std::vector<State> states;    // interior samples
  Eigen::MatrixXd derivatives;  // one row per interior sample
  std::vector<double> times;
};

// Central differences; the two endpoints are dropped.
inline DerivativeData estimate_derivatives(const Trace& trace) {
  detail::require(trace.size() >= 3, "estimate_derivatives: need at least three samples");
  const double h = trace.sample_period();
  const std::size_t n = trace.size();
  DerivativeData out;
  out.derivatives.resize(static_cast<Eigen::Index>(n - 2), trace.state_dim());
  for (std::size_t i = 1; i + 1 < n; ++i) {
    out.states.push_back(trace[i].state);
    out.times.push_back(trace.time(i));
    out.derivatives.row(static_cast<Eigen::Index>(i - 1)) =
        ((trace[i + 1].state - trace[i - 1].state) / (2.0 * h)).transpose();
  }
  return out;
}

struct SindyConfig {
  double threshold = 0.05;
  int max_iterations = 10;
  double ridge = 1e-6;

  void validate() const {
    detail::require(threshold >= 0.0 && std::isfinite(threshold), "sindy: threshold must be non-negative");
    detail::require(max_iterations >= 1, "sindy: max_iterations must be at least 1");
    detail::require(ridge >= 0.0 && std::isfinite(ridge), "sindy: ridge must be non-negative");
  }
};

struct SparseModel {
  CandidateLibrary library;
  Eigen::MatrixXd coefficients;  // basis functions x state dimension
  bool rank_deficient = false;   // some support needed the pseudo-inverse
  int iterations = 0;

  Eigen::Index nonzeros() const { return (coefficients.array() != 0.0).count(); }

  State rhs(const State& x) const { return (library.evaluate(x) * coefficients).transpose(); }
};

namespace detail {

struct SupportFit {
  Eigen::VectorXd coefficients;
  bool rank_deficient = false;
};

// Ridge least squares on the given columns, solved by QR on column-normalized data.
// The penalty is on the original coefficients.
inline SupportFit fit_support(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
                              const std::vector<Eigen::Index>& support, double ridge) {
  SupportFit out{Eigen::VectorXd::Zero(design.cols())};
  if (support.empty()) return out;
  const auto m = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd a(design.rows(), m);
  Eigen::VectorXd norms(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    a.col(j) = design.col(support[static_cast<std::size_t>(j)]);
    norms[j] = a.col(j).norm();
    if (norms[j] > 0.0) a.col(j) /= norms[j];
  }
  Eigen::VectorXd z;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_probe(a);
  if (rank_probe.rank() < m || (norms.array() == 0.0).any()) {
    out.rank_deficient = true;
    z = a.completeOrthogonalDecomposition().solve(target);
  } else if (ridge > 0.0) {
    Eigen::MatrixXd stacked(a.rows() + m, m);
    stacked << a, Eigen::MatrixXd(std::sqrt(ridge) * norms.cwiseInverse().asDiagonal());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(a.rows() + m);
    rhs.head(a.rows()) = target;
    z = stacked.colPivHouseholderQr().solve(rhs);
  } else {
    z = rank_probe.solve(target);
  }
  for (Eigen::Index j = 0; j < m; ++j)
    out.coefficients[support[static_cast<std::size_t>(j)]] = norms[j] > 0.0 ? z[j] / norms[j] : 0.0;
  return out;
}

}  // namespace detail

// Sequential thresholded least squares, one regression per state dimension.
inline SparseModel stlsq(const CandidateLibrary& library, const Eigen::MatrixXd& design,
                         const Eigen::MatrixXd& derivatives, const SindyConfig& cfg = {}) {
  cfg.validate();
  detail::require(design.rows() == derivatives.rows(), "stlsq: design and derivative row counts differ");
  detail::require(design.cols() == static_cast<Eigen::Index>(library.size()), "stlsq: design does not match library");
  detail::require(derivatives.cols() == library.dimension(), "stlsq: derivative columns must match state dimension");
  detail::require(design.allFinite() && derivatives.allFinite(), "stlsq: non-finite data");

  SparseModel model{library, Eigen::MatrixXd::Zero(design.cols(), derivatives.cols())};
  for (Eigen::Index d = 0; d < derivatives.cols(); ++d) {
    const Eigen::VectorXd target = derivatives.col(d);
    std::vector<Eigen::Index> support(static_cast<std::size_t>(design.cols()));
    for (Eigen::Index j = 0; j < design.cols(); ++j) support[static_cast<std::size_t>(j)] = j;
    detail::SupportFit fit = detail::fit_support(design, target, support, cfg.ridge);
    bool deficient = fit.rank_deficient;
    int iterations = 0;
    while (iterations < cfg.max_iterations) {
      std::vector<Eigen::Index> kept;
      for (Eigen::Index j : support)
        if (std::abs(fit.coefficients[j]) >= cfg.threshold) kept.push_back(j);
      if (kept == support) break;
      support = std::move(kept);
      fit = detail::fit_support(design, target, support, cfg.ridge);
      deficient = deficient || fit.rank_deficient;
      ++iterations;
    }
    model.coefficients.col(d) = fit.coefficients;
    model.rank_deficient = model.rank_deficient || deficient;
    model.iterations = std::max(model.iterations, iterations);
  }
  return model;
}

inline SparseModel identify(const Trace& trace, int degree, const SindyConfig& cfg = {}, LibraryExtras extras = {}) {
  const DerivativeData data = estimate_derivatives(trace);
  const CandidateLibrary library(static_cast<int>(trace.state_dim()), degree, extras, trace.state_names());
  return stlsq(library, build_library(data.states, library), data.derivatives, cfg);
}

struct SparseModelSystem {
  const SparseModel* model;

  Eigen::Index dimension() const { return model->library.dimension(); }
  std::vector<std::string> state_names() const { return model->library.state_names(); }
  State derivative(const State& x, double, double) const { return model->rhs(x); }
};

// RK4 rollout of the identified right-hand side.
inline Trace simulate_model(const SparseModel& model, const State& x0, double dt, double horizon) {
  const Controller none = [](const State&, double) { return 0.0; };
  SimulationSettings s;
  s.dt = dt;
  s.horizon = horizon;
  return integrate(SparseModelSystem{&model}, none, x0, s);
}

struct ModelValidation {
  double max_deviation = 0.0;
  double signal_range = 0.0;
  double relative() const { return signal_range > 0.0 ? max_deviation / signal_range : max_deviation; }
};

// Re-simulates from the trace's first state and compares sample by sample.
inline ModelValidation validate_model(const SparseModel& model, const Trace& trace) {
  const double h = trace.sample_period();
  const Trace sim = simulate_model(model, trace[0].state, h, h * static_cast<double>(trace.size() - 1));
  detail::require(sim.size() == trace.size(), "validate_model: rollout length mismatch");
  ModelValidation out;
  for (Eigen::Index c = 0; c < trace.state_dim(); ++c) {
    double lo = trace.value(0, c), hi = lo;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      lo = std::min(lo, trace.value(i, c));
      hi = std::max(hi, trace.value(i, c));
      out.max_deviation = std::max(out.max_deviation, std::abs(sim.value(i, c) - trace.value(i, c)));
    }
    out.signal_range = std::max(out.signal_range, hi - lo);
  }
  return out;
}

inline void write_model_report(std::ostream& os, const SparseModel& model, const SindyConfig& cfg) {
  char header[160];
  std::snprintf(header, sizeof header, "# sparsifier: sequential thresholded least squares (threshold %g, ridge %g)\n",
                cfg.threshold, cfg.ridge);
  os << header;
  if (model.rank_deficient) os << "# warning: rank-deficient support, pseudo-inverse used\n";
  const auto names = model.library.names();
  for (Eigen::Index d = 0; d < model.coefficients.cols(); ++d) {
    os << "d(" << model.library.state_names()[static_cast<std::size_t>(d)] << ")/dt =";
    bool any = false;
    for (Eigen::Index j = 0; j < model.coefficients.rows(); ++j) {
      const double c = model.coefficients(j, d);
      if (c == 0.0) continue;
      os << (any ? " + " : " ") << csv::format(c) << " * " << names[static_cast<std::size_t>(j)];
      any = true;
    }
    if (!any) os << " 0";
    os << '\n';
  }
}

inline void write_coefficients_csv(std::ostream& os, const SparseModel& model) {
  os << "basis";
  for (const auto& n : model.library.state_names()) os << ',' << n;
  os << '\n';
  const auto names = model.library.names();
  for (Eigen::Index j = 0; j < model.coefficients.rows(); ++j) {
    os << names[static_cast<std::size_t>(j)];
    for (Eigen::Index d = 0; d < model.coefficients.cols(); ++d) os << ',' << csv::format(model.coefficients(j, d));
    os << '\n';
  }
}

}  // namespace safectl
