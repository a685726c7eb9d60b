#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"

namespace safectl {

using State = Eigen::VectorXd;

/// Newton-cooling oven. Temperatures in °F, k in 1/minute.
struct OvenParams {
  double k = 0.2;
  double temp_on = 500.0;
  double temp_off = 70.0;
  double temp_desired = 200.0;

  void validate() const {
    detail::require(k > 0.0 && std::isfinite(k), "oven: k must be positive");
    detail::require(temp_off < temp_on, "oven: temp_off must be below temp_on");
    detail::require(temp_off <= temp_desired && temp_desired <= temp_on,
                    "oven: temp_desired must lie in [temp_off, temp_on]");
  }

  double heater_span() const { return temp_on - temp_off; }
  /// Ambient temperature the oven relaxes to under heater setting u.
  double ambient(double u) const { return u * heater_span() + temp_off; }
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double torque_limit = 20.0;

  void validate() const {
    detail::require(mass > 0.0 && length > 0.0 && gravity > 0.0 && torque_limit > 0.0,
                    "pendulum: parameters must be strictly positive");
  }
};

struct Sample {
  State state;
  double u = 0.0;
  std::optional<double> disturbance;
};

/// Uniformly sampled (state, input, disturbance) series.
class Trace {
 public:
  Trace(double sample_period, std::vector<Sample> samples, std::vector<std::string> state_names = {})
      : sample_period_(sample_period), samples_(std::move(samples)), names_(std::move(state_names)) {
    detail::require(sample_period_ > 0.0 && std::isfinite(sample_period_),
                    "trace: sample period must be positive");
    detail::require(samples_.size() >= 2, "trace: at least two samples required");
    const auto dim = samples_.front().state.size();
    detail::require(dim > 0, "trace: empty state vector");
    const bool with_disturbance = samples_.front().disturbance.has_value();
    for (const auto& s : samples_) {
      detail::require(s.state.size() == dim, "trace: inconsistent state dimension");
      detail::require(s.disturbance.has_value() == with_disturbance,
                      "trace: disturbance column must be present on all samples or none");
    }
    if (names_.empty()) {
      if (dim == 1) {
        names_.push_back("x");
      } else {
        for (Eigen::Index i = 0; i < dim; ++i) names_.push_back("x" + std::to_string(i));
      }
    }
    detail::require(names_.size() == static_cast<std::size_t>(dim), "trace: one name per state component");
  }

  double sample_period() const { return sample_period_; }
  std::size_t size() const { return samples_.size(); }
  Eigen::Index state_dim() const { return samples_.front().state.size(); }
  double time(std::size_t i) const { return static_cast<double>(i) * sample_period_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<std::string>& state_names() const { return names_; }
  bool has_disturbance() const { return samples_.front().disturbance.has_value(); }
  double value(std::size_t i, Eigen::Index component = 0) const { return samples_[i].state[component]; }
  const State& final_state() const { return samples_.back().state; }

 private:
  double sample_period_;
  std::vector<Sample> samples_;
  std::vector<std::string> names_;
};

using Controller = std::function<double(const State&, double)>;
using Disturbance = std::function<double(const State&, double)>;

inline double clamp_unit(double u) { return std::clamp(u, 0.0, 1.0); }

// ---------------------------------------------------------------------------
// Oven

inline double oven_rhs(double temp, double u, const OvenParams& p) {
  detail::require(u >= 0.0 && u <= 1.0, "oven_rhs: u must lie in [0, 1]");
  return -p.k * (temp - p.ambient(u));
}

inline double oven_closed_form(double t, double temp0, double ambient, double k) {
  detail::require(k > 0.0, "oven_closed_form: k must be positive");
  detail::require(t >= 0.0, "oven_closed_form: t must be non-negative");
  return ambient + (temp0 - ambient) * std::exp(-k * t);
}

/// Offset from the setpoint, the coordinate the discrete-time Lyapunov proof uses.
inline double to_offset(double temp, const OvenParams& p) { return temp - p.temp_desired; }
inline double from_offset(double offset, const OvenParams& p) { return offset + p.temp_desired; }

/// One sampling period of the closed loop in offset coordinates.
inline double closed_loop_step(double offset, double k, double dt) {
  detail::require(dt > 0.0, "closed_loop_step: dt must be positive");
  return offset * std::exp(-k * dt);
}

inline double baseline_input(const OvenParams& p) {
  p.validate();
  return (p.temp_desired - p.temp_off) / p.heater_span();
}

/// Constant heater setting whose ambient equals the setpoint.
inline Controller baseline_controller(const OvenParams& p) {
  const double u = clamp_unit(baseline_input(p));
  return [u](const State&, double) { return u; };
}

struct OvenSystem {
  OvenParams params;

  Eigen::Index dimension() const { return 1; }
  std::vector<std::string> state_names() const { return {"temp"}; }
  State derivative(const State& x, double u, double disturbance) const {
    State dx(1);
    dx[0] = oven_rhs(x[0], u, params) + disturbance;
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Pendulum (theta = 0 is upright)

inline Eigen::Vector2d pendulum_rhs(const Eigen::Vector2d& state, double u, const PendulumParams& p) {
  detail::require(std::abs(u) <= p.torque_limit, "pendulum_rhs: torque exceeds limit");
  const double accel = (p.gravity / p.length) * std::sin(state[0]) + u / (p.mass * p.length * p.length);
  return {state[1], accel};
}

struct PendulumSystem {
  PendulumParams params;

  Eigen::Index dimension() const { return 2; }
  std::vector<std::string> state_names() const { return {"theta", "omega"}; }
  State derivative(const State& x, double u, double disturbance) const {
    Eigen::Vector2d d = pendulum_rhs(Eigen::Vector2d(x[0], x[1]), u, params);
    d[1] += disturbance;
    return d;
  }
};

/// Saturated PD torque law for the upright pendulum.
inline Controller pendulum_pd_controller(const PendulumParams& p, double kp, double kd) {
  return [p, kp, kd](const State& x, double) {
    return std::clamp(-kp * x[0] - kd * x[1], -p.torque_limit, p.torque_limit);
  };
}

// ---------------------------------------------------------------------------
// Integration

struct SimulationSettings {
  double dt = 0.01;
  double horizon = 50.0;
  // Zero-order hold period of the controller; 0 means every integration step.
  double control_period = 0.0;
  Disturbance disturbance;
  // Gaussian sensor noise (std. dev.) applied to what the controller and trace observe.
  double measurement_noise = 0.0;
  std::uint64_t seed = 0;
};

inline std::size_t sample_count(double horizon, double dt) {
  return static_cast<std::size_t>(std::floor(horizon / dt + 1e-9)) + 1;
}

/// Fixed-step RK4 with the control input held constant across each control period.
template <class System>
Trace integrate(const System& system, const Controller& controller, const State& x0,
                const SimulationSettings& settings) {
  const double dt = settings.dt;
  detail::require(dt > 0.0 && std::isfinite(dt), "integrate: dt must be positive");
  detail::require(settings.horizon >= dt, "integrate: horizon must be at least one step");
  detail::require(x0.size() == system.dimension(), "integrate: initial state has wrong dimension");
  detail::require(settings.measurement_noise >= 0.0, "integrate: noise must be non-negative");

  std::size_t hold_steps = 1;
  if (settings.control_period > 0.0) {
    const double ratio = settings.control_period / dt;
    hold_steps = static_cast<std::size_t>(std::llround(ratio));
    detail::require(hold_steps >= 1 && std::abs(ratio - static_cast<double>(hold_steps)) < 1e-9 * ratio,
                    "integrate: control period must be a whole multiple of dt");
  }

  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto observe = [&](const State& x) {
    if (settings.measurement_noise == 0.0) return x;
    State y = x;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += settings.measurement_noise * noise(rng);
    return y;
  };
  auto disturbance_at = [&](const State& x, double t) {
    return settings.disturbance ? settings.disturbance(x, t) : 0.0;
  };

  const std::size_t n = sample_count(settings.horizon, dt);
  std::vector<Sample> samples;
  samples.reserve(n);
  State x = x0;
  double u = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const State observed = observe(x);
    if (i % hold_steps == 0) u = controller(observed, t);
    Sample s{observed, u, std::nullopt};
    if (settings.disturbance) s.disturbance = disturbance_at(x, t);
    samples.push_back(std::move(s));
    if (i + 1 == n) break;

    auto f = [&](const State& y, double tau) { return system.derivative(y, u, disturbance_at(y, tau)); };
    const State k1 = f(x, t);
    const State k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt);
    const State k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt);
    const State k4 = f(x + dt * k3, t + dt);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite())
      throw IntegrationDiverged("integrate: non-finite state at t = " + std::to_string(t + dt));
  }
  return Trace(dt, std::move(samples), system.state_names());
}

// ---------------------------------------------------------------------------
// Trace CSV: t,<state columns>,u[,disturbance]

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "t";
  for (const auto& name : trace.state_names()) out << ',' << name;
  out << ",u";
  if (trace.has_disturbance()) out << ",disturbance";
  out << '\n';
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& s = trace[i];
    out << csv::format(trace.time(i));
    for (Eigen::Index j = 0; j < s.state.size(); ++j) out << ',' << csv::format(s.state[j]);
    out << ',' << csv::format(s.u);
    if (s.disturbance) out << ',' << csv::format(*s.disturbance);
    out << '\n';
  }
}

inline void save_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  write_trace_csv(out, trace);
}

inline Trace read_trace_csv(std::istream& in) {
  const auto table = csv::read_numeric(in);
  const auto& h = table.header;
  detail::require(h.size() >= 3 && h.front() == "t", "trace CSV: header must start with 't'");
  const bool with_disturbance = h.back() == "disturbance";
  const std::size_t u_col = with_disturbance ? h.size() - 2 : h.size() - 1;
  detail::require(h[u_col] == "u", "trace CSV: missing 'u' column");
  detail::require(u_col >= 2, "trace CSV: no state columns");
  detail::require(table.rows.size() >= 2, "trace CSV: at least two rows required");

  const double period = table.rows[1][0] - table.rows[0][0];
  detail::require(period > 0.0, "trace CSV: time must increase");
  std::vector<Sample> samples;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const double expected = table.rows[0][0] + static_cast<double>(r) * period;
    detail::require(std::abs(row[0] - expected) <= 1e-6 * std::max(1.0, std::abs(expected)),
                    "trace CSV: samples are not uniformly spaced");
    Sample s;
    s.state.resize(static_cast<Eigen::Index>(u_col - 1));
    for (std::size_t c = 1; c < u_col; ++c) s.state[static_cast<Eigen::Index>(c - 1)] = row[c];
    s.u = row[u_col];
    if (with_disturbance) s.disturbance = row.back();
    samples.push_back(std::move(s));
  }
  return Trace(period, std::move(samples), std::vector<std::string>(h.begin() + 1, h.begin() + static_cast<long>(u_col)));
}

inline Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  return read_trace_csv(in);
}

}  // namespace safectl
