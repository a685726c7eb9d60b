#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"
#include "safectl/neural.hpp"
#include "safectl/systems.hpp"

namespace safectl {

struct ResidualSample {
  double temp = 0.0;
  double u = 0.0;
  double f_a = 0.0;  // °F/min
};

struct ResidualDataset {
  std::vector<ResidualSample> samples;
  double sample_period = 1.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    detail::require(!samples.empty(), "residual dataset: no samples");
    detail::require(sample_period > 0.0, "residual dataset: sample period must be positive");
    for (const auto& s : samples)
      detail::require(std::isfinite(s.temp) && std::isfinite(s.u) && std::isfinite(s.f_a),
                      "residual dataset: non-finite value");
  }
};

struct LanderConfig {
  double gamma = 60.0;
  double learning_rate = 0.01;
  int epochs = 300;
  int batch_size = 32;
  double dt = 1.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64};

  void validate() const {
    detail::require(gamma > 0.0, "lander config: gamma must be positive");
    detail::require(learning_rate > 0.0, "lander config: learning rate must be positive");
    detail::require(epochs > 0 && batch_size > 0, "lander config: epochs and batch size must be positive");
    detail::require(dt > 0.0, "lander config: dt must be positive");
    detail::require(holdout_fraction > 0.0 && holdout_fraction < 1.0,
                    "lander config: holdout fraction must lie in (0, 1)");
    detail::require(!hidden.empty(), "lander config: at least one hidden layer");
    for (int h : hidden) detail::require(h > 0, "lander config: hidden widths must be positive");
  }
};

struct ErrorBound {
  double eps_hat = 0.0;
};

/// Forward-difference residual: (x(t + dt) - x(t)) / dt - oven_rhs(x(t), u(t)).
inline ResidualDataset build_residual_dataset(const Trace& trace, const OvenParams& p, double dt) {
  p.validate();
  detail::require(dt > 0.0, "build_residual_dataset: dt must be positive");
  detail::require(trace.state_dim() == 1, "build_residual_dataset: oven traces are scalar");
  const double ratio = dt / trace.sample_period();
  const auto stride = static_cast<std::size_t>(std::llround(ratio));
  detail::require(stride >= 1 && std::abs(ratio - static_cast<double>(stride)) < 1e-9 * ratio,
                  "build_residual_dataset: trace sample period must divide dt");
  detail::require(trace.size() > stride, "build_residual_dataset: trace shorter than dt");
  ResidualDataset data;
  data.sample_period = dt;
  for (std::size_t i = 0; i + stride < trace.size(); i += stride) {
    const double x = trace.value(i);
    const double u = trace[i].u;
    const double slope = (trace.value(i + stride) - x) / dt;
    data.samples.push_back({x, u, slope - oven_rhs(x, u, p)});
  }
  data.validate();
  return data;
}

inline void write_dataset_csv(std::ostream& out, const ResidualDataset& data) {
  out << "temp,u,f_a\n";
  for (const auto& s : data.samples)
    out << csv::format(s.temp) << ',' << csv::format(s.u) << ',' << csv::format(s.f_a) << '\n';
}

inline ResidualDataset read_dataset_csv(std::istream& in, double sample_period = 1.0) {
  const auto table = csv::read_numeric(in);
  const auto ct = table.column("temp"), cu = table.column("u"), cf = table.column("f_a");
  ResidualDataset data;
  data.sample_period = sample_period;
  for (const auto& row : table.rows) data.samples.push_back({row[ct], row[cu], row[cf]});
  data.validate();
  return data;
}

inline void save_dataset(const std::string& path, const ResidualDataset& data) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  write_dataset_csv(out, data);
}

inline ResidualDataset load_dataset(const std::string& path, double sample_period = 1.0) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  return read_dataset_csv(in, sample_period);
}

inline Eigen::VectorXd residual_input(double temp, double u) { return (Eigen::VectorXd(2) << temp, u).finished(); }

inline double predict_residual(const Mlp& model, double temp, double u) {
  return forward(model, residual_input(temp, u))[0];
}

/// Largest absolute held-out prediction error.
inline ErrorBound estimate_error_bound(const Mlp& model, const ResidualDataset& holdout) {
  detail::require(!holdout.empty(), "estimate_error_bound: empty holdout");
  double worst = 0.0;
  for (const auto& s : holdout.samples) worst = std::max(worst, std::abs(predict_residual(model, s.temp, s.u) - s.f_a));
  return {worst};
}

inline double mean_squared_error(const Mlp& model, const ResidualDataset& data) {
  double sum = 0.0;
  for (const auto& s : data.samples) {
    const double e = predict_residual(model, s.temp, s.u) - s.f_a;
    sum += e * e;
  }
  return sum / static_cast<double>(data.size());
}

struct TrainingLogEntry {
  int epoch = 0;
  double train_mse = 0.0;
  double holdout_mse = 0.0;
  double lipschitz_bound = 0.0;
};

struct TrainedResidual {
  Mlp model;
  ErrorBound bound;
  std::vector<TrainingLogEntry> log;
  ResidualDataset train;
  ResidualDataset holdout;
  double holdout_mse = 0.0;
  double baseline_holdout_mse = 0.0;  // constant predictor at the training mean
  std::size_t steps = 0;
};

/// Called with the raw-input model after every gradient step.
using StepObserver = std::function<void(const Mlp&)>;

/// Mini-batch Adam on the mean squared residual error. Inputs are standardized internally and
/// the affine map is folded into the first layer; the Lipschitz bound of the folded model is
/// renormalized to gamma after every step.
inline TrainedResidual train_residual(const ResidualDataset& data, const LanderConfig& cfg,
                                      const StepObserver& observer = {}) {
  data.validate();
  cfg.validate();
  detail::require(data.size() >= 2, "train_residual: need at least two samples");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_hold = static_cast<std::size_t>(std::round(cfg.holdout_fraction * static_cast<double>(data.size())));
  n_hold = std::clamp<std::size_t>(n_hold, 1, data.size() - 1);
  ResidualDataset train_set, holdout_set;
  train_set.sample_period = holdout_set.sample_period = data.sample_period;
  std::vector<TrainingLogEntry> log;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_hold ? holdout_set : train_set).samples.push_back(data.samples[order[i]]);

  // Standardization from the training split.
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(2), scale = Eigen::VectorXd::Zero(2);
  for (const auto& s : train_set.samples) shift += residual_input(s.temp, s.u);
  shift /= static_cast<double>(train_set.size());
  for (const auto& s : train_set.samples) scale += (residual_input(s.temp, s.u) - shift).cwiseAbs2();
  scale = (scale / static_cast<double>(train_set.size())).cwiseSqrt();
  for (Eigen::Index i = 0; i < 2; ++i)
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;

  std::vector<int> sizes = {2};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  std::vector<Activation> acts(cfg.hidden.size(), Activation::tanh);
  acts.push_back(Activation::linear);
  Mlp inner = Mlp::random(sizes, acts, cfg.seed + 1);
  double mean_target = 0.0;
  for (const auto& s : train_set.samples) mean_target += s.f_a;
  mean_target /= static_cast<double>(train_set.size());
  inner.layer(inner.depth() - 1).bias[0] = mean_target;

  // Normalizes the folded model, then maps the scaled weights back while keeping the
  // standardized-coordinate first-layer bias fixed.
  std::vector<Eigen::VectorXd> warm;
  auto constrain = [&](Mlp& candidate) {
    const Eigen::VectorXd bias = candidate.layer(0).bias;
    candidate = unfold_input_affine(normalize_lipschitz(fold_input_affine(candidate, shift, scale), cfg.gamma, &warm),
                                    shift, scale);
    candidate.layer(0).bias = bias;
    return fold_input_affine(candidate, shift, scale);
  };
  Mlp model = constrain(inner);

  std::vector<Eigen::VectorXd> inputs;
  for (const auto& s : train_set.samples) inputs.push_back((residual_input(s.temp, s.u) - shift).cwiseQuotient(scale));

  Adam opt(cfg.learning_rate);
  std::vector<std::size_t> batch_order(train_set.size());
  std::iota(batch_order.begin(), batch_order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  Eigen::VectorXd upstream(1);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    for (std::size_t start = 0; start < batch_order.size(); start += batch) {
      const std::size_t end = std::min(start + batch, batch_order.size());
      Gradients grad = Gradients::zeros_like(inner);
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = batch_order[j];
        const double err = forward(inner, inputs[idx])[0] - train_set.samples[idx].f_a;
        upstream[0] = 2.0 * err / static_cast<double>(end - start);
        grad.add(backward(inner, inputs[idx], upstream));
      }
      if (!grad.all_finite()) throw TrainingDiverged("train_residual: non-finite gradient");
      opt.step(inner, grad);
      model = constrain(inner);
      ++steps;
      if (observer) observer(model);
    }
    const double train_mse = mean_squared_error(model, train_set);
    const double holdout_mse = mean_squared_error(model, holdout_set);
    if (!std::isfinite(train_mse) || !std::isfinite(holdout_mse))
      throw TrainingDiverged("train_residual: non-finite loss at epoch " + std::to_string(epoch));
    log.push_back({epoch, train_mse, holdout_mse, lipschitz_bound(model)});
  }

  double baseline = 0.0;
  for (const auto& s : holdout_set.samples) baseline += (s.f_a - mean_target) * (s.f_a - mean_target);
  baseline /= static_cast<double>(holdout_set.size());
  const ErrorBound bound = estimate_error_bound(model, holdout_set);
  const double holdout_mse = mean_squared_error(model, holdout_set);
  return TrainedResidual{std::move(model), bound, std::move(log), std::move(train_set), std::move(holdout_set),
                         holdout_mse, baseline, steps};
}

inline void write_training_log(std::ostream& out, const std::vector<TrainingLogEntry>& log) {
  out << "epoch,train_mse,holdout_mse,lipschitz_bound\n";
  for (const auto& e : log)
    out << e.epoch << ',' << csv::format(e.train_mse) << ',' << csv::format(e.holdout_mse) << ','
        << csv::format(e.lipschitz_bound) << '\n';
}

// ---------------------------------------------------------------------------
// Fixed-point control

/// Lipschitz bound of the model in u divided by k (temp_on - temp_off).
inline double contraction_ratio(const Mlp& model, const OvenParams& p) {
  return lipschitz_bound_wrt_input(model, 1) / (p.k * p.heater_span());
}

struct FixedPointResult {
  double u = 0.0;
  int iterations = 0;
  double ratio = 0.0;
  std::vector<double> iterates;  // u_0, u_1, ...
};

/// u = clamp((temp_desired - temp_off - f(temp, u) / k) / (temp_on - temp_off)), iterated from the
/// baseline input.
inline FixedPointResult solve_control_fixed_point(const Mlp& model, double temp, const OvenParams& p,
                                                  double tol = 1e-10, int max_iters = 100) {
  p.validate();
  detail::require(model.input_dim() == 2 && model.output_dim() == 1, "fixed point: model must map (temp, u) to f_a");
  detail::require(tol > 0.0 && max_iters > 0, "fixed point: tol and max_iters must be positive");
  FixedPointResult r;
  r.ratio = contraction_ratio(model, p);
  if (r.ratio >= 1.0)
    throw NonContraction("fixed point: contraction ratio " + std::to_string(r.ratio) + " >= 1", r.ratio);
  double u = baseline_input(p);
  r.iterates.push_back(u);
  for (int i = 1; i <= max_iters; ++i) {
    const double next =
        clamp_unit((p.temp_desired - p.temp_off - predict_residual(model, temp, u) / p.k) / p.heater_span());
    r.iterates.push_back(next);
    const double gap = std::abs(next - u);
    u = next;
    if (gap < tol) {
      r.u = u;
      r.iterations = i;
      return r;
    }
  }
  throw ConvergenceError("fixed point: no convergence within " + std::to_string(max_iters) + " iterations");
}

/// Disturbance-rejecting controller: the fixed-point input for the observed temperature.
inline Controller augmented_controller(const Mlp& model, const OvenParams& p, double tol = 1e-10,
                                       int max_iters = 1000) {
  if (contraction_ratio(model, p) >= 1.0)
    throw NonContraction("augmented controller: model is not a contraction in u", contraction_ratio(model, p));
  return [model, p, tol, max_iters](const State& x, double) {
    return solve_control_fixed_point(model, x[0], p, tol, max_iters).u;
  };
}

/// Piecewise-constant input, redrawn uniformly in [0, 1] every `hold` minutes.
inline Controller excitation_controller(std::uint64_t seed, double hold) {
  detail::require(hold > 0.0, "excitation: hold must be positive");
  return [seed, hold](const State&, double t) {
    const auto slot = static_cast<std::uint64_t>(std::floor(t / hold + 1e-9));
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(slot), static_cast<std::uint32_t>(slot >> 32)};
    std::mt19937_64 rng(seq);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };
}

/// 15 sin(temp / 40), the reference residual used across tests and demos.
inline Disturbance sinusoidal_disturbance(double amplitude = 15.0, double period = 40.0) {
  return [amplitude, period](const State& x, double) { return amplitude * std::sin(x[0] / period); };
}

struct TrackingError {
  double steady_state = 0.0;
  double rms = 0.0;
};

/// Mean |x - setpoint| over the final settle_window, and RMS over the whole trace.
inline TrackingError evaluate_tracking(const Trace& trace, double setpoint, double settle_window) {
  detail::require(settle_window >= 0.0, "evaluate_tracking: negative window");
  const double duration = trace.time(trace.size() - 1);
  detail::require(settle_window < duration, "evaluate_tracking: window exceeds trace");
  const double start = duration - settle_window;
  TrackingError e;
  std::size_t n_tail = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double err = trace.value(i) - setpoint;
    e.rms += err * err;
    if (trace.time(i) >= start - 1e-9) {
      e.steady_state += std::abs(err);
      ++n_tail;
    }
  }
  e.rms = std::sqrt(e.rms / static_cast<double>(trace.size()));
  e.steady_state /= static_cast<double>(n_tail);
  return e;
}

}  // namespace safectl
