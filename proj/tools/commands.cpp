#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "safectl/certify.hpp"
#include "safectl/lander.hpp"
#include "safectl/neural.hpp"
#include "safectl/sindy.hpp"
#include "safectl/stl.hpp"
#include "safectl/svg.hpp"
#include "safectl/systems.hpp"

namespace fs = std::filesystem;

namespace safectl::cli {
namespace {

using Details = std::vector<std::pair<std::string, std::string>>;

std::ofstream open_output(const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DomainError("cannot write '" + file.string() + "'");
  return out;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir = c.path("output_dir");
  if (dir.empty()) dir = fs::current_path();
  fs::create_directories(dir);
  return dir;
}

// Machine-readable companion of every exit-1 verdict.
void write_verdict(const fs::path& dir, const std::string& command, const std::string& verdict,
                   const std::string& condition, const Details& details = {}) {
  auto out = open_output(dir / "verdict.txt");
  out << "command=" << command << "\nverdict=" << verdict << "\ncondition=" << condition << '\n';
  for (const auto& [k, v] : details) out << k << '=' << v << '\n';
  spdlog::warn("{}: {} ({})", command, verdict, condition);
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + csv::format(v[i]);
  return s;
}

Eigen::VectorXd to_vector(const std::vector<double>& values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
  return v;
}

OvenParams oven_params(const RunConfig& c) {
  OvenParams p{c.real("oven.k"), c.real("oven.temp_on"), c.real("oven.temp_off"), c.real("oven.temp_desired")};
  p.validate();
  return p;
}

PendulumParams pendulum_params(const RunConfig& c) {
  PendulumParams p{c.real("pendulum.mass"), c.real("pendulum.length"), c.real("pendulum.gravity"),
                   c.real("pendulum.torque_limit")};
  p.validate();
  return p;
}

Disturbance disturbance(const RunConfig& c) {
  const std::string& kind = c.text("disturbance.kind");
  if (kind == "constant") {
    const double v = c.real("disturbance.value");
    return [v](const State&, double) { return v; };
  }
  if (kind == "sinusoid") {
    const double period = c.real("disturbance.period");
    detail::require(period != 0.0, "disturbance.period must be non-zero");
    return sinusoidal_disturbance(c.real("disturbance.amplitude"), period);
  }
  return {};
}

void require_oven(const RunConfig& c, const std::string& command) {
  if (c.text("system") != "oven") throw ConfigError(command + " supports only system = oven");
}

Mlp load_model_or_throw(const RunConfig& c) {
  const fs::path p = c.path("lander.model");
  if (p.empty()) throw ConfigError("lander.model must name a trained residual model");
  return load_model(p.string());
}

Controller oven_controller(const RunConfig& c, const OvenParams& p) {
  const std::string& name = c.text("controller");
  if (name == "baseline") return baseline_controller(p);
  if (name == "excitation") return excitation_controller(c.seed(), c.real("collect.hold"));
  if (name == "augmented")
    return augmented_controller(load_model_or_throw(c), p, c.real("lander.tolerance"),
                                static_cast<int>(c.integer("lander.max_iterations")));
  throw ConfigError("controller '" + name + "' is not available for the oven");
}

Trace simulate_configured(const RunConfig& c, double noise) {
  SimulationSettings s;
  s.dt = c.real("sim.dt");
  s.horizon = c.real("sim.horizon");
  s.control_period = c.real("sim.control_period");
  s.disturbance = disturbance(c);
  s.measurement_noise = noise;
  s.seed = c.seed();
  const State x0 = to_vector(c.list("sim.x0"));
  if (c.text("system") == "pendulum") {
    if (c.text("controller") != "pd") throw ConfigError("the pendulum supports only controller = pd");
    const PendulumParams pp = pendulum_params(c);
    return integrate(PendulumSystem{pp}, pendulum_pd_controller(pp, c.real("pendulum.kp"), c.real("pendulum.kd")),
                     x0, s);
  }
  const OvenParams p = oven_params(c);
  return integrate(OvenSystem{p}, oven_controller(c, p), x0, s);
}

Chart trace_chart(const std::string& title, const std::vector<std::pair<std::string, const Trace*>>& traces,
                  Eigen::Index component = 0) {
  Chart chart{title, "time", "state", {}};
  for (const auto& [name, tr] : traces) {
    Series s{name, {}, {}};
    for (std::size_t i = 0; i < tr->size(); ++i) {
      s.x.push_back(tr->time(i));
      s.y.push_back(tr->value(i, component));
    }
    chart.series.push_back(std::move(s));
  }
  if (!traces.empty()) chart.y_label = traces.front().second->state_names()[static_cast<std::size_t>(component)];
  return chart;
}

Trace collect_trace(const RunConfig& c, const OvenParams& p) {
  SimulationSettings s;
  s.dt = c.real("collect.dt");
  s.horizon = c.real("collect.horizon");
  s.disturbance = disturbance(c);
  s.seed = c.seed();
  return integrate(OvenSystem{p}, excitation_controller(c.seed(), c.real("collect.hold")),
                   State::Constant(1, c.real("collect.x0")), s);
}

LanderConfig lander_config(const RunConfig& c) {
  LanderConfig cfg;
  cfg.gamma = c.real("lander.gamma");
  cfg.learning_rate = c.real("lander.learning_rate");
  cfg.epochs = static_cast<int>(c.integer("lander.epochs"));
  cfg.batch_size = static_cast<int>(c.integer("lander.batch_size"));
  cfg.dt = c.real("lander.dt");
  cfg.holdout_fraction = c.real("lander.holdout_fraction");
  cfg.seed = c.seed();
  cfg.hidden = c.int_list("lander.hidden");
  cfg.validate();
  return cfg;
}

ResidualDataset configured_dataset(const RunConfig& c, const OvenParams& p) {
  const fs::path data = c.path("lander.data");
  if (!data.empty()) return load_dataset(data.string(), c.real("lander.dt"));
  return build_residual_dataset(collect_trace(c, p), p, c.real("lander.dt"));
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  const fs::path dir = output_dir(c);
  const Trace trace = simulate_configured(c, c.real("sim.measurement_noise"));
  auto f = open_output(dir / "trace.csv");
  write_trace_csv(f, trace);
  save_chart((dir / "trace_plot").string(), trace_chart("Closed-loop " + c.text("system"), {{"state", &trace}}));
  out << "simulated " << trace.size() << " samples, final state " << join(trace.final_state()) << '\n';
  return exit_ok;
}

int cmd_collect(const RunConfig& c, std::ostream& out) {
  require_oven(c, "collect");
  const fs::path dir = output_dir(c);
  const OvenParams p = oven_params(c);
  const Trace trace = collect_trace(c, p);
  const ResidualDataset data = build_residual_dataset(trace, p, c.real("lander.dt"));
  auto tf = open_output(dir / "trace.csv");
  write_trace_csv(tf, trace);
  auto df = open_output(dir / "dataset.csv");
  write_dataset_csv(df, data);
  Series s{"f_a", {}, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    s.x.push_back(static_cast<double>(i) * data.sample_period);
    s.y.push_back(data.samples[i].f_a);
  }
  save_chart((dir / "dataset_plot").string(), Chart{"Residual dynamics samples", "time", "f_a", {s}});
  out << "collected " << data.size() << " residual samples\n";
  return exit_ok;
}

int cmd_train_lander(const RunConfig& c, std::ostream& out) {
  require_oven(c, "train-lander");
  const fs::path dir = output_dir(c);
  const OvenParams p = oven_params(c);
  const ResidualDataset data = configured_dataset(c, p);
  const LanderConfig cfg = lander_config(c);
  TrainedResidual r = [&] {
    try {
      return train_residual(data, cfg);
    } catch (const TrainingDiverged& e) {
      write_verdict(dir, "train-lander", "training_diverged", "finite_loss", {{"detail", e.what()}});
      throw;
    }
  }();
  save_model((dir / "model.txt").string(), r.model);
  auto lf = open_output(dir / "training_log.csv");
  write_training_log(lf, r.log);
  Series train{"train_mse", {}, {}}, hold{"holdout_mse", {}, {}};
  for (const auto& e : r.log) {
    train.x.push_back(e.epoch);
    train.y.push_back(e.train_mse);
    hold.x.push_back(e.epoch);
    hold.y.push_back(e.holdout_mse);
  }
  save_chart((dir / "training_plot").string(), Chart{"Residual training", "epoch", "mse", {train, hold}});
  const double ratio = contraction_ratio(r.model, p);
  auto rf = open_output(dir / "lander_report.txt");
  rf << "eps_hat=" << csv::format(r.bound.eps_hat) << "\nholdout_mse=" << csv::format(r.holdout_mse)
     << "\nbaseline_holdout_mse=" << csv::format(r.baseline_holdout_mse)
     << "\nlipschitz_bound=" << csv::format(lipschitz_bound(r.model)) << "\ncontraction_ratio=" << csv::format(ratio)
     << "\nsteps=" << r.steps << '\n';
  out << "trained residual model: holdout mse " << csv::format(r.holdout_mse) << ", eps_hat "
      << csv::format(r.bound.eps_hat) << ", contraction ratio " << csv::format(ratio) << '\n';
  return exit_ok;
}

int cmd_control_lander(const RunConfig& c, std::ostream& out) {
  require_oven(c, "control-lander");
  const fs::path dir = output_dir(c);
  const OvenParams p = oven_params(c);
  std::optional<Mlp> model;
  if (!c.path("lander.model").empty()) {
    model = load_model_or_throw(c);
  } else {
    model = train_residual(configured_dataset(c, p), lander_config(c)).model;
  }
  SimulationSettings s;
  s.dt = c.real("sim.dt");
  s.horizon = c.real("lander.horizon");
  s.control_period = c.real("lander.control_period");
  s.disturbance = disturbance(c);
  const State x0 = State::Constant(1, c.real("lander.x0"));
  Controller augmented;
  try {
    augmented = augmented_controller(*model, p, c.real("lander.tolerance"),
                                     static_cast<int>(c.integer("lander.max_iterations")));
  } catch (const NonContraction& e) {
    write_verdict(dir, "control-lander", "non_contraction", "contraction_ratio",
                  {{"ratio", csv::format(e.ratio())}});
    return exit_verdict;
  }
  const Trace base = integrate(OvenSystem{p}, baseline_controller(p), x0, s);
  const Trace aug = integrate(OvenSystem{p}, augmented, x0, s);
  const double window = c.real("lander.settle_window");
  const TrackingError eb = evaluate_tracking(base, p.temp_desired, window);
  const TrackingError ea = evaluate_tracking(aug, p.temp_desired, window);
  auto bf = open_output(dir / "baseline_trace.csv");
  write_trace_csv(bf, base);
  auto af = open_output(dir / "augmented_trace.csv");
  write_trace_csv(af, aug);
  auto tf = open_output(dir / "tracking.csv");
  tf << "controller,steady_state,rms\n"
     << "baseline," << csv::format(eb.steady_state) << ',' << csv::format(eb.rms) << '\n'
     << "augmented," << csv::format(ea.steady_state) << ',' << csv::format(ea.rms) << '\n';
  save_chart((dir / "tracking_plot").string(),
             trace_chart("Setpoint tracking under disturbance", {{"baseline", &base}, {"augmented", &aug}}));
  out << "steady-state error: baseline " << csv::format(eb.steady_state) << ", augmented "
      << csv::format(ea.steady_state) << '\n';
  return exit_ok;
}

struct CertifySetup {
  OffsetLinearTransition transition;
  Eigen::VectorXd setpoint;
  RiskConfig risk;
  FalsifierConfig falsifier;
};

CertifySetup certify_setup(const RunConfig& c) {
  require_oven(c, "certify");
  const OvenParams p = oven_params(c);
  CertifySetup s;
  s.risk.lo = to_vector(c.list("certify.lo"));
  s.risk.hi = to_vector(c.list("certify.hi"));
  s.risk.epsilon = c.real("certify.epsilon");
  s.risk.r_min = c.real("certify.r_min");
  const long long n = c.integer("certify.samples");
  detail::require(n > 0, "certify.samples must be positive");
  s.risk.n_samples = static_cast<std::size_t>(n);
  s.risk.seed = c.seed();
  s.risk.validate();
  s.setpoint = Eigen::VectorXd::Constant(s.risk.lo.size(), p.temp_desired);
  if (c.text("certify.transition") == "oven") {
    detail::require(s.risk.lo.size() == 1, "the oven transition is one-dimensional");
    s.transition = OffsetLinearTransition::oven(p, c.real("certify.transition_dt"));
  } else {
    s.transition = OffsetLinearTransition::scaled(s.setpoint, c.real("certify.gain"), "scaled");
  }
  s.falsifier.delta = c.real("certify.delta");
  s.falsifier.min_box_width = c.real("certify.min_box_width");
  const long long boxes = c.integer("certify.max_boxes");
  detail::require(boxes > 0, "certify.max_boxes must be positive");
  s.falsifier.max_boxes = static_cast<std::size_t>(boxes);
  s.falsifier.validate();
  return s;
}

Mlp analytic_candidate(const CertifySetup& s) {
  detail::require(s.setpoint.size() == 1, "the analytic candidate is one-dimensional");
  return abs_offset_lyapunov(s.setpoint[0]);
}

Details counterexample_details(const FalsifierResult& r) {
  Details d{{"boxes_processed", std::to_string(r.boxes_processed)}};
  if (r.point.size() > 0) d.push_back({"point", join(r.point)});
  if (r.worst_box) {
    d.push_back({"box_lo", join(r.worst_box->lower())});
    d.push_back({"box_hi", join(r.worst_box->upper())});
  }
  return d;
}

std::string verdict_condition(const FalsifierResult& r) {
  return r.verdict == Verdict::counterexample ? to_string(r.condition) : "undecided";
}

void write_box_log(const fs::path& file, const std::vector<BoxRecord>& log) {
  auto f = open_output(file);
  write_falsifier_log(f, log);
}

void write_lyapunov_plot(const fs::path& stem, const Certificate& cert) {
  if (cert.risk.lo.size() != 1) return;
  Series v{"V", {}, {}}, dv{"V(f(x)) - V(x)", {}, {}};
  const double lo = cert.risk.lo[0], hi = cert.risk.hi[0];
  for (int i = 0; i <= 700; ++i) {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, lo + (hi - lo) * i / 700.0);
    const double vx = forward(cert.v, x)[0];
    v.x.push_back(x[0]);
    v.y.push_back(vx);
    dv.x.push_back(x[0]);
    dv.y.push_back(forward(cert.v, cert.transition(x))[0] - vx);
  }
  save_chart(stem.string(), Chart{"Certified Lyapunov function", "x", "value", {v, dv}});
}

int cmd_certify(const RunConfig& c, std::ostream& out) {
  const fs::path dir = output_dir(c);
  const CertifySetup s = certify_setup(c);
  std::optional<Certificate> cert;
  auto cf = open_output(dir / "cegis.csv");
  cf << "iteration,samples\n";
  if (c.text("certify.candidate") == "analytic") {
    const FalsifierResult r = falsify(analytic_candidate(s), s.transition, s.setpoint, s.risk, s.falsifier);
    if (!r.verified()) {
      write_verdict(dir, "certify", to_string(r.verdict), verdict_condition(r), counterexample_details(r));
      return exit_verdict;
    }
    cert = Certificate{analytic_candidate(s), s.transition, s.risk, s.falsifier, {"Verified"}, std::nullopt};
  } else {
    std::vector<int> sizes{static_cast<int>(s.setpoint.size())};
    std::vector<Activation> acts;
    for (int h : c.int_list("certify.hidden")) {
      sizes.push_back(h);
      acts.push_back(parse_activation(c.text("certify.activation")));
    }
    sizes.push_back(1);
    acts.push_back(Activation::linear);
    const Mlp templ = Mlp::random(sizes, acts, c.seed());
    CegisBudget budget;
    budget.max_outer = static_cast<std::size_t>(std::max<long long>(1, c.integer("certify.max_outer")));
    budget.steps_per_round = static_cast<std::size_t>(std::max<long long>(1, c.integer("certify.steps_per_round")));
    budget.learning_rate = c.real("certify.learning_rate");
    const CegisResult r = cegis_train(s.transition, s.setpoint, templ, s.risk, s.falsifier, budget);
    for (std::size_t i = 0; i < r.sample_counts.size(); ++i) cf << i + 1 << ',' << r.sample_counts[i] << '\n';
    if (!r.success()) {
      const CegisFailure& f = *r.failure;
      Details d{{"reason", f.reason},
                {"outer_iterations", std::to_string(f.outer_iterations)},
                {"final_risk", csv::format(f.final_risk)}};
      if (f.last_counterexample) d.push_back({"counterexample", join(*f.last_counterexample)});
      save_model((dir / "last_candidate.txt").string(), r.last_candidate);
      write_verdict(dir, "certify", "no_certificate", f.last_condition ? to_string(*f.last_condition) : "unknown", d);
      out << "no certificate after " << f.outer_iterations << " iterations\n";
      return exit_verdict;
    }
    cert = *r.certificate;
  }
  const long long resolution = c.integer("certify.roa_resolution");
  detail::require(resolution > 0, "certify.roa_resolution must be positive");
  const RegionOfAttraction roa = estimate_roa(*cert, static_cast<int>(resolution));
  cert->c_max = roa.c_max;
  save_certificate((dir / "certificate.txt").string(), *cert);
  std::vector<BoxRecord> log;
  verify_certificate(*cert, &log);
  write_box_log(dir / "falsifier_log.csv", log);
  auto rf = open_output(dir / "roa.csv");
  rf << "c_max,measure\n" << csv::format(roa.c_max) << ',' << csv::format(roa.measure) << '\n';
  write_lyapunov_plot(dir / "lyapunov_plot", *cert);
  out << "Verified after " << cert->history.size() << " outer iterations; region of attraction measure "
      << csv::format(roa.measure) << '\n';
  return exit_ok;
}

int cmd_verify(const RunConfig& c, std::ostream& out) {
  const fs::path dir = output_dir(c);
  const fs::path file = c.path("certify.certificate");
  std::optional<Certificate> cert;
  if (!file.empty()) {
    cert = load_certificate(file.string());
  } else if (c.text("certify.candidate") == "analytic") {
    const CertifySetup s = certify_setup(c);
    cert = Certificate{analytic_candidate(s), s.transition, s.risk, s.falsifier, {}, std::nullopt};
  } else {
    throw ConfigError("verify needs certify.certificate or certify.candidate = analytic");
  }
  std::vector<BoxRecord> log;
  const FalsifierResult r = verify_certificate(*cert, &log);
  write_box_log(dir / "falsifier_log.csv", log);
  auto vf = open_output(dir / "verify.csv");
  vf << "verdict,boxes_processed\n" << to_string(r.verdict) << ',' << r.boxes_processed << '\n';
  out << to_string(r.verdict) << '\n';
  if (r.verified()) return exit_ok;
  write_verdict(dir, "verify", to_string(r.verdict), verdict_condition(r), counterexample_details(r));
  return exit_verdict;
}

Trace trace_for(const RunConfig& c, const std::string& key, double noise, const fs::path& dir) {
  const fs::path file = c.path(key);
  if (!file.empty()) return load_trace(file.string());
  Trace trace = simulate_configured(c, noise);
  auto f = open_output(dir / "trace.csv");
  write_trace_csv(f, trace);
  return trace;
}

int cmd_monitor(const RunConfig& c, std::ostream& out) {
  const fs::path dir = output_dir(c);
  const Trace trace = trace_for(c, "monitor.trace", c.real("sim.measurement_noise"), dir);
  std::vector<MonitorEntry> entries;
  if (!c.text("monitor.formula").empty()) {
    entries.push_back(monitor("formula", parse_formula(c.text("monitor.formula")), trace));
  } else {
    OvenParams p;
    if (c.text("system") == "oven") p = oven_params(c);
    entries = check_oven_specs(trace, p).entries();
  }
  auto mf = open_output(dir / "monitor.csv");
  write_monitor_report(mf, entries);
  Details violated;
  for (const auto& e : entries) {
    out << e.name << ": robustness " << csv::format(e.robustness) << (e.satisfied ? " (satisfied)" : " (violated)")
        << (e.clipped ? " [window clipped at trace end]" : "") << '\n';
    if (!e.satisfied) violated.push_back({e.name, to_string(e.formula) + " robustness " + csv::format(e.robustness)});
  }
  if (violated.empty()) return exit_ok;
  write_verdict(dir, "monitor", "spec_violated", violated.front().first, violated);
  return exit_verdict;
}

int cmd_sysid(const RunConfig& c, std::ostream& out) {
  const fs::path dir = output_dir(c);
  const Trace trace = trace_for(c, "sysid.trace", c.real("sysid.noise"), dir);
  SindyConfig cfg;
  cfg.threshold = c.real("sysid.threshold");
  cfg.max_iterations = static_cast<int>(c.integer("sysid.max_iterations"));
  cfg.ridge = c.real("sysid.ridge");
  cfg.validate();
  const LibraryExtras extras{c.flag("sysid.sin"), c.flag("sysid.cos"), c.flag("sysid.exp")};
  const SparseModel model = identify(trace, static_cast<int>(c.integer("sysid.degree")), cfg, extras);
  {
    auto mf = open_output(dir / "sysid_model.txt");
    write_model_report(mf, model, cfg);
    auto cf = open_output(dir / "coefficients.csv");
    write_coefficients_csv(cf, model);
  }
  write_model_report(out, model, cfg);
  const double h = trace.sample_period();
  Trace sim = [&] {
    try {
      return simulate_model(model, trace[0].state, h, h * static_cast<double>(trace.size() - 1));
    } catch (const IntegrationDiverged& e) {
      write_verdict(dir, "sysid", "model_diverged", "rollout", {{"detail", e.what()}});
      throw;
    }
  }();
  const ModelValidation v = validate_model(model, trace);
  save_chart((dir / "validation_plot").string(),
             trace_chart("Identified model vs data", {{"data", &trace}, {"model", &sim}}));
  const double gate = c.real("sysid.gate");
  out << "re-simulation deviation " << csv::format(v.max_deviation) << " (" << csv::format(v.relative())
      << " of range)\n";
  if (v.relative() <= gate) return exit_ok;
  write_verdict(dir, "sysid", "residual_above_gate", "validation_deviation",
                {{"relative_deviation", csv::format(v.relative())}, {"gate", csv::format(gate)}});
  return exit_verdict;
}

const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>>& dispatch() {
  static const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>> table = {
      {"simulate", cmd_simulate},       {"collect", cmd_collect}, {"train-lander", cmd_train_lander},
      {"control-lander", cmd_control_lander}, {"certify", cmd_certify}, {"verify", cmd_verify},
      {"monitor", cmd_monitor},         {"sysid", cmd_sysid},
  };
  return table;
}

void configure_logging() {
  auto logger = spdlog::get("safectl");
  if (!logger) {
    logger = spdlog::stderr_color_mt("safectl");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
  }
  const char* level = std::getenv("SAFECTL_LOG_LEVEL");
  logger->set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"simulate", "collect", "train-lander", "control-lander",
                                                 "certify",  "verify",  "monitor",      "sysid"};
  return names;
}

int run_command(const std::string& command, const RunConfig& config, std::ostream& out) {
  const auto it = dispatch().find(command);
  if (it == dispatch().end()) throw ConfigError("unknown command '" + command + "'");
  spdlog::info("{}: writing to {}", command, config.path("output_dir").string());
  {
    auto rc = open_output(output_dir(config) / "run_config.txt");
    config.write(rc);
  }
  try {
    return it->second(config, out);
  } catch (const TrainingDiverged& e) {
    spdlog::error("{}", e.what());
    return exit_verdict;
  } catch (const IntegrationDiverged& e) {
    const fs::path dir = output_dir(config);
    if (!fs::exists(dir / "verdict.txt")) write_verdict(dir, command, "integration_diverged", "finite_state",
                                                        {{"detail", e.what()}});
    return exit_verdict;
  } catch (const NonContraction& e) {
    write_verdict(output_dir(config), command, "non_contraction", "contraction_ratio",
                  {{"ratio", csv::format(e.ratio())}});
    return exit_verdict;
  } catch (const ConvergenceError& e) {
    write_verdict(output_dir(config), command, "no_convergence", "fixed_point", {{"detail", e.what()}});
    return exit_verdict;
  }
}

int main_entry(int argc, const char* const* argv, std::ostream& out) {
  configure_logging();
  CLI::App app{"Safety-certified control toolkit"};
  app.require_subcommand(1);
  std::string config_file, out_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_file, "run configuration (key = value)")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "overrides output_dir");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = RunConfig::load(config_file);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (!out_dir.empty()) cfg.set("output_dir", fs::absolute(out_dir).string());
    const fs::path dir = cfg.path("output_dir");
    // A stale verdict from an earlier run must not survive a successful one.
    if (!dir.empty()) fs::remove(dir / "verdict.txt");
    return run_command(command, cfg, out);
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
  } catch (const ParseError& e) {
    spdlog::error("formula: {}", e.what());
  } catch (const DomainError& e) {
    spdlog::error("{}", e.what());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
  }
  return exit_usage;
}

}  // namespace safectl::cli
