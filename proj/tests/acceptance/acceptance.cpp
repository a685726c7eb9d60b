// Runs the twelve acceptance criteria and prints one PASS/FAIL line per criterion.
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "safectl/certify.hpp"
#include "safectl/lander.hpp"
#include "safectl/neural.hpp"
#include "safectl/sindy.hpp"
#include "safectl/stl.hpp"
#include "safectl/systems.hpp"
#include "stl_fuzz.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace safectl;
using namespace safectl::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

const OvenParams kOven;
const Eigen::VectorXd kSetpoint = vec({200.0});

Mlp linear_residual(double w_temp, double w_u, double bias) {
  return Mlp({Layer{(Eigen::MatrixXd(1, 2) << w_temp, w_u).finished(), Eigen::VectorXd::Constant(1, bias),
                    Activation::linear}});
}

double exact_lipschitz_bound(const Mlp& net) {
  double bound = 1.0;
  for (const auto& layer : net.layers())
    bound *= std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                         layer.weights.transpose() * layer.weights)
                                         .eigenvalues()
                                         .maxCoeff())) *
             activation_lipschitz(layer.activation);
  return bound;
}

ResidualDataset disturbed_dataset() {
  SimulationSettings s;
  s.dt = 0.05;
  s.horizon = 2000.0;
  s.disturbance = sinusoidal_disturbance(15.0, 40.0);
  const Trace trace = integrate(OvenSystem{kOven}, excitation_controller(0, 5.0), vec({200.0}), s);
  return build_residual_dataset(trace, kOven, 1.0);
}

// ---------------------------------------------------------------------------

Outcome simulator_fidelity() {
  SimulationSettings s;
  s.dt = 0.01;
  s.horizon = 50.0;
  const Trace trace = integrate(OvenSystem{kOven}, baseline_controller(kOven), vec({70.0}), s);
  const double ambient = kOven.ambient(baseline_input(kOven));
  double worst = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i)
    worst = std::max(worst, std::abs(trace.value(i) - oven_closed_form(trace.time(i), 70.0, ambient, kOven.k)));
  return {worst < 1e-6 && trace.size() == 5001, "max |rk4 - closed form| = " + num(worst)};
}

Outcome analytic_certificate() {
  const RiskConfig risk;
  FalsifierConfig fc;
  fc.delta = 0.01;
  const auto f = OffsetLinearTransition::oven(kOven, 1.0);
  const Mlp v = abs_offset_lyapunov(200.0);
  const FalsifierResult r = falsify(v, f, kSetpoint, risk, fc);
  RiskConfig dense = risk;
  dense.n_samples = 100000;
  dense.seed = 424242;
  std::size_t violations = 0;
  const auto points = sample_domain(dense, kSetpoint);
  for (const auto& x : points) {
    const double vx = forward(v, x)[0];
    const Eigen::VectorXd next = f(x);
    const bool inside = (next.array() >= risk.lo.array()).all() && (next.array() <= risk.hi.array()).all();
    if (!(vx > risk.epsilon) || !(forward(v, next)[0] - vx < 0.0) || !inside) ++violations;
  }
  return {r.verified() && violations == 0 && points.size() == 100000,
          std::string("falsify: ") + to_string(r.verdict) + ", sampled violations " + std::to_string(violations) +
              "/" + std::to_string(points.size())};
}

Mlp sigmoid_template(std::uint64_t seed) {
  const int sizes[] = {1, 6, 1};
  const Activation acts[] = {Activation::sigmoid, Activation::linear};
  return Mlp::random(sizes, acts, seed);
}

Outcome cegis_success(const fs::path& workdir) {
  const auto f = OffsetLinearTransition::oven(kOven, 1.0);
  const auto res = cegis_train(f, kSetpoint, sigmoid_template(0), RiskConfig{}, FalsifierConfig{}, CegisBudget{});
  if (!res.success()) return {false, "no certificate: " + res.failure->reason};
  const std::string file = (workdir / "cegis_certificate.txt").string();
  save_certificate(file, *res.certificate);
  const FalsifierResult again = verify_certificate(load_certificate(file));
  return {res.outer_iterations <= 50 && again.verified(),
          "outer iterations " + std::to_string(res.outer_iterations) + ", reload: " + to_string(again.verdict)};
}

Outcome cegis_sanity() {
  const auto f = OffsetLinearTransition::scaled(kSetpoint, 1.1, "divergent");
  const auto res = cegis_train(f, kSetpoint, sigmoid_template(0), RiskConfig{}, FalsifierConfig{}, CegisBudget{});
  if (res.success()) return {false, "divergent map was certified"};
  return {res.failure.has_value(), "failure after " + std::to_string(res.failure->outer_iterations) +
                                       " iterations: " + res.failure->reason};
}

Outcome gradient_suite() {
  std::mt19937_64 rng(8675309);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mlp net = random_net(rng);
    const Eigen::VectorXd x = random_vector(rng, net.input_dim());
    const Eigen::VectorXd up = random_vector(rng, net.output_dim());
    const Gradients g = backward(net, x, up);
    for (std::size_t l = 0; l < net.depth(); ++l)
      for (int bias = 0; bias < 2; ++bias) {
        const Eigen::Index n = bias ? g.biases[l].size() : g.weights[l].size();
        for (Eigen::Index i = 0; i < n; ++i) {
          auto eval = [&](double d) {
            Mlp copy = net;
            if (bias)
              copy.layer(l).bias[i] += d;
            else
              copy.layer(l).weights.data()[i] += d;
            return up.dot(forward(copy, x));
          };
          const double h = 1e-5;
          const double numeric = (eval(h) - eval(-h)) / (2 * h);
          const double analytic = bias ? g.biases[l][i] : g.weights[l].data()[i];
          worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
          ++checked;
        }
      }
  }
  return {worst <= 1e-5, std::to_string(checked) + " partials, worst relative error " + num(worst)};
}

Outcome lipschitz_constraint() {
  const ResidualDataset data = disturbed_dataset();
  const LanderConfig cfg;
  double worst_step = 0.0;
  const TrainedResidual r = train_residual(data, cfg, [&](const Mlp& m) {
    worst_step = std::max(worst_step, exact_lipschitz_bound(m));
  });
  const double bound = exact_lipschitz_bound(r.model);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : data.samples) lo = std::min(lo, s.temp), hi = std::max(hi, s.temp);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> temp(lo, hi), u(0.0, 1.0), near(-1.0, 1.0);
  double worst_ratio = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Eigen::VectorXd a = residual_input(temp(rng), u(rng));
    // Half the pairs are close together, where the local slope is steepest.
    const Eigen::VectorXd b = i % 2 ? residual_input(temp(rng), u(rng))
                                    : Eigen::VectorXd(a + Eigen::Vector2d(near(rng), 0.01 * near(rng)));
    const double dist = (a - b).norm();
    if (dist == 0.0) continue;
    worst_ratio = std::max(worst_ratio, std::abs(forward(r.model, a)[0] - forward(r.model, b)[0]) / dist);
  }
  const bool ok = r.steps > 0 && worst_step <= cfg.gamma * (1 + 1e-6) && worst_ratio <= bound &&
                  bound <= cfg.gamma * (1 + 1e-6);
  return {ok, std::to_string(r.steps) + " steps, max bound " + num(worst_step) + " (gamma " + num(cfg.gamma) +
                  "), max sampled ratio " + num(worst_ratio)};
}

Outcome fixed_point_control() {
  bool ok = true;
  int worst_iters = 0;
  double worst_residual = 0.0;
  for (double w_u : {43.0, -43.0, 20.0})
    for (double temp : {80.0, 150.0, 200.0, 260.0, 390.0}) {
      const Mlp model = linear_residual(0.05, w_u, 1.5);
      const FixedPointResult r = solve_control_fixed_point(model, temp, kOven, 1e-8, 100);
      ok = ok && r.ratio <= 0.5 + 1e-12;
      const double image =
          clamp_unit((kOven.temp_desired - kOven.temp_off - predict_residual(model, temp, r.u) / kOven.k) /
                     kOven.heater_span());
      worst_residual = std::max(worst_residual, std::abs(image - r.u));
      worst_iters = std::max(worst_iters, r.iterations);
    }
  ok = ok && worst_iters <= 30 && worst_residual < 1e-8;
  bool raised = false;
  try {
    solve_control_fixed_point(linear_residual(0.0, 100.0, 0.0), 180.0, kOven);
  } catch (const NonContraction& e) {
    raised = e.ratio() > 1.0;
  }
  bool baseline_exact = true;
  for (double temp : {70.0, 150.0, 200.0, 450.0})
    baseline_exact = baseline_exact &&
                     solve_control_fixed_point(linear_residual(0, 0, 0), temp, kOven).u == baseline_input(kOven);
  return {ok && raised && baseline_exact, "iterations <= " + std::to_string(worst_iters) + ", residual " +
                                              num(worst_residual) + ", non-contraction raised " +
                                              (raised ? "yes" : "no") + ", zero model exact " +
                                              (baseline_exact ? "yes" : "no")};
}

Outcome disturbance_rejection() {
  const TrainedResidual r = train_residual(disturbed_dataset(), LanderConfig{});
  SimulationSettings s;
  s.dt = 0.01;
  s.horizon = 100.0;
  s.control_period = 1.0;
  s.disturbance = sinusoidal_disturbance(15.0, 40.0);
  const Trace base = integrate(OvenSystem{kOven}, baseline_controller(kOven), vec({70.0}), s);
  const Trace aug = integrate(OvenSystem{kOven}, augmented_controller(r.model, kOven), vec({70.0}), s);
  const double eb = evaluate_tracking(base, 200.0, 20.0).steady_state;
  const double ea = evaluate_tracking(aug, 200.0, 20.0).steady_state;
  const double bound = r.bound.eps_hat / kOven.k + 0.5;
  return {ea <= 0.2 * eb && ea <= bound, "augmented " + num(ea) + " vs baseline " + num(eb) + " (ratio " +
                                             num(ea / eb) + "), eps_hat/k + 0.5 = " + num(bound)};
}

Trace nominal_oven(double noise, std::uint64_t seed) {
  SimulationSettings s;
  s.dt = 0.01;
  s.horizon = 50.0;
  s.measurement_noise = noise;
  s.seed = seed;
  return integrate(OvenSystem{kOven}, baseline_controller(kOven), vec({70.0}), s);
}

Outcome sindy_round_trip() {
  const SparseModel clean = identify(nominal_oven(0.0, 0), 2);
  const auto& c = clean.coefficients;
  const bool coeffs = std::abs(c(0, 0) - 40.0) <= 1e-3 && std::abs(c(1, 0) + 0.2) <= 1e-3 && c(2, 0) == 0.0;
  bool same_support = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const SparseModel noisy = identify(nominal_oven(0.01 * 130.0, seed), 2);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      same_support = same_support && ((noisy.coefficients(i, 0) != 0.0) == (c(i, 0) != 0.0));
  }
  return {coeffs && same_support, "coefficients (" + num(c(0, 0)) + ", " + num(c(1, 0)) + ", " + num(c(2, 0)) +
                                      "), noisy support " + (same_support ? "identical" : "differs")};
}

Outcome stl_oracle() {
  double worst = 0.0;
  int evaluated = 0, consistent_errors = 0, mismatched_errors = 0;
  for (const auto& c : fuzz_corpus(2718, 500)) {
    double expected = 0.0;
    bool brute_threw = false;
    try {
      expected = brute(c.formula, c.trace, 0);
    } catch (const DomainError&) {
      brute_threw = true;
    }
    try {
      const double got = robustness(c.formula, c.trace);
      if (brute_threw) {
        ++mismatched_errors;
        continue;
      }
      worst = std::max(worst, std::abs(got - expected));
      ++evaluated;
    } catch (const DomainError&) {
      brute_threw ? ++consistent_errors : ++mismatched_errors;
    }
  }
  const OvenSpecReport specs = check_oven_specs(nominal_oven(0.0, 0), kOven);
  const double gap = 130.0 * std::exp(-kOven.k * 50.0);
  const bool values = std::abs(specs.converge.robustness - (10.0 - gap)) <= 1e-5 &&
                      std::abs(specs.avoid.robustness - (200.0 + gap)) <= 1e-5 &&
                      specs.combined.robustness == specs.converge.robustness;
  return {worst <= 1e-12 && mismatched_errors == 0 && specs.all_satisfied() && values,
          std::to_string(evaluated) + " pairs evaluated (" + std::to_string(consistent_errors) +
              " empty windows), worst gap " + num(worst) + "; oven specs " + num(specs.converge.robustness) + ", " +
              num(specs.avoid.robustness) + ", " + num(specs.combined.robustness)};
}

Outcome smooth_robustness_suite() {
  std::size_t bound_checks = 0, bound_violations = 0;
  for (const auto& c : fuzz_corpus(3141, 500)) {
    double exact = 0.0;
    try {
      exact = robustness(c.formula, c.trace);
    } catch (const DomainError&) {
      continue;
    }
    for (double beta : {0.5, 2.0, 10.0, 1e6}) {
      ++bound_checks;
      // Equal-valued windows attain the bound exactly, so allow only floating-point roundoff.
      const double bound = smoothing_error_bound(c.formula, c.trace, beta);
      if (std::abs(smooth_robustness(c.formula, c.trace, 0, beta) - exact) >
          bound * (1 + 1e-12) + 1e-12 * std::abs(exact))
        ++bound_violations;
    }
  }
  double worst = 0.0;
  std::size_t partials = 0;
  for (const auto& c : fuzz_corpus(1618, 150)) {
    SmoothRobustness an;
    try {
      an = smooth_robustness_gradient(c.formula, c.trace, 0, 2.0);
    } catch (const DomainError&) {
      continue;
    }
    for (std::size_t i = 0; i < c.trace.size(); ++i) {
      auto bumped = [&](double d) {
        std::vector<Sample> s = c.trace.samples();
        s[i].state[0] += d;
        return smooth_robustness(c.formula, Trace(c.trace.sample_period(), s), 0, 2.0);
      };
      const double fd = (bumped(1e-5) - bumped(-1e-5)) / 2e-5;
      const double g = an.gradient(static_cast<Eigen::Index>(i), 0);
      worst = std::max(worst, std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)}));
      ++partials;
    }
  }
  return {bound_violations == 0 && worst <= 1e-5 && partials > 1000,
          std::to_string(bound_checks) + " bound checks, " + std::to_string(bound_violations) + " violations; " +
              std::to_string(partials) + " partials, worst relative error " + num(worst)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") out[e.path().filename().string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string& cli, const std::string& command, const fs::path& config, const fs::path& out) {
  const std::string line = "SAFECTL_LOG_LEVEL=warn '" + cli + "' " + command + " --config '" + config.string() +
                           "' --out '" + out.string() + "' > '" + out.string() + ".log' 2>&1";
  const int status = std::system(line.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_reproducibility(const std::string& cli, const fs::path& workdir) {
  const fs::path root = workdir / "reproducibility";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"simulate", "controller = excitation\nseed = 3\nsim.horizon = 40\nsim.measurement_noise = 0.5\n"
                   "disturbance.kind = sinusoid\n"},
      {"collect", "seed = 5\ncollect.horizon = 400\ndisturbance.kind = sinusoid\n"},
      {"train-lander", "seed = 2\ncollect.horizon = 400\ndisturbance.kind = sinusoid\nlander.epochs = 40\n"},
      {"control-lander", "seed = 2\ncollect.horizon = 400\ndisturbance.kind = sinusoid\nlander.epochs = 40\n"
                         "lander.horizon = 60\n"},
      {"certify", "seed = 0\ncertify.candidate = cegis\ncertify.roa_resolution = 500\n"},
      {"verify", "certify.candidate = analytic\n"},
      {"monitor", "sim.dt = 0.05\nsim.horizon = 60\nsim.measurement_noise = 0.2\nseed = 9\n"},
      {"sysid", "seed = 4\nsysid.noise = 1.3\nsysid.gate = 0.05\n"},
  };
  std::string detail;
  bool ok = true;
  for (const auto& [command, body] : runs) {
    const fs::path config = root / (command + ".conf");
    std::ofstream(config) << body;
    const int a = run_cli(cli, command, config, root / (command + "_a"));
    const int b = run_cli(cli, command, config, root / (command + "_b"));
    const auto fa = csv_files(root / (command + "_a"));
    const auto fb = csv_files(root / (command + "_b"));
    const bool same = a == b && a == 0 && !fa.empty() && fa == fb;
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + command + (same ? " ok(" + std::to_string(fa.size()) + ")" :
                                                               " DIFF(exit " + std::to_string(a) + "/" +
                                                                   std::to_string(b) + ")");
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the safectl executable")->required();
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "run a subset of criteria");
  CLI11_PARSE(app, argc, argv);
  const fs::path work = fs::absolute(workdir);
  fs::create_directories(work);

  const std::vector<Criterion> criteria = {
      {1, "simulator fidelity", 1, simulator_fidelity},
      {2, "analytic certificate verification", 10, analytic_certificate},
      {3, "CEGIS success", 300, [&] { return cegis_success(work); }},
      {4, "CEGIS sanity on divergent map", 300, cegis_sanity},
      {5, "gradient suite", 10, gradient_suite},
      {6, "Lipschitz constraint", 60, lipschitz_constraint},
      {7, "fixed-point control", 1, fixed_point_control},
      {8, "disturbance-rejection dominance", 120, disturbance_rejection},
      {9, "SINDY round trip", 5, sindy_round_trip},
      {10, "STL oracle equivalence", 10, stl_oracle},
      {11, "smooth robustness", 30, smooth_robustness_suite},
      {12, "CLI reproducibility", 300, [&] { return cli_reproducibility(cli, work); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " [" << num(seconds) << " s / "
              << c.budget_seconds << " s" << (in_time ? "" : ", over budget") << "]: " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
