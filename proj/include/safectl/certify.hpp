#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"
#include "safectl/interval.hpp"
#include "safectl/neural.hpp"
#include "safectl/systems.hpp"

namespace safectl {

/// Sampling and positivity settings for the Lyapunov risk.
struct RiskConfig {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, 50.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(1, 400.0);
  double epsilon = 0.5;
  std::size_t n_samples = 500;
  // Half-width of the excluded cube around the setpoint.
  double r_min = 1.0;
  std::uint64_t seed = 0;

  IntervalBox domain() const { return IntervalBox(lo, hi); }

  void validate() const {
    detail::require(lo.size() == hi.size() && lo.size() > 0, "risk config: domain dimension mismatch");
    detail::require(epsilon > 0.0, "risk config: epsilon must be positive");
    detail::require(r_min > 0.0, "risk config: r_min must be positive");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      detail::require(lo[i] < hi[i], "risk config: domain requires lo < hi");
  }
};

struct FalsifierConfig {
  double delta = 0.01;
  double min_box_width = 1e-3;
  std::size_t max_boxes = 200000;

  void validate() const {
    detail::require(delta > 0.0, "falsifier: delta must be positive");
    detail::require(min_box_width > 0.0, "falsifier: min_box_width must be positive");
    detail::require(max_boxes > 0, "falsifier: max_boxes must be positive");
  }
};

/// Decay constants of exponential stability, ||x(t)|| <= m e^{-alpha t} ||x(0)||.
struct StabilitySpec {
  double m = 1.0;
  double alpha = 0.2;

  void validate() const {
    detail::require(m >= 1.0, "stability spec: m must be >= 1");
    detail::require(alpha > 0.0, "stability spec: alpha must be positive");
  }
};

/// x' = setpoint + gain (x - setpoint). Exactly interval-evaluable.
struct OffsetLinearTransition {
  Eigen::MatrixXd gain;
  Eigen::VectorXd setpoint;
  std::string name = "linear";

  /// Oven closed loop sampled every dt: offsets shrink by e^{-k dt}.
  static OffsetLinearTransition oven(const OvenParams& p, double dt) {
    detail::require(dt > 0.0, "oven transition: dt must be positive");
    return {Eigen::MatrixXd::Constant(1, 1, std::exp(-p.k * dt)), Eigen::VectorXd::Constant(1, p.temp_desired),
            "oven"};
  }

  static OffsetLinearTransition scaled(const Eigen::VectorXd& setpoint, double factor, std::string name = "scaled") {
    return {factor * Eigen::MatrixXd::Identity(setpoint.size(), setpoint.size()), setpoint, std::move(name)};
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return setpoint + gain * (x - setpoint); }

  IntervalBox image(const IntervalBox& box) const {
    Eigen::VectorXd center = box.center() - setpoint;
    Eigen::VectorXd radius = box.radius();
    detail::affine_enclosure(gain, Eigen::VectorXd::Zero(gain.rows()), center, radius);
    center += setpoint;
    return IntervalBox(center - radius, center + radius);
  }

  void validate() const {
    detail::require(gain.rows() == gain.cols() && gain.rows() == setpoint.size(), "transition: shape mismatch");
    detail::require(gain.allFinite() && setpoint.allFinite(), "transition: non-finite entries");
  }
};

enum class RiskMode { hinge, max_with_epsilon };

enum class Condition { setpoint_value, positivity, decrease, invariance };

inline const char* to_string(Condition c) {
  switch (c) {
    case Condition::setpoint_value: return "setpoint_value";
    case Condition::positivity: return "positivity";
    case Condition::decrease: return "decrease";
    case Condition::invariance: return "invariance";
  }
  return "?";
}

namespace detail {
inline double value_at(const Mlp& v, const Eigen::VectorXd& x) { return forward(v, x)[0]; }

struct RiskTerms {
  double risk = 0.0;
  Gradients gradient;
};

/// Mean hinge risk with optional training margins; gradient only when requested.
inline RiskTerms risk_terms(const Mlp& v, const std::vector<Eigen::VectorXd>& samples,
                            const OffsetLinearTransition& transition, const Eigen::VectorXd& setpoint,
                            double epsilon, RiskMode mode, double decrease_margin, bool with_gradient) {
  require(!samples.empty(), "lyapunov_risk: no samples");
  require(v.output_dim() == 1, "lyapunov_risk: candidate must be scalar-valued");
  RiskTerms out;
  if (with_gradient) out.gradient = Gradients::zeros_like(v);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (const auto& x : samples) {
    const double vx = value_at(v, x);
    const Eigen::VectorXd next = transition(x);
    const double vnext = value_at(v, next);
    double positivity = 0.0;
    double dpos = 0.0;  // d positivity / d V(x)
    if (mode == RiskMode::hinge) {
      if (epsilon - vx > 0.0) {
        positivity = epsilon - vx;
        dpos = -1.0;
      }
    } else {
      if (-vx > epsilon) {
        positivity = -vx;
        dpos = -1.0;
      } else {
        positivity = epsilon;
      }
    }
    const double gap = vnext - vx + decrease_margin;
    const double decrease = gap > 0.0 ? gap : 0.0;
    out.risk += inv_n * (positivity + decrease);
    if (with_gradient) {
      double coeff_x = dpos + (gap > 0.0 ? -1.0 : 0.0);
      if (coeff_x != 0.0) out.gradient.add(backward(v, x, one), inv_n * coeff_x);
      if (gap > 0.0) out.gradient.add(backward(v, next, one), inv_n);
    }
  }
  const double vp = value_at(v, setpoint);
  out.risk += vp * vp;
  if (with_gradient && vp != 0.0) out.gradient.add(backward(v, setpoint, one), 2.0 * vp);
  return out;
}
}  // namespace detail

/// Empirical Lyapunov risk: mean positivity and decrease violations plus V(setpoint)^2.
inline double lyapunov_risk(const Mlp& v, const std::vector<Eigen::VectorXd>& samples,
                            const OffsetLinearTransition& transition, const Eigen::VectorXd& setpoint,
                            double epsilon, RiskMode mode = RiskMode::hinge) {
  return detail::risk_terms(v, samples, transition, setpoint, epsilon, mode, 0.0, false).risk;
}

inline std::pair<double, Gradients> lyapunov_risk_gradient(const Mlp& v, const std::vector<Eigen::VectorXd>& samples,
                                                           const OffsetLinearTransition& transition,
                                                           const Eigen::VectorXd& setpoint, double epsilon,
                                                           RiskMode mode = RiskMode::hinge) {
  auto terms = detail::risk_terms(v, samples, transition, setpoint, epsilon, mode, 0.0, true);
  return {terms.risk, std::move(terms.gradient)};
}

inline bool outside_exclusion(const Eigen::VectorXd& x, const Eigen::VectorXd& setpoint, double r_min) {
  return (x - setpoint).cwiseAbs().maxCoeff() >= r_min;
}

/// Uniform samples over the domain minus the exclusion cube, by rejection.
inline std::vector<Eigen::VectorXd> sample_domain(const RiskConfig& cfg, const Eigen::VectorXd& setpoint) {
  cfg.validate();
  detail::require(setpoint.size() == cfg.lo.size(), "sample_domain: setpoint dimension mismatch");
  bool room = false;
  for (Eigen::Index i = 0; i < cfg.lo.size(); ++i)
    room = room || cfg.lo[i] < setpoint[i] - cfg.r_min || cfg.hi[i] > setpoint[i] + cfg.r_min;
  detail::require(room, "sample_domain: domain lies inside the exclusion region");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::uniform_real_distribution<double>> dists;
  for (Eigen::Index i = 0; i < cfg.lo.size(); ++i) dists.emplace_back(cfg.lo[i], cfg.hi[i]);
  std::vector<Eigen::VectorXd> out;
  out.reserve(cfg.n_samples);
  while (out.size() < cfg.n_samples) {
    Eigen::VectorXd x(cfg.lo.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = dists[static_cast<std::size_t>(i)](rng);
    if (outside_exclusion(x, setpoint, cfg.r_min)) out.push_back(std::move(x));
  }
  return out;
}

/// Domain minus the open exclusion cube, as a disjoint union of closed boxes.
inline std::vector<IntervalBox> exclusion_complement(const IntervalBox& domain, const Eigen::VectorXd& setpoint,
                                                     double r_min) {
  std::vector<IntervalBox> pieces;
  IntervalBox rest = domain;
  for (Eigen::Index d = 0; d < domain.dim(); ++d) {
    const double cut_lo = setpoint[d] - r_min;
    const double cut_hi = setpoint[d] + r_min;
    if (rest[d].lo < cut_lo) {
      IntervalBox below = rest;
      below[d].hi = std::min(rest[d].hi, cut_lo);
      pieces.push_back(below);
    }
    if (rest[d].hi > cut_hi) {
      IntervalBox above = rest;
      above[d].lo = std::max(rest[d].lo, cut_hi);
      pieces.push_back(above);
    }
    rest[d].lo = std::max(rest[d].lo, cut_lo);
    rest[d].hi = std::min(rest[d].hi, cut_hi);
    if (rest[d].lo > rest[d].hi) break;
  }
  return pieces;
}

enum class Verdict { verified, counterexample, budget_exhausted };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::verified: return "Verified";
    case Verdict::counterexample: return "Counterexample";
    case Verdict::budget_exhausted: return "BudgetExhausted";
  }
  return "?";
}

struct BoxRecord {
  IntervalBox box;
  std::string status;
};

struct FalsifierResult {
  Verdict verdict = Verdict::verified;
  Eigen::VectorXd point;                // counterexample location
  Condition condition = Condition::positivity;
  std::optional<IntervalBox> worst_box;  // set when the budget ran out
  std::size_t boxes_processed = 0;

  bool verified() const { return verdict == Verdict::verified; }
};

namespace detail {
struct LexicographicBoxOrder {
  bool operator()(const IntervalBox& a, const IntervalBox& b) const {
    for (Eigen::Index i = 0; i < a.dim(); ++i) {
      if (a[i].lo != b[i].lo) return a[i].lo < b[i].lo;
      if (a[i].hi != b[i].hi) return a[i].hi < b[i].hi;
    }
    return false;
  }
};

inline bool lexicographically_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  return false;
}
}  // namespace detail

/// Interval branch-and-bound check of V(setpoint) ~ 0, V > epsilon, V(f(x)) <= V(x) and
/// f(x) in the domain, over the domain minus the exclusion cube.
///
/// A box is accepted when its enclosures prove the delta-weakened conditions
/// (V > epsilon - delta, V(f(x)) - V(x) <= delta) and its image stays in the domain.
/// Counterexamples are concrete points that strictly violate a condition: V(x) <= epsilon,
/// V(f(x)) - V(x) > 0 or f(x) outside the domain. Boxes are processed in lexicographic order
/// of their corners and the smallest violating probe is reported, so results are deterministic.
inline FalsifierResult falsify(const Mlp& v, const OffsetLinearTransition& transition, const Eigen::VectorXd& setpoint,
                               const RiskConfig& rcfg, const FalsifierConfig& fcfg,
                               std::vector<BoxRecord>* log = nullptr) {
  rcfg.validate();
  fcfg.validate();
  transition.validate();
  detail::require(v.output_dim() == 1 && v.input_dim() == setpoint.size(), "falsify: candidate shape mismatch");
  detail::require(rcfg.lo.size() == setpoint.size(), "falsify: domain dimension mismatch");

  FalsifierResult result;
  const double vp = detail::value_at(v, setpoint);
  if (!(std::abs(vp) <= fcfg.delta)) {
    result.verdict = Verdict::counterexample;
    result.point = setpoint;
    result.condition = Condition::setpoint_value;
    return result;
  }

  const double eps = rcfg.epsilon;
  const double delta = fcfg.delta;
  const IntervalBox domain = rcfg.domain();
  std::set<IntervalBox, detail::LexicographicBoxOrder> queue;
  for (auto& piece : exclusion_complement(domain, setpoint, rcfg.r_min)) queue.insert(piece);

  struct Undecided {
    IntervalBox box;
    double excess;
  };
  std::optional<Undecided> worst;
  auto record = [&](const IntervalBox& box, const char* status) {
    if (log) log->push_back({box, status});
  };
  auto inside_domain = [&](const IntervalBox& b) {
    for (Eigen::Index i = 0; i < b.dim(); ++i)
      if (b[i].lo < domain[i].lo || b[i].hi > domain[i].hi) return false;
    return true;
  };

  while (!queue.empty()) {
    if (result.boxes_processed >= fcfg.max_boxes) {
      result.verdict = Verdict::budget_exhausted;
      result.worst_box = worst ? worst->box : *queue.begin();
      return result;
    }
    const IntervalBox box = *queue.begin();
    queue.erase(queue.begin());
    ++result.boxes_processed;

    const IntervalBox image = transition.image(box);
    const Interval vbox = interval_eval_scalar(v, box);
    const Interval change = interval_eval_scalar(v, image) - vbox;
    const bool stays = inside_domain(image);
    if (vbox.lo > eps - delta && change.hi <= delta && stays) {
      record(box, "verified");
      continue;
    }

    std::optional<Eigen::VectorXd> bad_point;
    Condition bad_condition = Condition::positivity;
    auto probe = [&](const Eigen::VectorXd& x) {
      const double vx = detail::value_at(v, x);
      const Eigen::VectorXd next = transition(x);
      std::optional<Condition> violated;
      if (vx <= eps) {
        violated = Condition::positivity;
      } else if (detail::value_at(v, next) - vx > 0.0) {
        violated = Condition::decrease;
      } else if (!domain.contains(next)) {
        violated = Condition::invariance;
      }
      if (violated && (!bad_point || detail::lexicographically_less(x, *bad_point))) {
        bad_point = x;
        bad_condition = *violated;
      }
    };
    for (const auto& corner : box.corners()) probe(corner);
    probe(box.center());
    if (bad_point) {
      record(box, "counterexample");
      result.verdict = Verdict::counterexample;
      result.point = *bad_point;
      result.condition = bad_condition;
      return result;
    }

    if (box.max_width() <= fcfg.min_box_width) {
      const double excess = std::max({(eps - delta) - vbox.lo, change.hi - delta, stays ? 0.0 : delta});
      if (!worst || excess > worst->excess) worst = Undecided{box, excess};
      record(box, "undecided");
      continue;
    }
    record(box, "split");
    auto [left, right] = box.bisect();
    queue.insert(std::move(left));
    queue.insert(std::move(right));
  }
  if (worst) {
    result.verdict = Verdict::budget_exhausted;
    result.worst_box = worst->box;
  }
  return result;
}

inline void write_falsifier_log(std::ostream& out, const std::vector<BoxRecord>& log) {
  auto join = [](const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + csv::format(v[i]);
    return s;
  };
  out << "box_lo,box_hi,status\n";
  for (const auto& r : log) out << join(r.box.lower()) << ',' << join(r.box.upper()) << ',' << r.status << '\n';
}

/// V(x) = |x - setpoint| as relu(x - s) + relu(s - x).
inline Mlp abs_offset_lyapunov(double setpoint) {
  Layer hidden{(Eigen::MatrixXd(2, 1) << 1.0, -1.0).finished(), (Eigen::VectorXd(2) << -setpoint, setpoint).finished(),
               Activation::relu};
  Layer out{Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1), Activation::linear};
  return Mlp({hidden, out});
}

// ---------------------------------------------------------------------------
// Certificates

struct Certificate {
  Mlp v;
  OffsetLinearTransition transition;
  RiskConfig risk;
  FalsifierConfig falsifier;
  std::vector<std::string> history;  // verdict per outer iteration
  std::optional<double> c_max;
};

namespace detail {
inline std::string join_vector(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + csv::format(v[i]);
  return s;
}

inline Eigen::VectorXd parse_vector(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> values;
  std::string token;
  while (in >> token) values.push_back(csv::parse_double(token));
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}
}  // namespace detail

/// Model block, a "---" separator, then key=value metadata.
inline void write_certificate(std::ostream& out, const Certificate& cert) {
  write_model(out, cert.v);
  out << "---\n";
  out << "verdict=Verified\n";
  out << "epsilon=" << csv::format(cert.risk.epsilon) << '\n';
  out << "delta=" << csv::format(cert.falsifier.delta) << '\n';
  out << "r_min=" << csv::format(cert.risk.r_min) << '\n';
  out << "domain_lo=" << detail::join_vector(cert.risk.lo) << '\n';
  out << "domain_hi=" << detail::join_vector(cert.risk.hi) << '\n';
  out << "setpoint=" << detail::join_vector(cert.transition.setpoint) << '\n';
  const Eigen::VectorXd gain = Eigen::Map<const Eigen::VectorXd>(cert.transition.gain.data(), cert.transition.gain.size());
  out << "transition=" << cert.transition.name << '\n';
  out << "transition_gain=" << detail::join_vector(gain) << '\n';
  out << "min_box_width=" << csv::format(cert.falsifier.min_box_width) << '\n';
  out << "max_boxes=" << cert.falsifier.max_boxes << '\n';
  if (cert.c_max) out << "c_max=" << csv::format(*cert.c_max) << '\n';
  out << "outer_iterations=" << cert.history.size() << '\n';
}

inline Certificate read_certificate(std::istream& in) {
  Mlp v = read_model(in);
  std::string line;
  while (std::getline(in, line) && line != "---") {}
  detail::require(line == "---", "certificate: missing metadata block");
  std::map<std::string, std::string> meta;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    detail::require(eq != std::string::npos, "certificate: malformed metadata line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) {
    auto it = meta.find(key);
    detail::require(it != meta.end(), "certificate: missing key '" + key + "'");
    return it->second;
  };
  detail::require(get("verdict") == "Verified", "certificate: stored verdict must be Verified");
  RiskConfig risk;
  risk.epsilon = csv::parse_double(get("epsilon"));
  risk.r_min = csv::parse_double(get("r_min"));
  risk.lo = detail::parse_vector(get("domain_lo"));
  risk.hi = detail::parse_vector(get("domain_hi"));
  FalsifierConfig fal;
  fal.delta = csv::parse_double(get("delta"));
  if (meta.count("min_box_width")) fal.min_box_width = csv::parse_double(get("min_box_width"));
  if (meta.count("max_boxes")) fal.max_boxes = std::stoul(get("max_boxes"));
  OffsetLinearTransition transition;
  transition.setpoint = detail::parse_vector(get("setpoint"));
  const Eigen::VectorXd gain = detail::parse_vector(get("transition_gain"));
  const auto n = transition.setpoint.size();
  detail::require(gain.size() == n * n, "certificate: transition gain shape mismatch");
  transition.gain = Eigen::Map<const Eigen::MatrixXd>(gain.data(), n, n);
  transition.name = meta.count("transition") ? get("transition") : "linear";
  Certificate cert{std::move(v), std::move(transition), risk, fal, {}, std::nullopt};
  if (meta.count("c_max")) cert.c_max = csv::parse_double(get("c_max"));
  risk.validate();
  fal.validate();
  cert.transition.validate();
  return cert;
}

inline void save_certificate(const std::string& path, const Certificate& cert) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  write_certificate(out, cert);
}

inline Certificate load_certificate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  return read_certificate(in);
}

inline FalsifierResult verify_certificate(const Certificate& cert, std::vector<BoxRecord>* log = nullptr) {
  return falsify(cert.v, cert.transition, cert.transition.setpoint, cert.risk, cert.falsifier, log);
}

// ---------------------------------------------------------------------------
// CEGIS

struct CegisBudget {
  std::size_t max_outer = 50;
  std::size_t steps_per_round = 300;
  double learning_rate = 0.02;
  // Candidates are trained on (x - setpoint) / input_scale and folded back afterwards.
  double input_scale = 10.0;
  // Training targets V > (1 + positivity_margin) epsilon and a decrease of decrease_margin.
  double positivity_margin = 0.5;
  double decrease_margin = 0.01;
  std::size_t jitter_count = 10;
  double jitter_fraction = 0.01;
};

struct CegisFailure {
  std::string reason;
  double final_risk = 0.0;
  std::optional<Eigen::VectorXd> last_counterexample;
  std::optional<Condition> last_condition;
  std::size_t outer_iterations = 0;
};

struct CegisResult {
  std::optional<Certificate> certificate;
  std::optional<CegisFailure> failure;
  std::size_t outer_iterations = 0;
  std::vector<std::size_t> sample_counts;  // sample-set size at each outer iteration
  Mlp last_candidate;

  bool success() const { return certificate.has_value(); }
};

/// Alternates Lyapunov-risk descent with falsification, feeding counterexamples back.
/// A template that already verifies is returned without training.
inline CegisResult cegis_train(const OffsetLinearTransition& transition, const Eigen::VectorXd& setpoint,
                               const Mlp& net_template, const RiskConfig& rcfg, const FalsifierConfig& fcfg,
                               const CegisBudget& budget) {
  rcfg.validate();
  fcfg.validate();
  transition.validate();
  detail::require(budget.input_scale > 0.0, "cegis: input_scale must be positive");
  detail::require(net_template.input_dim() == setpoint.size() && net_template.output_dim() == 1,
                  "cegis: template shape mismatch");

  CegisResult result{std::nullopt, std::nullopt, 0, {}, net_template};
  std::vector<std::string> history;

  auto initial = falsify(net_template, transition, setpoint, rcfg, fcfg);
  if (initial.verified()) {
    history.push_back(to_string(initial.verdict));
    result.certificate = Certificate{net_template, transition, rcfg, fcfg, history, std::nullopt};
    return result;
  }

  const Eigen::Index dim = setpoint.size();
  const Eigen::VectorXd scale = Eigen::VectorXd::Constant(dim, budget.input_scale);
  // The template supplies the architecture and initial weights in normalized coordinates.
  Mlp inner = net_template;
  const OffsetLinearTransition inner_transition{transition.gain, Eigen::VectorXd::Zero(dim), transition.name};
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(dim);
  auto to_inner = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return (x - setpoint) / budget.input_scale; };

  std::vector<Eigen::VectorXd> samples;
  for (const auto& x : sample_domain(rcfg, setpoint)) samples.push_back(to_inner(x));

  std::mt19937_64 rng(rcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double train_eps = rcfg.epsilon * (1.0 + budget.positivity_margin);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);

  Adam opt(budget.learning_rate);
  std::optional<Eigen::VectorXd> last_cex;
  std::optional<Condition> last_condition;
  double risk = 0.0;
  for (std::size_t outer = 1; outer <= budget.max_outer; ++outer) {
    result.outer_iterations = outer;
    result.sample_counts.push_back(samples.size());
    for (std::size_t step = 0; step < budget.steps_per_round; ++step) {
      auto terms = detail::risk_terms(inner, samples, inner_transition, origin, train_eps, RiskMode::hinge,
                                      budget.decrease_margin, true);
      if (!std::isfinite(terms.risk) || !terms.gradient.all_finite())
        throw TrainingDiverged("cegis: non-finite Lyapunov risk");
      opt.step(inner, terms.gradient);
    }
    // Pin V(setpoint) = 0 through the output bias before checking.
    inner.layer(inner.depth() - 1).bias[0] -= detail::value_at(inner, origin);
    const Mlp candidate = fold_input_affine(inner, setpoint, scale);
    result.last_candidate = candidate;
    risk = detail::risk_terms(inner, samples, inner_transition, origin, rcfg.epsilon, RiskMode::hinge, 0.0, false).risk;

    const auto verdict = falsify(candidate, transition, setpoint, rcfg, fcfg);
    history.push_back(to_string(verdict.verdict));
    if (verdict.verified()) {
      result.certificate = Certificate{candidate, transition, rcfg, fcfg, history, std::nullopt};
      return result;
    }

    Eigen::VectorXd focus;
    if (verdict.verdict == Verdict::counterexample) {
      focus = verdict.point;
      last_cex = verdict.point;
      last_condition = verdict.condition;
    } else {
      focus = verdict.worst_box->center();
    }
    if (outside_exclusion(focus, setpoint, rcfg.r_min)) samples.push_back(to_inner(focus));
    const Eigen::VectorXd width = rcfg.hi - rcfg.lo;
    std::size_t added = 0;
    for (std::size_t attempt = 0; added < budget.jitter_count && attempt < 20 * budget.jitter_count; ++attempt) {
      Eigen::VectorXd x = focus;
      for (Eigen::Index i = 0; i < dim; ++i) x[i] += budget.jitter_fraction * width[i] * gauss(rng);
      if ((x.array() < rcfg.lo.array()).any() || (x.array() > rcfg.hi.array()).any()) continue;
      if (!outside_exclusion(x, setpoint, rcfg.r_min)) continue;
      samples.push_back(to_inner(x));
      ++added;
    }
  }
  result.failure = CegisFailure{"no certificate within " + std::to_string(budget.max_outer) + " outer iterations",
                                risk, last_cex, last_condition, result.outer_iterations};
  return result;
}

// ---------------------------------------------------------------------------
// Region of attraction

struct RegionOfAttraction {
  double c_max = 0.0;
  double measure = 0.0;
};

/// Largest level whose grid sublevel set stays inside the domain (the minimum of V over the
/// boundary grid nodes) and the grid measure of that sublevel set. `resolution` is the
/// number of cells per dimension.
inline RegionOfAttraction estimate_roa(const Mlp& v, const IntervalBox& domain, int resolution) {
  detail::require(resolution > 0, "estimate_roa: resolution must be positive");
  detail::require(v.input_dim() == domain.dim() && v.output_dim() == 1, "estimate_roa: shape mismatch");
  const Eigen::Index dim = domain.dim();
  const Eigen::VectorXd lo = domain.lower();
  const Eigen::VectorXd cell = (domain.upper() - lo) / static_cast<double>(resolution);

  // Boundary nodes: grid nodes with at least one coordinate on a face.
  double c_max = std::numeric_limits<double>::infinity();
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  auto advance = [&](int limit) {
    for (std::size_t d = 0; d < idx.size(); ++d) {
      if (++idx[d] <= limit) return true;
      idx[d] = 0;
    }
    return false;
  };
  do {
    bool on_face = false;
    Eigen::VectorXd x(dim);
    for (Eigen::Index d = 0; d < dim; ++d) {
      const int i = idx[static_cast<std::size_t>(d)];
      on_face = on_face || i == 0 || i == resolution;
      x[d] = i == resolution ? domain[d].hi : lo[d] + i * cell[d];
    }
    if (on_face) c_max = std::min(c_max, detail::value_at(v, x));
  } while (advance(resolution));

  std::fill(idx.begin(), idx.end(), 0);
  std::size_t inside = 0;
  do {
    Eigen::VectorXd x(dim);
    for (Eigen::Index d = 0; d < dim; ++d) x[d] = lo[d] + (idx[static_cast<std::size_t>(d)] + 0.5) * cell[d];
    if (detail::value_at(v, x) <= c_max) ++inside;
  } while (advance(resolution - 1));

  return {c_max, static_cast<double>(inside) * cell.prod()};
}

inline RegionOfAttraction estimate_roa(const Certificate& cert, int resolution) {
  return estimate_roa(cert.v, cert.risk.domain(), resolution);
}

}  // namespace safectl
