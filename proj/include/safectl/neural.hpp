#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"

namespace safectl {

enum class Activation { sigmoid, tanh, relu, linear };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "linear") return Activation::linear;
  throw DomainError("unknown activation '" + name + "'");
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::linear: return z;
  }
  return z;
}

/// d activation / dz, expressed through the pre-activation z.
inline double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::linear: return 1.0;
  }
  return 1.0;
}

/// Sharp global Lipschitz constant of the scalar activation.
inline double activation_lipschitz(Activation a) { return a == Activation::sigmoid ? 0.25 : 1.0; }

struct Layer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  Activation activation = Activation::linear;
};

/// Feedforward network; each layer computes activation(W x + b).
class Mlp {
 public:
  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static Mlp random(std::span<const int> sizes, std::span<const Activation> activations, std::uint64_t seed) {
    detail::require(sizes.size() >= 2, "mlp: need input and output sizes");
    detail::require(activations.size() + 1 == sizes.size(), "mlp: one activation per layer");
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      detail::require(sizes[l] > 0 && sizes[l + 1] > 0, "mlp: layer sizes must be positive");
      const double r = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      std::uniform_real_distribution<double> dist(-r, r);
      Layer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd(sizes[l + 1]), activations[l]};
      for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) layer.weights(i, j) = dist(rng);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = dist(rng);
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  Eigen::Index input_dim() const { return layers_.front().weights.cols(); }
  Eigen::Index output_dim() const { return layers_.back().weights.rows(); }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  // Mutable access for optimizers that own a private copy.
  Layer& layer(std::size_t i) { return layers_[i]; }

  void validate() const {
    detail::require(!layers_.empty(), "mlp: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      detail::require(layer.weights.rows() > 0 && layer.weights.cols() > 0, "mlp: empty weight matrix");
      detail::require(layer.bias.size() == layer.weights.rows(), "mlp: bias size mismatch");
      detail::require(layer.weights.allFinite() && layer.bias.allFinite(), "mlp: non-finite parameter");
      if (l > 0)
        detail::require(layer.weights.cols() == layers_[l - 1].weights.rows(),
                        "mlp: consecutive layer dimensions do not chain");
    }
  }

 private:
  std::vector<Layer> layers_;
};

/// Parameter-shaped container of partial derivatives.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& layer : net.layers()) {
      g.weights.push_back(Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()));
      g.biases.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
    }
    return g;
  }

  Gradients& add(const Gradients& other, double scale = 1.0) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += scale * other.weights[l];
      biases[l] += scale * other.biases[l];
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }
};

namespace detail {
struct ForwardCache {
  std::vector<Eigen::VectorXd> inputs;       // input to each layer
  std::vector<Eigen::VectorXd> preactivation;
};

inline Eigen::VectorXd forward_cached(const Mlp& net, const Eigen::VectorXd& x, ForwardCache* cache) {
  require(x.size() == net.input_dim(), "forward: input dimension mismatch");
  Eigen::VectorXd a = x;
  for (const auto& layer : net.layers()) {
    Eigen::VectorXd z = layer.weights * a + layer.bias;
    if (cache) {
      cache->inputs.push_back(a);
      cache->preactivation.push_back(z);
    }
    a = z.unaryExpr([&](double v) { return activate(layer.activation, v); });
  }
  return a;
}
}  // namespace detail

inline Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x) {
  return detail::forward_cached(net, x, nullptr);
}

inline double forward_scalar(const Mlp& net, double x) {
  return forward(net, Eigen::VectorXd::Constant(1, x))[0];
}

/// Reverse-mode partials of upstream · forward(net, x) with respect to all parameters.
inline Gradients backward(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& upstream,
                          Eigen::VectorXd* input_gradient = nullptr) {
  detail::require(upstream.size() == net.output_dim(), "backward: upstream dimension mismatch");
  detail::ForwardCache cache;
  detail::forward_cached(net, x, &cache);
  Gradients g = Gradients::zeros_like(net);
  Eigen::VectorXd delta = upstream;
  for (std::size_t l = net.depth(); l-- > 0;) {
    const auto& layer = net.layer(l);
    const auto& z = cache.preactivation[l];
    for (Eigen::Index i = 0; i < z.size(); ++i) delta[i] *= activate_derivative(layer.activation, z[i]);
    g.weights[l] = delta * cache.inputs[l].transpose();
    g.biases[l] = delta;
    delta = layer.weights.transpose() * delta;
  }
  if (input_gradient) *input_gradient = delta;
  return g;
}

/// Largest singular value by power iteration on W^T W. `warm` carries the right singular
/// vector estimate between calls.
inline double spectral_norm(const Eigen::MatrixXd& w, int iters = 50, double tol = 1e-10,
                            Eigen::VectorXd* warm = nullptr) {
  detail::require(w.size() > 0, "spectral_norm: empty matrix");
  detail::require(iters >= 1, "spectral_norm: iters must be >= 1");
  detail::require(w.allFinite(), "spectral_norm: non-finite entries");
  if (w.isZero(0.0)) return 0.0;

  Eigen::VectorXd v;
  if (warm && warm->size() == w.cols() && warm->norm() > 0.0) {
    v = warm->normalized();
  } else {
    v.resize(w.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.37 * static_cast<double>(i % 7) / 7.0;
    v.normalize();
  }
  if ((w * v).norm() == 0.0) {
    // Start vector in the null space; fall back to the column of largest norm.
    Eigen::Index best = 0;
    w.colwise().norm().maxCoeff(&best);
    v = Eigen::VectorXd::Unit(w.cols(), best);
  }

  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd u = (w * v).normalized();
    Eigen::VectorXd next = w.transpose() * u;
    const double estimate = next.norm();
    v = next / estimate;
    const bool converged = it > 0 && std::abs(estimate - sigma) <= tol * estimate;
    sigma = estimate;
    if (converged) break;
  }
  if (warm) *warm = v;
  return sigma;
}

/// Product of per-layer spectral norms and activation constants.
inline double lipschitz_bound(const Mlp& net, std::vector<Eigen::VectorXd>* warm = nullptr) {
  if (warm) warm->resize(net.depth());
  double bound = 1.0;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& layer = net.layer(l);
    bound *= spectral_norm(layer.weights, 50, 1e-10, warm ? &(*warm)[l] : nullptr) *
             activation_lipschitz(layer.activation);
  }
  return bound;
}

/// Bound on the Lipschitz constant with respect to a single input coordinate.
inline double lipschitz_bound_wrt_input(const Mlp& net, Eigen::Index input) {
  detail::require(input >= 0 && input < net.input_dim(), "lipschitz_bound_wrt_input: bad input index");
  double bound = net.layer(0).weights.col(input).norm() * activation_lipschitz(net.layer(0).activation);
  for (std::size_t l = 1; l < net.depth(); ++l)
    bound *= spectral_norm(net.layer(l).weights) * activation_lipschitz(net.layer(l).activation);
  return bound;
}

/// Scales every weight matrix by the same factor so the bound does not exceed gamma.
inline Mlp normalize_lipschitz(const Mlp& net, double gamma, std::vector<Eigen::VectorXd>* warm = nullptr) {
  detail::require(gamma > 0.0, "normalize_lipschitz: gamma must be positive");
  const double bound = lipschitz_bound(net, warm);
  if (bound <= gamma) return net;
  const double factor = std::pow(gamma / bound, 1.0 / static_cast<double>(net.depth()));
  Mlp scaled = net;
  for (std::size_t l = 0; l < scaled.depth(); ++l) scaled.layer(l).weights *= factor;
  return scaled;
}

/// net'(x) = net((x - shift) ./ scale), folded into the first layer.
inline Mlp fold_input_affine(const Mlp& net, const Eigen::VectorXd& shift, const Eigen::VectorXd& scale) {
  detail::require(shift.size() == net.input_dim() && scale.size() == net.input_dim(),
                  "fold_input_affine: dimension mismatch");
  Mlp folded = net;
  auto& first = folded.layer(0);
  const Eigen::MatrixXd w = first.weights * scale.cwiseInverse().asDiagonal();
  first.bias -= w * shift;
  first.weights = w;
  return folded;
}

/// Inverse of fold_input_affine.
inline Mlp unfold_input_affine(const Mlp& net, const Eigen::VectorXd& shift, const Eigen::VectorXd& scale) {
  detail::require(shift.size() == net.input_dim() && scale.size() == net.input_dim(),
                  "unfold_input_affine: dimension mismatch");
  Mlp inner = net;
  auto& first = inner.layer(0);
  first.bias += first.weights * shift;
  first.weights = first.weights * scale.asDiagonal();
  return inner;
}

/// Adam over all network parameters.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    detail::require(learning_rate > 0.0, "adam: learning rate must be positive");
  }

  void step(Mlp& net, const Gradients& grad) {
    if (m_.weights.empty()) {
      m_ = Gradients::zeros_like(net);
      v_ = Gradients::zeros_like(net);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < net.depth(); ++l) {
      update(net.layer(l).weights, m_.weights[l], v_.weights[l], grad.weights[l]);
      update(net.layer(l).bias, m_.biases[l], v_.biases[l], grad.biases[l]);
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Gradients m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Model file: "layers=<n>", then per layer "rows cols activation", the weight rows,
// and one line of biases.

inline void write_model(std::ostream& out, const Mlp& net) {
  out << "layers=" << net.depth() << '\n';
  for (const auto& layer : net.layers()) {
    out << layer.weights.rows() << ' ' << layer.weights.cols() << ' ' << to_string(layer.activation) << '\n';
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        out << (j ? " " : "") << csv::format(layer.weights(i, j));
      out << '\n';
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) out << (i ? " " : "") << csv::format(layer.bias[i]);
    out << '\n';
  }
}

inline Mlp read_model(std::istream& in) {
  std::string header;
  while (std::getline(in, header) && header.empty()) {}
  detail::require(header.rfind("layers=", 0) == 0, "model file: expected 'layers=<n>'");
  const int n = std::stoi(header.substr(7));
  detail::require(n >= 1, "model file: layer count must be positive");
  std::vector<Layer> layers;
  for (int l = 0; l < n; ++l) {
    Eigen::Index rows = 0, cols = 0;
    std::string act;
    detail::require(static_cast<bool>(in >> rows >> cols >> act), "model file: bad layer header");
    detail::require(rows > 0 && cols > 0, "model file: bad layer shape");
    Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows), parse_activation(act)};
    std::string token;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        detail::require(static_cast<bool>(in >> token), "model file: truncated weights");
        layer.weights(i, j) = csv::parse_double(token);
      }
    for (Eigen::Index i = 0; i < rows; ++i) {
      detail::require(static_cast<bool>(in >> token), "model file: truncated biases");
      layer.bias[i] = csv::parse_double(token);
    }
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

inline void save_model(const std::string& path, const Mlp& net) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  write_model(out, net);
}

inline Mlp load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  return read_model(in);
}

}  // namespace safectl
