#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "safectl/neural.hpp"
#include "test_support.hpp"

using namespace safectl;
using safectl::testing::random_net;
using safectl::testing::random_vector;
using safectl::testing::single_linear;
using safectl::testing::vec;

namespace {

// Central finite-difference oracle for d(upstream . forward)/d(param).
double fd_partial(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& upstream, std::size_t layer,
                  bool is_bias, Eigen::Index index, double h = 1e-5) {
  auto eval = [&](double delta) {
    Mlp copy = net;
    auto& l = copy.layer(layer);
    if (is_bias)
      l.bias[index] += delta;
    else
      l.weights.data()[index] += delta;
    return upstream.dot(forward(copy, x));
  };
  return (eval(h) - eval(-h)) / (2.0 * h);
}

// Largest singular value from the eigenvalues of W^T W.
double svd_oracle(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.transpose() * w);
  return std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
}

}  // namespace

TEST(Forward, HandEvaluatedExamples) {
  EXPECT_DOUBLE_EQ(forward(single_linear(2.0, 1.0), vec({3.0}))[0], 7.0);

  Mlp zero_sigmoid({Layer{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1), Activation::sigmoid}});
  EXPECT_DOUBLE_EQ(forward(zero_sigmoid, vec({4.0, -9.0}))[0], 0.5);

  Mlp identity({Layer{Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), Activation::linear}});
  const auto x = vec({1.5, -2.0, 0.25});
  EXPECT_EQ(forward(identity, x), x);
}

TEST(Forward, DimensionMismatch) {
  EXPECT_THROW(forward(single_linear(1, 0), vec({1.0, 2.0})), DomainError);
}

TEST(Mlp, RejectsBrokenChains) {
  std::vector<Layer> layers{
      Layer{Eigen::MatrixXd::Ones(3, 2), Eigen::VectorXd::Zero(3), Activation::tanh},
      Layer{Eigen::MatrixXd::Ones(1, 4), Eigen::VectorXd::Zero(1), Activation::linear},
  };
  EXPECT_THROW(Mlp{layers}, DomainError);
  layers[1].weights = Eigen::MatrixXd::Ones(1, 3);
  layers[1].weights(0, 0) = std::nan("");
  EXPECT_THROW(Mlp{layers}, DomainError);
}

TEST(Mlp, RandomInitIsSeededAndScaled) {
  const int sizes[] = {4, 6, 1};
  const Activation acts[] = {Activation::sigmoid, Activation::linear};
  const auto a = Mlp::random(sizes, acts, 7);
  const auto b = Mlp::random(sizes, acts, 7);
  EXPECT_EQ(a.layer(0).weights, b.layer(0).weights);
  EXPECT_LE(a.layer(0).weights.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(a.layer(1).weights.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(6.0));
}

TEST(Backward, LinearAnalytic) {
  const auto g = backward(single_linear(2.0, 1.0), vec({3.0}), vec({1.0}));
  EXPECT_DOUBLE_EQ(g.weights[0](0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.biases[0][0], 1.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const auto net = random_net(rng);
  const auto g = backward(net, random_vector(rng, net.input_dim()), Eigen::VectorXd::Zero(net.output_dim()));
  for (std::size_t l = 0; l < net.depth(); ++l) {
    EXPECT_TRUE(g.weights[l].isZero(0.0));
    EXPECT_TRUE(g.biases[l].isZero(0.0));
  }
}

TEST(Backward, DimensionMismatch) {
  EXPECT_THROW(backward(single_linear(1, 0), vec({1.0}), vec({1.0, 1.0})), DomainError);
}

TEST(Backward, TwoLayerSigmoidMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  const int sizes[] = {3, 4, 2};
  const Activation acts[] = {Activation::sigmoid, Activation::sigmoid};
  const auto net = Mlp::random(sizes, acts, 99);
  const auto x = random_vector(rng, 3);
  const auto up = random_vector(rng, 2);
  const auto g = backward(net, x, up);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    for (Eigen::Index i = 0; i < g.weights[l].size(); ++i)
      EXPECT_NEAR(g.weights[l].data()[i], fd_partial(net, x, up, l, false, i), 1e-9);
    for (Eigen::Index i = 0; i < g.biases[l].size(); ++i)
      EXPECT_NEAR(g.biases[l][i], fd_partial(net, x, up, l, true, i), 1e-9);
  }
}

// 100 random architectures; relative error against central differences.
TEST(Backward, PropertyMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = random_net(rng);
    const auto x = random_vector(rng, net.input_dim());
    const auto up = random_vector(rng, net.output_dim());
    const auto g = backward(net, x, up);
    for (std::size_t l = 0; l < net.depth(); ++l) {
      for (int bias = 0; bias < 2; ++bias) {
        const Eigen::Index n = bias ? g.biases[l].size() : g.weights[l].size();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double analytic = bias ? g.biases[l][i] : g.weights[l].data()[i];
          const double numeric = fd_partial(net, x, up, l, bias != 0, i);
          EXPECT_LE(std::abs(analytic - numeric), 1e-5 * std::max(1.0, std::abs(numeric)))
              << "trial " << trial << " layer " << l;
        }
      }
    }
  }
}

TEST(SpectralNorm, Examples) {
  EXPECT_NEAR(spectral_norm(Eigen::MatrixXd::Identity(4, 4)), 1.0, 1e-12);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  EXPECT_NEAR(spectral_norm(d), 3.0, 1e-10);
  const auto u = vec({1.0, 2.0, -2.0});
  const auto v = vec({0.5, -1.5});
  EXPECT_NEAR(spectral_norm(u * v.transpose()), u.norm() * v.norm(), 1e-12);
}

TEST(SpectralNorm, Errors) {
  EXPECT_THROW(spectral_norm(Eigen::MatrixXd(0, 0)), DomainError);
  EXPECT_THROW(spectral_norm(Eigen::MatrixXd::Identity(2, 2), 0), DomainError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(1, 0) = INFINITY;
  EXPECT_THROW(spectral_norm(bad), DomainError);
  EXPECT_EQ(spectral_norm(Eigen::MatrixXd::Zero(3, 2)), 0.0);
}

TEST(SpectralNorm, AgreesWithEigenDecompositionOracle) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 8);
  std::normal_distribution<double> entry(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd w(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = entry(rng);
    const double oracle = svd_oracle(w);
    EXPECT_NEAR(spectral_norm(w, 20000, 1e-16), oracle, 1e-8 * std::max(1.0, oracle)) << w;
  }
}

TEST(SpectralNorm, WarmStartConvergesImmediately) {
  Eigen::MatrixXd w(2, 2);
  w << 2, 1, 0, 1;
  Eigen::VectorXd warm;
  const double first = spectral_norm(w, 500, 1e-14, &warm);
  const double second = spectral_norm(w, 2, 1e-14, &warm);
  EXPECT_NEAR(first, second, 1e-12);
}

TEST(LipschitzBound, Examples) {
  Mlp identity({Layer{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), Activation::linear}});
  EXPECT_NEAR(lipschitz_bound(identity), 1.0, 1e-12);

  Mlp composed({Layer{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1), Activation::sigmoid},
                Layer{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1), Activation::linear}});
  EXPECT_NEAR(lipschitz_bound(composed), 1.0, 1e-12);
}

TEST(NormalizeLipschitz, Examples) {
  Mlp small({Layer{Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::VectorXd::Constant(1, 3.0), Activation::linear}});
  const auto same = normalize_lipschitz(small, 1.0);
  EXPECT_EQ(same.layer(0).weights, small.layer(0).weights);

  const auto scaled = normalize_lipschitz(single_linear(3.0, 1.0), 1.0);
  EXPECT_NEAR(scaled.layer(0).weights(0, 0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(scaled.layer(0).bias[0], 1.0);

  Mlp two({Layer{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1), Activation::linear},
           Layer{Eigen::MatrixXd::Constant(1, 1, -2.0), Eigen::VectorXd::Zero(1), Activation::linear}});
  const auto halved = normalize_lipschitz(two, 1.0);
  EXPECT_NEAR(halved.layer(0).weights(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(halved.layer(1).weights(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(lipschitz_bound(halved), 1.0, 1e-12);

  EXPECT_THROW(normalize_lipschitz(two, 0.0), DomainError);
}

TEST(NormalizeLipschitz, PostconditionOnRandomNets) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> gamma(0.05, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = random_net(rng, 6, 3);
    const double g = gamma(rng);
    EXPECT_LE(lipschitz_bound(normalize_lipschitz(net, g)), g * (1.0 + 1e-9));
  }
}

TEST(LipschitzBound, SoundOnSampledPairs) {
  std::mt19937_64 rng(31);
  for (int n = 0; n < 10; ++n) {
    const auto net = random_net(rng, 5, 3);
    const double bound = lipschitz_bound(net);
    for (int pair = 0; pair < 1000; ++pair) {
      const auto x = random_vector(rng, net.input_dim(), -3, 3);
      const auto y = random_vector(rng, net.input_dim(), -3, 3);
      EXPECT_LE((forward(net, x) - forward(net, y)).norm(), bound * (x - y).norm() * (1 + 1e-9) + 1e-15);
    }
  }
}

TEST(LipschitzBound, WithRespectToSingleInput) {
  Mlp net({Layer{(Eigen::MatrixXd(1, 2) << 0.0, 43.0).finished(), Eigen::VectorXd::Zero(1), Activation::linear}});
  EXPECT_NEAR(lipschitz_bound_wrt_input(net, 1), 43.0, 1e-12);
  EXPECT_NEAR(lipschitz_bound_wrt_input(net, 0), 0.0, 1e-12);
}

TEST(InputFolding, FoldAndUnfoldAreInverse) {
  std::mt19937_64 rng(4);
  const auto net = random_net(rng);
  const auto shift = random_vector(rng, net.input_dim(), -100, 100);
  const Eigen::VectorXd scale = random_vector(rng, net.input_dim(), 0.5, 50);
  const auto folded = fold_input_affine(net, shift, scale);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_vector(rng, net.input_dim(), -100, 100);
    const Eigen::VectorXd z = (x - shift).cwiseQuotient(scale);
    EXPECT_TRUE(forward(folded, x).isApprox(forward(net, z), 1e-10));
  }
  const auto back = unfold_input_affine(folded, shift, scale);
  EXPECT_TRUE(back.layer(0).weights.isApprox(net.layer(0).weights, 1e-12));
  EXPECT_TRUE(back.layer(0).bias.isApprox(net.layer(0).bias, 1e-10));
}

TEST(ModelFile, RoundTripPreservesEveryBit) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = random_net(rng);
    std::stringstream buffer;
    write_model(buffer, net);
    const auto back = read_model(buffer);
    ASSERT_EQ(back.depth(), net.depth());
    for (std::size_t l = 0; l < net.depth(); ++l) {
      EXPECT_EQ(back.layer(l).weights, net.layer(l).weights);
      EXPECT_EQ(back.layer(l).bias, net.layer(l).bias);
      EXPECT_EQ(back.layer(l).activation, net.layer(l).activation);
    }
  }
}

TEST(ModelFile, HeaderFormat) {
  std::stringstream buffer;
  write_model(buffer, single_linear(2.0, 1.0));
  EXPECT_EQ(buffer.str(), "layers=1\n1 1 linear\n2\n1\n");
  std::stringstream bad("layer=1\n");
  EXPECT_THROW(read_model(bad), DomainError);
}

TEST(Adam, DescendsAQuadratic) {
  auto net = single_linear(5.0, -3.0);
  Adam opt(0.05);
  for (int i = 0; i < 2000; ++i) {
    // loss = (w*1 + b - 2)^2
    const double err = forward(net, vec({1.0}))[0] - 2.0;
    opt.step(net, backward(net, vec({1.0}), vec({2.0 * err})));
  }
  EXPECT_NEAR(forward(net, vec({1.0}))[0], 2.0, 1e-3);
}
