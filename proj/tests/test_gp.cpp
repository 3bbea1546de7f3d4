#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "medtraj/gp.hpp"

using namespace medtraj;

namespace {

Eigen::MatrixXd random_inputs(std::mt19937 &rng, int n, int d) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = u(rng);
  return X;
}

ExactGP random_gp(std::mt19937 &rng, int n) {
  std::uniform_real_distribution<double> u(0.3, 2.0);
  ExactGP gp;
  gp.kernel = KernelSpec::squared_exponential(u(rng), {u(rng)});
  gp.noise_variance = 0.1 + 0.2 * u(rng);
  gp.train_inputs = random_inputs(rng, n, 1);
  std::normal_distribution<double> nrm;
  gp.train_targets.resize(n);
  for (int i = 0; i < n; ++i) gp.train_targets[i] = nrm(rng);
  return gp;
}

// independent dense reference: explicit inverse via full-pivot LU
void dense_reference(const ExactGP &gp, const Eigen::MatrixXd &Xs, Eigen::VectorXd &mean,
                     Eigen::MatrixXd &cov, double &lml) {
  // same 1e-6 diagonal regularization the production path documents, solved
  // by an unrelated method (full-pivot LU inverse)
  const Eigen::MatrixXd K = gram_matrix(gp.kernel, gp.train_inputs, gp.train_inputs) +
                            (gp.noise_variance + 1e-6) *
                                Eigen::MatrixXd::Identity(gp.train_inputs.rows(),
                                                          gp.train_inputs.rows());
  const Eigen::MatrixXd Kinv = K.fullPivLu().inverse();
  const Eigen::MatrixXd Ks = gram_matrix(gp.kernel, Xs, gp.train_inputs);
  const Eigen::MatrixXd Kss = gram_matrix(gp.kernel, Xs, Xs);
  mean = Ks * Kinv * gp.train_targets;
  cov = Kss - Ks * Kinv * Ks.transpose();
  const double n = static_cast<double>(gp.train_inputs.rows());
  lml = -0.5 * gp.train_targets.dot(Kinv * gp.train_targets) -
        0.5 * std::log(K.fullPivLu().determinant()) - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("prior recovery and noiseless interpolation") {
  ExactGP gp;
  gp.kernel = KernelSpec::squared_exponential(1.0, {1.0});
  gp.train_inputs.resize(0, 1);
  gp.train_targets.resize(0);
  const auto prior = exact_posterior(gp, Eigen::MatrixXd::Zero(1, 1));
  CHECK(prior.mean[0] == doctest::Approx(0.0));
  CHECK(prior.cov(0, 0) == doctest::Approx(1.0));
  CHECK(log_marginal_likelihood(gp) == doctest::Approx(0.0));

  gp.train_inputs = Eigen::MatrixXd::Zero(1, 1);
  gp.train_targets = Eigen::VectorXd::Constant(1, 2.0);
  gp.noise_variance = 0.0;
  const auto post = exact_posterior(gp, Eigen::MatrixXd::Zero(1, 1));
  CHECK(post.mean[0] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(post.cov(0, 0) == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("scalar marginal likelihood closed forms") {
  ExactGP gp;
  gp.kernel = KernelSpec::constant(0.5);
  gp.noise_variance = 0.5;  // K + sigma^2 = 1
  gp.train_inputs = Eigen::MatrixXd::Zero(1, 1);
  gp.train_targets = Eigen::VectorXd::Zero(1);
  CHECK(log_marginal_likelihood(gp) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-6));
  gp.train_targets[0] = 1.0;
  CHECK(log_marginal_likelihood(gp) ==
        doctest::Approx(-0.5 - 0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-6));
}

TEST_CASE("dense-solve oracle agreement, 50 random instances") {
  std::mt19937 rng(17);
  std::uniform_int_distribution<int> size(1, 20);
  for (int t = 0; t < 50; ++t) {
    const auto gp = random_gp(rng, size(rng));
    const auto Xs = random_inputs(rng, 3, 1);
    Eigen::VectorXd mean_ref;
    Eigen::MatrixXd cov_ref;
    double lml_ref;
    dense_reference(gp, Xs, mean_ref, cov_ref, lml_ref);
    const auto post = exact_posterior(gp, Xs);
    CHECK((post.mean - mean_ref).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post.cov - cov_ref).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(log_marginal_likelihood(gp) == doctest::Approx(lml_ref).epsilon(1e-8));
    CHECK(post.cov.diagonal().minCoeff() > -1e-8);
  }
}

TEST_CASE("lml gradient matches finite differences (log domain)") {
  std::mt19937 rng(23);
  const std::vector<std::string> names = {"variance", "lengthscale_0", "noise_variance"};
  for (int t = 0; t < 20; ++t) {
    ExactGP gp = random_gp(rng, 8);
    const Eigen::VectorXd grad = lml_gradient(gp, names);
    for (std::size_t p = 0; p < names.size(); ++p) {
      const double h = 1e-5;
      auto eval_at = [&](double log_shift) {
        ExactGP g = gp;
        if (names[p] == "noise_variance")
          g.noise_variance = gp.noise_variance * std::exp(log_shift);
        else
          kernel_param_set(g.kernel, names[p],
                           kernel_param_get(gp.kernel, names[p]) * std::exp(log_shift));
        return log_marginal_likelihood(g);
      };
      const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      CHECK(grad[static_cast<Eigen::Index>(p)] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("sparse conditional identities and dense oracle") {
  std::mt19937 rng(29);
  Eigen::MatrixXd X(5, 1);
  X << -2.0, -1.0, 0.0, 1.0, 2.0;  // well separated, keeps K_xx well conditioned
  const auto kernel = KernelSpec::squared_exponential(1.2, {0.8});
  const Eigen::MatrixXd Kxx = gram_matrix(kernel, X, X);

  SparseGP prior_sgp{kernel, X, Eigen::VectorXd::Zero(5), Kxx};
  const auto prior = sparse_conditional(prior_sgp, X);
  CHECK(prior.mean.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((prior.cov - Kxx).cwiseAbs().maxCoeff() < 1e-6);

  Eigen::VectorXd u(5);
  u << 1.0, -0.5, 0.2, 0.7, -1.1;
  SparseGP det_sgp{kernel, X, u, Eigen::MatrixXd::Zero(5, 5)};
  const auto det = sparse_conditional(det_sgp, X);
  CHECK((det.mean - u).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(det.cov.cwiseAbs().maxCoeff() < 1e-4);

  // M=2 < n=5: direct matrix-algebra oracle
  const auto Z = random_inputs(rng, 2, 1);
  Eigen::VectorXd mu(2);
  mu << 0.4, -0.3;
  Eigen::MatrixXd S(2, 2);
  S << 0.5, 0.1, 0.1, 0.3;
  SparseGP sgp{kernel, Z, mu, S};
  const auto got = sparse_conditional(sgp, X);
  const Eigen::MatrixXd Kzz = gram_matrix(kernel, Z, Z) + 1e-6 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd Kzi = Kzz.fullPivLu().inverse();
  const Eigen::MatrixXd Kxz = gram_matrix(kernel, X, Z);
  const Eigen::VectorXd mean_ref = Kxz * Kzi * mu;
  const Eigen::MatrixXd cov_ref = Kxx - Kxz * Kzi * (Kzz - S) * Kzi * Kxz.transpose();
  CHECK((got.mean - mean_ref).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((got.cov - cov_ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("KL closed forms") {
  const Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  CHECK(kl_gaussians(Eigen::VectorXd::Zero(2), I2, Eigen::VectorXd::Zero(2), I2) ==
        doctest::Approx(0.0).epsilon(1e-10));
  Eigen::VectorXd m(2);
  m << 1.0, 0.0;
  CHECK(kl_gaussians(m, I2, Eigen::VectorXd::Zero(2), I2) == doctest::Approx(0.5).epsilon(1e-5));
  const Eigen::MatrixXd S0 = Eigen::MatrixXd::Constant(1, 1, 4.0);
  const Eigen::MatrixXd S1 = Eigen::MatrixXd::Constant(1, 1, 1.0);
  CHECK(kl_gaussians(Eigen::VectorXd::Zero(1), S0, Eigen::VectorXd::Zero(1), S1) ==
        doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-5));
}

TEST_CASE("maximize contracts") {
  Objective quad = [](const Eigen::VectorXd &x, Eigen::VectorXd &g) {
    g.resize(1);
    g[0] = -2.0 * (x[0] - 3.0);
    return -(x[0] - 3.0) * (x[0] - 3.0);
  };
  const auto res = maximize(quad, Eigen::VectorXd::Zero(1), 500, 1e-10);
  CHECK(std::abs(res.x[0] - 3.0) < 1e-3);
  for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] >= res.trace[i - 1]);

  const auto noop = maximize(quad, Eigen::VectorXd::Zero(1), 0, 1e-10);
  CHECK(noop.x[0] == 0.0);
}

TEST_CASE("monotone information: extra training point never raises variance") {
  std::mt19937 rng(31);
  for (int t = 0; t < 50; ++t) {
    ExactGP gp = random_gp(rng, 6);
    const auto Xs = random_inputs(rng, 4, 1);
    const auto before = exact_posterior(gp, Xs);
    ExactGP gp2 = gp;
    gp2.train_inputs.conservativeResize(7, 1);
    gp2.train_inputs(6, 0) = random_inputs(rng, 1, 1)(0, 0);
    gp2.train_targets.conservativeResize(7);
    gp2.train_targets[6] = 0.3;
    const auto after = exact_posterior(gp2, Xs);
    for (int i = 0; i < 4; ++i) CHECK(after.cov(i, i) <= before.cov(i, i) + 1e-8);
  }
}

TEST_CASE("jitter ladder recovers near-singular systems") {
  Eigen::MatrixXd K = Eigen::MatrixXd::Ones(3, 3);  // rank 1
  CHECK_NOTHROW(chol_with_jitter(K));
  Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(chol_with_jitter(bad), std::runtime_error);
}
