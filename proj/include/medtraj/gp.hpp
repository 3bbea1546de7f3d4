#ifndef MEDTRAJ_GP_HPP
#define MEDTRAJ_GP_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "medtraj/kernels.hpp"

namespace medtraj {

/// Zero-mean exact GP with Gaussian observation noise.
struct ExactGP {
  KernelSpec kernel;
  double noise_variance = 0.0;
  Eigen::MatrixXd train_inputs;   // n x d
  Eigen::VectorXd train_targets;  // n
};

/// Sparse variational GP: q(u) = N(m_u, S_u) at inducing inputs Z.
struct SparseGP {
  KernelSpec kernel;
  Eigen::MatrixXd inducing_inputs;   // M x d
  Eigen::VectorXd variational_mean;  // M
  Eigen::MatrixXd variational_cov;   // M x M, symmetric PSD
};

struct Posterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Cholesky with the jitter escalation ladder 1e-6 -> 1e-4 -> 1e-2.
/// Throws std::runtime_error if the last rung still fails.
Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(Eigen::MatrixXd K);

Posterior exact_posterior(const ExactGP &gp, const Eigen::MatrixXd &test_inputs);

double log_marginal_likelihood(const ExactGP &gp);

/// Gradient of log_marginal_likelihood in the log-domain parameterization,
/// one component per name. Names are kernel parameter paths or "noise_variance".
Eigen::VectorXd lml_gradient(const ExactGP &gp, const std::vector<std::string> &names);

Posterior sparse_conditional(const SparseGP &sgp, const Eigen::MatrixXd &X);

double kl_gaussians(const Eigen::VectorXd &m0, const Eigen::MatrixXd &S0,
                    const Eigen::VectorXd &m1, const Eigen::MatrixXd &S1);

/// Objective returns the value and fills grad (same size as x).
using Objective = std::function<double(const Eigen::VectorXd &x, Eigen::VectorXd &grad)>;

struct AscentResult {
  Eigen::VectorXd x;
  std::vector<double> trace;  // objective value per accepted step, non-decreasing
};

/// Gradient ascent with backtracking (halving) line search, Armijo c = 1e-4.
AscentResult maximize(const Objective &objective, const Eigen::VectorXd &x0, int max_iters = 500,
                      double tol = 1e-6);

/// Central finite differences, used by fitting code where an analytic gradient
/// is not worth the bookkeeping.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd &)> &f,
                            const Eigen::VectorXd &x, double h = 1e-5);

}  // namespace medtraj

#endif
