#include "medtraj/gp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace medtraj {

Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(Eigen::MatrixXd K) {
  const double ladder[] = {1e-6, 1e-4, 1e-2};
  const Eigen::Index n = K.rows();
  for (double jitter : ladder) {
    Eigen::MatrixXd Kj = K + jitter * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(Kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw std::runtime_error("Cholesky factorization failed after jitter escalation");
}

Posterior exact_posterior(const ExactGP &gp, const Eigen::MatrixXd &test_inputs) {
  Posterior post;
  const Eigen::Index n = gp.train_inputs.rows();
  const Eigen::MatrixXd Kss = gram_matrix(gp.kernel, test_inputs, test_inputs);
  if (n == 0) {
    post.mean = Eigen::VectorXd::Zero(test_inputs.rows());
    post.cov = Kss;
    return post;
  }
  if (gp.train_targets.size() != n)
    throw std::invalid_argument("exact_posterior: inputs/targets length mismatch");
  Eigen::MatrixXd Kxx = gram_matrix(gp.kernel, gp.train_inputs, gp.train_inputs);
  Kxx.diagonal().array() += gp.noise_variance;
  const auto llt = chol_with_jitter(std::move(Kxx));
  const Eigen::MatrixXd Ksx = gram_matrix(gp.kernel, test_inputs, gp.train_inputs);
  const Eigen::VectorXd alpha = llt.solve(gp.train_targets);
  post.mean = Ksx * alpha;
  post.cov = Kss - Ksx * llt.solve(Ksx.transpose());
  // keep it numerically symmetric
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  return post;
}

double log_marginal_likelihood(const ExactGP &gp) {
  const Eigen::Index n = gp.train_inputs.rows();
  if (n == 0) return 0.0;
  Eigen::MatrixXd Kxx = gram_matrix(gp.kernel, gp.train_inputs, gp.train_inputs);
  Kxx.diagonal().array() += gp.noise_variance;
  const auto llt = chol_with_jitter(std::move(Kxx));
  const Eigen::VectorXd alpha = llt.solve(gp.train_targets);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * gp.train_targets.dot(alpha) - 0.5 * logdet -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd lml_gradient(const ExactGP &gp, const std::vector<std::string> &names) {
  const Eigen::Index n = gp.train_inputs.rows();
  Eigen::VectorXd grad(static_cast<Eigen::Index>(names.size()));
  if (n == 0) {
    grad.setZero();
    return grad;
  }
  Eigen::MatrixXd Kxx = gram_matrix(gp.kernel, gp.train_inputs, gp.train_inputs);
  Kxx.diagonal().array() += gp.noise_variance;
  const auto llt = chol_with_jitter(std::move(Kxx));
  const Eigen::VectorXd alpha = llt.solve(gp.train_targets);
  const Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  // dL/dtheta = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta); log-domain scales by theta.
  const Eigen::MatrixXd W = alpha * alpha.transpose() - Kinv;
  for (std::size_t p = 0; p < names.size(); ++p) {
    const std::string &name = names[p];
    double raw, theta;
    if (name == "noise_variance") {
      raw = 0.5 * W.trace();
      theta = gp.noise_variance;
    } else {
      const Eigen::MatrixXd dK = gram_grad(gp.kernel, gp.train_inputs, gp.train_inputs, name);
      raw = 0.5 * (W.cwiseProduct(dK)).sum();
      theta = kernel_param_get(gp.kernel, name);
    }
    grad[static_cast<Eigen::Index>(p)] = raw * theta;
  }
  return grad;
}

Posterior sparse_conditional(const SparseGP &sgp, const Eigen::MatrixXd &X) {
  const Eigen::Index m = sgp.inducing_inputs.rows();
  if (m < 1) throw std::invalid_argument("sparse_conditional: need at least one inducing point");
  const Eigen::MatrixXd Kzz = gram_matrix(sgp.kernel, sgp.inducing_inputs, sgp.inducing_inputs);
  const auto llt = chol_with_jitter(Kzz);
  const Eigen::MatrixXd Kxz = gram_matrix(sgp.kernel, X, sgp.inducing_inputs);
  const Eigen::MatrixXd Kxx = gram_matrix(sgp.kernel, X, X);
  const Eigen::MatrixXd A = llt.solve(Kxz.transpose());  // Kzz^-1 Kzx, m x n
  Posterior post;
  post.mean = A.transpose() * sgp.variational_mean;
  post.cov = Kxx - A.transpose() * (Kzz - sgp.variational_cov) * A;
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  return post;
}

double kl_gaussians(const Eigen::VectorXd &m0, const Eigen::MatrixXd &S0,
                    const Eigen::VectorXd &m1, const Eigen::MatrixXd &S1) {
  const Eigen::Index k = m0.size();
  if (m1.size() != k || S0.rows() != k || S1.rows() != k)
    throw std::invalid_argument("kl_gaussians: dimension mismatch");
  const auto llt1 = chol_with_jitter(S1);
  const auto llt0 = chol_with_jitter(S0);
  const Eigen::VectorXd diff = m1 - m0;
  const Eigen::MatrixXd L0 = llt0.matrixL();
  double logdet1 = 0.0, logdet0 = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    logdet1 += 2.0 * std::log(llt1.matrixL()(i, i));
    logdet0 += 2.0 * std::log(L0(i, i));
  }
  // trace of S1^-1 S0 with both factors taken from the same (jittered)
  // factorizations, so the result is an exact KL between two proper Gaussians
  // and stays non-negative even for ill-conditioned inputs
  const Eigen::MatrixXd A = llt1.matrixL().solve(L0);
  const double trace_term = A.squaredNorm();
  const double quad = diff.dot(llt1.solve(diff));
  const double kl = 0.5 * (trace_term + quad - static_cast<double>(k) + logdet1 - logdet0);
  return kl > 0.0 ? kl : 0.0;
}

AscentResult maximize(const Objective &objective, const Eigen::VectorXd &x0, int max_iters,
                      double tol) {
  AscentResult result;
  result.x = x0;
  Eigen::VectorXd grad(x0.size());
  double value = objective(result.x, grad);
  if (!std::isfinite(value))
    throw std::invalid_argument("maximize: objective is non-finite at the initial point");
  result.trace.push_back(value);
  constexpr double armijo_c = 1e-4;
  double step = 1.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    const double g2 = grad.squaredNorm();
    if (g2 == 0.0) break;
    double s = step;
    Eigen::VectorXd x_new;
    Eigen::VectorXd grad_new(x0.size());
    double v_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      x_new = result.x + s * grad;
      v_new = objective(x_new, grad_new);
      if (std::isfinite(v_new) && v_new >= value + armijo_c * s * g2) {
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;
    const double improvement = v_new - value;
    result.x = x_new;
    value = v_new;
    grad = grad_new;
    result.trace.push_back(value);
    step = std::min(s * 2.0, 1.0);  // gentle step-size recovery
    if (improvement < tol) break;
  }
  return result;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd &)> &f,
                            const Eigen::VectorXd &x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace medtraj
