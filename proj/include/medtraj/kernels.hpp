#ifndef MEDTRAJ_KERNELS_HPP
#define MEDTRAJ_KERNELS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <json.hpp>

namespace medtraj {

/// Covariance function specification. Immutable after construction via the
/// factory functions; all operations on it are pure.
struct KernelSpec {
  enum class Type { SquaredExponential, Matern12, Constant, Periodic, Sum, TimeMarked };

  Type type = Type::Constant;
  double variance = 1.0;
  std::vector<double> lengthscales;  // SE: one per input dim; Matern12/Periodic: single entry
  double period = 0.0;               // Periodic only, hours
  double window = 0.0;               // TimeMarked effective window, hours
  std::vector<KernelSpec> children;  // Sum terms, or single TimeMarked inner kernel

  static KernelSpec squared_exponential(double variance, std::vector<double> lengthscales);
  static KernelSpec matern12(double variance, double lengthscale);
  static KernelSpec constant(double variance);
  static KernelSpec periodic(double variance, double lengthscale, double period);
  static KernelSpec sum(std::vector<KernelSpec> terms);
  static KernelSpec time_marked(KernelSpec inner, double window);

  /// Expected input dimensionality, or -1 if any dimensionality is accepted.
  int input_dim() const;
};

double kernel_eval(const KernelSpec &k, const Eigen::VectorXd &x, const Eigen::VectorXd &x_prime);

Eigen::MatrixXd gram_matrix(const KernelSpec &k, const Eigen::MatrixXd &X,
                            const Eigen::MatrixXd &X_prime);

/// Flattened hyperparameter names. Leaves are "variance", "lengthscale",
/// "lengthscale_<d>", "period"; Sum children are prefixed "term<i>/",
/// TimeMarked inner is prefixed "inner/".
std::vector<std::string> kernel_param_names(const KernelSpec &k);
double kernel_param_get(const KernelSpec &k, const std::string &name);
void kernel_param_set(KernelSpec &k, const std::string &name, double value);

/// dk/dtheta for the named hyperparameter, raw (not log) domain.
double kernel_eval_grad(const KernelSpec &k, const Eigen::VectorXd &x,
                        const Eigen::VectorXd &x_prime, const std::string &name);
Eigen::MatrixXd gram_grad(const KernelSpec &k, const Eigen::MatrixXd &X,
                          const Eigen::MatrixXd &X_prime, const std::string &name);

nlohmann::json kernel_to_json(const KernelSpec &k);
KernelSpec kernel_from_json(const nlohmann::json &j);

}  // namespace medtraj

#endif
