#include "medtraj/kernels.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace medtraj {

namespace {

void require_positive(double v, const char *what) {
  if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + " must be strictly positive");
}

void check_dim(const KernelSpec &k, const Eigen::VectorXd &x, const Eigen::VectorXd &xp) {
  if (x.size() != xp.size()) throw std::invalid_argument("kernel_eval: input sizes differ");
  const int d = k.input_dim();
  if (d >= 0 && x.size() != d)
    throw std::invalid_argument("kernel_eval: expected input dim " + std::to_string(d) +
                                ", got " + std::to_string(x.size()));
}

bool time_marked_visible(const KernelSpec &k, double rx, double rxp) {
  return rx > 0.0 && rx <= k.window && rxp > 0.0 && rxp <= k.window;
}

}  // namespace

KernelSpec KernelSpec::squared_exponential(double variance, std::vector<double> lengthscales) {
  require_positive(variance, "SE variance");
  if (lengthscales.empty()) throw std::invalid_argument("SE needs at least one lengthscale");
  for (double l : lengthscales) require_positive(l, "SE lengthscale");
  KernelSpec k;
  k.type = Type::SquaredExponential;
  k.variance = variance;
  k.lengthscales = std::move(lengthscales);
  return k;
}

KernelSpec KernelSpec::matern12(double variance, double lengthscale) {
  require_positive(variance, "Matern12 variance");
  require_positive(lengthscale, "Matern12 lengthscale");
  KernelSpec k;
  k.type = Type::Matern12;
  k.variance = variance;
  k.lengthscales = {lengthscale};
  return k;
}

KernelSpec KernelSpec::constant(double variance) {
  require_positive(variance, "Constant variance");
  KernelSpec k;
  k.type = Type::Constant;
  k.variance = variance;
  return k;
}

KernelSpec KernelSpec::periodic(double variance, double lengthscale, double period) {
  require_positive(variance, "Periodic variance");
  require_positive(lengthscale, "Periodic lengthscale");
  require_positive(period, "Periodic period");
  KernelSpec k;
  k.type = Type::Periodic;
  k.variance = variance;
  k.lengthscales = {lengthscale};
  k.period = period;
  return k;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> terms) {
  if (terms.empty()) throw std::invalid_argument("Sum kernel must be non-empty");
  KernelSpec k;
  k.type = Type::Sum;
  k.children = std::move(terms);
  return k;
}

KernelSpec KernelSpec::time_marked(KernelSpec inner, double window) {
  require_positive(window, "TimeMarked effective window");
  KernelSpec k;
  k.type = Type::TimeMarked;
  k.window = window;
  k.children.push_back(std::move(inner));
  return k;
}

int KernelSpec::input_dim() const {
  switch (type) {
    case Type::SquaredExponential:
      return static_cast<int>(lengthscales.size());
    case Type::Matern12:
    case Type::Periodic:
      return -1;  // isotropic on the vector norm
    case Type::Constant:
      return -1;
    case Type::Sum: {
      int d = -1;
      for (const auto &c : children) {
        const int cd = c.input_dim();
        if (cd >= 0) {
          if (d >= 0 && d != cd) throw std::invalid_argument("Sum terms disagree on input dim");
          d = cd;
        }
      }
      return d;
    }
    case Type::TimeMarked:
      return children.front().input_dim();
  }
  return -1;
}

double kernel_eval(const KernelSpec &k, const Eigen::VectorXd &x, const Eigen::VectorXd &xp) {
  check_dim(k, x, xp);
  switch (k.type) {
    case KernelSpec::Type::SquaredExponential: {
      double q = 0.0;
      for (int d = 0; d < x.size(); ++d) {
        const double diff = x[d] - xp[d];
        q += diff * diff / (2.0 * k.lengthscales[d] * k.lengthscales[d]);
      }
      return k.variance * std::exp(-q);
    }
    case KernelSpec::Type::Matern12: {
      const double r = (x - xp).norm();
      return k.variance * std::exp(-r / k.lengthscales[0]);
    }
    case KernelSpec::Type::Constant:
      return k.variance;
    case KernelSpec::Type::Periodic: {
      const double r = (x - xp).norm();
      const double s = std::sin(std::numbers::pi * r / k.period);
      const double l = k.lengthscales[0];
      return k.variance * std::exp(-2.0 * s * s / (l * l));
    }
    case KernelSpec::Type::Sum: {
      double v = 0.0;
      for (const auto &c : k.children) v += kernel_eval(c, x, xp);
      return v;
    }
    case KernelSpec::Type::TimeMarked: {
      // Relative-time coordinate is dimension 0 of both inputs; zero outside
      // (0, window] enforces that a mediator affects only later outcomes.
      if (!time_marked_visible(k, x[0], xp[0])) return 0.0;
      return kernel_eval(k.children.front(), x, xp);
    }
  }
  throw std::logic_error("unreachable kernel type");
}

Eigen::MatrixXd gram_matrix(const KernelSpec &k, const Eigen::MatrixXd &X,
                            const Eigen::MatrixXd &Xp) {
  if (X.cols() != Xp.cols()) throw std::invalid_argument("gram_matrix: input dims differ");
  Eigen::MatrixXd G(X.rows(), Xp.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Xp.rows(); ++j)
      G(i, j) = kernel_eval(k, X.row(i).transpose(), Xp.row(j).transpose());
  return G;
}

std::vector<std::string> kernel_param_names(const KernelSpec &k) {
  std::vector<std::string> names;
  switch (k.type) {
    case KernelSpec::Type::SquaredExponential:
      names.push_back("variance");
      for (std::size_t d = 0; d < k.lengthscales.size(); ++d)
        names.push_back("lengthscale_" + std::to_string(d));
      break;
    case KernelSpec::Type::Matern12:
      names = {"variance", "lengthscale"};
      break;
    case KernelSpec::Type::Constant:
      names = {"variance"};
      break;
    case KernelSpec::Type::Periodic:
      names = {"variance", "lengthscale", "period"};
      break;
    case KernelSpec::Type::Sum:
      for (std::size_t i = 0; i < k.children.size(); ++i)
        for (const auto &n : kernel_param_names(k.children[i]))
          names.push_back("term" + std::to_string(i) + "/" + n);
      break;
    case KernelSpec::Type::TimeMarked:
      for (const auto &n : kernel_param_names(k.children.front()))
        names.push_back("inner/" + n);
      break;
  }
  return names;
}

namespace {

// Resolves a parameter path to the owning leaf kernel plus the leaf name.
const KernelSpec *resolve(const KernelSpec &k, const std::string &name, std::string &leaf) {
  if (name.rfind("inner/", 0) == 0) {
    if (k.type != KernelSpec::Type::TimeMarked) return nullptr;
    return resolve(k.children.front(), name.substr(6), leaf);
  }
  if (name.rfind("term", 0) == 0) {
    if (k.type != KernelSpec::Type::Sum) return nullptr;
    const auto slash = name.find('/');
    if (slash == std::string::npos) return nullptr;
    const std::size_t idx = std::stoul(name.substr(4, slash - 4));
    if (idx >= k.children.size()) return nullptr;
    return resolve(k.children[idx], name.substr(slash + 1), leaf);
  }
  leaf = name;
  return &k;
}

double *leaf_param(KernelSpec &k, const std::string &leaf) {
  if (leaf == "variance") return &k.variance;
  if (leaf == "period" && k.type == KernelSpec::Type::Periodic) return &k.period;
  if (leaf == "lengthscale" && !k.lengthscales.empty()) return &k.lengthscales[0];
  if (leaf.rfind("lengthscale_", 0) == 0) {
    const std::size_t d = std::stoul(leaf.substr(12));
    if (d < k.lengthscales.size()) return &k.lengthscales[d];
  }
  return nullptr;
}

}  // namespace

double kernel_param_get(const KernelSpec &k, const std::string &name) {
  std::string leaf;
  const KernelSpec *owner = resolve(k, name, leaf);
  double *p = owner ? leaf_param(const_cast<KernelSpec &>(*owner), leaf) : nullptr;
  if (!p) throw std::invalid_argument("unknown kernel parameter: " + name);
  return *p;
}

void kernel_param_set(KernelSpec &k, const std::string &name, double value) {
  require_positive(value, name.c_str());
  std::string leaf;
  const KernelSpec *owner = resolve(k, name, leaf);
  double *p = owner ? leaf_param(const_cast<KernelSpec &>(*owner), leaf) : nullptr;
  if (!p) throw std::invalid_argument("unknown kernel parameter: " + name);
  *p = value;
}

double kernel_eval_grad(const KernelSpec &k, const Eigen::VectorXd &x, const Eigen::VectorXd &xp,
                        const std::string &name) {
  switch (k.type) {
    case KernelSpec::Type::Sum: {
      if (name.rfind("term", 0) != 0) throw std::invalid_argument("unknown parameter: " + name);
      const auto slash = name.find('/');
      const std::size_t idx = std::stoul(name.substr(4, slash - 4));
      if (idx >= k.children.size()) throw std::invalid_argument("unknown parameter: " + name);
      return kernel_eval_grad(k.children[idx], x, xp, name.substr(slash + 1));
    }
    case KernelSpec::Type::TimeMarked: {
      if (name.rfind("inner/", 0) != 0) throw std::invalid_argument("unknown parameter: " + name);
      if (!time_marked_visible(k, x[0], xp[0])) return 0.0;
      return kernel_eval_grad(k.children.front(), x, xp, name.substr(6));
    }
    default:
      break;
  }
  const double kval = kernel_eval(k, x, xp);
  if (name == "variance") return kval / k.variance;
  switch (k.type) {
    case KernelSpec::Type::SquaredExponential: {
      if (name.rfind("lengthscale_", 0) == 0) {
        const std::size_t d = std::stoul(name.substr(12));
        if (d < k.lengthscales.size()) {
          const double diff = x[static_cast<Eigen::Index>(d)] - xp[static_cast<Eigen::Index>(d)];
          const double l = k.lengthscales[d];
          return kval * diff * diff / (l * l * l);
        }
      }
      break;
    }
    case KernelSpec::Type::Matern12: {
      if (name == "lengthscale") {
        const double r = (x - xp).norm();
        const double l = k.lengthscales[0];
        return kval * r / (l * l);
      }
      break;
    }
    case KernelSpec::Type::Periodic: {
      const double r = (x - xp).norm();
      const double l = k.lengthscales[0];
      const double u = std::numbers::pi * r / k.period;
      if (name == "lengthscale") {
        const double s = std::sin(u);
        return kval * 4.0 * s * s / (l * l * l);
      }
      if (name == "period")
        return kval * 2.0 * std::numbers::pi * r * std::sin(2.0 * u) / (l * l * k.period * k.period);
      break;
    }
    default:
      break;
  }
  throw std::invalid_argument("unknown kernel parameter: " + name);
}

Eigen::MatrixXd gram_grad(const KernelSpec &k, const Eigen::MatrixXd &X, const Eigen::MatrixXd &Xp,
                          const std::string &name) {
  Eigen::MatrixXd G(X.rows(), Xp.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Xp.rows(); ++j)
      G(i, j) = kernel_eval_grad(k, X.row(i).transpose(), Xp.row(j).transpose(), name);
  return G;
}

nlohmann::json kernel_to_json(const KernelSpec &k) {
  nlohmann::json j;
  switch (k.type) {
    case KernelSpec::Type::SquaredExponential:
      j["variant"] = "squared_exponential";
      j["variance"] = k.variance;
      j["lengthscales"] = k.lengthscales;
      break;
    case KernelSpec::Type::Matern12:
      j["variant"] = "matern12";
      j["variance"] = k.variance;
      j["lengthscale"] = k.lengthscales[0];
      break;
    case KernelSpec::Type::Constant:
      j["variant"] = "constant";
      j["variance"] = k.variance;
      break;
    case KernelSpec::Type::Periodic:
      j["variant"] = "periodic";
      j["variance"] = k.variance;
      j["lengthscale"] = k.lengthscales[0];
      j["period"] = k.period;
      break;
    case KernelSpec::Type::Sum: {
      j["variant"] = "sum";
      nlohmann::json terms = nlohmann::json::array();
      for (const auto &c : k.children) terms.push_back(kernel_to_json(c));
      j["terms"] = terms;
      break;
    }
    case KernelSpec::Type::TimeMarked:
      j["variant"] = "time_marked";
      j["effective_window"] = k.window;
      j["inner"] = kernel_to_json(k.children.front());
      break;
  }
  return j;
}

KernelSpec kernel_from_json(const nlohmann::json &j) {
  const std::string v = j.at("variant").get<std::string>();
  if (v == "squared_exponential")
    return KernelSpec::squared_exponential(j.at("variance").get<double>(),
                                           j.at("lengthscales").get<std::vector<double>>());
  if (v == "matern12")
    return KernelSpec::matern12(j.at("variance").get<double>(), j.at("lengthscale").get<double>());
  if (v == "constant") return KernelSpec::constant(j.at("variance").get<double>());
  if (v == "periodic")
    return KernelSpec::periodic(j.at("variance").get<double>(), j.at("lengthscale").get<double>(),
                                j.at("period").get<double>());
  if (v == "sum") {
    std::vector<KernelSpec> terms;
    for (const auto &t : j.at("terms")) terms.push_back(kernel_from_json(t));
    return KernelSpec::sum(std::move(terms));
  }
  if (v == "time_marked")
    return KernelSpec::time_marked(kernel_from_json(j.at("inner")),
                                   j.at("effective_window").get<double>());
  throw std::invalid_argument("unknown kernel variant: " + v);
}

}  // namespace medtraj
