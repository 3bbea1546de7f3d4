#include "medtraj/mediator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace medtraj {

namespace {

constexpr double kLogFloor = 1e-10;  // floor inside log of the squared intensity
constexpr double kVarFloor = 1e-12;

// Features at tau from raw sorted series; mirrors lag_features.
void features_from_series(const std::vector<Event> &events,
                          const std::vector<OutcomePoint> &outcomes, double tau, int q_m, int q_o,
                          double lag_cap, double pad_value, Eigen::VectorXd &lags,
                          Eigen::VectorXd &pairs) {
  lags.resize(q_m);
  // last index with time < tau
  auto ev_end = std::lower_bound(events.begin(), events.end(), tau,
                                 [](const Event &e, double t) { return e.time_h < t; });
  for (int q = 0; q < q_m; ++q) {
    const auto idx = std::distance(events.begin(), ev_end) - 1 - q;
    lags[q] = idx >= 0 ? std::min(tau - events[static_cast<std::size_t>(idx)].time_h, lag_cap)
                       : lag_cap;
  }
  pairs.resize(2 * q_o);
  auto out_end = std::upper_bound(outcomes.begin(), outcomes.end(), tau,
                                  [](double t, const OutcomePoint &p) { return t < p.time_h; });
  for (int q = 0; q < q_o; ++q) {
    const auto idx = std::distance(outcomes.begin(), out_end) - 1 - q;
    if (idx >= 0) {
      const auto &pt = outcomes[static_cast<std::size_t>(idx)];
      pairs[2 * q] = std::min(tau - pt.time_h, lag_cap);
      pairs[2 * q + 1] = pt.value;
    } else {
      pairs[2 * q] = lag_cap;
      pairs[2 * q + 1] = pad_value;
    }
  }
}

double sgp_mean(const SparseGP &gp, const MediatorModel::SgpCache &cache,
                const Eigen::VectorXd &x) {
  double mu = 0.0;
  for (Eigen::Index i = 0; i < gp.inducing_inputs.rows(); ++i)
    mu += kernel_eval(gp.kernel, gp.inducing_inputs.row(i).transpose(), x) * cache.w[i];
  return mu;
}

}  // namespace

void gauss_hermite(int n, Eigen::VectorXd &nodes, Eigen::VectorXd &weights) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(static_cast<double>(i) / 2.0);
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes = es.eigenvalues();
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = std::sqrt(std::numbers::pi) * v0 * v0;
  }
}

Eigen::MatrixXd regular_grid(const Eigen::VectorXd &lo, const Eigen::VectorXd &hi, int m) {
  const int d = static_cast<int>(lo.size());
  const int per_dim = std::max(2, static_cast<int>(std::ceil(std::pow(m, 1.0 / d))));
  std::vector<int> idx(d, 0);
  Eigen::MatrixXd grid(m, d);
  int row = 0;
  while (row < m) {
    for (int k = 0; k < d; ++k)
      grid(row, k) = lo[k] + (hi[k] - lo[k]) * idx[k] / (per_dim - 1);
    ++row;
    int k = d - 1;
    while (k >= 0 && ++idx[k] == per_dim) idx[k--] = 0;
    if (k < 0 && row < m) idx.assign(d, 0);  // wrap, should not happen with per_dim choice
  }
  return grid;
}

void lag_features(const History &history, double tau, int q_m, int q_o, double lag_cap,
                  double pad_value, Eigen::VectorXd &mediator_lags,
                  Eigen::VectorXd &outcome_pairs) {
  features_from_series(history.events, history.outcomes, tau, q_m, q_o, lag_cap, pad_value,
                       mediator_lags, outcome_pairs);
}

double time_intensity(const MediatorModel &model, double tau, const History &history) {
  if (!model.finalized) throw std::logic_error("mediator model not finalized");
  double h = model.beta0;
  if (model.cfg.variant == MediatorVariant::NonInteracting) {
    Eigen::VectorXd x(1);
    x[0] = tau;
    h += sgp_mean(model.g_abs, model.gabs_cache, x);
  } else {
    Eigen::VectorXd lags, pairs;
    lag_features(history, tau, model.cfg.q_m, model.cfg.q_o, model.cfg.lag_cap_h,
                 model.cfg.outcome_pad, lags, pairs);
    h += sgp_mean(model.g_m, model.gm_cache, lags);
    h += sgp_mean(model.g_o, model.go_cache, pairs);
  }
  return h * h;
}

double mark_loglik(const MediatorModel &model, double t, double mark) {
  if (mark <= 0.0) throw std::invalid_argument("mark must be > 0");
  double mu = 0.0;
  for (Eigen::Index i = 0; i < model.mark_gp.train_inputs.rows(); ++i)
    mu += kernel_eval(model.mark_gp.kernel, model.mark_gp.train_inputs.row(i).transpose(),
                      Eigen::VectorXd::Constant(1, t)) *
          model.mark_alpha[i];
  const double s2 = model.cfg.mark_noise;
  const double z = std::log(mark) - mu;
  return -0.5 * std::log(2.0 * std::numbers::pi * s2) - z * z / (2.0 * s2) - std::log(mark);
}

double sample_mark(const MediatorModel &model, double t, RandomStream &marks) {
  double mu = 0.0;
  for (Eigen::Index i = 0; i < model.mark_gp.train_inputs.rows(); ++i)
    mu += kernel_eval(model.mark_gp.kernel, model.mark_gp.train_inputs.row(i).transpose(),
                      Eigen::VectorXd::Constant(1, t)) *
          model.mark_alpha[i];
  return std::exp(mu + std::sqrt(model.cfg.mark_noise) * marks.normal());
}

void MediatorModel::finalize() {
  auto build = [](const SparseGP &gp, SgpCache &cache) {
    if (gp.inducing_inputs.rows() == 0) return;
    const Eigen::MatrixXd Kzz = gram_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs);
    const auto llt = chol_with_jitter(Kzz);
    cache.w = llt.solve(gp.variational_mean);
    const Eigen::MatrixXd T1 = llt.solve(Kzz - gp.variational_cov);
    cache.B = llt.solve(T1.transpose()).transpose();
  };
  if (cfg.variant == MediatorVariant::NonInteracting) {
    build(g_abs, gabs_cache);
  } else {
    build(g_m, gm_cache);
    build(g_o, go_cache);
  }
  if (mark_gp.train_inputs.rows() > 0) {
    Eigen::MatrixXd K = gram_matrix(mark_gp.kernel, mark_gp.train_inputs, mark_gp.train_inputs);
    K.diagonal().array() += mark_gp.noise_variance;
    mark_alpha = chol_with_jitter(std::move(K)).solve(mark_gp.train_targets);
  } else {
    mark_alpha.resize(0);
  }
  finalized = true;
}

namespace {

struct GpWork {
  SparseGP *gp = nullptr;
  Eigen::LLT<Eigen::MatrixXd> chol;  // of Kzz
  Eigen::MatrixXd Kzz;
  Eigen::VectorXd grad_m;
  Eigen::MatrixXd grad_S;
};

// Per-evaluation-point state for one sparse GP.
struct PointEval {
  Eigen::VectorXd a;  // Kzz^-1 k_zx
  double mu = 0.0;
  double s2 = 0.0;
};

PointEval eval_point(const GpWork &w, const Eigen::VectorXd &x) {
  const Eigen::Index m = w.gp->inducing_inputs.rows();
  Eigen::VectorXd kzx(m);
  for (Eigen::Index i = 0; i < m; ++i)
    kzx[i] = kernel_eval(w.gp->kernel, w.gp->inducing_inputs.row(i).transpose(), x);
  PointEval pe;
  pe.a = w.chol.solve(kzx);
  pe.mu = pe.a.dot(w.gp->variational_mean);
  const double kxx = kernel_eval(w.gp->kernel, x, x);
  pe.s2 = kxx - kzx.dot(pe.a) + pe.a.dot(w.gp->variational_cov * pe.a);
  if (pe.s2 < 0.0) pe.s2 = 0.0;
  return pe;
}

// E[log max(h^2, floor)] for h ~ N(c, v) by Gauss-Hermite, with d/dc and d/dv.
void gh_log_square(const Eigen::VectorXd &nodes, const Eigen::VectorXd &weights, double c,
                   double v, double &value, double &dc, double &dv) {
  const double s = std::sqrt(std::max(v, kVarFloor));
  const double norm = 1.0 / std::sqrt(std::numbers::pi);
  value = dc = dv = 0.0;
  for (Eigen::Index k = 0; k < nodes.size(); ++k) {
    const double h = c + std::numbers::sqrt2 * s * nodes[k];
    const double h2 = h * h;
    const double w = norm * weights[k];
    if (h2 > kLogFloor) {
      value += w * std::log(h2);
      const double dphi = 2.0 / h;
      dc += w * dphi;
      dv += w * dphi * std::numbers::sqrt2 * nodes[k] / (2.0 * s);
    } else {
      value += w * std::log(kLogFloor);
    }
  }
}

const OutcomeSeries *find_outcomes(const std::vector<OutcomeSeries> &outcomes,
                                   const EventSequence &seq) {
  for (const auto &o : outcomes)
    if (o.patient_id == seq.patient_id && o.regime == seq.regime) return &o;
  return nullptr;
}

// Time part of the ELBO (event log-intensity minus compensator), optionally
// accumulating gradients w.r.t. (m_u, S_u) into the work structs.
double elbo_time(const MediatorModel &model, const std::vector<EventSequence> &events,
                 const std::vector<OutcomeSeries> &outcomes, std::vector<GpWork *> gps,
                 bool with_grad) {
  const auto &cfg = model.cfg;
  Eigen::VectorXd gh_x, gh_w;
  gauss_hermite(cfg.gh_nodes, gh_x, gh_w);
  static const std::vector<OutcomePoint> no_outcomes;

  double total = 0.0;
  std::vector<PointEval> pe(gps.size());
  auto accumulate = [&](double coeff_c, double coeff_v) {
    for (std::size_t g = 0; g < gps.size(); ++g) {
      gps[g]->grad_m += coeff_c * pe[g].a;
      gps[g]->grad_S += coeff_v * (pe[g].a * pe[g].a.transpose());
    }
  };
  auto features_of = [&](const EventSequence &seq, const std::vector<OutcomePoint> &outs,
                         double tau) {
    std::vector<Eigen::VectorXd> xs;
    if (cfg.variant == MediatorVariant::NonInteracting) {
      xs.push_back(Eigen::VectorXd::Constant(1, tau));
    } else {
      Eigen::VectorXd lags, pairs;
      features_from_series(seq.events, outs, tau, cfg.q_m, cfg.q_o, cfg.lag_cap_h,
                           cfg.outcome_pad, lags, pairs);
      xs.push_back(lags);
      xs.push_back(pairs);
    }
    return xs;
  };

  for (const auto &seq : events) {
    const OutcomeSeries *os = find_outcomes(outcomes, seq);
    const auto &outs = os ? os->points : no_outcomes;
    const double horizon = seq.horizon_h;
    if (horizon <= 0.0) throw std::invalid_argument("elbo: sequence horizon must be positive");

    // compensator: trapezoid over a fixed grid, history re-evaluated per node
    const int n_nodes =
        std::max(2, static_cast<int>(std::lround(cfg.quad_per_day * horizon / 24.0)) + 1);
    const double dt = horizon / (n_nodes - 1);
    for (int i = 0; i < n_nodes; ++i) {
      const double tau = i * dt;
      const double omega = (i == 0 || i == n_nodes - 1) ? dt / 2.0 : dt;
      const auto xs = features_of(seq, outs, tau);
      double c = model.beta0, v = 0.0;
      for (std::size_t g = 0; g < gps.size(); ++g) {
        pe[g] = eval_point(*gps[g], xs[g]);
        c += pe[g].mu;
        v += pe[g].s2;
      }
      total -= omega * (c * c + v);
      if (with_grad) accumulate(-omega * 2.0 * c, -omega);
    }

    for (const auto &ev : seq.events) {
      const auto xs = features_of(seq, outs, ev.time_h);
      double c = model.beta0, v = 0.0;
      for (std::size_t g = 0; g < gps.size(); ++g) {
        pe[g] = eval_point(*gps[g], xs[g]);
        c += pe[g].mu;
        v += pe[g].s2;
      }
      double val, dc, dv;
      gh_log_square(gh_x, gh_w, c, v, val, dc, dv);
      total += val;
      if (with_grad) accumulate(dc, dv);
    }
  }
  return total;
}

}  // namespace

ElboParts elbo_parts(const MediatorModel &model, const std::vector<EventSequence> &events,
                     const std::vector<OutcomeSeries> &outcomes) {
  if (events.empty()) throw std::invalid_argument("elbo: no event sequences");
  MediatorModel &m = const_cast<MediatorModel &>(model);
  std::vector<GpWork> work;
  std::vector<GpWork *> ptrs;
  auto add = [&](SparseGP &gp) {
    GpWork w;
    w.gp = &gp;
    w.Kzz = gram_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs);
    w.chol = chol_with_jitter(w.Kzz);
    work.push_back(std::move(w));
  };
  if (model.cfg.variant == MediatorVariant::NonInteracting) {
    add(m.g_abs);
  } else {
    add(m.g_m);
    add(m.g_o);
  }
  for (auto &w : work) ptrs.push_back(&w);

  ElboParts parts;
  parts.time_loglik = elbo_time(model, events, outcomes, ptrs, false);
  for (const auto &w : work)
    parts.kl += kl_gaussians(w.gp->variational_mean, w.gp->variational_cov,
                             Eigen::VectorXd::Zero(w.Kzz.rows()), w.Kzz);
  for (const auto &seq : events)
    for (const auto &ev : seq.events) parts.mark_loglik += mark_loglik(model, ev.time_h, ev.mark_g);
  return parts;
}

double elbo(const MediatorModel &model, const std::vector<EventSequence> &events,
            const std::vector<OutcomeSeries> &outcomes) {
  return elbo_parts(model, events, outcomes).total();
}

MediatorModel make_mediator_model(const MediatorConfig &cfg) {
  MediatorModel model;
  model.cfg = cfg;
  model.beta0 = cfg.beta0;
  const int m = cfg.n_inducing;
  auto init_sgp = [&](SparseGP &gp, KernelSpec kernel, const Eigen::VectorXd &lo,
                      const Eigen::VectorXd &hi) {
    gp.kernel = std::move(kernel);
    gp.inducing_inputs = regular_grid(lo, hi, m);
    gp.variational_mean = Eigen::VectorXd::Zero(m);
    const Eigen::MatrixXd Kzz = gram_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs);
    gp.variational_cov = Kzz;  // q = prior at init, so the KL starts at zero
  };
  if (cfg.variant == MediatorVariant::NonInteracting) {
    init_sgp(model.g_abs,
             KernelSpec::squared_exponential(cfg.abs_variance, {cfg.abs_lengthscale}),
             Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, cfg.abs_horizon_h));
  } else {
    init_sgp(model.g_m,
             KernelSpec::squared_exponential(
                 cfg.gm_variance, std::vector<double>(static_cast<std::size_t>(cfg.q_m),
                                                      cfg.gm_lengthscale)),
             Eigen::VectorXd::Zero(cfg.q_m), Eigen::VectorXd::Constant(cfg.q_m, cfg.lag_cap_h));
    std::vector<double> go_ls;
    Eigen::VectorXd lo(2 * cfg.q_o), hi(2 * cfg.q_o);
    for (int q = 0; q < cfg.q_o; ++q) {
      go_ls.push_back(cfg.go_time_lengthscale);
      go_ls.push_back(cfg.go_value_lengthscale);
      lo[2 * q] = 0.0;
      hi[2 * q] = cfg.lag_cap_h;
      lo[2 * q + 1] = cfg.outcome_lo;
      hi[2 * q + 1] = cfg.outcome_hi;
    }
    init_sgp(model.g_o, KernelSpec::squared_exponential(cfg.go_variance, go_ls), lo, hi);
  }
  model.mark_gp.kernel = KernelSpec::matern12(cfg.mark_variance, cfg.mark_lengthscale);
  model.mark_gp.noise_variance = cfg.mark_noise;
  model.mark_gp.train_inputs.resize(0, 1);
  model.mark_gp.train_targets.resize(0);
  model.finalize();
  return model;
}

namespace {

// Variational parameter packing: per GP, m_u then the lower triangle of the
// Cholesky factor of S_u row by row, diagonal in log domain.
Eigen::Index packed_size(int m) { return m + m * (m + 1) / 2; }

void unpack(const Eigen::VectorXd &theta, Eigen::Index offset, SparseGP &gp) {
  const Eigen::Index m = gp.inducing_inputs.rows();
  gp.variational_mean = theta.segment(offset, m);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
  Eigen::Index k = offset + m;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      L(i, j) = (i == j) ? std::exp(theta[k]) : theta[k];
      ++k;
    }
  gp.variational_cov = L * L.transpose();
}

void pack_init(const SparseGP &gp, Eigen::VectorXd &theta, Eigen::Index offset) {
  const Eigen::Index m = gp.inducing_inputs.rows();
  theta.segment(offset, m) = gp.variational_mean;
  const Eigen::MatrixXd L = chol_with_jitter(gp.variational_cov).matrixL();
  Eigen::Index k = offset + m;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      theta[k] = (i == j) ? std::log(L(i, j)) : L(i, j);
      ++k;
    }
}

void pack_grad(const SparseGP &gp, const Eigen::VectorXd &grad_m, const Eigen::MatrixXd &grad_S,
               Eigen::VectorXd &grad, Eigen::Index offset) {
  const Eigen::Index m = gp.inducing_inputs.rows();
  grad.segment(offset, m) = grad_m;
  const Eigen::MatrixXd L = chol_with_jitter(gp.variational_cov).matrixL();
  const Eigen::MatrixXd GL = (grad_S + grad_S.transpose()) * L;
  Eigen::Index k = offset + m;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      grad[k] = (i == j) ? GL(i, j) * L(i, i) : GL(i, j);
      ++k;
    }
}

std::vector<SparseGP *> active_gps(MediatorModel &model) {
  if (model.cfg.variant == MediatorVariant::NonInteracting) return {&model.g_abs};
  return {&model.g_m, &model.g_o};
}

std::vector<Eigen::Index> pack_offsets(const std::vector<SparseGP *> &gps) {
  std::vector<Eigen::Index> offsets;
  Eigen::Index total = 0;
  for (auto *gp : gps) {
    offsets.push_back(total);
    total += packed_size(static_cast<int>(gp->inducing_inputs.rows()));
  }
  offsets.push_back(total);
  return offsets;
}

}  // namespace

Eigen::VectorXd pack_variational(const MediatorModel &model) {
  auto &m = const_cast<MediatorModel &>(model);
  const auto gps = active_gps(m);
  const auto offsets = pack_offsets(gps);
  Eigen::VectorXd theta(offsets.back());
  for (std::size_t g = 0; g < gps.size(); ++g) pack_init(*gps[g], theta, offsets[g]);
  return theta;
}

void set_variational(MediatorModel &model, const Eigen::VectorXd &theta) {
  const auto gps = active_gps(model);
  const auto offsets = pack_offsets(gps);
  if (theta.size() != offsets.back())
    throw std::invalid_argument("set_variational: parameter size mismatch");
  for (std::size_t g = 0; g < gps.size(); ++g) unpack(theta, offsets[g], *gps[g]);
  model.finalized = false;
}

Objective variational_objective(MediatorModel &model, const std::vector<EventSequence> &events,
                                const std::vector<OutcomeSeries> &outcomes) {
  auto gps = active_gps(model);
  auto offsets = pack_offsets(gps);
  return [&model, &events, &outcomes, gps, offsets](const Eigen::VectorXd &theta,
                                                    Eigen::VectorXd &grad) {
    std::vector<GpWork> work(gps.size());
    std::vector<GpWork *> ptrs;
    for (std::size_t g = 0; g < gps.size(); ++g) {
      unpack(theta, offsets[g], *gps[g]);
      work[g].gp = gps[g];
      work[g].Kzz = gram_matrix(gps[g]->kernel, gps[g]->inducing_inputs, gps[g]->inducing_inputs);
      work[g].chol = chol_with_jitter(work[g].Kzz);
      work[g].grad_m = Eigen::VectorXd::Zero(gps[g]->inducing_inputs.rows());
      work[g].grad_S = Eigen::MatrixXd::Zero(gps[g]->inducing_inputs.rows(),
                                             gps[g]->inducing_inputs.rows());
      ptrs.push_back(&work[g]);
    }
    double value = elbo_time(model, events, outcomes, ptrs, true);
    grad.resize(theta.size());
    for (std::size_t g = 0; g < gps.size(); ++g) {
      auto &w = work[g];
      const Eigen::Index m = w.Kzz.rows();
      value -= kl_gaussians(w.gp->variational_mean, w.gp->variational_cov,
                            Eigen::VectorXd::Zero(m), w.Kzz);
      w.grad_m -= w.chol.solve(w.gp->variational_mean);
      const Eigen::MatrixXd Kinv = w.chol.solve(Eigen::MatrixXd::Identity(m, m));
      const Eigen::MatrixXd Sinv =
          chol_with_jitter(w.gp->variational_cov).solve(Eigen::MatrixXd::Identity(m, m));
      w.grad_S -= 0.5 * (Kinv - Sinv);
      pack_grad(*w.gp, w.grad_m, w.grad_S, grad, offsets[g]);
    }
    return value;
  };
}

namespace {

// Whitened coordinates for the variational ascent: per GP, m_u = L nu and
// S_u = (L T)(L T)^T with L = chol(Kzz). The KL term becomes
// 0.5 (|T|_F^2 + |nu|^2 - M) - sum_i log T_ii, which stays well conditioned
// however ill-conditioned the inducing-grid Gram matrix is. T is packed like
// the public parameterization: lower triangle row by row, log diagonal.
// phi = 0 is exactly the (m_u = 0, S_u = Kzz) initialization with zero KL.
struct WhitenedProblem {
  std::vector<SparseGP *> gps;
  std::vector<Eigen::Index> offsets;
  std::vector<Eigen::MatrixXd> L;

  explicit WhitenedProblem(MediatorModel &model)
      : gps(active_gps(model)), offsets(pack_offsets(gps)) {
    for (auto *gp : gps) {
      const Eigen::MatrixXd Kzz =
          gram_matrix(gp->kernel, gp->inducing_inputs, gp->inducing_inputs);
      L.emplace_back(chol_with_jitter(Kzz).matrixL());
    }
  }

  Eigen::MatrixXd unpack_T(const Eigen::VectorXd &phi, std::size_t g) const {
    const Eigen::Index m = gps[g]->inducing_inputs.rows();
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    Eigen::Index k = offsets[g] + m;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        T(i, j) = (i == j) ? std::exp(phi[k]) : phi[k];
        ++k;
      }
    return T;
  }

  void apply(const Eigen::VectorXd &phi) const {
    for (std::size_t g = 0; g < gps.size(); ++g) {
      const Eigen::Index m = gps[g]->inducing_inputs.rows();
      gps[g]->variational_mean = L[g] * phi.segment(offsets[g], m);
      const Eigen::MatrixXd LT = L[g] * unpack_T(phi, g);
      gps[g]->variational_cov = LT * LT.transpose();
    }
  }
};

Objective whitened_objective(MediatorModel &model, const WhitenedProblem &wp,
                             const std::vector<EventSequence> &events,
                             const std::vector<OutcomeSeries> &outcomes) {
  return [&model, &wp, &events, &outcomes](const Eigen::VectorXd &phi, Eigen::VectorXd &grad) {
    wp.apply(phi);
    std::vector<GpWork> work(wp.gps.size());
    std::vector<GpWork *> ptrs;
    for (std::size_t g = 0; g < wp.gps.size(); ++g) {
      work[g].gp = wp.gps[g];
      work[g].Kzz =
          gram_matrix(wp.gps[g]->kernel, wp.gps[g]->inducing_inputs, wp.gps[g]->inducing_inputs);
      work[g].chol = chol_with_jitter(work[g].Kzz);
      work[g].grad_m = Eigen::VectorXd::Zero(wp.gps[g]->inducing_inputs.rows());
      work[g].grad_S = Eigen::MatrixXd::Zero(wp.gps[g]->inducing_inputs.rows(),
                                             wp.gps[g]->inducing_inputs.rows());
      ptrs.push_back(&work[g]);
    }
    double value = elbo_time(model, events, outcomes, ptrs, true);
    grad.resize(phi.size());
    for (std::size_t g = 0; g < wp.gps.size(); ++g) {
      const Eigen::Index m = wp.gps[g]->inducing_inputs.rows();
      const Eigen::VectorXd nu = phi.segment(wp.offsets[g], m);
      const Eigen::MatrixXd T = wp.unpack_T(phi, g);

      double kl = 0.5 * (nu.squaredNorm() - static_cast<double>(m));
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) kl += 0.5 * T(i, j) * T(i, j);
      Eigen::Index k = wp.offsets[g] + m;
      for (Eigen::Index i = 0; i < m; ++i) kl -= phi[k + i * (i + 3) / 2];
      value -= kl;

      // chain rule through m_u = L nu and S_u = (L T)(L T)^T, minus the KL
      grad.segment(wp.offsets[g], m) = wp.L[g].transpose() * work[g].grad_m - nu;
      const Eigen::MatrixXd GT = wp.L[g].transpose() *
                                 (work[g].grad_S + work[g].grad_S.transpose()) * wp.L[g] * T;
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
          grad[k] = (i == j) ? (GT(i, i) - T(i, i)) * T(i, i) + 1.0 : GT(i, j) - T(i, j);
          ++k;
        }
    }
    return value;
  };
}

}  // namespace

MediatorModel fit_mediator(const std::vector<EventSequence> &events,
                           const std::vector<OutcomeSeries> &outcomes,
                           const MediatorConfig &cfg) {
  if (events.empty()) throw std::invalid_argument("fit_mediator: empty data");
  MediatorConfig c = cfg;
  double out_sum = 0.0;
  std::size_t out_count = 0;
  double out_lo = std::numeric_limits<double>::infinity();
  double out_hi = -std::numeric_limits<double>::infinity();
  for (const auto &os : outcomes)
    for (const auto &pt : os.points) {
      out_sum += pt.value;
      ++out_count;
      out_lo = std::min(out_lo, pt.value);
      out_hi = std::max(out_hi, pt.value);
    }
  if (out_count > 0) {
    c.outcome_pad = out_sum / static_cast<double>(out_count);
    if (out_hi > out_lo) {
      c.outcome_lo = out_lo;
      c.outcome_hi = out_hi;
    }
  }
  double horizon = 0.0;
  for (const auto &seq : events) horizon = std::max(horizon, seq.horizon_h);
  c.abs_horizon_h = horizon > 0.0 ? horizon : c.abs_horizon_h;

  MediatorModel model = make_mediator_model(c);

  const WhitenedProblem wp(model);
  const auto obj = whitened_objective(model, wp, events, outcomes);
  const Eigen::Index n_phi = wp.offsets.back();

  // The squared link admits a spurious stationary point where the event rate
  // is carried entirely by the variational variance (mean near zero), and the
  // mean-gradient vanishes there by symmetry. Warm-start with the covariance
  // pinned small and only the means free, so the mean channel explains the
  // data, then run the joint ascent from that point.
  Eigen::VectorXd phi0 = Eigen::VectorXd::Zero(n_phi);
  std::vector<Eigen::Index> mean_idx;
  for (std::size_t g = 0; g < wp.gps.size(); ++g) {
    const Eigen::Index m = wp.gps[g]->inducing_inputs.rows();
    for (Eigen::Index i = 0; i < m; ++i) mean_idx.push_back(wp.offsets[g] + i);
    for (Eigen::Index i = 0; i < m; ++i)
      phi0[wp.offsets[g] + m + i * (i + 3) / 2] = std::log(1e-2);
  }
  Objective mean_obj = [&](const Eigen::VectorXd &x, Eigen::VectorXd &grad) {
    Eigen::VectorXd phi = phi0;
    for (std::size_t i = 0; i < mean_idx.size(); ++i) phi[mean_idx[i]] = x[static_cast<Eigen::Index>(i)];
    Eigen::VectorXd full_grad;
    const double value = obj(phi, full_grad);
    grad.resize(x.size());
    for (std::size_t i = 0; i < mean_idx.size(); ++i)
      grad[static_cast<Eigen::Index>(i)] = full_grad[mean_idx[i]];
    return value;
  };
  const auto warm = maximize(
      mean_obj, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mean_idx.size())), c.max_iters,
      c.tol);
  for (std::size_t i = 0; i < mean_idx.size(); ++i)
    phi0[mean_idx[i]] = warm.x[static_cast<Eigen::Index>(i)];

  const auto result = maximize(obj, phi0, c.max_iters, c.tol);
  wp.apply(result.x);
  model.fit_trace = result.trace;

  // mark model: exact GP on (event time, log mark), hyperparameters by LML ascent
  std::vector<double> mt, mv;
  for (const auto &seq : events)
    for (const auto &ev : seq.events) {
      mt.push_back(ev.time_h);
      mv.push_back(std::log(ev.mark_g));
    }
  model.mark_gp.train_inputs =
      Eigen::Map<Eigen::MatrixXd>(mt.data(), static_cast<Eigen::Index>(mt.size()), 1);
  model.mark_gp.train_targets =
      Eigen::Map<Eigen::VectorXd>(mv.data(), static_cast<Eigen::Index>(mv.size()));
  if (!mt.empty() && c.max_iters > 0) {
    const std::vector<std::string> names = {"variance", "lengthscale", "noise_variance"};
    Eigen::VectorXd h0(3);
    h0 << std::log(c.mark_variance), std::log(c.mark_lengthscale), std::log(c.mark_noise);
    Objective mark_obj = [&](const Eigen::VectorXd &h, Eigen::VectorXd &grad) {
      ExactGP gp = model.mark_gp;
      kernel_param_set(gp.kernel, "variance", std::exp(h[0]));
      kernel_param_set(gp.kernel, "lengthscale", std::exp(h[1]));
      gp.noise_variance = std::exp(h[2]);
      try {
        grad = lml_gradient(gp, names);
        return log_marginal_likelihood(gp);
      } catch (const std::runtime_error &) {
        // factorization failed for this proposal (e.g. near-duplicate event
        // times with vanishing noise); reject it so the line search backtracks
        grad = Eigen::VectorXd::Zero(h.size());
        return -std::numeric_limits<double>::infinity();
      }
    };
    const auto mark_result = maximize(mark_obj, h0, c.max_iters, c.tol);
    kernel_param_set(model.mark_gp.kernel, "variance", std::exp(mark_result.x[0]));
    kernel_param_set(model.mark_gp.kernel, "lengthscale", std::exp(mark_result.x[1]));
    model.mark_gp.noise_variance = std::exp(mark_result.x[2]);
    model.cfg.mark_variance = std::exp(mark_result.x[0]);
    model.cfg.mark_lengthscale = std::exp(mark_result.x[1]);
    model.cfg.mark_noise = std::exp(mark_result.x[2]);
  }
  model.finalize();
  return model;
}

}  // namespace medtraj
