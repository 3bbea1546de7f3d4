#ifndef MEDTRAJ_MEDIATOR_HPP
#define MEDTRAJ_MEDIATOR_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "medtraj/gp.hpp"
#include "medtraj/rng.hpp"
#include "medtraj/types.hpp"

namespace medtraj {

enum class MediatorVariant { Interacting, NonInteracting };

struct MediatorConfig {
  double beta0 = 0.1;  // frozen Poisson baseline
  // g_m: SE over relative times of the last Q_m events
  double gm_variance = 0.1;
  double gm_lengthscale = 1.5;
  // g_o: SE over (relative time, outcome value) pairs of the last Q_o outcomes
  double go_variance = 0.1;
  double go_time_lengthscale = 100.0;
  double go_value_lengthscale = 5.0;
  int q_m = 1;
  int q_o = 1;
  double lag_cap_h = 24.0;
  double outcome_pad = 5.5;  // neutral outcome feature; fit uses the data mean
  double outcome_lo = 3.0;   // inducing-grid box for the outcome axis
  double outcome_hi = 9.0;
  int n_inducing = 20;
  // non-interacting variant: squared GP over absolute time
  double abs_variance = 0.1;
  double abs_lengthscale = 3.0;
  double abs_horizon_h = 24.0;  // inducing-grid span; fit uses the data horizon
  // log-normal mark model: GP mean over absolute time, Matern-1/2
  double mark_variance = 1.0;
  double mark_lengthscale = 1.0;
  double mark_noise = 1.0;  // sigma_d^2
  MediatorVariant variant = MediatorVariant::Interacting;
  int quad_per_day = 256;
  int gh_nodes = 20;
  int max_iters = 500;
  double tol = 1e-6;
};

/// Marked-point-process mediator with squared-sum time intensity
/// lambda(tau | H) = (beta0 + g_m + g_o)^2 and a log-normal mark model.
struct MediatorModel {
  MediatorConfig cfg;
  double beta0 = 0.1;
  SparseGP g_m;    // interacting only
  SparseGP g_o;    // interacting only
  SparseGP g_abs;  // non-interacting: squared GP of absolute time
  ExactGP mark_gp;  // targets are log marks
  std::vector<double> fit_trace;

  /// Rebuilds cached solves; call after any manual parameter change.
  void finalize();

  struct SgpCache {
    Eigen::VectorXd w;  // Kzz^-1 m_u
    Eigen::MatrixXd B;  // Kzz^-1 (Kzz - S) Kzz^-1
  };
  SgpCache gm_cache, go_cache, gabs_cache;
  Eigen::VectorXd mark_alpha;
  bool finalized = false;
};

/// Relative-time features at tau: lags of the Q_m most recent events strictly
/// before tau (clamped/padded at lag_cap) and (lag, value) pairs of the Q_o
/// most recent outcomes at or before tau (padded with (lag_cap, pad_value)).
void lag_features(const History &history, double tau, int q_m, int q_o, double lag_cap,
                  double pad_value, Eigen::VectorXd &mediator_lags,
                  Eigen::VectorXd &outcome_pairs);

double time_intensity(const MediatorModel &model, double tau, const History &history);

double mark_loglik(const MediatorModel &model, double t, double mark);
double sample_mark(const MediatorModel &model, double t, RandomStream &marks);

struct ElboParts {
  double time_loglik = 0.0;  // sum over events E_q[log lambda] minus the compensator
  double mark_loglik = 0.0;
  double kl = 0.0;
  double total() const { return time_loglik + mark_loglik - kl; }
};

ElboParts elbo_parts(const MediatorModel &model, const std::vector<EventSequence> &events,
                     const std::vector<OutcomeSeries> &outcomes);
double elbo(const MediatorModel &model, const std::vector<EventSequence> &events,
            const std::vector<OutcomeSeries> &outcomes);

MediatorModel make_mediator_model(const MediatorConfig &cfg);

MediatorModel fit_mediator(const std::vector<EventSequence> &events,
                           const std::vector<OutcomeSeries> &outcomes,
                           const MediatorConfig &cfg);

/// Packed variational parameters of the model's active sparse GPs: per GP the
/// mean, then the lower triangle of chol(S_u) with a log diagonal.
Eigen::VectorXd pack_variational(const MediatorModel &model);
void set_variational(MediatorModel &model, const Eigen::VectorXd &theta);

/// ELBO objective (time term minus KL, marks excluded) over the packed
/// parameterization, with its analytic gradient. Mutates `model` on each call.
Objective variational_objective(MediatorModel &model, const std::vector<EventSequence> &events,
                                const std::vector<OutcomeSeries> &outcomes);

/// Physicists' Gauss-Hermite nodes and weights (integral against exp(-x^2)).
void gauss_hermite(int n, Eigen::VectorXd &nodes, Eigen::VectorXd &weights);

/// Regular grid of m points over a d-dimensional box, row-major, trimmed to m.
Eigen::MatrixXd regular_grid(const Eigen::VectorXd &lo, const Eigen::VectorXd &hi, int m);

}  // namespace medtraj

#endif
