#ifndef MEDTRAJ_OUTCOME_HPP
#define MEDTRAJ_OUTCOME_HPP

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "medtraj/gp.hpp"
#include "medtraj/rng.hpp"
#include "medtraj/types.hpp"

namespace medtraj {

enum class ResponseVariant { Nonparametric, Constant };

struct OutcomeConfig {
  // baseline f_b: constant + periodic kernel, per patient
  double const_variance = 1.0;
  double periodic_variance = 1.0;
  double periodic_lengthscale = 10.0;
  double period_h = 24.0;  // frozen
  // response shape f_m^0: time-marked SE, shared across patients
  double shape_variance = 1.0;
  double shape_lengthscale = 0.5;
  double t_eff_h = 3.0;  // frozen
  // observation noise and magnitude prior
  double noise_variance = 1.0;
  double magnitude_init = 0.1;
  double magnitude_prior_scale = 0.1;
  ResponseVariant response_variant = ResponseVariant::Nonparametric;
  int max_iters = 500;
  double tol = 1e-6;
};

/// Conditional-GP outcome model Y(tau) = f_b(tau) + f_m(tau; m) + noise.
/// Baselines and response magnitudes are per patient, the response shape GP is
/// shared. mean_offset is the training-data mean, subtracted before the
/// zero-mean GP machinery and added back on prediction.
struct OutcomeModel {
  struct Magnitude {
    double intercept = 0.1;
    double slope = 0.1;
  };
  struct PatientData {
    std::string patient_id;
    std::vector<double> times;
    std::vector<double> values;
    std::vector<Event> events;
  };

  OutcomeConfig cfg;
  double mean_offset = 0.0;
  std::map<std::string, Magnitude> magnitudes;
  std::vector<PatientData> train;
  std::vector<double> fit_trace;

  KernelSpec baseline_kernel() const;
  KernelSpec shape_kernel() const;

  /// Rebuilds the cached train covariance factorization. Must be called after
  /// any manual change to cfg/magnitudes/train (fit and load do it themselves).
  void finalize();

  double magnitude_of(const std::string &patient, double mark) const;

  // cached conditioning state
  struct Feature {
    double rel_time;
    double weight;
  };
  std::vector<std::vector<Feature>> train_features;  // per observation row
  std::vector<int> row_patient;                      // observation row -> train index
  std::vector<double> row_time;
  Eigen::LLT<Eigen::MatrixXd> chol;
  Eigen::VectorXd weights;  // C^-1 (y - mean_offset)
  bool finalized = false;
};

OutcomeModel make_outcome_model(const OutcomeConfig &cfg,
                                const std::vector<std::string> &patient_ids);

OutcomeModel fit_outcome(const std::vector<OutcomeSeries> &data,
                         const std::vector<EventSequence> &events, const OutcomeConfig &cfg);

/// Posterior mean of the response component f_m at tau under the given events.
double response_value(const OutcomeModel &model, const std::string &patient,
                      const EventSequence &events, double tau);

double baseline_mean(const OutcomeModel &model, const std::string &patient, double tau);

void outcome_predict(const OutcomeModel &model, const std::string &patient,
                     const EventSequence &events, const std::vector<double> &query_times,
                     Eigen::VectorXd &mean, Eigen::VectorXd &variance);

Eigen::VectorXd outcome_sample(const OutcomeModel &model, const std::string &patient,
                               const EventSequence &events, const std::vector<double> &query_times,
                               RandomStream &noise);

Eigen::VectorXd outcome_sample(const OutcomeModel &model, const std::string &patient,
                               const EventSequence &events, const std::vector<double> &query_times,
                               std::uint64_t seed);

}  // namespace medtraj

#endif
