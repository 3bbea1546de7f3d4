#include "medtraj/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace medtraj {

namespace {

double k_baseline(const OutcomeConfig &cfg, double t, double t2) {
  const double r = std::abs(t - t2);
  const double s = std::sin(std::numbers::pi * r / cfg.period_h);
  const double l = cfg.periodic_lengthscale;
  return cfg.const_variance + cfg.periodic_variance * std::exp(-2.0 * s * s / (l * l));
}

// Response-shape covariance for relative times already inside (0, t_eff].
double k_shape(const OutcomeConfig &cfg, double r, double r2) {
  if (cfg.response_variant == ResponseVariant::Constant) return cfg.shape_variance;
  const double d = r - r2;
  const double l = cfg.shape_lengthscale;
  return cfg.shape_variance * std::exp(-d * d / (2.0 * l * l));
}

double response_cov(const OutcomeConfig &cfg, const std::vector<OutcomeModel::Feature> &a,
                    const std::vector<OutcomeModel::Feature> &b) {
  double v = 0.0;
  for (const auto &fa : a)
    for (const auto &fb : b) v += fa.weight * fb.weight * k_shape(cfg, fa.rel_time, fb.rel_time);
  return v;
}

std::vector<OutcomeModel::Feature> features_at(const OutcomeConfig &cfg, double magnitude_intercept,
                                               double magnitude_slope,
                                               const std::vector<Event> &events, double tau) {
  std::vector<OutcomeModel::Feature> f;
  for (const auto &e : events) {
    const double r = tau - e.time_h;
    if (r > 0.0 && r <= cfg.t_eff_h)
      f.push_back({r, magnitude_intercept + magnitude_slope * e.mark_g});
  }
  return f;
}

struct CovarianceBuild {
  Eigen::MatrixXd C;
  Eigen::VectorXd residual;
  std::vector<std::vector<OutcomeModel::Feature>> features;
  std::vector<int> row_patient;
  std::vector<double> row_time;
};

CovarianceBuild build_covariance(const OutcomeConfig &cfg,
                                 const std::map<std::string, OutcomeModel::Magnitude> &mags,
                                 const std::vector<OutcomeModel::PatientData> &train,
                                 double mean_offset) {
  CovarianceBuild b;
  for (std::size_t p = 0; p < train.size(); ++p) {
    const auto &pd = train[p];
    const auto &mg = mags.at(pd.patient_id);
    for (std::size_t j = 0; j < pd.times.size(); ++j) {
      b.row_patient.push_back(static_cast<int>(p));
      b.row_time.push_back(pd.times[j]);
      b.features.push_back(
          features_at(cfg, mg.intercept, mg.slope, pd.events, pd.times[j]));
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(b.row_time.size());
  b.C.resize(n, n);
  b.residual.resize(n);
  Eigen::Index row = 0;
  for (std::size_t p = 0; p < train.size(); ++p)
    for (double v : train[p].values) b.residual[row++] = v - mean_offset;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      double c = response_cov(cfg, b.features[i], b.features[j]);
      if (b.row_patient[i] == b.row_patient[j]) {
        c += k_baseline(cfg, b.row_time[i], b.row_time[j]);
        if (i == j) c += cfg.noise_variance;
      }
      b.C(i, j) = c;
      b.C(j, i) = c;
    }
  }
  return b;
}

double penalized_lml(const OutcomeConfig &cfg,
                     const std::map<std::string, OutcomeModel::Magnitude> &mags,
                     const std::vector<OutcomeModel::PatientData> &train, double mean_offset) {
  auto b = build_covariance(cfg, mags, train, mean_offset);
  const Eigen::Index n = b.C.rows();
  const auto llt = chol_with_jitter(std::move(b.C));
  const Eigen::VectorXd alpha = llt.solve(b.residual);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  double lml = -0.5 * b.residual.dot(alpha) - 0.5 * logdet -
               0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  const double s2 = cfg.magnitude_prior_scale * cfg.magnitude_prior_scale;
  for (const auto &[id, mg] : mags)
    lml -= (mg.intercept * mg.intercept + mg.slope * mg.slope) / (2.0 * s2);
  return lml;
}

}  // namespace

KernelSpec OutcomeModel::baseline_kernel() const {
  return KernelSpec::sum(
      {KernelSpec::constant(cfg.const_variance),
       KernelSpec::periodic(cfg.periodic_variance, cfg.periodic_lengthscale, cfg.period_h)});
}

KernelSpec OutcomeModel::shape_kernel() const {
  if (cfg.response_variant == ResponseVariant::Constant)
    return KernelSpec::time_marked(KernelSpec::constant(cfg.shape_variance), cfg.t_eff_h);
  return KernelSpec::time_marked(
      KernelSpec::squared_exponential(cfg.shape_variance, {cfg.shape_lengthscale}), cfg.t_eff_h);
}

double OutcomeModel::magnitude_of(const std::string &patient, double mark) const {
  const auto it = magnitudes.find(patient);
  if (it == magnitudes.end()) throw std::invalid_argument("unknown patient: " + patient);
  return it->second.intercept + it->second.slope * mark;
}

void OutcomeModel::finalize() {
  auto b = build_covariance(cfg, magnitudes, train, mean_offset);
  train_features = std::move(b.features);
  row_patient = std::move(b.row_patient);
  row_time = std::move(b.row_time);
  if (b.C.rows() > 0) {
    chol = chol_with_jitter(std::move(b.C));
    weights = chol.solve(b.residual);
  } else {
    weights.resize(0);
  }
  finalized = true;
}

OutcomeModel make_outcome_model(const OutcomeConfig &cfg,
                                const std::vector<std::string> &patient_ids) {
  OutcomeModel m;
  m.cfg = cfg;
  for (const auto &id : patient_ids)
    m.magnitudes[id] = {cfg.magnitude_init, cfg.magnitude_init};
  m.finalize();
  return m;
}

OutcomeModel fit_outcome(const std::vector<OutcomeSeries> &data,
                         const std::vector<EventSequence> &events, const OutcomeConfig &cfg) {
  if (data.empty()) throw std::invalid_argument("fit_outcome: empty dataset");
  OutcomeModel model;
  model.cfg = cfg;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto &series : data) {
    OutcomeModel::PatientData pd;
    pd.patient_id = series.patient_id;
    for (const auto &pt : series.points) {
      pd.times.push_back(pt.time_h);
      pd.values.push_back(pt.value);
      sum += pt.value;
    }
    count += series.points.size();
    const auto ev = std::find_if(events.begin(), events.end(), [&](const EventSequence &e) {
      return e.patient_id == series.patient_id && e.regime == series.regime;
    });
    if (ev == events.end())
      throw std::invalid_argument("fit_outcome: no event sequence for patient " +
                                  series.patient_id);
    pd.events = ev->events;
    model.train.push_back(std::move(pd));
    model.magnitudes[series.patient_id] = {cfg.magnitude_init, cfg.magnitude_init};
  }
  model.mean_offset = count ? sum / static_cast<double>(count) : 0.0;

  // Learned hyperparameters in log domain, magnitudes raw. Period and t_eff
  // stay at their configured values.
  std::vector<std::string> patients;
  for (const auto &[id, mg] : model.magnitudes) patients.push_back(id);
  const bool constant_response = cfg.response_variant == ResponseVariant::Constant;
  const int n_hyper = constant_response ? 5 : 6;
  Eigen::VectorXd x0(n_hyper + 2 * static_cast<Eigen::Index>(patients.size()));
  int k = 0;
  x0[k++] = std::log(cfg.const_variance);
  x0[k++] = std::log(cfg.periodic_variance);
  x0[k++] = std::log(cfg.periodic_lengthscale);
  x0[k++] = std::log(cfg.shape_variance);
  if (!constant_response) x0[k++] = std::log(cfg.shape_lengthscale);
  x0[k++] = std::log(cfg.noise_variance);
  for (std::size_t p = 0; p < patients.size(); ++p) {
    x0[n_hyper + 2 * static_cast<Eigen::Index>(p)] = cfg.magnitude_init;
    x0[n_hyper + 2 * static_cast<Eigen::Index>(p) + 1] = cfg.magnitude_init;
  }

  auto apply = [&](const Eigen::VectorXd &x, OutcomeConfig &c,
                   std::map<std::string, OutcomeModel::Magnitude> &mags) {
    int i = 0;
    c.const_variance = std::exp(x[i++]);
    c.periodic_variance = std::exp(x[i++]);
    c.periodic_lengthscale = std::exp(x[i++]);
    c.shape_variance = std::exp(x[i++]);
    if (!constant_response) c.shape_lengthscale = std::exp(x[i++]);
    c.noise_variance = std::exp(x[i++]);
    for (std::size_t p = 0; p < patients.size(); ++p)
      mags[patients[p]] = {x[n_hyper + 2 * static_cast<Eigen::Index>(p)],
                           x[n_hyper + 2 * static_cast<Eigen::Index>(p) + 1]};
  };

  auto value_of = [&](const Eigen::VectorXd &x) {
    OutcomeConfig c = cfg;
    std::map<std::string, OutcomeModel::Magnitude> mags;
    apply(x, c, mags);
    return penalized_lml(c, mags, model.train, model.mean_offset);
  };
  Objective obj = [&](const Eigen::VectorXd &x, Eigen::VectorXd &grad) {
    grad = fd_gradient(value_of, x);
    return value_of(x);
  };
  const auto result = maximize(obj, x0, cfg.max_iters, cfg.tol);
  // only overwrite the configured values if the optimizer actually moved:
  // the log/exp round trip is not bit-exact
  if (!(result.x.array() == x0.array()).all()) apply(result.x, model.cfg, model.magnitudes);
  model.fit_trace = result.trace;
  model.finalize();
  return model;
}

namespace {

// Cross-covariance of [response at tau under `feats`] with every training row.
Eigen::VectorXd response_cross(const OutcomeModel &m,
                               const std::vector<OutcomeModel::Feature> &feats) {
  Eigen::VectorXd c(static_cast<Eigen::Index>(m.train_features.size()));
  for (std::size_t j = 0; j < m.train_features.size(); ++j)
    c[static_cast<Eigen::Index>(j)] = response_cov(m.cfg, feats, m.train_features[j]);
  return c;
}

int train_index_of(const OutcomeModel &m, const std::string &patient) {
  for (std::size_t p = 0; p < m.train.size(); ++p)
    if (m.train[p].patient_id == patient) return static_cast<int>(p);
  return -1;
}

}  // namespace

double response_value(const OutcomeModel &model, const std::string &patient,
                      const EventSequence &events, double tau) {
  const auto &mg = model.magnitudes.at(patient);
  const auto feats = features_at(model.cfg, mg.intercept, mg.slope, events.events, tau);
  if (feats.empty() || model.weights.size() == 0) return 0.0;
  return response_cross(model, feats).dot(model.weights);
}

double baseline_mean(const OutcomeModel &model, const std::string &patient, double tau) {
  if (model.weights.size() == 0) return model.mean_offset;
  const int pidx = train_index_of(model, patient);
  double mean = model.mean_offset;
  for (Eigen::Index j = 0; j < model.weights.size(); ++j)
    if (model.row_patient[static_cast<std::size_t>(j)] == pidx)
      mean += k_baseline(model.cfg, tau, model.row_time[static_cast<std::size_t>(j)]) *
              model.weights[j];
  return mean;
}

void outcome_predict(const OutcomeModel &model, const std::string &patient,
                     const EventSequence &events, const std::vector<double> &query_times,
                     Eigen::VectorXd &mean, Eigen::VectorXd &variance) {
  if (!model.finalized) throw std::logic_error("outcome model not finalized");
  const auto it = model.magnitudes.find(patient);
  if (it == model.magnitudes.end()) throw std::invalid_argument("unknown patient: " + patient);
  const auto &mg = it->second;
  const int pidx = train_index_of(model, patient);
  const Eigen::Index n = model.weights.size();
  const Eigen::Index q = static_cast<Eigen::Index>(query_times.size());
  mean.resize(q);
  variance.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const double tau = query_times[i];
    const auto feats = features_at(model.cfg, mg.intercept, mg.slope, events.events, tau);
    const double prior = k_baseline(model.cfg, tau, tau) + response_cov(model.cfg, feats, feats);
    if (n == 0) {
      mean[i] = model.mean_offset;
      variance[i] = prior + model.cfg.noise_variance;
      continue;
    }
    Eigen::VectorXd cross = response_cross(model, feats);
    for (Eigen::Index j = 0; j < n; ++j)
      if (model.row_patient[static_cast<std::size_t>(j)] == pidx)
        cross[j] += k_baseline(model.cfg, tau, model.row_time[static_cast<std::size_t>(j)]);
    mean[i] = model.mean_offset + cross.dot(model.weights);
    const double latent = prior - cross.dot(model.chol.solve(cross));
    variance[i] = std::max(latent, 0.0) + model.cfg.noise_variance;
  }
}

Eigen::VectorXd outcome_sample(const OutcomeModel &model, const std::string &patient,
                               const EventSequence &events, const std::vector<double> &query_times,
                               RandomStream &noise) {
  Eigen::VectorXd mean, var;
  outcome_predict(model, patient, events, query_times, mean, var);
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean[i] += std::sqrt(var[i]) * noise.normal();
  return mean;
}

Eigen::VectorXd outcome_sample(const OutcomeModel &model, const std::string &patient,
                               const EventSequence &events, const std::vector<double> &query_times,
                               std::uint64_t seed) {
  RandomStream stream(seed, 0x6f7574636f6d65ULL);  // "outcome"
  return outcome_sample(model, patient, events, query_times, stream);
}

}  // namespace medtraj
