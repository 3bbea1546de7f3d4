#include "medtraj/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace medtraj {

namespace {

constexpr int kProbePoints = 64;
constexpr double kBoundInflation = 1.5;
constexpr int kMaxEscalations = 10;

// Thin events on (t0, t1] under the current history; accepted events are
// appended to both the output sequence and the running history.
void thin_segment(const MediatorModel &med, History &hist, EventSequence &seq, double t0, double t1,
                  NoiseReservoir &res) {
  if (t1 <= t0) return;
  double cur = t0;
  while (true) {
    double lam_bar = 0.0;
    for (int i = 0; i < kProbePoints; ++i) {
      const double tau = cur + (t1 - cur) * i / (kProbePoints - 1);
      lam_bar = std::max(lam_bar, time_intensity(med, tau, hist));
    }
    lam_bar *= kBoundInflation;
    if (lam_bar <= 0.0) return;

    int escalations = 0;
    double tau = cur;
    for (;;) {
      const double u = res.thinning.uniform();
      tau += -std::log(1.0 - u) / lam_bar;
      if (tau > t1) return;
      const double lam = time_intensity(med, tau, hist);
      if (lam > lam_bar) {
        if (++escalations > kMaxEscalations)
          throw std::runtime_error("thinning: intensity bound escalation limit exceeded");
        lam_bar *= 2.0;
        tau = cur;
        continue;
      }
      if (res.thinning.uniform() * lam_bar <= lam) break;
    }

    const double mark = sample_mark(med, tau, res.marks);
    seq.events.push_back({tau, mark});
    hist.events.push_back({tau, mark});
    cur = tau;  // bound is recomputed for the remaining window
  }
}

}  // namespace

std::vector<double> default_grid(double start_h, double horizon_h, int points_per_day) {
  if (points_per_day <= 0) throw std::invalid_argument("points_per_day must be positive");
  const double step = 24.0 / points_per_day;
  std::vector<double> grid;
  const int n = static_cast<int>(std::floor((horizon_h - start_h) / step + 1e-9));
  grid.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int k = 1; k <= n; ++k) grid.push_back(start_h + k * step);
  return grid;
}

Trajectory rollout(const OutcomeModel &outcome, const MediatorModel &mediator,
                   const std::string &patient, double horizon_h, const std::vector<double> &grid_h,
                   NoiseReservoir &reservoir) {
  if (horizon_h <= 0.0) throw std::invalid_argument("rollout: horizon must be positive");
  for (std::size_t i = 0; i < grid_h.size(); ++i) {
    if (grid_h[i] < 0.0 || grid_h[i] > horizon_h)
      throw std::invalid_argument("rollout: grid point outside horizon");
    if (i > 0 && grid_h[i] <= grid_h[i - 1])
      throw std::invalid_argument("rollout: grid must be strictly increasing");
  }

  Trajectory tr;
  tr.grid_h = grid_h;
  tr.events.patient_id = patient;
  tr.events.horizon_h = horizon_h;
  tr.outcome_values.reserve(grid_h.size());

  History hist;
  double prev = 0.0;
  Eigen::VectorXd mean, var;
  for (double g : grid_h) {
    thin_segment(mediator, hist, tr.events, prev, g, reservoir);
    outcome_predict(outcome, patient, tr.events, {g}, mean, var);
    const double value = mean[0] + std::sqrt(std::max(var[0], 0.0)) * reservoir.outcome.normal();
    tr.outcome_values.push_back(value);
    hist.outcomes.push_back({g, value});
    prev = g;
  }
  thin_segment(mediator, hist, tr.events, prev, horizon_h, reservoir);
  return tr;
}

EventSequence sample_events(const MediatorModel &mediator, const OutcomeModel &outcome_for_history,
                            const std::string &patient, double horizon_h,
                            NoiseReservoir &reservoir) {
  const auto grid = default_grid(0.0, horizon_h);
  return rollout(outcome_for_history, mediator, patient, horizon_h, grid, reservoir).events;
}

}  // namespace medtraj
