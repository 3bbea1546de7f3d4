#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "medtraj/sampler.hpp"

using namespace medtraj;

namespace {

// deterministic intensity (beta0 + 0)^2 = beta0^2: kernel variances so small
// the GP terms vanish
MediatorModel flat_mediator(double beta0) {
  MediatorConfig cfg;
  cfg.beta0 = beta0;
  cfg.gm_variance = 1e-18;
  cfg.go_variance = 1e-18;
  auto model = make_mediator_model(cfg);
  model.beta0 = beta0;
  model.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  model.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(30.0));
  model.cfg.mark_noise = 0.1;
  model.finalize();
  return model;
}

// history-free intensity tracking a + b sin^2(pi tau / 12) via inducing values
MediatorModel wavy_mediator(double a, double b) {
  MediatorConfig cfg;
  cfg.variant = MediatorVariant::NonInteracting;
  cfg.abs_variance = 1.0;
  cfg.abs_lengthscale = 3.0;
  cfg.abs_horizon_h = 24.0;
  auto model = make_mediator_model(cfg);
  for (Eigen::Index i = 0; i < model.g_abs.variational_mean.size(); ++i) {
    const double z = model.g_abs.inducing_inputs(i, 0);
    const double target = a + b * std::pow(std::sin(std::numbers::pi * z / 12.0), 2);
    model.g_abs.variational_mean[i] = std::sqrt(target) - model.beta0;
  }
  model.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  model.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(30.0));
  model.cfg.mark_noise = 0.1;
  model.finalize();
  return model;
}

OutcomeModel plain_outcome() { return make_outcome_model(OutcomeConfig{}, {"p0"}); }

}  // namespace

TEST_CASE("default grid spacing and count") {
  const auto g = default_grid(0.0, 24.0);
  REQUIRE(g.size() == 40);
  CHECK(g.front() == doctest::Approx(0.6));
  CHECK(g.back() == doctest::Approx(24.0));
  CHECK(g[1] - g[0] == doctest::Approx(0.6));

  const auto g2 = default_grid(12.0, 36.0);
  CHECK(g2.size() == 40);
  CHECK(g2.front() == doctest::Approx(12.6));
  CHECK(g2.back() == doctest::Approx(36.0));

  CHECK_THROWS_AS(default_grid(0.0, 24.0, 0), std::invalid_argument);
}

TEST_CASE("zero intensity gives an empty sequence and a baseline-only path") {
  const auto med = flat_mediator(0.0);
  const auto out = plain_outcome();
  NoiseReservoir res(7);
  const auto seq = sample_events(med, out, "p0", 24.0, res);
  CHECK(seq.events.empty());

  // with no events the outcomes are exactly the baseline-sampled trajectory
  const auto grid = default_grid(0.0, 24.0);
  NoiseReservoir res_a(11), res_b(11);
  const auto tr = rollout(out, med, "p0", 24.0, grid, res_a);
  EventSequence no_events;
  no_events.patient_id = "p0";
  no_events.horizon_h = 24.0;
  Eigen::VectorXd mean, var;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    outcome_predict(out, "p0", no_events, {grid[i]}, mean, var);
    const double expect = mean[0] + std::sqrt(var[0]) * res_b.outcome.normal();
    CHECK(tr.outcome_values[i] == expect);
  }
}

TEST_CASE("determinism: identical reservoir gives bit-identical trajectories") {
  const auto med = flat_mediator(1.0);
  const auto out = plain_outcome();
  const auto grid = default_grid(0.0, 24.0);
  NoiseReservoir r1(99), r2(99);
  const auto a = rollout(out, med, "p0", 24.0, grid, r1);
  const auto b = rollout(out, med, "p0", 24.0, grid, r2);
  REQUIRE(a.events.events.size() == b.events.events.size());
  for (std::size_t i = 0; i < a.events.events.size(); ++i) {
    CHECK(a.events.events[i].time_h == b.events.events[i].time_h);
    CHECK(a.events.events[i].mark_g == b.events.events[i].mark_g);
  }
  CHECK(a.outcome_values == b.outcome_values);
  CHECK(!a.events.events.empty());
  for (const auto &ev : a.events.events) {
    CHECK(ev.time_h > 0.0);
    CHECK(ev.time_h <= 24.0);
    CHECK(ev.mark_g > 0.0);
  }
}

TEST_CASE("homogeneous rate: empirical mean count matches the Poisson law") {
  const auto med = flat_mediator(std::numbers::sqrt2);  // lambda = 2
  const auto out = plain_outcome();
  const int n = 2000;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    NoiseReservoir res = NoiseReservoir::replicate(5, static_cast<std::uint64_t>(i));
    total += static_cast<double>(sample_events(med, out, "p0", 10.0, res).events.size());
  }
  const double mean = total / n;
  const double se = std::sqrt(20.0 / n);
  CHECK(mean > 20.0 - 4.0 * se);
  CHECK(mean < 20.0 + 4.0 * se);
}

TEST_CASE("inhomogeneous rate: thinning tracks the model's own intensity") {
  const auto med = wavy_mediator(0.3, 1.5);
  const auto out = plain_outcome();
  // expected count = integral of the plug-in intensity the sampler thins from
  History empty;
  double expected = 0.0;
  const int nfine = 20000;
  for (int i = 0; i < nfine; ++i) {
    const double tau = 24.0 * (i + 0.5) / nfine;
    expected += time_intensity(med, tau, empty) * (24.0 / nfine);
  }
  const int n = 2000;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    NoiseReservoir res = NoiseReservoir::replicate(8, static_cast<std::uint64_t>(i));
    total += static_cast<double>(sample_events(med, out, "p0", 24.0, res).events.size());
  }
  const double mean = total / n;
  const double se = std::sqrt(expected / n);
  CHECK(mean > expected - 4.0 * se);
  CHECK(mean < expected + 4.0 * se);
}

TEST_CASE("common random numbers couple event times across outcome models") {
  // interacting mediator whose outcome-history term has zero posterior mean:
  // the intensity ignores outcome values, so event times must coincide even
  // under different outcome models
  MediatorConfig cfg;
  auto med = make_mediator_model(cfg);
  for (Eigen::Index i = 0; i < med.g_m.variational_mean.size(); ++i)
    med.g_m.variational_mean[i] = 0.4 * std::sin(0.7 * static_cast<double>(i));
  med.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  med.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(30.0));
  med.cfg.mark_noise = 0.1;
  med.finalize();

  const auto out1 = plain_outcome();
  OutcomeConfig loud;
  loud.noise_variance = 2.5;
  const auto out2 = make_outcome_model(loud, {"p0"});

  const auto grid = default_grid(0.0, 24.0);
  NoiseReservoir r1(123), r2(123);
  const auto a = rollout(out1, med, "p0", 24.0, grid, r1);
  const auto b = rollout(out2, med, "p0", 24.0, grid, r2);
  REQUIRE(a.events.events.size() == b.events.events.size());
  CHECK(!a.events.events.empty());
  for (std::size_t i = 0; i < a.events.events.size(); ++i) {
    CHECK(a.events.events[i].time_h == b.events.events[i].time_h);
    CHECK(a.events.events[i].mark_g == b.events.events[i].mark_g);
  }
  // outcome paths themselves differ
  CHECK(a.outcome_values != b.outcome_values);
}

TEST_CASE("rollout events equal sample_events under the same interleaving") {
  const auto med = flat_mediator(1.2);
  const auto out = plain_outcome();
  NoiseReservoir r1(31), r2(31);
  const auto via_rollout = rollout(out, med, "p0", 24.0, default_grid(0.0, 24.0), r1).events;
  const auto direct = sample_events(med, out, "p0", 24.0, r2);
  REQUIRE(via_rollout.events.size() == direct.events.size());
  for (std::size_t i = 0; i < via_rollout.events.size(); ++i) {
    CHECK(via_rollout.events[i].time_h == direct.events[i].time_h);
    CHECK(via_rollout.events[i].mark_g == direct.events[i].mark_g);
  }
}

TEST_CASE("rollout input validation") {
  const auto med = flat_mediator(1.0);
  const auto out = plain_outcome();
  NoiseReservoir res(1);
  CHECK_THROWS_AS(rollout(out, med, "p0", -1.0, {}, res), std::invalid_argument);
  CHECK_THROWS_AS(rollout(out, med, "p0", 24.0, {5.0, 2.0}, res), std::invalid_argument);
  CHECK_THROWS_AS(rollout(out, med, "p0", 24.0, {5.0, 30.0}, res), std::invalid_argument);
}
