// End-to-end acceptance checks, one line of output per criterion.
// Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "medtraj/effects.hpp"
#include "medtraj/rng.hpp"
#include "medtraj/sampler.hpp"
#include "medtraj/workbench.hpp"

using namespace medtraj;

namespace {

int g_failures = 0;

class Criterion {
 public:
  Criterion(int number, const char *title, double budget_s)
      : number_(number), title_(title), budget_s_(budget_s),
        start_(std::chrono::steady_clock::now()) {}

  void check(bool ok, const std::string &detail) {
    if (!ok) {
      ok_ = false;
      if (first_failure_.empty()) first_failure_ = detail;
    }
  }

  void finish() {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (budget_s_ > 0.0 && elapsed > budget_s_) {
      ok_ = false;
      if (first_failure_.empty())
        first_failure_ = "runtime " + std::to_string(elapsed) + " s exceeds budget";
    }
    std::printf("criterion %d (%s): %s [%.2f s]%s%s\n", number_, title_,
                ok_ ? "PASS" : "FAIL", elapsed, first_failure_.empty() ? "" : " — ",
                first_failure_.c_str());
    std::fflush(stdout);
    if (!ok_) ++g_failures;
  }

 private:
  int number_;
  const char *title_;
  double budget_s_;
  std::chrono::steady_clock::time_point start_;
  bool ok_ = true;
  std::string first_failure_;
};

Eigen::MatrixXd random_inputs(std::mt19937 &rng, int n, int d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = u(rng);
  return X;
}

// independent dense reference via explicit full-pivot LU inverse
void dense_reference(const ExactGP &gp, const Eigen::MatrixXd &Xs, Eigen::VectorXd &mean,
                     Eigen::MatrixXd &cov, double &lml) {
  const Eigen::Index n = gp.train_inputs.rows();
  const Eigen::MatrixXd K = gram_matrix(gp.kernel, gp.train_inputs, gp.train_inputs) +
                            (gp.noise_variance + 1e-6) * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd Kinv = K.fullPivLu().inverse();
  const Eigen::MatrixXd Ks = gram_matrix(gp.kernel, Xs, gp.train_inputs);
  const Eigen::MatrixXd Kss = gram_matrix(gp.kernel, Xs, Xs);
  mean = Ks * Kinv * gp.train_targets;
  cov = Kss - Ks * Kinv * Ks.transpose();
  lml = -0.5 * gp.train_targets.dot(Kinv * gp.train_targets) -
        0.5 * std::log(K.fullPivLu().determinant()) -
        0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

// deterministic constant-intensity mediator: lambda = beta0^2
MediatorModel flat_mediator(double beta0) {
  MediatorConfig cfg;
  cfg.beta0 = beta0;
  cfg.gm_variance = 1e-18;
  cfg.go_variance = 1e-18;
  MediatorModel model = make_mediator_model(cfg);
  model.beta0 = beta0;
  model.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  model.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(30.0));
  model.cfg.mark_noise = 0.1;
  model.finalize();
  return model;
}

JointModel simple_joint(double beta0, const std::vector<std::string> &patients) {
  JointModel jm;
  jm.outcome = make_outcome_model(OutcomeConfig{}, patients);
  MediatorConfig mcfg;
  mcfg.beta0 = beta0;
  jm.mediator = make_mediator_model(mcfg);
  jm.mediator.beta0 = beta0;
  jm.mediator.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  jm.mediator.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(40.0));
  jm.mediator.cfg.mark_noise = 0.1;
  jm.mediator.finalize();
  return jm;
}

}  // namespace

static void criterion_1() {
  Criterion c(1, "exact GP vs dense-solve reference", 5.0);
  std::mt19937 rng(17);
  std::uniform_int_distribution<int> size(1, 20);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  std::normal_distribution<double> nrm;
  for (int t = 0; t < 50; ++t) {
    ExactGP gp;
    gp.kernel = KernelSpec::squared_exponential(u(rng), {u(rng)});
    gp.noise_variance = 0.1 + 0.2 * u(rng);
    const int n = size(rng);
    gp.train_inputs = random_inputs(rng, n, 1, -2.0, 2.0);
    gp.train_targets.resize(n);
    for (int i = 0; i < n; ++i) gp.train_targets[i] = nrm(rng);
    const Eigen::MatrixXd Xs = random_inputs(rng, 3, 1, -2.0, 2.0);
    Eigen::VectorXd mean_ref;
    Eigen::MatrixXd cov_ref;
    double lml_ref;
    dense_reference(gp, Xs, mean_ref, cov_ref, lml_ref);
    const auto post = exact_posterior(gp, Xs);
    c.check((post.mean - mean_ref).cwiseAbs().maxCoeff() < 1e-8, "posterior mean mismatch");
    c.check((post.cov - cov_ref).cwiseAbs().maxCoeff() < 1e-8, "posterior cov mismatch");
    c.check(std::abs(log_marginal_likelihood(gp) - lml_ref) < 1e-8, "lml mismatch");
  }
  c.finish();
}

static void criterion_2() {
  Criterion c(2, "marginal-likelihood gradient vs finite differences", 30.0);
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> nrm;
  struct Variant {
    const char *label;
    KernelSpec kernel;
    int dim;
    double lo, hi;
  };
  const std::vector<Variant> variants = {
      {"squared_exponential", KernelSpec::squared_exponential(1.1, {0.9}), 1, -2.0, 2.0},
      {"matern12", KernelSpec::matern12(0.8, 1.2), 1, -2.0, 2.0},
      {"constant", KernelSpec::constant(0.7), 1, -2.0, 2.0},
      {"periodic", KernelSpec::periodic(1.0, 1.1, 7.0), 1, -2.0, 2.0},
      {"sum", KernelSpec::sum({KernelSpec::squared_exponential(0.9, {1.3}),
                               KernelSpec::constant(0.4)}),
       1, -2.0, 2.0},
      {"time_marked",
       KernelSpec::time_marked(KernelSpec::squared_exponential(1.0, {0.7, 1.4}), 3.0), 2, 0.1,
       2.9},
  };
  for (const auto &v : variants) {
    for (int t = 0; t < 20; ++t) {
      ExactGP gp;
      gp.kernel = v.kernel;
      for (const auto &name : kernel_param_names(gp.kernel))
        kernel_param_set(gp.kernel, name, kernel_param_get(gp.kernel, name) * u(rng));
      gp.noise_variance = 0.2 + 0.3 * u(rng);
      gp.train_inputs = random_inputs(rng, 8, v.dim, v.lo, v.hi);
      gp.train_targets.resize(8);
      for (int i = 0; i < 8; ++i) gp.train_targets[i] = nrm(rng);

      std::vector<std::string> names = kernel_param_names(gp.kernel);
      names.push_back("noise_variance");
      const Eigen::VectorXd grad = lml_gradient(gp, names);
      for (std::size_t p = 0; p < names.size(); ++p) {
        const double h = 1e-5;
        auto eval_at = [&](double log_shift) {
          ExactGP g = gp;
          if (names[p] == "noise_variance")
            g.noise_variance = gp.noise_variance * std::exp(log_shift);
          else
            kernel_param_set(g.kernel, names[p],
                             kernel_param_get(gp.kernel, names[p]) * std::exp(log_shift));
          return log_marginal_likelihood(g);
        };
        const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        const double an = grad[static_cast<Eigen::Index>(p)];
        const double rel = std::abs(an - fd) / std::max(std::abs(fd), 1e-6);
        c.check(rel <= 1e-4,
                std::string(v.label) + "/" + names[p] + " rel err " + std::to_string(rel));
      }
    }
  }
  c.finish();
}

static void criterion_3() {
  Criterion c(3, "thinning sampler count statistics", 60.0);
  const auto med = flat_mediator(std::numbers::sqrt2);  // lambda = 2
  const auto out = make_outcome_model(OutcomeConfig{}, {"p0"});
  const int n = 10000;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    NoiseReservoir res = NoiseReservoir::replicate(5, static_cast<std::uint64_t>(i));
    total += static_cast<double>(sample_events(med, out, "p0", 10.0, res).events.size());
  }
  const double mean = total / n;
  c.check(mean >= 19.82 && mean <= 20.18, "empirical mean count " + std::to_string(mean));
  c.finish();
}

static void criterion_4() {
  Criterion c(4, "effect decomposition identities", 0.0);
  // distinct regimes: TE = NDE + NIE pointwise
  const auto pre = simple_joint(0.3, {"p0"});
  auto post = simple_joint(0.5, {"p0"});
  post.outcome.mean_offset -= 0.8;
  post.outcome.finalize();
  const std::vector<double> grid = {2.0, 5.0, 9.0, 14.0, 20.0};
  const auto est = estimate_effects(pre, post, 1.0, grid, 30, 11);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Eigen::Index k = static_cast<Eigen::Index>(i);
    c.check(std::abs(est.te.mean[k] - est.nde.mean[k] - est.nie.mean[k]) <= 1e-12,
            "TE != NDE + NIE at grid point " + std::to_string(grid[i]));
  }
  // identical regimes under a shared reservoir: exact zeros
  const auto null_est = estimate_effects(pre, pre, 1.0, grid, 20, 7);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Eigen::Index k = static_cast<Eigen::Index>(i);
    c.check(null_est.nde.mean[k] == 0.0 && null_est.nie.mean[k] == 0.0 &&
                null_est.te.mean[k] == 0.0,
            "null fixture effect not exactly zero at " + std::to_string(grid[i]));
  }
  c.finish();
}

static void criterion_5() {
  Criterion c(5, "constructed level-shift recovery", 300.0);
  const auto pre = simple_joint(0.4, {"p0"});
  JointModel post = pre;
  post.outcome.mean_offset -= 1.0;
  post.outcome.finalize();
  const auto grid = default_grid(1.0, 25.0);
  const auto est = estimate_effects(pre, post, 1.0, grid, 200, 3);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Eigen::Index k = static_cast<Eigen::Index>(i);
    // shared noise cancels exactly here, so allow a tiny floor on top of 3 SE
    const double tol_nde = 3.0 * est.nde.se[k] + 1e-9;
    const double tol_nie = 3.0 * est.nie.se[k] + 1e-9;
    c.check(std::abs(est.nde.mean[k] + 1.0) <= tol_nde,
            "NDE " + std::to_string(est.nde.mean[k]) + " at " + std::to_string(grid[i]));
    c.check(std::abs(est.nie.mean[k]) <= tol_nie,
            "NIE " + std::to_string(est.nie.mean[k]) + " at " + std::to_string(grid[i]));
  }
  c.finish();
}

static void criterion_6() {
  Criterion c(6, "synthetic-truth ablation ordering", 600.0);
  int full_model_wins = 0, interacting_nie_wins = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    BenchmarkConfig cfg;
    cfg.seed = seed;
    const auto rows = run_benchmark(cfg);
    auto row = [&](const std::string &name) -> const BenchmarkRow & {
      for (const auto &r : rows)
        if (r.model == name) return r;
      throw std::logic_error("missing benchmark row " + name);
    };
    const auto &our = row("our");
    const auto &m1 = row("m1");
    const auto &m2 = row("m2");
    const auto &m3 = row("m3");
    const auto &h22 = row("h22");
    if (our.mse_nde < m2.mse_nde && our.mse_nde < m3.mse_nde && our.mse_te < m2.mse_te &&
        our.mse_te < m3.mse_te)
      ++full_model_wins;
    const double worst_interacting = std::max({our.mse_nie, m3.mse_nie, h22.mse_nie});
    const double best_non_interacting = std::min(m1.mse_nie, m2.mse_nie);
    if (worst_interacting <= best_non_interacting) ++interacting_nie_wins;
  }
  c.check(full_model_wins >= 2, "full model beat the reduced variants on NDE and TE in only " +
                                    std::to_string(full_model_wins) + "/3 seeds");
  c.check(interacting_nie_wins >= 2, "interacting variants led on NIE in only " +
                                         std::to_string(interacting_nie_wins) + "/3 seeds");
  c.finish();
}

static void criterion_7() {
  Criterion c(7, "glycemia threshold metrics", 0.0);
  const auto constant_low = glycemia_metrics(std::vector<double>(10, 3.0), 3.9, 5.6);
  c.check(constant_low.pct_hypo == 100.0 && constant_low.pct_above_normal == 0.0,
          "constant-3.0 fixture");
  const auto split = glycemia_metrics({3.5, 3.5, 6.0, 6.0}, 3.9, 5.6);
  c.check(split.pct_hypo == 50.0 && split.pct_above_normal == 50.0, "half/half fixture");
  const auto in_range = glycemia_metrics(std::vector<double>(5, 5.0), 3.9, 5.6);
  c.check(in_range.pct_hypo == 0.0 && in_range.pct_above_normal == 0.0, "in-range fixture");
  const auto edges = glycemia_metrics({3.9, 5.6}, 3.9, 5.6);
  c.check(edges.pct_hypo == 50.0 && edges.pct_above_normal == 50.0, "boundary fixture");
  const auto eighth = glycemia_metrics({3.0, 6.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0}, 3.9, 5.6);
  c.check(eighth.pct_hypo == 12.5 && eighth.pct_above_normal == 12.5, "one-eighth fixture");
  c.finish();
}

static void criterion_8() {
  Criterion c(8, "default configuration snapshot", 0.0);
  std::ifstream in(GOLDEN_CONFIG_PATH);
  c.check(static_cast<bool>(in), "cannot open golden file " GOLDEN_CONFIG_PATH);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string golden = buf.str();
  const std::string current = run_config_to_json(RunConfig{}).dump(2) + "\n";
  c.check(golden == current, "default RunConfig JSON differs from the golden file");

  const auto j = nlohmann::json::parse(golden);
  const auto &m = j.at("mediator");
  const auto &o = j.at("outcome");
  c.check(m.at("beta0") == 0.1, "beta0");
  c.check(m.at("gm_variance") == 0.1 && m.at("gm_lengthscale") == 1.5, "event-history kernel");
  c.check(m.at("go_variance") == 0.1 && m.at("go_time_lengthscale") == 100.0 &&
              m.at("go_value_lengthscale") == 5.0,
          "outcome-history kernel");
  c.check(m.at("n_inducing") == 20, "inducing-point count");
  c.check(o.at("periodic_variance") == 1.0 && o.at("periodic_lengthscale") == 10.0 &&
              o.at("period_h") == 24.0,
          "baseline kernel");
  c.check(o.at("shape_variance") == 1.0 && o.at("shape_lengthscale") == 0.5,
          "response shape kernel");
  c.check(o.at("magnitude_init") == 0.1, "magnitude initialization");
  c.check(o.at("t_eff_h") == 3.0, "effective response window");
  c.finish();
}

static void criterion_9() {
  Criterion c(9, "causality suite", 60.0);
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> ut(0.0, 24.0), um(10.0, 90.0), uy(3.0, 9.0);

  // outcome response on fitted models: exactly zero before the event and
  // beyond the window, nonzero inside it
  std::vector<EventSequence> train_events(1);
  train_events[0].patient_id = "p0";
  train_events[0].horizon_h = 24.0;
  train_events[0].events = {{4.0, 40.0}, {10.0, 55.0}, {17.0, 60.0}};
  std::vector<OutcomeSeries> train_outcomes(1);
  train_outcomes[0].patient_id = "p0";
  for (double tt = 0.5; tt <= 24.0; tt += 0.5) {
    double y = 5.5 + 0.4 * std::sin(2.0 * std::numbers::pi * tt / 24.0);
    for (const auto &ev : train_events[0].events) {
      const double r = tt - ev.time_h;
      if (r > 0.0 && r <= 3.0) y += (ev.mark_g / 50.0) * 1.1 * r * std::exp(-r / 0.6);
    }
    train_outcomes[0].points.push_back({tt, y});
  }
  OutcomeConfig fit_cfg;
  fit_cfg.max_iters = 5;
  const auto nonparametric = fit_outcome(train_outcomes, train_events, fit_cfg);
  OutcomeConfig flat_cfg = fit_cfg;
  flat_cfg.response_variant = ResponseVariant::Constant;
  const auto constant = fit_outcome(train_outcomes, train_events, flat_cfg);
  const double window = nonparametric.cfg.t_eff_h;
  for (int t = 0; t < 10000; ++t) {
    EventSequence seq;
    seq.patient_id = "p0";
    seq.horizon_h = 48.0;
    const double ev_time = ut(rng);
    seq.events = {{ev_time, um(rng)}};
    const double off = std::uniform_real_distribution<double>(-6.0, 9.0)(rng);
    const double q = ev_time + off;
    if (off <= 0.0 || off > window) {
      c.check(response_value(nonparametric, "p0", seq, q) == 0.0,
              "nonzero response outside the causal window");
      c.check(response_value(constant, "p0", seq, q) == 0.0,
              "nonzero constant response outside the causal window");
    } else {
      c.check(response_value(nonparametric, "p0", seq, q) != 0.0,
              "zero response inside the causal window");
      c.check(response_value(constant, "p0", seq, q) != 0.0,
              "zero constant response inside the causal window");
    }
  }

  // mediator: non-negativity, lag locality, history boundary
  MediatorConfig mcfg;
  auto med = make_mediator_model(mcfg);
  std::mt19937 mean_rng(7);
  std::normal_distribution<double> nrm(0.0, 0.3);
  for (Eigen::Index i = 0; i < med.g_m.variational_mean.size(); ++i)
    med.g_m.variational_mean[i] = nrm(mean_rng);
  for (Eigen::Index i = 0; i < med.g_o.variational_mean.size(); ++i)
    med.g_o.variational_mean[i] = nrm(mean_rng);
  med.mark_gp.train_inputs = Eigen::MatrixXd::Constant(1, 1, 12.0);
  med.mark_gp.train_targets = Eigen::VectorXd::Constant(1, std::log(30.0));
  med.cfg.mark_noise = 0.1;
  med.finalize();

  for (int t = 0; t < 10000; ++t) {
    const double tau = 0.5 + ut(rng) * (23.5 / 24.0);
    History h;
    if (t % 2 == 0) h.events.push_back({tau * 0.2, um(rng)});
    if (t % 3 == 0) h.outcomes.push_back({tau * 0.3, uy(rng)});
    const double lam = time_intensity(med, tau, h);
    c.check(lam >= 0.0, "negative intensity");

    // lag locality (Q_m = 1): an event older than the latest one is invisible
    History h_recent = h;
    h_recent.events.push_back({tau * 0.9, um(rng)});
    const double base = time_intensity(med, tau, h_recent);
    History h_older = h;
    h_older.events.push_back({tau * 0.5, um(rng)});
    h_older.events.push_back(h_recent.events.back());
    c.check(time_intensity(med, tau, h_older) == base, "older event changed the intensity");

    // boundary: an outcome exactly at tau counts, an event exactly at tau does not
    History h_out = h;
    h_out.outcomes.push_back({tau, 12.0});
    c.check(time_intensity(med, tau, h_out) != lam, "outcome at tau ignored");
    History h_ev = h;
    h_ev.events.push_back({tau, um(rng)});
    c.check(time_intensity(med, tau, h_ev) == lam, "event at tau not excluded");
  }
  c.finish();
}

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  if (g_failures > 0) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
