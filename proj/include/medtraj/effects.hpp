#ifndef MEDTRAJ_EFFECTS_HPP
#define MEDTRAJ_EFFECTS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "medtraj/mediator.hpp"
#include "medtraj/outcome.hpp"
#include "medtraj/sampler.hpp"
#include "medtraj/types.hpp"

namespace medtraj {

/// Fitted mediator + outcome model for one regime.
struct JointModel {
  OutcomeModel outcome;
  MediatorModel mediator;
};

/// Direct-path regime picks the outcome model, indirect-path regime picks the
/// mediator model; pure selection, no refitting.
struct CounterfactualModels {
  const OutcomeModel *outcome;
  const MediatorModel *mediator;
};

CounterfactualModels assemble_counterfactual(const JointModel &pre, const JointModel &post,
                                             const PathIntervention &intervention);

struct EffectTrack {
  Eigen::VectorXd mean;
  Eigen::VectorXd se;  // Monte Carlo standard error per grid point
};

struct EffectEstimate {
  std::vector<double> grid_h;
  EffectTrack nde, nie, te;
  int n_replicates = 0;
  std::uint64_t seed = 0;
};

/// Monte Carlo natural direct/indirect/total effect trajectories. Each
/// replicate couples three rollouts ([nat,nat], [nat,treat], [treat,treat])
/// through one shared noise reservoir. Grid points must all exceed ta_h.
EffectEstimate estimate_effects(const JointModel &pre, const JointModel &post, double ta_h,
                                const std::vector<double> &grid_h, int n_replicates,
                                std::uint64_t master_seed);

/// Same, with explicit per-replicate seeds; accumulation is in sorted-seed
/// order so any permutation of the list gives identical estimates.
EffectEstimate estimate_effects(const JointModel &pre, const JointModel &post, double ta_h,
                                const std::vector<double> &grid_h,
                                const std::vector<std::uint64_t> &replicate_seeds,
                                std::uint64_t reported_seed);

struct GlycemiaMetrics {
  double pct_hypo;          // % of grid points with value <= low
  double pct_above_normal;  // % of grid points with value >= high
};

GlycemiaMetrics glycemia_metrics(const std::vector<double> &values, double low, double high);

double effect_mse(const Eigen::VectorXd &estimated, const Eigen::VectorXd &oracle);

struct AblationSpec {
  std::string name;
  MediatorVariant mediator_variant = MediatorVariant::Interacting;
  ResponseVariant response_variant = ResponseVariant::Nonparametric;
  bool direct_arrow = true;  // false: one outcome model fitted on pooled regimes
};

/// The five standard rows: full model plus the four reduced variants.
std::vector<AblationSpec> standard_ablations();

/// Training data and configs an ablation refit needs.
struct StudyFit {
  std::vector<EventSequence> pre_events, post_events;
  std::vector<OutcomeSeries> pre_outcomes, post_outcomes;
  MediatorConfig mediator_cfg;
  OutcomeConfig outcome_cfg;
};

std::pair<JointModel, JointModel> make_ablation(const AblationSpec &spec, const StudyFit &base);

struct BenchmarkRow {
  std::string model;
  double mse_nde, mse_nie, mse_te;
};

struct BenchmarkConfig {
  int n_patients = 10;
  double horizon_h = 24.0;
  int train_points_per_day = 30;
  int oracle_replicates = 600;
  int effect_replicates = 150;
  int outcome_fit_iters = 25;
  int mediator_fit_iters = 30;
  std::uint64_t seed = 1;
};

/// Hand-constructed in-model-class ground truth: interacting mediator with a
/// glucose-dependent intensity, non-flat meal response, and a level shift plus
/// damped response in the post regime.
std::pair<JointModel, JointModel> make_synthetic_truth(const BenchmarkConfig &cfg);

/// Samples a training set from the synthetic truth, fits every standard
/// ablation, and scores each against the truth's effect trajectories.
std::vector<BenchmarkRow> run_benchmark(const BenchmarkConfig &cfg);

}  // namespace medtraj

#endif
