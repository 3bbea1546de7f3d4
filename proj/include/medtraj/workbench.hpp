#ifndef MEDTRAJ_WORKBENCH_HPP
#define MEDTRAJ_WORKBENCH_HPP

#include <string>
#include <vector>

#include <json.hpp>

#include "medtraj/effects.hpp"
#include "medtraj/types.hpp"

namespace medtraj {

struct PatientRecord {
  std::string patient_id;
  bool has_pre = false, has_post = false;
  EventSequence events_pre, events_post;
  OutcomeSeries outcomes_pre, outcomes_post;
};

/// Paired pre/post observations for every patient; patients missing one regime
/// are kept and flagged partial.
struct StudyDataset {
  std::vector<PatientRecord> patients;  // sorted by patient_id
  double horizon_pre_h = 0.0, horizon_post_h = 0.0;

  std::vector<EventSequence> events(Regime r) const;
  std::vector<OutcomeSeries> outcomes(Regime r) const;
};

/// All tunables in one place; the defaults are the experiment settings the
/// whole pipeline is calibrated to (see the golden config test).
struct RunConfig {
  MediatorConfig mediator;
  OutcomeConfig outcome;
  double threshold_low = 3.9;   // hypoglycemia, mmol/L
  double threshold_high = 5.6;  // above-normal glycemia, mmol/L
  int grid_points_per_day = 40;
  int n_replicates = 200;
  double merge_window_min = 30.0;
  std::uint64_t seed = 0;
};

nlohmann::json run_config_to_json(const RunConfig &cfg);
RunConfig run_config_from_json(const nlohmann::json &j);

StudyDataset load_dataset(const std::string &events_path, const std::string &outcomes_path);

/// Left-to-right sweep: an event within `window_min` minutes of the current
/// merged event's (earliest) time is absorbed, marks summed. Idempotent.
EventSequence merge_meals(const EventSequence &events, double window_min);

void save_model(const JointModel &pre, const JointModel &post, const std::string &path);
std::pair<JointModel, JointModel> load_model(const std::string &path);

nlohmann::json effects_to_json(const EffectEstimate &est);

void write_trajectory_csv(const std::string &path, const std::vector<Trajectory> &trajectories,
                          const std::vector<std::string> &patient_ids,
                          const std::vector<int> &replicates);

int run_cli(int argc, const char *const *argv);

}  // namespace medtraj

#endif
