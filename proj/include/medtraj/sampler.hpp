#ifndef MEDTRAJ_SAMPLER_HPP
#define MEDTRAJ_SAMPLER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "medtraj/mediator.hpp"
#include "medtraj/outcome.hpp"
#include "medtraj/rng.hpp"
#include "medtraj/types.hpp"

namespace medtraj {

/// Common-random-number noise source: three independent substreams of one
/// seed (thinning uniforms, mark normals, outcome-noise normals). Replayable
/// by reconstructing with the same seed; copies replay independently.
struct NoiseReservoir {
  std::uint64_t seed;
  RandomStream thinning;
  RandomStream marks;
  RandomStream outcome;

  explicit NoiseReservoir(std::uint64_t seed_)
      : seed(seed_), thinning(seed_, 0x7468696eULL), marks(seed_, 0x6d61726bULL),
        outcome(seed_, 0x6f757463ULL) {}

  /// Reservoir for replicate `index` of a master seed.
  static NoiseReservoir replicate(std::uint64_t master_seed, std::uint64_t index) {
    return NoiseReservoir(splitmix64(master_seed ^ splitmix64(index)));
  }
};

struct Trajectory {
  EventSequence events;
  std::vector<double> grid_h;
  std::vector<double> outcome_values;  // aligned with grid_h
  PathIntervention intervention;
};

std::vector<double> default_grid(double start_h, double horizon_h, int points_per_day = 40);

/// Ogata thinning over [0, horizon] with outcome values sampled on the default
/// grid (they feed the intensity's outcome-history features).
EventSequence sample_events(const MediatorModel &mediator, const OutcomeModel &outcome_for_history,
                            const std::string &patient, double horizon_h,
                            NoiseReservoir &reservoir);

/// Full trajectory: events via thinning, outcomes sampled at each grid point
/// from the outcome model given the events realized so far; sampled outcome
/// values feed the mediator intensity for subsequent intervals.
Trajectory rollout(const OutcomeModel &outcome, const MediatorModel &mediator,
                   const std::string &patient, double horizon_h, const std::vector<double> &grid_h,
                   NoiseReservoir &reservoir);

}  // namespace medtraj

#endif
