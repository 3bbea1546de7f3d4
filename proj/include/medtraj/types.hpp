#ifndef MEDTRAJ_TYPES_HPP
#define MEDTRAJ_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace medtraj {

enum class Regime { Pre, Post };

inline std::string regime_name(Regime r) { return r == Regime::Pre ? "pre" : "post"; }

inline Regime regime_from_name(const std::string &s) {
  if (s == "pre") return Regime::Pre;
  if (s == "post") return Regime::Post;
  throw std::invalid_argument("unknown regime: " + s);
}

struct Event {
  double time_h;
  double mark_g;  // carbohydrate grams, > 0
};

/// Timestamped marked mediator events (meal time + carbohydrate mark) for one
/// patient-regime. Times strictly increasing within [0, horizon].
struct EventSequence {
  std::string patient_id;
  Regime regime = Regime::Pre;
  std::vector<Event> events;
  double horizon_h = 0.0;

  void validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].mark_g <= 0.0)
        throw std::invalid_argument("event mark must be > 0 (patient " + patient_id + ")");
      if (i > 0 && events[i].time_h <= events[i - 1].time_h)
        throw std::invalid_argument("event times must be strictly increasing (patient " +
                                    patient_id + ")");
    }
  }
};

struct OutcomePoint {
  double time_h;
  double value;  // mmol/L
};

/// Timestamped continuous outcome measurements (glucose) for one patient-regime.
struct OutcomeSeries {
  std::string patient_id;
  Regime regime = Regime::Pre;
  std::vector<OutcomePoint> points;

  void validate() const {
    for (std::size_t i = 1; i < points.size(); ++i)
      if (points[i].time_h <= points[i - 1].time_h)
        throw std::invalid_argument("outcome times must be strictly increasing (patient " +
                                    patient_id + ")");
  }
};

/// History at a query time tau: mediator events strictly before tau, outcome
/// measurements at times <= tau.
struct History {
  std::vector<Event> events;          // all with time_h < tau
  std::vector<OutcomePoint> outcomes; // all with time_h <= tau
};

/// Which regime each causal path is set to in a counterfactual query.
enum class Arm { Natural, Treated };

/// The [a1, a2] bracket: a1 drives the direct (outcome) path, a2 the indirect
/// (mediator) path. Effects use [nat,nat], [nat,treat], [treat,treat].
struct PathIntervention {
  Arm direct = Arm::Natural;
  Arm indirect = Arm::Natural;
};

inline std::string intervention_name(const PathIntervention &iv) {
  auto arm = [](Arm a) { return a == Arm::Natural ? std::string("natural") : std::string("treated"); };
  return arm(iv.direct) + "-" + arm(iv.indirect);
}

}  // namespace medtraj

#endif
