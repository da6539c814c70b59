#ifndef AIOHMM_SYNTH_HPP
#define AIOHMM_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "aiohmm/features.hpp"

namespace aiohmm {

/// Parameters of the synthetic driving-episode generator. Head motion is in
/// pixels per frame, speed in km/h.
struct ScenarioConfig {
  double duration_s = 300.0;
  double frame_rate = 25.0;
  double maneuver_rate_per_min = 3.0;
  double cue_lead_min_s = 1.0;
  double cue_lead_max_s = 5.0;
  double cue_strength = 5.0;
  double noise_sigma = 1.0;
  int n_points = 4;
  double horizon_s = 5.0;
  std::uint64_t seed = 0;

  void check() const;
};

inline constexpr double kMinManeuverSpacingSeconds = 10.0;

struct Episode {
  RawTrace trace;
  std::vector<Annotation> annotations;     // time-ordered, includes driving_straight samples
  std::vector<double> injected_cue_times;  // one per maneuver annotation, same order
};

/// Deterministic in cfg.seed. Throws std::invalid_argument when the maneuver
/// rate cannot honor the minimum spacing between maneuvers.
Episode generate_episode(const ScenarioConfig& cfg);

}  // namespace aiohmm

#endif  // AIOHMM_SYNTH_HPP
