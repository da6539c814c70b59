#ifndef AIOHMM_ANTICIPATION_HPP
#define AIOHMM_ANTICIPATION_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "aiohmm/core_model.hpp"
#include "aiohmm/features.hpp"
#include "aiohmm/inference.hpp"
#include "aiohmm/learning.hpp"

namespace aiohmm {

struct ProtocolConfig {
  double stride_s = 0.8;
  double horizon_s = 5.0;
  double threshold = 0.5;
  double lockout_s = 5.0;

  void check() const;
};

struct PredictionEvent {
  double t = 0.0;
  ClassPosterior posteriors{};
  Maneuver predicted = Maneuver::driving_straight;
};

struct MetricCounts {
  int tp = 0;
  int fp = 0;
  int fpp = 0;
  int mp = 0;
  std::vector<double> tp_lead_times_s;

  MetricCounts& operator+=(const MetricCounts& other);
};

struct Metrics {
  MetricCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // NaN when there are no true predictions.
  double mean_time_to_maneuver_s = 0.0;
};

/// Pr = tp / (tp + fp + fpp), Re = tp / (tp + fp + mp), F1 their harmonic
/// mean (0 when both vanish).
Metrics derive_metrics(const MetricCounts& counts);

/// Most probable of the four maneuvers if it reaches the threshold, else
/// driving_straight. Ties go to the earlier class in enum order.
Maneuver gate_decision(const ClassPosterior& posteriors, double threshold);

/// Applies the threshold gate and lockout to a posterior stream. After a
/// maneuver prediction no further maneuver is predicted until lockout_s has
/// passed or a ground-truth maneuver has started, whichever is first. A
/// maneuver starting exactly at a step does not release that step.
std::vector<PredictionEvent> gate_stream(const std::vector<double>& times,
                                         const std::vector<ClassPosterior>& posteriors,
                                         const std::vector<Annotation>& ground_truth,
                                         const ProtocolConfig& cfg);

// t0, t0 + stride, ... where t0 is the first instant with a full horizon.
std::vector<double> step_times(const RawTrace& trace, const ProtocolConfig& cfg);

/// Streaming anticipation over a trace: every stride the trailing horizon is
/// featurized, scored against all class models and gated. `ground_truth`
/// only drives the lockout release.
std::vector<PredictionEvent> stream_anticipate(const ManeuverScorer& scorer, const RawTrace& trace,
                                               const ProtocolConfig& cfg,
                                               const std::vector<Annotation>& ground_truth = {});
std::vector<PredictionEvent> stream_anticipate(const ManeuverModelSet& models, const RawTrace& trace,
                                               const ProtocolConfig& cfg,
                                               const std::vector<Annotation>& ground_truth = {});

/// Matches each maneuver prediction to the earliest unmatched ground-truth
/// maneuver starting within lockout_s after it. Events must be time-ordered.
Metrics score(const std::vector<PredictionEvent>& events, const std::vector<Annotation>& ground_truth,
              const ProtocolConfig& cfg);

using ConfusionMatrix = std::array<std::array<int, kNumManeuvers>, kNumManeuvers>;

/// Rows are predicted classes, columns actual classes, using the same
/// matching as score(). The driving_straight row holds missed maneuvers, the
/// driving_straight column holds false positive predictions.
ConfusionMatrix confusion_matrix(const std::vector<PredictionEvent>& events,
                                 const std::vector<Annotation>& ground_truth,
                                 const ProtocolConfig& cfg);

/// Re-gates the stored posteriors of `events` at each threshold.
std::vector<Metrics> threshold_curve(const std::vector<PredictionEvent>& events,
                                     const std::vector<Annotation>& ground_truth,
                                     const std::vector<double>& thresholds, const ProtocolConfig& cfg);

/// Treats a labeled sequence as a short stream: one event per chunk, using
/// the posterior of the prefix seen so far, with the maneuver (if any)
/// starting right after the last chunk.
MetricCounts evaluate_sequence(const std::vector<ClassPosterior>& prefix_posteriors,
                               const FeatureSequence& seq, const ProtocolConfig& cfg);

// Counts summed over sequences, one entry per threshold.
std::vector<MetricCounts> evaluate_sequences(const ManeuverScorer& scorer, const Dataset& sequences,
                                             const std::vector<double>& thresholds,
                                             const ProtocolConfig& cfg);

// 0.05, 0.10, ..., 0.95
std::vector<double> default_threshold_grid();

struct SweepRow {
  int n_states = 0;
  double threshold = 0.0;
  int fold = 0;  // -1 marks the across-fold mean
  Metrics metrics;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by (n_states, threshold, fold)
  int best_states = 0;
  double best_threshold = 0.0;
  double best_f1 = 0.0;
};

/// Stratified fold index per sequence, deterministic in the seed.
std::vector<int> assign_folds(const Dataset& data, int n_folds, std::uint64_t seed);

/// k-fold cross-validation over state counts and thresholds. With one fold
/// the models are trained and evaluated on the full dataset.
SweepResult sweep(const Dataset& data, const std::vector<int>& state_counts,
                  const std::vector<double>& thresholds, int n_folds, std::uint64_t seed,
                  const EmConfig& base_cfg = {}, const ProtocolConfig& proto = {});

}  // namespace aiohmm

#endif  // AIOHMM_ANTICIPATION_HPP
