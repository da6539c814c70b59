#ifndef AIOHMM_FEATURES_HPP
#define AIOHMM_FEATURES_HPP

#include <array>
#include <span>
#include <string>
#include <vector>

#include "aiohmm/core_model.hpp"

namespace aiohmm {

/// One merged video frame: tracked facial point displacements against the
/// previous frame plus the outside signals sampled at the same instant.
struct FrameRecord {
  double t = 0.0;
  std::vector<std::array<double, 2>> point_motions;
  double face_center_dx = 0.0;
  int lane_left = 0;
  int lane_right = 0;
  int road_artifact = 0;
  double speed = 0.0;  // km/h
};

struct RawTrace {
  std::vector<FrameRecord> frames;
  double frame_rate = 25.0;

  // Throws std::invalid_argument on empty traces, non-increasing times or
  // negative speeds.
  void check() const;
};

struct Annotation {
  Maneuver maneuver = Maneuver::driving_straight;
  double t_start = 0.0;
};

inline constexpr int kFramesPerChunk = 20;
inline constexpr double kSpeedWindowSeconds = 5.0;

/// Raw per-frame head-motion histogram:
/// [dx bins (-inf,-2) [-2,0) [0,2) [2,inf) | angle quadrant bins | face_center_dx].
Vec face_histogram(const FrameRecord& frame);

/// Euclidean-normalized sum of exactly kFramesPerChunk per-frame vectors.
Vec aggregate_inside(std::span<const Vec> chunk);

/// Lane and artifact bits from the chunk's last frame; speed statistics over
/// the trailing window.
OutsideFeature outside_vector(std::span<const FrameRecord> chunk, std::span<const double> speed_window);

// Number of chunks covering `horizon_s` (floor division by the chunk length).
int chunks_in_horizon(double horizon_s, double chunk_s = kDefaultChunkSeconds);

/// Builds the sequence whose last chunk ends at frame `end_frame` (inclusive).
/// Throws std::out_of_range when fewer than K * 20 frames precede it.
FeatureSequence featurize_window(const RawTrace& trace, std::size_t end_frame, double horizon_s,
                                 Maneuver label = Maneuver::driving_straight);

// Index of the last frame with t <= time, or -1 if none.
long last_frame_at(const RawTrace& trace, double time);

/// One labeled sequence per annotation that has a full horizon of frames
/// before it; the rest are skipped with a message in `warnings`.
std::vector<FeatureSequence> featurize_trace(const RawTrace& trace,
                                             const std::vector<Annotation>& annotations,
                                             double horizon_s = 5.0,
                                             std::vector<std::string>* warnings = nullptr);

}  // namespace aiohmm

#endif  // AIOHMM_FEATURES_HPP
