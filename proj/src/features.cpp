#include "aiohmm/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace aiohmm {

namespace {

int horizontal_bin(double dx) {
  if (dx < -2.0) return 0;
  if (dx < 0.0) return 1;
  if (dx < 2.0) return 2;
  return 3;
}

int angular_bin(double dx, double dy) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double theta = std::atan2(dy, dx);
  if (theta < 0.0) theta += two_pi;
  if (theta >= two_pi) theta = 0.0;
  return std::min(3, static_cast<int>(theta / (std::numbers::pi / 2.0)));
}

}  // namespace

void RawTrace::check() const {
  if (frames.empty()) throw std::invalid_argument("trace has no frames");
  if (!(frame_rate > 0.0)) throw std::invalid_argument("trace frame rate must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && !(frames[i].t > frames[i - 1].t)) {
      throw std::invalid_argument("trace times not strictly increasing at frame " + std::to_string(i));
    }
    if (frames[i].speed < 0.0) throw std::invalid_argument("negative speed at frame " + std::to_string(i));
  }
}

Vec face_histogram(const FrameRecord& frame) {
  Vec phi = Vec::Zero(kDimZ);
  for (const auto& [dx, dy] : frame.point_motions) {
    phi[horizontal_bin(dx)] += 1.0;
    phi[4 + angular_bin(dx, dy)] += 1.0;
  }
  phi[8] = frame.face_center_dx;
  return phi;
}

Vec aggregate_inside(std::span<const Vec> chunk) {
  if (chunk.size() != static_cast<std::size_t>(kFramesPerChunk)) {
    throw std::invalid_argument("aggregate_inside: expected " + std::to_string(kFramesPerChunk) +
                                " frames, got " + std::to_string(chunk.size()));
  }
  Vec sum = Vec::Zero(kDimZ);
  for (const auto& phi : chunk) sum += phi;
  const double norm = sum.norm();
  if (norm == 0.0) return sum;
  return sum / norm;
}

OutsideFeature outside_vector(std::span<const FrameRecord> chunk, std::span<const double> speed_window) {
  if (chunk.empty()) throw std::invalid_argument("outside_vector: empty chunk");
  if (speed_window.empty()) throw std::invalid_argument("outside_vector: empty speed window");
  const auto& last = chunk.back();
  OutsideFeature f;
  f.lane_left = last.lane_left;
  f.lane_right = last.lane_right;
  f.road_artifact = last.road_artifact;
  const auto [lo, hi] = std::minmax_element(speed_window.begin(), speed_window.end());
  f.speed_min = *lo;
  f.speed_max = *hi;
  f.speed_avg = std::accumulate(speed_window.begin(), speed_window.end(), 0.0) /
                static_cast<double>(speed_window.size());
  // Guard the ordering against rounding in the mean.
  f.speed_avg = std::clamp(f.speed_avg, f.speed_min, f.speed_max);
  return f;
}

int chunks_in_horizon(double horizon_s, double chunk_s) {
  if (!(horizon_s > 0.0) || !(chunk_s > 0.0)) throw std::invalid_argument("horizon and chunk must be positive");
  return static_cast<int>(std::floor(horizon_s / chunk_s + 1e-9));
}

long last_frame_at(const RawTrace& trace, double time) {
  const auto it = std::upper_bound(trace.frames.begin(), trace.frames.end(), time + 1e-9,
                                   [](double v, const FrameRecord& f) { return v < f.t; });
  return static_cast<long>(it - trace.frames.begin()) - 1;
}

FeatureSequence featurize_window(const RawTrace& trace, std::size_t end_frame, double horizon_s,
                                 Maneuver label) {
  const int k = chunks_in_horizon(horizon_s);
  if (k < 1) throw std::invalid_argument("featurize_window: horizon shorter than one chunk");
  const std::size_t need = static_cast<std::size_t>(k) * kFramesPerChunk;
  if (end_frame >= trace.frames.size()) throw std::out_of_range("featurize_window: end frame past trace");
  if (end_frame + 1 < need) {
    std::ostringstream os;
    os << "featurize_window: need " << need << " frames, only " << end_frame + 1 << " available";
    throw std::out_of_range(os.str());
  }
  const std::size_t start = end_frame + 1 - need;

  FeatureSequence seq;
  seq.label = label;
  seq.chunk_duration_s = kFramesPerChunk / trace.frame_rate;
  std::vector<Vec> phis(kFramesPerChunk);
  std::vector<double> speeds;
  for (int c = 0; c < k; ++c) {
    const std::size_t first = start + static_cast<std::size_t>(c) * kFramesPerChunk;
    const std::size_t last = first + kFramesPerChunk - 1;
    for (int f = 0; f < kFramesPerChunk; ++f) phis[static_cast<std::size_t>(f)] = face_histogram(trace.frames[first + f]);
    seq.outputs.push_back(aggregate_inside(phis));

    const double t_last = trace.frames[last].t;
    speeds.clear();
    for (std::size_t i = last + 1; i-- > 0;) {
      if (t_last - trace.frames[i].t >= kSpeedWindowSeconds - 1e-9) break;
      speeds.push_back(trace.frames[i].speed);
    }
    const std::span<const FrameRecord> chunk(trace.frames.data() + first, kFramesPerChunk);
    seq.inputs.push_back(outside_vector(chunk, speeds).vector());
  }
  return seq;
}

std::vector<FeatureSequence> featurize_trace(const RawTrace& trace,
                                             const std::vector<Annotation>& annotations,
                                             double horizon_s, std::vector<std::string>* warnings) {
  trace.check();
  std::vector<FeatureSequence> out;
  const double frame_dt = 1.0 / trace.frame_rate;
  for (const auto& ann : annotations) {
    const long end = last_frame_at(trace, ann.t_start);
    const bool past_end = ann.t_start > trace.frames.back().t + frame_dt;
    const std::size_t need = static_cast<std::size_t>(chunks_in_horizon(horizon_s)) * kFramesPerChunk;
    if (end < 0 || past_end || static_cast<std::size_t>(end) + 1 < need) {
      if (warnings) {
        std::ostringstream os;
        os << "skipped " << to_string(ann.maneuver) << " at t=" << ann.t_start
           << ": insufficient frames for a " << horizon_s << " s horizon";
        warnings->push_back(os.str());
      }
      continue;
    }
    out.push_back(featurize_window(trace, static_cast<std::size_t>(end), horizon_s, ann.maneuver));
  }
  return out;
}

}  // namespace aiohmm
