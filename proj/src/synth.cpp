#include "aiohmm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace aiohmm {

namespace {

// Lane indices run 0 (leftmost) to kLanes - 1.
constexpr int kLanes = 3;
// Seconds after a maneuver's start during which it still shapes the channels.
constexpr double kExecutionSeconds = 4.0;

struct Scheduled {
  Maneuver maneuver;
  double t;
  double cue_time;
  int lane;
  double cruise;
  double turn_speed;
  double artifact_from;
};

class HeadMotion {
 public:
  HeadMotion(std::size_t n_frames, double fps) : vx_(n_frames, 0.0), fps_(fps) {}

  // Yaw toward `side` at `amp` px/frame, hold, then drift back over
  // `return_s` so the net displacement is zero.
  void glance(double start, double side, double amp, double move_s, double hold_s, double return_s) {
    add(start, start + move_s, side * amp);
    const double back = start + move_s + hold_s;
    add(back, back + return_s, -side * amp * move_s / return_s);
  }

  std::vector<double>& vx() { return vx_; }

 private:
  void add(double from, double to, double v) {
    const long lo = std::max(0L, static_cast<long>(std::ceil(from * fps_ - 1e-9)));
    const long hi = std::min(static_cast<long>(vx_.size()), static_cast<long>(std::ceil(to * fps_ - 1e-9)));
    for (long i = lo; i < hi; ++i) vx_[static_cast<std::size_t>(i)] += v;
  }

  std::vector<double> vx_;
  double fps_;
};

int legal_lane(Maneuver m, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  switch (m) {
    case Maneuver::left_lane_change: return 1 + coin(rng);
    case Maneuver::right_lane_change: return coin(rng);
    case Maneuver::left_turn: return 0;
    case Maneuver::right_turn: return kLanes - 1;
    case Maneuver::driving_straight: break;
  }
  return 1;
}

double side_of(Maneuver m) {
  return (m == Maneuver::left_lane_change || m == Maneuver::left_turn) ? -1.0 : 1.0;
}

bool is_turn(Maneuver m) { return m == Maneuver::left_turn || m == Maneuver::right_turn; }

}  // namespace

void ScenarioConfig::check() const {
  if (!(frame_rate > 0.0)) throw std::invalid_argument("frame_rate must be positive");
  if (!(horizon_s > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (!(cue_lead_min_s > 0.0) || cue_lead_max_s > horizon_s || cue_lead_min_s > cue_lead_max_s) {
    throw std::invalid_argument("cue lead range must satisfy 0 < min <= max <= horizon");
  }
  if (!(duration_s >= horizon_s + 1.0)) throw std::invalid_argument("duration too short for one horizon");
  if (!(maneuver_rate_per_min >= 0.0)) throw std::invalid_argument("maneuver rate must be non-negative");
  if (!(cue_strength >= 0.0) || !(noise_sigma >= 0.0)) {
    throw std::invalid_argument("cue strength and noise must be non-negative");
  }
  if (n_points < 1) throw std::invalid_argument("n_points must be >= 1");
}

Episode generate_episode(const ScenarioConfig& cfg) {
  cfg.check();
  const double mean_gap = cfg.maneuver_rate_per_min > 0.0 ? 60.0 / cfg.maneuver_rate_per_min : 0.0;
  if (cfg.maneuver_rate_per_min > 0.0 && mean_gap < kMinManeuverSpacingSeconds) {
    throw std::invalid_argument("maneuver rate " + std::to_string(cfg.maneuver_rate_per_min) +
                                "/min is incompatible with the minimum spacing of " +
                                std::to_string(kMinManeuverSpacingSeconds) + " s");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Maneuver schedule.
  std::vector<Scheduled> plan;
  if (cfg.maneuver_rate_per_min > 0.0) {
    const double extra_mean = mean_gap - kMinManeuverSpacingSeconds;
    auto extra = [&]() {
      return extra_mean > 0.0 ? std::exponential_distribution<double>(1.0 / extra_mean)(rng) : 0.0;
    };
    std::uniform_int_distribution<int> pick(0, kNumManeuvers - 2);
    double t = std::max(kMinManeuverSpacingSeconds, cfg.horizon_s + 1.0) + extra();
    while (t <= cfg.duration_s - 2.0) {
      Scheduled s{};
      s.maneuver = static_cast<Maneuver>(pick(rng));
      s.t = t;
      s.cue_time = t - uniform(cfg.cue_lead_min_s, cfg.cue_lead_max_s);
      s.lane = legal_lane(s.maneuver, rng);
      s.cruise = uniform(80.0, 110.0);
      s.turn_speed = uniform(20.0, 35.0);
      s.artifact_from = std::min(t - uniform(3.0, 5.0), s.cue_time - uniform(0.5, 1.0));
      plan.push_back(s);
      t += kMinManeuverSpacingSeconds + extra();
    }
  }
  const double tail_cruise = uniform(80.0, 110.0);
  const int tail_lane = std::uniform_int_distribution<int>(0, kLanes - 1)(rng);

  const auto n_frames = static_cast<std::size_t>(std::floor(cfg.duration_s * cfg.frame_rate + 1e-9)) + 1;
  const double dt = 1.0 / cfg.frame_rate;
  HeadMotion head(n_frames, cfg.frame_rate);

  // Cues before each maneuver: a glance toward the maneuver side; turns add a
  // check toward the crossing traffic.
  for (const auto& s : plan) {
    const double side = side_of(s.maneuver);
    head.glance(s.cue_time, side, cfg.cue_strength, 0.4, uniform(0.4, 0.8), 1.2);
    if (is_turn(s.maneuver)) {
      head.glance(s.cue_time + uniform(1.6, 2.0), -side, 0.6 * cfg.cue_strength, 0.3, 0.2, 0.9);
    }
  }
  // Distractor glances at random times and sides, shorter and weaker.
  for (double t = std::exponential_distribution<double>(1.0 / 12.0)(rng); t < cfg.duration_s;
       t += std::exponential_distribution<double>(1.0 / 12.0)(rng)) {
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    head.glance(t, side, 0.4 * cfg.cue_strength * uniform(0.7, 1.0), 0.3, uniform(0.0, 0.3), 0.3);
  }
  // Intersections passed without turning.
  std::vector<std::pair<double, double>> passes;
  for (std::size_t k = 0; k <= plan.size(); ++k) {
    const double from = k == 0 ? 0.0 : plan[k - 1].t + kExecutionSeconds + 2.0;
    const double to = k < plan.size() ? plan[k].t - 9.0 : cfg.duration_s - 4.0;
    if (to > from && unit(rng) < 0.3) {
      const double a = uniform(from, to);
      passes.emplace_back(a, a + 4.0);
    }
    // Lane changes often follow an intersection just cleared.
    if (k < plan.size() && !is_turn(plan[k].maneuver) && unit(rng) < 0.5) {
      const double end = plan[k].cue_time - uniform(0.3, 1.0);
      passes.emplace_back(std::max(from, end - uniform(2.0, 4.0)), end);
    }
  }

  std::vector<double>& vx = head.vx();
  const double rho = std::exp(-dt / 2.0);
  const double sway_sigma = 0.3 * cfg.noise_sigma;
  double sway = 0.0;

  Episode ep;
  ep.trace.frame_rate = cfg.frame_rate;
  ep.trace.frames.resize(n_frames);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n_frames; ++i) {
    FrameRecord& f = ep.trace.frames[i];
    f.t = static_cast<double>(i) * dt;
    while (seg < plan.size() && f.t > plan[seg].t + kExecutionSeconds) ++seg;

    sway = rho * sway + std::sqrt(1.0 - rho * rho) * sway_sigma * gauss(rng);
    const double v = vx[i] + sway;
    f.point_motions.resize(static_cast<std::size_t>(cfg.n_points));
    double sum_dx = 0.0;
    for (auto& p : f.point_motions) {
      p[0] = v + cfg.noise_sigma * gauss(rng);
      p[1] = cfg.noise_sigma * gauss(rng);
      sum_dx += p[0];
    }
    f.face_center_dx = sum_dx / cfg.n_points;

    int lane = tail_lane;
    double cruise = tail_cruise;
    bool artifact = false;
    double speed;
    if (seg < plan.size()) {
      const Scheduled& s = plan[seg];
      lane = s.lane;
      cruise = s.cruise;
      if (f.t > s.t + 2.0 && !is_turn(s.maneuver)) lane += s.maneuver == Maneuver::left_lane_change ? -1 : 1;
      speed = cruise;
      if (is_turn(s.maneuver)) {
        artifact = f.t >= s.artifact_from && f.t <= s.t + 2.0;
        double frac = 0.0;
        if (f.t >= s.t - 6.0 && f.t < s.t) frac = (f.t - (s.t - 6.0)) / 6.0;
        else if (f.t >= s.t) frac = 1.0;
        speed = cruise - frac * (cruise - s.turn_speed);
      }
    } else {
      speed = cruise;
    }
    for (const auto& [a, b] : passes) artifact = artifact || (f.t >= a && f.t <= b);
    f.lane_left = lane > 0 ? 1 : 0;
    f.lane_right = lane < kLanes - 1 ? 1 : 0;
    f.road_artifact = artifact ? 1 : 0;
    f.speed = std::max(0.0, speed + 0.7 * gauss(rng));
  }

  // Annotations: maneuvers plus straight-driving samples placed where no cue
  // or maneuver execution falls inside their horizon.
  for (std::size_t k = 0; k <= plan.size(); ++k) {
    const double lo = std::max(cfg.horizon_s, (k == 0 ? 0.0 : plan[k - 1].t + kExecutionSeconds) + cfg.horizon_s);
    const double hi = k < plan.size() ? plan[k].t - cfg.cue_lead_max_s - 0.5 : cfg.duration_s - 0.5;
    const double u = unit(rng);
    if (hi > lo) ep.annotations.push_back({Maneuver::driving_straight, lo + u * (hi - lo)});
    if (k < plan.size()) {
      ep.annotations.push_back({plan[k].maneuver, plan[k].t});
      ep.injected_cue_times.push_back(plan[k].cue_time);
    }
  }
  return ep;
}

}  // namespace aiohmm
