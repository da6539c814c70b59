#include "aiohmm/anticipation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "parallel.hpp"

namespace aiohmm {

namespace {

constexpr double kTimeEps = 1e-9;

std::vector<Annotation> sorted_maneuvers(const std::vector<Annotation>& ground_truth) {
  std::vector<Annotation> out;
  for (const auto& a : ground_truth) {
    if (is_maneuver(a.maneuver)) out.push_back(a);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Annotation& x, const Annotation& y) { return x.t_start < y.t_start; });
  return out;
}

void require_ordered(const std::vector<PredictionEvent>& events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].t < events[i - 1].t) {
      throw std::invalid_argument("prediction events are not time-ordered at index " + std::to_string(i));
    }
  }
}

struct Match {
  std::size_t event = 0;
  int maneuver = -1;  // index into sorted maneuvers, -1 when unmatched (fpp)
};

struct Matching {
  std::vector<Annotation> maneuvers;
  std::vector<Match> predictions;
  std::vector<bool> matched;
};

Matching match_predictions(const std::vector<PredictionEvent>& events,
                           const std::vector<Annotation>& ground_truth, const ProtocolConfig& cfg) {
  require_ordered(events);
  Matching m;
  m.maneuvers = sorted_maneuvers(ground_truth);
  m.matched.assign(m.maneuvers.size(), false);
  for (std::size_t e = 0; e < events.size(); ++e) {
    if (!is_maneuver(events[e].predicted)) continue;
    const double tp = events[e].t;
    Match match{e, -1};
    for (std::size_t g = 0; g < m.maneuvers.size(); ++g) {
      const double tg = m.maneuvers[g].t_start;
      if (tg > tp + cfg.lockout_s + kTimeEps) break;
      if (m.matched[g] || tg < tp - kTimeEps) continue;
      match.maneuver = static_cast<int>(g);
      m.matched[g] = true;
      break;
    }
    m.predictions.push_back(match);
  }
  return m;
}

}  // namespace

void ProtocolConfig::check() const {
  if (!(stride_s > 0.0)) throw std::invalid_argument("stride must be positive");
  if (!(horizon_s > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (!(lockout_s > 0.0)) throw std::invalid_argument("lockout must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
}

MetricCounts& MetricCounts::operator+=(const MetricCounts& other) {
  tp += other.tp;
  fp += other.fp;
  fpp += other.fpp;
  mp += other.mp;
  tp_lead_times_s.insert(tp_lead_times_s.end(), other.tp_lead_times_s.begin(), other.tp_lead_times_s.end());
  return *this;
}

Metrics derive_metrics(const MetricCounts& counts) {
  Metrics m;
  m.counts = counts;
  const int predicted = counts.tp + counts.fp + counts.fpp;
  const int actual = counts.tp + counts.fp + counts.mp;
  m.precision = predicted > 0 ? static_cast<double>(counts.tp) / predicted : 0.0;
  m.recall = actual > 0 ? static_cast<double>(counts.tp) / actual : 0.0;
  const double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  if (counts.tp_lead_times_s.empty()) {
    m.mean_time_to_maneuver_s = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.mean_time_to_maneuver_s =
        std::accumulate(counts.tp_lead_times_s.begin(), counts.tp_lead_times_s.end(), 0.0) /
        static_cast<double>(counts.tp_lead_times_s.size());
  }
  return m;
}

Maneuver gate_decision(const ClassPosterior& posteriors, double threshold) {
  int best = 0;
  for (int m = 1; m < kNumManeuvers - 1; ++m) {
    if (posteriors[m] > posteriors[best]) best = m;
  }
  return posteriors[best] >= threshold ? static_cast<Maneuver>(best) : Maneuver::driving_straight;
}

std::vector<PredictionEvent> gate_stream(const std::vector<double>& times,
                                         const std::vector<ClassPosterior>& posteriors,
                                         const std::vector<Annotation>& ground_truth,
                                         const ProtocolConfig& cfg) {
  if (times.size() != posteriors.size()) throw std::invalid_argument("gate_stream: size mismatch");
  const auto maneuvers = sorted_maneuvers(ground_truth);
  std::vector<PredictionEvent> events;
  events.reserve(times.size());
  bool locked = false;
  double locked_at = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (locked) {
      // A maneuver that started strictly inside (locked_at, t) ends the lockout.
      const bool expired = t - locked_at >= cfg.lockout_s - kTimeEps;
      const bool maneuver_seen = std::any_of(maneuvers.begin(), maneuvers.end(), [&](const Annotation& a) {
        return a.t_start > locked_at + kTimeEps && a.t_start < t - kTimeEps;
      });
      if (expired || maneuver_seen) locked = false;
    }
    PredictionEvent ev{t, posteriors[k], Maneuver::driving_straight};
    const Maneuver decision = gate_decision(posteriors[k], cfg.threshold);
    if (is_maneuver(decision) && !locked) {
      ev.predicted = decision;
      locked = true;
      locked_at = t;
    }
    events.push_back(ev);
  }
  return events;
}

std::vector<double> step_times(const RawTrace& trace, const ProtocolConfig& cfg) {
  const std::size_t need = static_cast<std::size_t>(chunks_in_horizon(cfg.horizon_s)) * kFramesPerChunk;
  if (trace.frames.size() < need) {
    throw std::invalid_argument("trace shorter than one " + std::to_string(cfg.horizon_s) + " s horizon");
  }
  const double t0 = trace.frames[need - 1].t;
  const double t_end = trace.frames.back().t;
  std::vector<double> times;
  for (long k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * cfg.stride_s;
    if (t > t_end + kTimeEps) break;
    times.push_back(t);
  }
  return times;
}

std::vector<PredictionEvent> stream_anticipate(const ManeuverScorer& scorer, const RawTrace& trace,
                                               const ProtocolConfig& cfg,
                                               const std::vector<Annotation>& ground_truth) {
  cfg.check();
  trace.check();
  const auto times = step_times(trace, cfg);
  std::vector<ClassPosterior> posteriors;
  posteriors.reserve(times.size());
  for (const double t : times) {
    try {
      const long end = last_frame_at(trace, t);
      const FeatureSequence seq = featurize_window(trace, static_cast<std::size_t>(end), cfg.horizon_s);
      posteriors.push_back(scorer.posteriors(seq));
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "anticipation step at t=" << t << ": " << e.what();
      throw std::runtime_error(os.str());
    }
  }
  return gate_stream(times, posteriors, ground_truth, cfg);
}

std::vector<PredictionEvent> stream_anticipate(const ManeuverModelSet& models, const RawTrace& trace,
                                               const ProtocolConfig& cfg,
                                               const std::vector<Annotation>& ground_truth) {
  return stream_anticipate(ManeuverScorer(models), trace, cfg, ground_truth);
}

Metrics score(const std::vector<PredictionEvent>& events, const std::vector<Annotation>& ground_truth,
              const ProtocolConfig& cfg) {
  const Matching m = match_predictions(events, ground_truth, cfg);
  MetricCounts c;
  for (const auto& p : m.predictions) {
    if (p.maneuver < 0) {
      ++c.fpp;
      continue;
    }
    const auto& truth = m.maneuvers[static_cast<std::size_t>(p.maneuver)];
    if (truth.maneuver == events[p.event].predicted) {
      ++c.tp;
      c.tp_lead_times_s.push_back(std::max(0.0, truth.t_start - events[p.event].t));
    } else {
      ++c.fp;
    }
  }
  c.mp = static_cast<int>(std::count(m.matched.begin(), m.matched.end(), false));
  return derive_metrics(c);
}

ConfusionMatrix confusion_matrix(const std::vector<PredictionEvent>& events,
                                 const std::vector<Annotation>& ground_truth, const ProtocolConfig& cfg) {
  const Matching m = match_predictions(events, ground_truth, cfg);
  ConfusionMatrix cm{};
  const int straight = index_of(Maneuver::driving_straight);
  for (const auto& p : m.predictions) {
    const int row = index_of(events[p.event].predicted);
    const int col = p.maneuver < 0 ? straight
                                   : index_of(m.maneuvers[static_cast<std::size_t>(p.maneuver)].maneuver);
    ++cm[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
  }
  for (std::size_t g = 0; g < m.maneuvers.size(); ++g) {
    if (!m.matched[g]) ++cm[static_cast<std::size_t>(straight)][static_cast<std::size_t>(index_of(m.maneuvers[g].maneuver))];
  }
  // Straight annotations count as correct when no maneuver was predicted in
  // the lockout window leading up to them.
  for (const auto& a : ground_truth) {
    if (is_maneuver(a.maneuver)) continue;
    const bool disturbed = std::any_of(events.begin(), events.end(), [&](const PredictionEvent& e) {
      return is_maneuver(e.predicted) && e.t <= a.t_start + kTimeEps && e.t >= a.t_start - cfg.lockout_s - kTimeEps;
    });
    if (!disturbed) ++cm[static_cast<std::size_t>(straight)][static_cast<std::size_t>(straight)];
  }
  return cm;
}

std::vector<Metrics> threshold_curve(const std::vector<PredictionEvent>& events,
                                     const std::vector<Annotation>& ground_truth,
                                     const std::vector<double>& thresholds, const ProtocolConfig& cfg) {
  std::vector<double> times;
  std::vector<ClassPosterior> posts;
  for (const auto& e : events) {
    times.push_back(e.t);
    posts.push_back(e.posteriors);
  }
  std::vector<Metrics> out;
  for (const double thr : thresholds) {
    ProtocolConfig c = cfg;
    c.threshold = thr;
    out.push_back(score(gate_stream(times, posts, ground_truth, c), ground_truth, c));
  }
  return out;
}

MetricCounts evaluate_sequence(const std::vector<ClassPosterior>& prefix_posteriors,
                               const FeatureSequence& seq, const ProtocolConfig& cfg) {
  const double dt = seq.chunk_duration_s;
  std::vector<double> times(prefix_posteriors.size());
  for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k + 1) * dt;
  const double onset = static_cast<double>(seq.length()) * dt;
  std::vector<Annotation> truth;
  if (is_maneuver(seq.label)) truth.push_back({seq.label, onset});
  return score(gate_stream(times, prefix_posteriors, truth, cfg), truth, cfg).counts;
}

std::vector<MetricCounts> evaluate_sequences(const ManeuverScorer& scorer, const Dataset& sequences,
                                             const std::vector<double>& thresholds,
                                             const ProtocolConfig& cfg) {
  std::vector<std::vector<ClassPosterior>> prefixes(sequences.size());
  detail::parallel_for(sequences.size(), [&](std::size_t n) { prefixes[n] = scorer.prefix_posteriors(sequences[n]); });
  std::vector<MetricCounts> out(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    ProtocolConfig c = cfg;
    c.threshold = thresholds[k];
    for (std::size_t n = 0; n < sequences.size(); ++n) out[k] += evaluate_sequence(prefixes[n], sequences[n], c);
  }
  return out;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(k / 20.0);
  return grid;
}

std::vector<int> assign_folds(const Dataset& data, int n_folds, std::uint64_t seed) {
  if (n_folds < 1) throw std::invalid_argument("n_folds must be >= 1");
  std::array<std::vector<std::size_t>, kNumManeuvers> by_class;
  for (std::size_t n = 0; n < data.size(); ++n) by_class[static_cast<std::size_t>(index_of(data[n].label))].push_back(n);
  std::vector<int> folds(data.size(), 0);
  std::mt19937_64 rng(seed);
  for (int m = 0; m < kNumManeuvers; ++m) {
    auto& idx = by_class[static_cast<std::size_t>(m)];
    if (static_cast<int>(idx.size()) < n_folds) {
      throw std::invalid_argument("class " + std::string(to_string(static_cast<Maneuver>(m))) + " has " +
                                  std::to_string(idx.size()) + " sequences, fewer than " +
                                  std::to_string(n_folds) + " folds");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) folds[idx[r]] = static_cast<int>(r % static_cast<std::size_t>(n_folds));
  }
  return folds;
}

SweepResult sweep(const Dataset& data, const std::vector<int>& state_counts,
                  const std::vector<double>& thresholds, int n_folds, std::uint64_t seed,
                  const EmConfig& base_cfg, const ProtocolConfig& proto) {
  if (state_counts.empty() || thresholds.empty()) throw std::invalid_argument("sweep: empty grid");
  const std::vector<int> folds = assign_folds(data, n_folds, seed);

  struct Cell {
    int n_states;
    int fold;
  };
  std::vector<Cell> cells;
  for (int s : state_counts) {
    for (int f = 0; f < n_folds; ++f) cells.push_back({s, f});
  }
  std::vector<std::vector<MetricCounts>> results(cells.size());
  detail::parallel_for(cells.size(), [&](std::size_t c) {
    Dataset train;
    Dataset valid;
    for (std::size_t n = 0; n < data.size(); ++n) {
      if (n_folds == 1 || folds[n] != cells[c].fold) train.push_back(data[n]);
      if (n_folds == 1 || folds[n] == cells[c].fold) valid.push_back(data[n]);
    }
    EmConfig cfg = base_cfg;
    cfg.n_states = cells[c].n_states;
    const ManeuverModelSet models = fit_all(split_by_class(train), cfg);
    results[c] = evaluate_sequences(ManeuverScorer(models), valid, thresholds, proto);
  });

  SweepResult out;
  out.best_f1 = -1.0;
  for (int s : state_counts) {
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      MetricCounts total;
      double pr = 0.0;
      double re = 0.0;
      double f1 = 0.0;
      double ttm = 0.0;
      int ttm_folds = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].n_states != s) continue;
        const Metrics m = derive_metrics(results[c][k]);
        out.rows.push_back({s, thresholds[k], cells[c].fold, m});
        total += m.counts;
        pr += m.precision;
        re += m.recall;
        f1 += m.f1;
        if (!std::isnan(m.mean_time_to_maneuver_s)) {
          ttm += m.mean_time_to_maneuver_s;
          ++ttm_folds;
        }
      }
      Metrics mean;
      mean.counts = total;
      mean.precision = pr / n_folds;
      mean.recall = re / n_folds;
      mean.f1 = f1 / n_folds;
      mean.mean_time_to_maneuver_s = ttm_folds > 0 ? ttm / ttm_folds : std::numeric_limits<double>::quiet_NaN();
      out.rows.push_back({s, thresholds[k], -1, mean});
      if (mean.f1 > out.best_f1) {
        out.best_f1 = mean.f1;
        out.best_states = s;
        out.best_threshold = thresholds[k];
      }
    }
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.n_states != b.n_states) return a.n_states < b.n_states;
    if (a.threshold != b.threshold) return a.threshold < b.threshold;
    return a.fold < b.fold;
  });
  return out;
}

}  // namespace aiohmm
