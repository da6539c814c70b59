#include <cmath>
#include <random>
#include <sstream>

#include "aiohmm/synth.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace aiohmm;

namespace {

ClassPosterior peaked(Maneuver m, double p) {
  ClassPosterior out;
  out.fill((1.0 - p) / 4.0);
  out[static_cast<std::size_t>(index_of(m))] = p;
  return out;
}

ClassPosterior random_posterior(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.3, 1.0);
  ClassPosterior p;
  double s = 0.0;
  for (double& v : p) s += (v = g(rng) + 1e-12);
  for (double& v : p) v /= s;
  return p;
}

std::vector<Annotation> random_truth(std::mt19937_64& rng, double t_end) {
  std::vector<Annotation> out;
  std::uniform_int_distribution<int> cls(0, kNumManeuvers - 1);
  for (double t = std::uniform_real_distribution<double>(2.0, 12.0)(rng); t < t_end;
       t += std::uniform_real_distribution<double>(4.0, 20.0)(rng)) {
    out.push_back({static_cast<Maneuver>(cls(rng)), t});
  }
  return out;
}

int predictions(const std::vector<PredictionEvent>& events) {
  int n = 0;
  for (const auto& e : events) n += is_maneuver(e.predicted) ? 1 : 0;
  return n;
}

// Featurized labeled sequences from a few generated episodes.
Dataset synthetic_dataset(int n_episodes, std::uint64_t seed) {
  Dataset out;
  for (int e = 0; e < n_episodes; ++e) {
    ScenarioConfig cfg;
    cfg.seed = seed * 1000 + static_cast<std::uint64_t>(e);
    const Episode ep = generate_episode(cfg);
    const auto seqs = featurize_trace(ep.trace, ep.annotations, cfg.horizon_s);
    out.insert(out.end(), seqs.begin(), seqs.end());
  }
  return out;
}

}  // namespace

TEST_CASE("metric formulas on the hand-built fixture") {
  const oracle::ScoringFixture f = oracle::scoring_fixture();
  ProtocolConfig cfg;
  const Metrics m = score(f.events, f.annotations, cfg);
  CHECK(m.counts.tp == 2);
  CHECK(m.counts.fp == 1);
  CHECK(m.counts.fpp == 1);
  CHECK(m.counts.mp == 1);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  CHECK(m.f1 == 0.5);
  CHECK(m.mean_time_to_maneuver_s == doctest::Approx(2.6));

  MetricCounts c;
  c.tp = 2;
  c.fp = 1;
  c.fpp = 1;
  c.mp = 1;
  const Metrics d = derive_metrics(c);
  CHECK(d.precision == 0.5);
  CHECK(d.recall == 0.5);
  CHECK(d.f1 == 0.5);
}

TEST_CASE("perfect predictions score one") {
  const std::vector<Annotation> truth = {{Maneuver::left_turn, 20.0}, {Maneuver::right_lane_change, 40.0}};
  const std::vector<PredictionEvent> events = {
      {17.0, peaked(Maneuver::left_turn, 0.9), Maneuver::left_turn},
      {36.0, peaked(Maneuver::right_lane_change, 0.9), Maneuver::right_lane_change},
  };
  const Metrics m = score(events, truth, ProtocolConfig{});
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  const ConfusionMatrix cm = confusion_matrix(events, truth, ProtocolConfig{});
  for (int r = 0; r < kNumManeuvers; ++r) {
    for (int c = 0; c < kNumManeuvers; ++c) {
      const int want = (r == c && (r == index_of(Maneuver::left_turn) || r == index_of(Maneuver::right_lane_change))) ? 1 : 0;
      CHECK(cm[r][c] == want);
    }
  }
}

TEST_CASE("time to maneuver of a single true prediction") {
  const std::vector<Annotation> truth = {{Maneuver::left_lane_change, 24.0}};
  std::vector<PredictionEvent> events;
  for (double t = 18.0; t < 26.0; t += 0.4) {
    const bool hit = std::abs(t - 20.8) < 1e-9;
    events.push_back({t, hit ? peaked(Maneuver::left_lane_change, 0.8) : ClassPosterior{0.2, 0.2, 0.2, 0.2, 0.2},
                      hit ? Maneuver::left_lane_change : Maneuver::driving_straight});
  }
  const Metrics m = score(events, truth, ProtocolConfig{});
  CHECK(m.counts.tp == 1);
  CHECK(m.mean_time_to_maneuver_s == doctest::Approx(3.2).epsilon(1e-12));
  REQUIRE(m.counts.tp_lead_times_s.size() == 1);
  CHECK(std::isnan(score({}, truth, ProtocolConfig{}).mean_time_to_maneuver_s));
}

TEST_CASE("confusion matrix") {
  const oracle::ScoringFixture f = oracle::scoring_fixture();
  const ConfusionMatrix cm = confusion_matrix(f.events, f.annotations, ProtocolConfig{});
  ConfusionMatrix want{};
  auto at = [&](Maneuver row, Maneuver col) -> int& {
    return want[static_cast<std::size_t>(index_of(row))][static_cast<std::size_t>(index_of(col))];
  };
  at(Maneuver::left_lane_change, Maneuver::left_lane_change) = 1;
  at(Maneuver::left_turn, Maneuver::right_turn) = 1;
  at(Maneuver::right_lane_change, Maneuver::driving_straight) = 1;
  at(Maneuver::right_turn, Maneuver::right_turn) = 1;
  at(Maneuver::driving_straight, Maneuver::left_turn) = 1;
  at(Maneuver::driving_straight, Maneuver::driving_straight) = 1;
  CHECK(cm == want);

  SUBCASE("only straight predictions") {
    const std::vector<Annotation> truth = {
        {Maneuver::left_turn, 10.0}, {Maneuver::right_turn, 30.0}, {Maneuver::left_lane_change, 50.0}};
    std::vector<PredictionEvent> events;
    for (double t = 0.0; t < 60.0; t += 0.8) events.push_back({t, ClassPosterior{0.2, 0.2, 0.2, 0.2, 0.2}});
    const ConfusionMatrix s = confusion_matrix(events, truth, ProtocolConfig{});
    int straight_row = 0, total = 0;
    for (int c = 0; c < kNumManeuvers; ++c) straight_row += s[4][c];
    for (const auto& row : s)
      for (int v : row) total += v;
    CHECK(straight_row == 3);
    CHECK(total == 3);
  }
}

TEST_CASE("scoring rejects unordered events") {
  std::vector<PredictionEvent> events = {{5.0, {}, Maneuver::left_turn}, {4.0, {}, Maneuver::driving_straight}};
  CHECK_THROWS_AS(score(events, {}, ProtocolConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(confusion_matrix(events, {}, ProtocolConfig{}), std::invalid_argument);
}

TEST_CASE("gate decision") {
  const ClassPosterior uniform{0.2, 0.2, 0.2, 0.2, 0.2};
  CHECK(gate_decision(uniform, 0.99) == Maneuver::driving_straight);
  CHECK(gate_decision(uniform, 0.2) == Maneuver::left_lane_change);
  CHECK(gate_decision(peaked(Maneuver::right_turn, 0.7), 0.7) == Maneuver::right_turn);
  CHECK(gate_decision(peaked(Maneuver::right_turn, 0.7), 0.71) == Maneuver::driving_straight);
  // Straight itself never opens the gate.
  CHECK(gate_decision(peaked(Maneuver::driving_straight, 0.96), 0.005) == Maneuver::left_lane_change);
  const ClassPosterior tie{0.1, 0.4, 0.4, 0.05, 0.05};
  CHECK(gate_decision(tie, 0.3) == Maneuver::right_lane_change);
}

TEST_CASE("high threshold with near-uniform posteriors predicts nothing") {
  std::vector<double> times;
  std::vector<ClassPosterior> posts;
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  for (int k = 0; k < 100; ++k) {
    times.push_back(k * 0.8);
    ClassPosterior p;
    double s = 0.0;
    for (double& v : p) s += (v = 0.2 + jitter(rng));
    for (double& v : p) v /= s;
    posts.push_back(p);
  }
  ProtocolConfig cfg;
  cfg.threshold = 0.99;
  for (const auto& e : gate_stream(times, posts, {}, cfg)) CHECK(e.predicted == Maneuver::driving_straight);
}

TEST_CASE("lockout after a prediction") {
  std::vector<double> times;
  std::vector<ClassPosterior> posts;
  for (int k = 0; k <= 30; ++k) {
    times.push_back(8.0 + 0.5 * k);
    posts.push_back(times.back() >= 10.0 - 1e-12 ? peaked(Maneuver::left_turn, 0.95) : ClassPosterior{0.2, 0.2, 0.2, 0.2, 0.2});
  }
  ProtocolConfig cfg;
  cfg.threshold = 0.9;
  const auto events = gate_stream(times, posts, {}, cfg);
  std::vector<double> fired;
  for (const auto& e : events)
    if (is_maneuver(e.predicted)) fired.push_back(e.t);
  REQUIRE(fired.size() >= 2);
  CHECK(fired[0] == 10.0);
  for (const auto& e : events) {
    if (e.t > 10.0 && e.t < 15.0) CHECK(e.predicted == Maneuver::driving_straight);
  }
  CHECK(fired[1] == 15.0);

  SUBCASE("a true maneuver releases the lockout early") {
    const std::vector<Annotation> truth = {{Maneuver::left_turn, 11.2}};
    const auto ev = gate_stream(times, posts, truth, cfg);
    std::vector<double> f;
    for (const auto& e : ev)
      if (is_maneuver(e.predicted)) f.push_back(e.t);
    REQUIRE(f.size() >= 2);
    CHECK(f[1] == 11.5);
  }
}

TEST_CASE("stride timestamps") {
  RawTrace tr;
  for (int i = 0; i < 400; ++i) {
    FrameRecord f;
    f.t = i / 25.0;
    f.speed = 50.0;
    tr.frames.push_back(f);
  }
  ProtocolConfig cfg;
  const auto times = step_times(tr, cfg);
  REQUIRE(times.size() > 5);
  CHECK(times[0] == tr.frames[119].t);
  for (std::size_t k = 0; k < times.size(); ++k) {
    CHECK(times[k] == times[0] + static_cast<double>(k) * 0.8);
  }
  CHECK(times.back() <= tr.frames.back().t + 1e-9);

  ManeuverModelSet set;
  for (auto& m : set.models) m = ModelParams::zeros(1);
  const auto events = stream_anticipate(set, tr, cfg);
  REQUIRE(events.size() == times.size());
  for (std::size_t k = 0; k < events.size(); ++k) {
    CHECK(events[k].t == times[k]);
    double s = 0.0;
    for (double v : events[k].posteriors) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
    CHECK(events[k].predicted == Maneuver::driving_straight);
  }
  RawTrace short_trace;
  short_trace.frames.assign(tr.frames.begin(), tr.frames.begin() + 100);
  CHECK_THROWS_AS(step_times(short_trace, cfg), std::invalid_argument);
}

TEST_CASE("protocol invariants on random posterior streams") {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> times;
    std::vector<ClassPosterior> posts;
    for (int k = 0; k < 150; ++k) {
      times.push_back(4.8 + 0.8 * k);
      posts.push_back(random_posterior(rng));
    }
    const auto truth = random_truth(rng, times.back());
    int n_maneuvers = 0;
    for (const auto& a : truth) n_maneuvers += is_maneuver(a.maneuver) ? 1 : 0;

    ProtocolConfig cfg;
    int previous = std::numeric_limits<int>::max();
    for (double thr : default_threshold_grid()) {
      cfg.threshold = thr;
      const auto events = gate_stream(times, posts, truth, cfg);
      const Metrics m = score(events, truth, cfg);
      const MetricCounts& c = m.counts;
      // Denominators partition predictions and true maneuvers.
      CHECK(c.tp + c.fp + c.fpp == predictions(events));
      CHECK(c.tp + c.fp + c.mp == n_maneuvers);
      CHECK(static_cast<int>(c.tp_lead_times_s.size()) == c.tp);
      for (double lead : c.tp_lead_times_s) CHECK(lead >= 0.0);
      CHECK(m.f1 >= 0.0);
      CHECK(m.f1 <= 1.0);
      CHECK((m.f1 == 0.0) == (c.tp == 0));
      // Monotone gate.
      CHECK(predictions(events) <= previous);
      previous = predictions(events);
      // Lockout.
      double last = -1e9;
      for (const auto& e : events) {
        if (!is_maneuver(e.predicted)) continue;
        if (e.t - last < cfg.lockout_s - 1e-9) {
          const bool released = std::any_of(truth.begin(), truth.end(), [&](const Annotation& a) {
            return is_maneuver(a.maneuver) && a.t_start > last && a.t_start < e.t;
          });
          CHECK(released);
        }
        last = e.t;
      }
      for (const auto& e : events) {
        if (is_maneuver(e.predicted)) CHECK(e.posteriors[static_cast<std::size_t>(index_of(e.predicted))] >= thr);
      }
    }
  }
}

TEST_CASE("threshold curve re-gates stored posteriors") {
  std::mt19937_64 rng(63);
  std::vector<double> times;
  std::vector<ClassPosterior> posts;
  for (int k = 0; k < 80; ++k) {
    times.push_back(0.8 * k);
    posts.push_back(random_posterior(rng));
  }
  const auto truth = random_truth(rng, times.back());
  ProtocolConfig cfg;
  const auto events = gate_stream(times, posts, truth, cfg);
  const auto grid = default_threshold_grid();
  REQUIRE(grid.size() == 19);
  CHECK(grid.front() == 0.05);
  CHECK(grid.back() == 0.95);
  const auto curve = threshold_curve(events, truth, grid, cfg);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    ProtocolConfig c = cfg;
    c.threshold = grid[k];
    const Metrics direct = score(gate_stream(times, posts, truth, c), truth, c);
    CHECK(curve[k].counts.tp == direct.counts.tp);
    CHECK(curve[k].f1 == direct.f1);
  }
}

TEST_CASE("sequence evaluation places the maneuver after the last chunk") {
  FeatureSequence seq;
  seq.label = Maneuver::left_turn;
  seq.inputs.assign(6, Vec::Zero(kDimX));
  seq.outputs.assign(6, Vec::Zero(kDimZ));
  std::vector<ClassPosterior> prefixes(6, ClassPosterior{0.2, 0.2, 0.2, 0.2, 0.2});
  prefixes[2] = peaked(Maneuver::left_turn, 0.9);
  prefixes[3] = peaked(Maneuver::left_turn, 0.9);
  ProtocolConfig cfg;
  cfg.threshold = 0.5;
  MetricCounts c = evaluate_sequence(prefixes, seq, cfg);
  CHECK(c.tp == 1);
  CHECK(c.fp + c.fpp + c.mp == 0);
  REQUIRE(c.tp_lead_times_s.size() == 1);
  CHECK(c.tp_lead_times_s[0] == doctest::Approx(4.8 - 2.4));

  seq.label = Maneuver::driving_straight;
  c = evaluate_sequence(prefixes, seq, cfg);
  CHECK(c.fpp == 1);
  CHECK(c.tp + c.fp + c.mp == 0);

  seq.label = Maneuver::right_turn;
  prefixes.assign(6, ClassPosterior{0.2, 0.2, 0.2, 0.2, 0.2});
  c = evaluate_sequence(prefixes, seq, cfg);
  CHECK(c.mp == 1);
}

TEST_CASE("cross-validation sweep") {
  const Dataset data = synthetic_dataset(6, 7);
  EmConfig em;
  em.max_iters = 15;
  const std::vector<double> grid = default_threshold_grid();

  SUBCASE("fold assignment is stratified and seeded") {
    const auto a = assign_folds(data, 3, 5);
    CHECK(a == assign_folds(data, 3, 5));
    CHECK(a != assign_folds(data, 3, 6));
    const auto by_class = split_by_class(data);
    for (int c = 0; c < kNumManeuvers; ++c) {
      std::array<int, 3> counts{};
      for (std::size_t n = 0; n < data.size(); ++n)
        if (index_of(data[n].label) == c) ++counts[static_cast<std::size_t>(a[n])];
      CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
      CHECK(by_class[c].size() >= 3);
    }
    Dataset tiny(data.begin(), data.begin() + 3);
    CHECK_THROWS_AS(assign_folds(tiny, 5, 0), std::invalid_argument);
  }

  SUBCASE("a single configuration and fold matches a direct run") {
    em.n_states = 2;
    const SweepResult r = sweep(data, {2}, {0.6}, 1, 3, em);
    const ManeuverModelSet models = fit_all(split_by_class(data), em);
    const auto direct = evaluate_sequences(ManeuverScorer(models), data, {0.6}, ProtocolConfig{});
    REQUIRE(r.rows.size() == 2);
    for (const auto& row : r.rows) {
      CHECK(row.metrics.counts.tp == direct[0].tp);
      CHECK(row.metrics.counts.fpp == direct[0].fpp);
      CHECK(row.metrics.f1 == derive_metrics(direct[0]).f1);
    }
    CHECK(r.best_states == 2);
    CHECK(r.best_threshold == 0.6);
  }

  SUBCASE("deterministic table") {
    const SweepResult a = sweep(data, {1, 2}, grid, 3, 11, em);
    const SweepResult b = sweep(data, {1, 2}, grid, 3, 11, em);
    REQUIRE(a.rows.size() == b.rows.size());
    REQUIRE(a.rows.size() == 2 * grid.size() * 4);
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
      CHECK(a.rows[k].n_states == b.rows[k].n_states);
      CHECK(a.rows[k].fold == b.rows[k].fold);
      CHECK(a.rows[k].metrics.f1 == b.rows[k].metrics.f1);
    }
    CHECK(a.best_threshold == b.best_threshold);
    CHECK(a.best_f1 == b.best_f1);
  }

  SUBCASE("the best threshold on cue-bearing data is interior") {
    const SweepResult r = sweep(synthetic_dataset(10, 8), {3}, grid, 5, 1, EmConfig{});
    std::ostringstream curve;
    for (const auto& row : r.rows)
      if (row.fold < 0) curve << row.threshold << ":" << row.metrics.f1 << " ";
    MESSAGE("mean F1 by threshold " << curve.str());
    MESSAGE("best threshold " << r.best_threshold << " with F1 " << r.best_f1);
    CHECK(r.best_threshold > 0.05);
    CHECK(r.best_threshold < 0.95);
  }
}
