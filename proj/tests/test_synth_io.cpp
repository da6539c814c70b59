#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "aiohmm/io.hpp"
#include "aiohmm/synth.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace aiohmm;

namespace {

std::string dump_trace(const RawTrace& tr) {
  std::ostringstream os;
  write_trace(os, tr);
  return os.str();
}

std::string dump_annotations(const std::vector<Annotation>& a) {
  std::ostringstream os;
  write_annotations(os, a);
  return os.str();
}

double side_of(Maneuver m) {
  return (m == Maneuver::left_lane_change || m == Maneuver::left_turn) ? -1.0 : 1.0;
}

// Aggregated inside vector of the 20 frames starting at `t`.
Vec inside_at(const RawTrace& tr, double t) {
  const long first = last_frame_at(tr, t) + 1;
  std::vector<Vec> phis;
  for (long i = first; i < first + kFramesPerChunk; ++i) phis.push_back(face_histogram(tr.frames[static_cast<std::size_t>(i)]));
  return aggregate_inside(phis);
}

// Welch statistic comparing the side-signed face-center coordinate of the
// chunk after each cue against chunks far from every cue and maneuver.
double burst_statistic(double cue_strength, int n_seeds) {
  std::vector<double> burst, background;
  for (int seed = 0; seed < n_seeds; ++seed) {
    ScenarioConfig cfg;
    cfg.cue_strength = cue_strength;
    cfg.seed = static_cast<std::uint64_t>(500 + seed);
    const Episode ep = generate_episode(cfg);
    std::vector<double> busy;
    std::size_t k = 0;
    for (const auto& a : ep.annotations) {
      if (!is_maneuver(a.maneuver)) continue;
      const double cue = ep.injected_cue_times[k++];
      busy.push_back(cue);
      busy.push_back(a.t_start);
      burst.push_back(side_of(a.maneuver) * inside_at(ep.trace, cue)[8]);
    }
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::uniform_real_distribution<double> when(1.0, cfg.duration_s - 2.0);
    std::bernoulli_distribution sign(0.5);
    for (int n = 0; n < 40; ++n) {
      const double t = when(rng);
      const bool quiet = std::none_of(busy.begin(), busy.end(), [&](double b) { return std::abs(b - t) < 8.0; });
      if (quiet) background.push_back((sign(rng) ? 1.0 : -1.0) * inside_at(ep.trace, t)[8]);
    }
  }
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    return std::pair{m, s2 / static_cast<double>(v.size() - 1)};
  };
  const auto [m1, v1] = moments(burst);
  const auto [m2, v2] = moments(background);
  return (m1 - m2) / std::sqrt(v1 / static_cast<double>(burst.size()) + v2 / static_cast<double>(background.size()));
}

}  // namespace

TEST_CASE("episodes are deterministic in the seed") {
  ScenarioConfig cfg;
  cfg.seed = 42;
  cfg.duration_s = 120.0;
  const Episode a = generate_episode(cfg);
  const Episode b = generate_episode(cfg);
  CHECK(dump_trace(a.trace) == dump_trace(b.trace));
  CHECK(dump_annotations(a.annotations) == dump_annotations(b.annotations));
  CHECK(a.injected_cue_times == b.injected_cue_times);
  cfg.seed = 43;
  CHECK(dump_trace(generate_episode(cfg).trace) != dump_trace(a.trace));
}

TEST_CASE("schedule invariants") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ScenarioConfig cfg;
    cfg.seed = seed;
    cfg.cue_lead_min_s = 1.5;
    cfg.cue_lead_max_s = 4.0;
    cfg.maneuver_rate_per_min = 4.0;
    const Episode ep = generate_episode(cfg);
    CHECK_NOTHROW(ep.trace.check());
    std::vector<double> starts;
    for (const auto& a : ep.annotations) {
      CHECK(a.t_start >= 0.0);
      CHECK(a.t_start <= cfg.duration_s);
      if (is_maneuver(a.maneuver)) starts.push_back(a.t_start);
    }
    REQUIRE(starts.size() == ep.injected_cue_times.size());
    CHECK(!starts.empty());
    for (std::size_t k = 0; k < starts.size(); ++k) {
      const double lead = starts[k] - ep.injected_cue_times[k];
      CHECK(lead >= cfg.cue_lead_min_s);
      CHECK(lead <= cfg.cue_lead_max_s);
      if (k > 0) CHECK(starts[k] - starts[k - 1] >= kMinManeuverSpacingSeconds);
    }
    for (std::size_t k = 1; k < ep.annotations.size(); ++k) {
      CHECK(ep.annotations[k].t_start > ep.annotations[k - 1].t_start);
    }
    // Every annotation has a full horizon of frames before it.
    std::vector<std::string> warnings;
    const auto seqs = featurize_trace(ep.trace, ep.annotations, cfg.horizon_s, &warnings);
    CHECK(seqs.size() == ep.annotations.size());
    CHECK(warnings.empty());
  }
}

TEST_CASE("lane bits respect maneuver legality") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ScenarioConfig cfg;
    cfg.seed = seed;
    const Episode ep = generate_episode(cfg);
    for (const auto& a : ep.annotations) {
      if (!is_maneuver(a.maneuver)) continue;
      const FrameRecord& f = ep.trace.frames[static_cast<std::size_t>(last_frame_at(ep.trace, a.t_start))];
      if (a.maneuver == Maneuver::left_lane_change) CHECK(f.lane_left == 1);
      if (a.maneuver == Maneuver::right_lane_change) CHECK(f.lane_right == 1);
      if (a.maneuver == Maneuver::left_turn || a.maneuver == Maneuver::right_turn) CHECK(f.road_artifact == 1);
    }
  }
}

TEST_CASE("configuration errors") {
  ScenarioConfig cfg;
  cfg.maneuver_rate_per_min = 7.0;  // mean gap below the 10 s spacing
  CHECK_THROWS_AS(generate_episode(cfg), std::invalid_argument);
  cfg = ScenarioConfig{};
  cfg.cue_lead_max_s = 6.0;
  CHECK_THROWS_AS(generate_episode(cfg), std::invalid_argument);
  cfg = ScenarioConfig{};
  cfg.cue_lead_min_s = 3.0;
  cfg.cue_lead_max_s = 2.0;
  CHECK_THROWS_AS(generate_episode(cfg), std::invalid_argument);
  cfg = ScenarioConfig{};
  cfg.duration_s = 4.0;
  CHECK_THROWS_AS(generate_episode(cfg), std::invalid_argument);
}

TEST_CASE("without cues, burst windows look like background") {
  const double z = burst_statistic(0.0, 50);
  MESSAGE("Welch statistic without cues: " << z);
  CHECK(std::abs(z) < 2.5758);  // two-sided alpha = 0.01
  // The same test detects the default cues.
  const double z_cued = burst_statistic(5.0, 10);
  MESSAGE("Welch statistic with cues: " << z_cued);
  CHECK(z_cued > 2.5758);
}

TEST_CASE("dataset round trip") {
  std::mt19937_64 rng(71);
  Dataset data;
  for (int n = 0; n < 100; ++n) {
    FeatureSequence seq = oracle::random_sequence(1 + n % 8, rng, 1e3);
    seq.label = static_cast<Maneuver>(n % kNumManeuvers);
    seq.outputs[0][0] = 1e-300;
    seq.outputs[0][1] = -0.1;
    data.push_back(seq);
  }
  std::stringstream ss;
  write_dataset(ss, data);
  const Dataset back = read_dataset(ss);
  REQUIRE(back.size() == data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    CHECK(back[n].label == data[n].label);
    CHECK(back[n].chunk_duration_s == data[n].chunk_duration_s);
    REQUIRE(back[n].length() == data[n].length());
    for (int t = 0; t < data[n].length(); ++t) {
      CHECK(back[n].inputs[t] == data[n].inputs[t]);
      CHECK(back[n].outputs[t] == data[n].outputs[t]);
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "aiohmm_dataset_roundtrip.jsonl";
  save_dataset(path, data);
  CHECK(load_dataset(path).size() == 100);
  std::filesystem::remove(path);
}

TEST_CASE("trace, annotation and event round trips") {
  ScenarioConfig cfg;
  cfg.duration_s = 60.0;
  const Episode ep = generate_episode(cfg);
  std::stringstream ts;
  write_trace(ts, ep.trace);
  const RawTrace tr = read_trace(ts);
  REQUIRE(tr.frames.size() == ep.trace.frames.size());
  for (std::size_t i = 0; i < tr.frames.size(); ++i) {
    CHECK(tr.frames[i].t == ep.trace.frames[i].t);
    CHECK(tr.frames[i].speed == ep.trace.frames[i].speed);
    CHECK(tr.frames[i].point_motions == ep.trace.frames[i].point_motions);
    CHECK(tr.frames[i].face_center_dx == ep.trace.frames[i].face_center_dx);
  }
  std::stringstream as;
  write_annotations(as, ep.annotations);
  const auto anns = read_annotations(as);
  REQUIRE(anns.size() == ep.annotations.size());
  for (std::size_t k = 0; k < anns.size(); ++k) {
    CHECK(anns[k].maneuver == ep.annotations[k].maneuver);
    CHECK(anns[k].t_start == ep.annotations[k].t_start);
  }
  const oracle::ScoringFixture f = oracle::scoring_fixture();
  std::stringstream es;
  write_events(es, f.events);
  const auto events = read_events(es);
  REQUIRE(events.size() == f.events.size());
  for (std::size_t k = 0; k < events.size(); ++k) {
    CHECK(events[k].t == f.events[k].t);
    CHECK(events[k].posteriors == f.events[k].posteriors);
    CHECK(events[k].predicted == f.events[k].predicted);
  }
}

TEST_CASE("model set round trip with three states") {
  std::mt19937_64 rng(72);
  ManeuverModelSet set;
  for (auto& m : set.models) m = oracle::random_model(3, rng, 2.0, 0.3);
  set.prior = {0.1, 0.2, 0.3, 0.25, 0.15};
  std::stringstream ss;
  write_model_set(ss, set);
  const ManeuverModelSet back = read_model_set(ss);
  auto rel = [](const Mat& got, const Mat& want) {
    return (got - want).cwiseAbs().maxCoeff() / std::max(1e-300, want.cwiseAbs().maxCoeff());
  };
  for (int c = 0; c < kNumManeuvers; ++c) {
    CHECK(back.prior[c] == set.prior[c]);
    const ModelParams& a = back.models[c];
    const ModelParams& b = set.models[c];
    REQUIRE(a.n_states == 3);
    CHECK(rel(a.w0, b.w0) <= 1e-15);
    for (int i = 0; i < 3; ++i) {
      CHECK(rel(a.states[i].mu, b.states[i].mu) <= 1e-15);
      CHECK(rel(a.states[i].a, b.states[i].a) <= 1e-15);
      CHECK(rel(a.states[i].b, b.states[i].b) <= 1e-15);
      CHECK(rel(a.states[i].sigma, b.states[i].sigma) <= 1e-15);
      CHECK(rel(a.states[i].w, b.states[i].w) <= 1e-15);
    }
  }
  std::ostringstream again;
  write_model_set(again, back);
  CHECK(again.str() == ss.str());
}

TEST_CASE("malformed and unexpected input") {
  std::mt19937_64 rng(73);
  Dataset data;
  for (int n = 0; n < 3; ++n) data.push_back(oracle::random_sequence(4, rng));
  std::ostringstream os;
  write_dataset(os, data);
  const std::string text = os.str();

  SUBCASE("truncated last line") {
    std::istringstream in(text.substr(0, text.size() - 25));
    try {
      read_dataset(in);
      FAIL("expected a parse error");
    } catch (const SchemaError&) {
      FAIL("expected malformed JSON, not a schema error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("unknown field") {
    std::string edited = text;
    const std::size_t second = edited.find('\n') + 1;
    edited.insert(second + 1, "\"extra\":1,");
    std::istringstream in(edited);
    try {
      read_dataset(in);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("extra") != std::string::npos);
    }
  }
  SUBCASE("dimension mismatch") {
    std::istringstream in(R"({"label":"left_turn","chunk_duration_s":0.8,"x":[[1,2,3]],"z":[[0,0,0,0,0,0,0,0,0]]})");
    CHECK_THROWS_AS(read_dataset(in), SchemaError);
  }
  SUBCASE("bad frame flag") {
    std::istringstream in(
        R"({"t":0,"point_motions":[],"face_center_dx":0,"lane_left":2,"lane_right":0,"road_artifact":0,"speed":50})");
    CHECK_THROWS_AS(read_trace(in), SchemaError);
  }
  SUBCASE("unknown maneuver") {
    std::istringstream in(R"([{"maneuver":"u_turn","t_start":3}])");
    CHECK_THROWS_AS(read_annotations(in), SchemaError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS(load_dataset("/nonexistent/dir/data.jsonl"));
  }
}
