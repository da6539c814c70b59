#include "aiohmm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "aiohmm/anticipation.hpp"
#include "aiohmm/features.hpp"
#include "aiohmm/io.hpp"
#include "aiohmm/learning.hpp"
#include "aiohmm/synth.hpp"
#include "json.hpp"

namespace aiohmm {

namespace fs = std::filesystem;

namespace {

const std::string kTraceSuffix = ".trace.jsonl";
const std::string kAnnotationSuffix = ".annotations.json";
const std::string kCueSuffix = ".cues.json";

std::string episode_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "episode_%03zu", i);
  return buf;
}

// Writes to `path`, or to `out` when the path is empty.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_file(path, text);
  }
}

std::vector<std::pair<fs::path, fs::path>> episodes_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<std::pair<fs::path, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= kTraceSuffix.size() ||
        name.compare(name.size() - kTraceSuffix.size(), kTraceSuffix.size(), kTraceSuffix) != 0) {
      continue;
    }
    const std::string stem = name.substr(0, name.size() - kTraceSuffix.size());
    out.emplace_back(entry.path(), dir / (stem + kAnnotationSuffix));
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no *" + kTraceSuffix + " files in " + dir.string());
  return out;
}

struct Options {
  // simulate
  ScenarioConfig scenario;
  int episodes = 1;
  // featurize
  std::vector<std::string> traces;
  std::vector<std::string> annotation_files;
  std::string dir;
  // train / sweep
  std::string data;
  std::vector<int> states{3};
  std::string ablation = "aio_hmm";
  int max_iters = 100;
  int folds = 5;
  std::uint64_t seed = 0;
  // anticipate / score / report
  std::string model;
  std::string trace;
  std::string annotations;
  std::string events;
  ProtocolConfig protocol;
  double frame_rate = 25.0;
  std::string out;
};

EmConfig em_config(const Options& o) {
  EmConfig cfg;
  cfg.n_states = o.states.front();
  cfg.max_iters = o.max_iters;
  cfg.seed = o.seed;
  cfg.ablation = ablation_from_string(o.ablation);
  cfg.check();
  return cfg;
}

void run_simulate(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw std::runtime_error("simulate needs --out DIR");
  fs::create_directories(o.out);
  for (int i = 0; i < o.episodes; ++i) {
    ScenarioConfig cfg = o.scenario;
    cfg.seed = o.seed + static_cast<std::uint64_t>(i);
    const Episode ep = generate_episode(cfg);
    const fs::path base = fs::path(o.out) / episode_stem(static_cast<std::size_t>(i));
    save_trace(base.string() + kTraceSuffix, ep.trace);
    save_annotations(base.string() + kAnnotationSuffix, ep.annotations);
    write_file(base.string() + kCueSuffix, nlohmann::json(ep.injected_cue_times).dump() + "\n");
    out << base.string() << ": " << ep.trace.frames.size() << " frames, " << ep.annotations.size()
        << " annotations\n";
  }
}

void run_featurize(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (!o.dir.empty()) pairs = episodes_in(o.dir);
  if (o.traces.size() != o.annotation_files.size()) {
    throw CLI::ValidationError("--trace and --annotations must be given the same number of times");
  }
  for (std::size_t i = 0; i < o.traces.size(); ++i) pairs.emplace_back(o.traces[i], o.annotation_files[i]);
  if (pairs.empty()) throw CLI::ValidationError("featurize needs --dir or --trace/--annotations pairs");

  Dataset data;
  for (const auto& [trace_path, ann_path] : pairs) {
    const RawTrace trace = load_trace(trace_path, o.frame_rate);
    const auto anns = load_annotations(ann_path);
    std::vector<std::string> warnings;
    auto seqs = featurize_trace(trace, anns, o.protocol.horizon_s, &warnings);
    for (const auto& w : warnings) err << "warning: " << trace_path.string() << ": " << w << '\n';
    data.insert(data.end(), std::make_move_iterator(seqs.begin()), std::make_move_iterator(seqs.end()));
  }
  std::ostringstream os;
  write_dataset(os, data);
  emit(o.out, os.str(), out);
  if (!o.out.empty()) out << "wrote " << data.size() << " sequences to " << o.out << '\n';
}

void run_train(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.states.size() != 1) throw CLI::ValidationError("train takes a single --states value");
  const EmConfig cfg = em_config(o);
  const Dataset data = load_dataset(o.data);
  std::array<Dataset, kNumManeuvers> per_class = split_by_class(data);
  ManeuverModelSet set;
  for (Maneuver m : kAllManeuvers) {
    const auto& d = per_class[static_cast<std::size_t>(index_of(m))];
    if (d.empty()) throw std::runtime_error("no training sequences for class " + std::string(to_string(m)));
    const FitReport rep = fit_em(d, cfg);
    for (const auto& w : rep.warnings) err << "warning: " << to_string(m) << ": " << w << '\n';
    out << to_string(m) << ": " << d.size() << " sequences, " << rep.iterations_run << " iterations, loglik "
        << rep.loglik_trace.back() << (rep.converged ? "" : " (not converged)") << '\n';
    set[m] = rep.params;
  }
  std::ostringstream os;
  write_model_set(os, set);
  emit(o.out, os.str(), out);
}

void run_anticipate(const Options& o, std::ostream& out) {
  const ManeuverModelSet models = load_model_set(o.model);
  const RawTrace trace = load_trace(o.trace, o.frame_rate);
  std::vector<Annotation> truth;
  if (!o.annotations.empty()) truth = load_annotations(o.annotations);
  const auto events = stream_anticipate(models, trace, o.protocol, truth);
  std::ostringstream os;
  write_events(os, events);
  emit(o.out, os.str(), out);
}

void run_score(const Options& o, std::ostream& out) {
  const auto events = load_events(o.events);
  const auto truth = load_annotations(o.annotations);
  const Metrics m = score(events, truth, o.protocol);
  std::ostringstream os;
  write_metrics_csv(os, o.protocol, m);
  emit(o.out, os.str(), out);
}

void run_sweep(const Options& o, std::ostream& out) {
  EmConfig cfg = em_config(o);
  const Dataset data = load_dataset(o.data);
  const auto grid = default_threshold_grid();
  const SweepResult res = sweep(data, o.states, grid, o.folds, o.seed, cfg, o.protocol);
  std::ostringstream os;
  write_sweep_csv(os, res);
  emit(o.out, os.str(), out);
  (o.out.empty() ? std::cerr : out) << "best: n_states=" << res.best_states << " threshold=" << res.best_threshold
                                    << " f1=" << res.best_f1 << '\n';
}

void run_report(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw std::runtime_error("report needs --out DIR");
  const auto events = load_events(o.events);
  const auto truth = load_annotations(o.annotations);
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  std::ostringstream cm;
  write_confusion_csv(cm, confusion_matrix(events, truth, o.protocol));
  write_file(dir / "confusion.csv", cm.str());
  const auto grid = default_threshold_grid();
  const auto curve = threshold_curve(events, truth, grid, o.protocol);
  std::ostringstream thr;
  write_threshold_curve_csv(thr, grid, curve);
  write_file(dir / "threshold_f1.csv", thr.str());
  std::ostringstream ttm;
  write_ttm_curve_csv(ttm, grid, curve);
  write_file(dir / "ttm_f1.csv", ttm.str());
  out << "wrote confusion.csv, threshold_f1.csv, ttm_f1.csv to " << o.out << '\n';
}

void add_protocol(CLI::App* sub, Options& o, bool threshold) {
  if (threshold) sub->add_option("--threshold", o.protocol.threshold, "Posterior threshold in (0,1)")->capture_default_str();
  sub->add_option("--lockout", o.protocol.lockout_s, "Lockout after a prediction (s)")->capture_default_str();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Maneuver anticipation with autoregressive input-output HMMs", "aiohmm"};
  app.require_subcommand(1, 1);

  auto* sim = app.add_subcommand("simulate", "Generate synthetic driving episodes");
  sim->add_option("--out", o.out, "Output directory")->required();
  sim->add_option("--seed", o.seed, "Seed of the first episode")->capture_default_str();
  sim->add_option("--episodes", o.episodes, "Number of episodes")->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--duration", o.scenario.duration_s, "Episode length (s)")->capture_default_str();
  sim->add_option("--rate", o.scenario.maneuver_rate_per_min, "Maneuvers per minute")->capture_default_str();
  sim->add_option("--cue-strength", o.scenario.cue_strength, "Head-motion cue amplitude")->capture_default_str();
  sim->add_option("--noise", o.scenario.noise_sigma, "Point-motion noise scale")->capture_default_str();
  sim->add_option("--lead-min", o.scenario.cue_lead_min_s, "Shortest cue lead time (s)")->capture_default_str();
  sim->add_option("--lead-max", o.scenario.cue_lead_max_s, "Longest cue lead time (s)")->capture_default_str();
  sim->add_option("--horizon", o.scenario.horizon_s, "Anticipation horizon (s)")->capture_default_str();

  auto* feat = app.add_subcommand("featurize", "Turn traces and annotations into a feature dataset");
  feat->add_option("--dir", o.dir, "Directory of simulated episodes");
  feat->add_option("--trace", o.traces, "Trace file (repeatable)");
  feat->add_option("--annotations", o.annotation_files, "Annotation file matching each --trace");
  feat->add_option("--horizon", o.protocol.horizon_s, "Horizon before each annotation (s)")->capture_default_str();
  feat->add_option("--frame-rate", o.frame_rate, "Trace frame rate (Hz)")->capture_default_str();
  feat->add_option("--out", o.out, "Dataset file (default stdout)");

  auto* train = app.add_subcommand("train", "Fit one model per maneuver class");
  train->add_option("--data", o.data, "Dataset file")->required();
  train->add_option("--states", o.states, "Hidden states per model")->expected(1)->capture_default_str();
  train->add_option("--ablation", o.ablation, "aio_hmm, io_hmm or hmm_output")
      ->check(CLI::IsMember({"aio_hmm", "io_hmm", "hmm_output"}))
      ->capture_default_str();
  train->add_option("--seed", o.seed, "Initialization seed")->capture_default_str();
  train->add_option("--max-iters", o.max_iters, "EM iteration cap")->capture_default_str();
  train->add_option("--out", o.out, "Model file (default stdout)");

  auto* ant = app.add_subcommand("anticipate", "Stream a trace through a model set");
  ant->add_option("--model", o.model, "Model file")->required();
  ant->add_option("--trace", o.trace, "Trace file")->required();
  ant->add_option("--annotations", o.annotations, "Ground truth used to release the lockout");
  ant->add_option("--horizon", o.protocol.horizon_s, "Trailing window (s)")->capture_default_str();
  ant->add_option("--stride", o.protocol.stride_s, "Seconds between predictions")->capture_default_str();
  ant->add_option("--frame-rate", o.frame_rate, "Trace frame rate (Hz)")->capture_default_str();
  add_protocol(ant, o, true);
  ant->add_option("--out", o.out, "Events file (default stdout)");

  auto* sc = app.add_subcommand("score", "Precision, recall, F1 and time-to-maneuver of an event stream");
  sc->add_option("--events", o.events, "Events file")->required();
  sc->add_option("--annotations", o.annotations, "Ground-truth annotations")->required();
  add_protocol(sc, o, true);
  sc->add_option("--out", o.out, "Metrics CSV (default stdout)");

  auto* sw = app.add_subcommand("sweep", "Cross-validate state counts and thresholds");
  sw->add_option("--data", o.data, "Dataset file")->required();
  sw->add_option("--states", o.states, "Comma-separated state counts")->delimiter(',')->capture_default_str();
  sw->add_option("--folds", o.folds, "Number of folds")->check(CLI::PositiveNumber)->capture_default_str();
  sw->add_option("--ablation", o.ablation, "aio_hmm, io_hmm or hmm_output")
      ->check(CLI::IsMember({"aio_hmm", "io_hmm", "hmm_output"}))
      ->capture_default_str();
  sw->add_option("--seed", o.seed, "Fold and initialization seed")->capture_default_str();
  sw->add_option("--max-iters", o.max_iters, "EM iteration cap")->capture_default_str();
  add_protocol(sw, o, false);
  sw->add_option("--out", o.out, "Sweep CSV (default stdout)");

  auto* rep = app.add_subcommand("report", "Confusion matrix and threshold curves of an event stream");
  rep->add_option("--events", o.events, "Events file")->required();
  rep->add_option("--annotations", o.annotations, "Ground-truth annotations")->required();
  add_protocol(rep, o, false);
  rep->add_option("--out", o.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    o.protocol.check();
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*sim) run_simulate(o, out);
    else if (*feat) run_featurize(o, out, err);
    else if (*train) run_train(o, out, err);
    else if (*ant) run_anticipate(o, out);
    else if (*sc) run_score(o, out);
    else if (*sw) run_sweep(o, out);
    else if (*rep) run_report(o, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
  return kExitOk;
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace aiohmm
