#include "aiohmm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace aiohmm {

namespace {

using json = nlohmann::ordered_json;

std::string at_line(std::size_t line) { return line > 0 ? "line " + std::to_string(line) + ": " : ""; }

[[noreturn]] void schema_fail(const std::string& msg, std::size_t line) {
  throw SchemaError(at_line(line) + msg, line);
}

void expect_fields(const json& obj, std::initializer_list<const char*> fields, std::size_t line,
                   const std::string& what) {
  if (!obj.is_object()) schema_fail(what + " must be a JSON object", line);
  for (const char* f : fields) {
    if (!obj.contains(f)) schema_fail(what + " is missing field '" + f + "'", line);
  }
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* f : fields) known = known || key == f;
    if (!known) schema_fail(what + " has unknown field '" + key + "'", line);
  }
}

double number(const json& j, const std::string& what, std::size_t line) {
  if (!j.is_number()) schema_fail(what + " must be a number", line);
  return j.get<double>();
}

int integer(const json& j, const std::string& what, std::size_t line) {
  if (!j.is_number_integer()) schema_fail(what + " must be an integer", line);
  return j.get<int>();
}

int flag(const json& j, const std::string& what, std::size_t line) {
  const int v = integer(j, what, line);
  if (v != 0 && v != 1) schema_fail(what + " must be 0 or 1", line);
  return v;
}

Vec vector_of(const json& j, long dim, const std::string& what, std::size_t line) {
  if (!j.is_array()) schema_fail(what + " must be an array", line);
  if (dim >= 0 && static_cast<long>(j.size()) != dim) {
    schema_fail(what + " has " + std::to_string(j.size()) + " entries, expected " + std::to_string(dim), line);
  }
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], what, line);
  return v;
}

Mat rows_of(const json& j, long rows, long cols, const std::string& what, std::size_t line) {
  if (!j.is_array() || static_cast<long>(j.size()) != rows) {
    schema_fail(what + " must be an array of " + std::to_string(rows) + " rows", line);
  }
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r) m.row(r) = vector_of(j[static_cast<std::size_t>(r)], cols, what, line).transpose();
  return m;
}

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json rows_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(m.row(r).transpose()));
  return a;
}

Maneuver maneuver_field(const json& j, const std::string& what, std::size_t line) {
  if (!j.is_string()) schema_fail(what + " must be a string", line);
  try {
    return maneuver_from_string(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    schema_fail(e.what(), line);
  }
}

json parse_line(const std::string& text, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(at_line(line) + "malformed JSON: " + e.what(), line);
  }
}

json parse_document(std::istream& in) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min(text.size(), e.byte > 0 ? e.byte - 1 : 0);
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(at_line(line) + "malformed JSON: " + e.what(), line);
  }
}

// Calls fn(json, line) for every non-blank line.
template <class Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_line(text, line), line);
  }
}

template <class Fn>
auto with_input(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return fn(in);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what(), e.line());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

template <class Fn>
void with_output(const std::filesystem::path& path, Fn&& fn) {
  std::ostringstream os;
  fn(os);
  write_file(path, os.str());
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << contents;
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---- traces ---------------------------------------------------------------

RawTrace read_trace(std::istream& in, double frame_rate) {
  RawTrace trace;
  trace.frame_rate = frame_rate;
  for_each_line(in, [&](const json& j, std::size_t line) {
    expect_fields(j, {"t", "point_motions", "face_center_dx", "lane_left", "lane_right", "road_artifact", "speed"},
                  line, "frame");
    FrameRecord f;
    f.t = number(j["t"], "t", line);
    const json& pm = j["point_motions"];
    if (!pm.is_array()) schema_fail("point_motions must be an array", line);
    for (const auto& p : pm) {
      const Vec v = vector_of(p, 2, "point motion", line);
      f.point_motions.push_back({v[0], v[1]});
    }
    f.face_center_dx = number(j["face_center_dx"], "face_center_dx", line);
    f.lane_left = flag(j["lane_left"], "lane_left", line);
    f.lane_right = flag(j["lane_right"], "lane_right", line);
    f.road_artifact = flag(j["road_artifact"], "road_artifact", line);
    f.speed = number(j["speed"], "speed", line);
    trace.frames.push_back(std::move(f));
  });
  return trace;
}

void write_trace(std::ostream& out, const RawTrace& trace) {
  for (const auto& f : trace.frames) {
    json pm = json::array();
    for (const auto& p : f.point_motions) pm.push_back({p[0], p[1]});
    json j;
    j["t"] = f.t;
    j["point_motions"] = std::move(pm);
    j["face_center_dx"] = f.face_center_dx;
    j["lane_left"] = f.lane_left;
    j["lane_right"] = f.lane_right;
    j["road_artifact"] = f.road_artifact;
    j["speed"] = f.speed;
    out << j.dump() << '\n';
  }
}

RawTrace load_trace(const std::filesystem::path& path, double frame_rate) {
  return with_input(path, [&](std::istream& in) { return read_trace(in, frame_rate); });
}

void save_trace(const std::filesystem::path& path, const RawTrace& trace) {
  with_output(path, [&](std::ostream& os) { write_trace(os, trace); });
}

// ---- annotations ----------------------------------------------------------

std::vector<Annotation> read_annotations(std::istream& in) {
  const json doc = parse_document(in);
  if (!doc.is_array()) schema_fail("annotations must be a JSON array", 0);
  std::vector<Annotation> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string what = "annotation " + std::to_string(i);
    expect_fields(doc[i], {"maneuver", "t_start"}, 0, what);
    out.push_back({maneuver_field(doc[i]["maneuver"], what + " maneuver", 0),
                   number(doc[i]["t_start"], what + " t_start", 0)});
  }
  return out;
}

void write_annotations(std::ostream& out, const std::vector<Annotation>& annotations) {
  json doc = json::array();
  for (const auto& a : annotations) {
    json j;
    j["maneuver"] = std::string(to_string(a.maneuver));
    j["t_start"] = a.t_start;
    doc.push_back(std::move(j));
  }
  out << doc.dump(1) << '\n';
}

std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_annotations(in); });
}

void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annotations) {
  with_output(path, [&](std::ostream& os) { write_annotations(os, annotations); });
}

// ---- datasets -------------------------------------------------------------

Dataset read_dataset(std::istream& in) {
  Dataset data;
  for_each_line(in, [&](const json& j, std::size_t line) {
    expect_fields(j, {"label", "chunk_duration_s", "x", "z"}, line, "sequence");
    FeatureSequence seq;
    seq.label = maneuver_field(j["label"], "label", line);
    seq.chunk_duration_s = number(j["chunk_duration_s"], "chunk_duration_s", line);
    if (!(seq.chunk_duration_s > 0.0)) schema_fail("chunk_duration_s must be positive", line);
    const json& x = j["x"];
    const json& z = j["z"];
    if (!x.is_array() || !z.is_array()) schema_fail("x and z must be arrays", line);
    if (x.size() != z.size() || x.empty()) {
      schema_fail("x and z must have the same non-zero length (got " + std::to_string(x.size()) + " and " +
                      std::to_string(z.size()) + ")",
                  line);
    }
    for (const auto& r : x) seq.inputs.push_back(vector_of(r, kDimX, "x row", line));
    for (const auto& r : z) seq.outputs.push_back(vector_of(r, kDimZ, "z row", line));
    data.push_back(std::move(seq));
  });
  return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  for (const auto& seq : data) {
    json j;
    j["label"] = std::string(to_string(seq.label));
    j["chunk_duration_s"] = seq.chunk_duration_s;
    json x = json::array();
    json z = json::array();
    for (const auto& v : seq.inputs) x.push_back(to_json(v));
    for (const auto& v : seq.outputs) z.push_back(to_json(v));
    j["x"] = std::move(x);
    j["z"] = std::move(z);
    out << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_dataset(in); });
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  with_output(path, [&](std::ostream& os) { write_dataset(os, data); });
}

// ---- model sets -----------------------------------------------------------

ManeuverModelSet read_model_set(std::istream& in) {
  const json doc = parse_document(in);
  expect_fields(doc, {"format_version", "n_states", "dim_x", "dim_z", "prior", "models"}, 0, "model set");
  if (integer(doc["format_version"], "format_version", 0) != kModelFormatVersion) {
    schema_fail("unsupported format_version " + doc["format_version"].dump(), 0);
  }
  const int n = integer(doc["n_states"], "n_states", 0);
  const int dx = integer(doc["dim_x"], "dim_x", 0);
  const int dz = integer(doc["dim_z"], "dim_z", 0);
  if (n < 1 || dx < 0 || dz < 1) schema_fail("invalid model dimensions", 0);

  ManeuverModelSet set;
  const json& prior = doc["prior"];
  const json& models = doc["models"];
  std::vector<const char*> names;
  for (Maneuver m : kAllManeuvers) names.push_back(to_string(m).data());
  auto expect_classes = [&](const json& obj, const std::string& what) {
    if (!obj.is_object()) schema_fail(what + " must be an object keyed by maneuver class", 0);
    for (const char* name : names) {
      if (!obj.contains(name)) schema_fail(what + " is missing class '" + name + "'", 0);
    }
    for (const auto& [key, _] : obj.items()) {
      try {
        maneuver_from_string(key);
      } catch (const std::invalid_argument&) {
        schema_fail(what + " has unknown field '" + key + "'", 0);
      }
    }
  };
  expect_classes(prior, "prior");
  expect_classes(models, "models");

  for (Maneuver m : kAllManeuvers) {
    const std::string cls(to_string(m));
    set.prior[static_cast<std::size_t>(index_of(m))] = number(prior[cls], "prior." + cls, 0);
    const json& mj = models[cls];
    const std::string where = "models." + cls;
    expect_fields(mj, {"n_states", "states", "w0"}, 0, where);
    if (integer(mj["n_states"], where + ".n_states", 0) != n) schema_fail(where + ".n_states differs from n_states", 0);
    ModelParams p = ModelParams::zeros(n, dx, dz);
    const json& states = mj["states"];
    if (!states.is_array() || static_cast<int>(states.size()) != n) {
      schema_fail(where + ".states must hold " + std::to_string(n) + " entries", 0);
    }
    for (int i = 0; i < n; ++i) {
      const std::string sw = where + ".states[" + std::to_string(i) + "]";
      const json& sj = states[static_cast<std::size_t>(i)];
      expect_fields(sj, {"mu", "a", "b", "sigma", "w_rows"}, 0, sw);
      StateParams& sp = p.states[static_cast<std::size_t>(i)];
      sp.mu = vector_of(sj["mu"], dz, sw + ".mu", 0);
      sp.a = vector_of(sj["a"], dx, sw + ".a", 0);
      sp.b = vector_of(sj["b"], dz, sw + ".b", 0);
      const Vec flat = vector_of(sj["sigma"], static_cast<long>(dz) * dz, sw + ".sigma", 0);
      for (int r = 0; r < dz; ++r) {
        for (int c = 0; c < dz; ++c) sp.sigma(r, c) = flat[r * dz + c];
      }
      sp.w = rows_of(sj["w_rows"], n, dx + 1, sw + ".w_rows", 0);
    }
    p.w0 = rows_of(mj["w0"], n, dx + 1, where + ".w0", 0);
    const auto problems = validate(p);
    if (!problems.empty()) schema_fail(where + ": " + problems.front(), 0);
    set.models[static_cast<std::size_t>(index_of(m))] = std::move(p);
  }
  return set;
}

void write_model_set(std::ostream& out, const ManeuverModelSet& models) {
  const ModelParams& first = models.models[0];
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["n_states"] = first.n_states;
  doc["dim_x"] = first.dim_x;
  doc["dim_z"] = first.dim_z;
  json prior = json::object();
  json classes = json::object();
  for (Maneuver m : kAllManeuvers) {
    const std::string cls(to_string(m));
    const ModelParams& p = models[m];
    if (p.n_states != first.n_states || p.dim_x != first.dim_x || p.dim_z != first.dim_z) {
      throw std::invalid_argument("model set classes must share n_states and dimensions (" + cls + " differs)");
    }
    const auto problems = validate(p);
    if (!problems.empty()) throw std::invalid_argument("cannot save invalid model " + cls + ": " + problems.front());
    prior[cls] = models.prior[static_cast<std::size_t>(index_of(m))];
    json states = json::array();
    for (const auto& sp : p.states) {
      json sj;
      sj["mu"] = to_json(sp.mu);
      sj["a"] = to_json(sp.a);
      sj["b"] = to_json(sp.b);
      json flat = json::array();
      for (Eigen::Index r = 0; r < sp.sigma.rows(); ++r) {
        for (Eigen::Index c = 0; c < sp.sigma.cols(); ++c) flat.push_back(sp.sigma(r, c));
      }
      sj["sigma"] = std::move(flat);
      sj["w_rows"] = rows_json(sp.w);
      states.push_back(std::move(sj));
    }
    json mj;
    mj["n_states"] = p.n_states;
    mj["states"] = std::move(states);
    mj["w0"] = rows_json(p.w0);
    classes[cls] = std::move(mj);
  }
  doc["prior"] = std::move(prior);
  doc["models"] = std::move(classes);
  out << doc.dump(1) << '\n';
}

ManeuverModelSet load_model_set(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_model_set(in); });
}

void save_model_set(const std::filesystem::path& path, const ManeuverModelSet& models) {
  with_output(path, [&](std::ostream& os) { write_model_set(os, models); });
}

// ---- events ---------------------------------------------------------------

std::vector<PredictionEvent> read_events(std::istream& in) {
  std::vector<PredictionEvent> events;
  for_each_line(in, [&](const json& j, std::size_t line) {
    expect_fields(j, {"t", "posteriors", "predicted"}, line, "event");
    PredictionEvent e;
    e.t = number(j["t"], "t", line);
    const Vec p = vector_of(j["posteriors"], kNumManeuvers, "posteriors", line);
    for (int m = 0; m < kNumManeuvers; ++m) {
      if (p[m] < 0.0) schema_fail("posteriors must be non-negative", line);
      e.posteriors[static_cast<std::size_t>(m)] = p[m];
    }
    if (std::abs(p.sum() - 1.0) > 1e-6) schema_fail("posteriors must sum to 1", line);
    e.predicted = maneuver_field(j["predicted"], "predicted", line);
    events.push_back(e);
  });
  return events;
}

void write_events(std::ostream& out, const std::vector<PredictionEvent>& events) {
  for (const auto& e : events) {
    json j;
    j["t"] = e.t;
    json p = json::array();
    for (double v : e.posteriors) p.push_back(v);
    j["posteriors"] = std::move(p);
    j["predicted"] = std::string(to_string(e.predicted));
    out << j.dump() << '\n';
  }
}

std::vector<PredictionEvent> load_events(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& in) { return read_events(in); });
}

void save_events(const std::filesystem::path& path, const std::vector<PredictionEvent>& events) {
  with_output(path, [&](std::ostream& os) { write_events(os, events); });
}

// ---- CSV ------------------------------------------------------------------

void write_metrics_csv(std::ostream& out, const ProtocolConfig& cfg, const Metrics& m) {
  out << "threshold,lockout_s,stride_s,horizon_s,tp,fp,fpp,mp,precision,recall,f1,mean_time_to_maneuver_s\n";
  out << fmt(cfg.threshold) << ',' << fmt(cfg.lockout_s) << ',' << fmt(cfg.stride_s) << ',' << fmt(cfg.horizon_s)
      << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.fpp << ',' << m.counts.mp << ','
      << fmt(m.precision) << ',' << fmt(m.recall) << ',' << fmt(m.f1) << ',' << fmt(m.mean_time_to_maneuver_s)
      << '\n';
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << "n_states,threshold,fold,tp,fp,fpp,mp,precision,recall,f1,mean_time_to_maneuver_s\n";
  for (const auto& r : result.rows) {
    const auto& m = r.metrics;
    out << r.n_states << ',' << fmt(r.threshold) << ',' << (r.fold < 0 ? std::string("mean") : std::to_string(r.fold))
        << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.fpp << ',' << m.counts.mp << ','
        << fmt(m.precision) << ',' << fmt(m.recall) << ',' << fmt(m.f1) << ',' << fmt(m.mean_time_to_maneuver_s)
        << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "predicted";
  for (Maneuver m : kAllManeuvers) out << ',' << to_string(m);
  out << '\n';
  for (Maneuver row : kAllManeuvers) {
    out << to_string(row);
    for (int c : cm[static_cast<std::size_t>(index_of(row))]) out << ',' << c;
    out << '\n';
  }
}

void write_threshold_curve_csv(std::ostream& out, const std::vector<double>& thresholds,
                               const std::vector<Metrics>& curve) {
  if (thresholds.size() != curve.size()) throw std::invalid_argument("curve size mismatch");
  out << "threshold,f1\n";
  for (std::size_t k = 0; k < curve.size(); ++k) out << fmt(thresholds[k]) << ',' << fmt(curve[k].f1) << '\n';
}

void write_ttm_curve_csv(std::ostream& out, const std::vector<double>& thresholds,
                         const std::vector<Metrics>& curve) {
  if (thresholds.size() != curve.size()) throw std::invalid_argument("curve size mismatch");
  out << "threshold,time_to_maneuver_s,f1\n";
  for (std::size_t k = 0; k < curve.size(); ++k) {
    out << fmt(thresholds[k]) << ',' << fmt(curve[k].mean_time_to_maneuver_s) << ',' << fmt(curve[k].f1) << '\n';
  }
}

}  // namespace aiohmm
