#ifndef AIOHMM_IO_HPP
#define AIOHMM_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "aiohmm/anticipation.hpp"
#include "aiohmm/core_model.hpp"
#include "aiohmm/features.hpp"
#include "aiohmm/learning.hpp"

namespace aiohmm {

/// Malformed JSON. `line()` is 1-based, 0 when not line-addressable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed JSON with missing, unknown or mis-sized fields.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

inline constexpr int kModelFormatVersion = 1;

// Raw traces: one frame object per line. The frame rate is not stored.
RawTrace read_trace(std::istream& in, double frame_rate = 25.0);
void write_trace(std::ostream& out, const RawTrace& trace);
RawTrace load_trace(const std::filesystem::path& path, double frame_rate = 25.0);
void save_trace(const std::filesystem::path& path, const RawTrace& trace);

// Annotations: a JSON array of {maneuver, t_start}.
std::vector<Annotation> read_annotations(std::istream& in);
void write_annotations(std::ostream& out, const std::vector<Annotation>& annotations);
std::vector<Annotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annotations);

// Feature datasets: one {label, chunk_duration_s, x, z} object per line.
Dataset read_dataset(std::istream& in);
void write_dataset(std::ostream& out, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);

// Model sets: a single JSON document.
ManeuverModelSet read_model_set(std::istream& in);
void write_model_set(std::ostream& out, const ManeuverModelSet& models);
ManeuverModelSet load_model_set(const std::filesystem::path& path);
void save_model_set(const std::filesystem::path& path, const ManeuverModelSet& models);

// Prediction events: one {t, posteriors, predicted} object per line.
std::vector<PredictionEvent> read_events(std::istream& in);
void write_events(std::ostream& out, const std::vector<PredictionEvent>& events);
std::vector<PredictionEvent> load_events(const std::filesystem::path& path);
void save_events(const std::filesystem::path& path, const std::vector<PredictionEvent>& events);

// CSV reports.
void write_metrics_csv(std::ostream& out, const ProtocolConfig& cfg, const Metrics& m);
void write_sweep_csv(std::ostream& out, const SweepResult& result);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
// (threshold, f1) and (time_to_maneuver_s, f1) for the same threshold grid.
void write_threshold_curve_csv(std::ostream& out, const std::vector<double>& thresholds,
                               const std::vector<Metrics>& curve);
void write_ttm_curve_csv(std::ostream& out, const std::vector<double>& thresholds,
                         const std::vector<Metrics>& curve);

// Writes to a file, throwing std::runtime_error naming the path on failure.
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace aiohmm

#endif  // AIOHMM_IO_HPP
