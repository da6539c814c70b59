#ifndef AIOHMM_CORE_MODEL_HPP
#define AIOHMM_CORE_MODEL_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace aiohmm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr int kDimX = 6;
inline constexpr int kDimZ = 9;
inline constexpr double kDefaultChunkSeconds = 0.8;

// Raised when a density or recursion cannot be evaluated in floating point
// (non-PD covariance, underflowed forward row, singular normal equations).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an algorithm detects a broken internal contract, e.g. an EM
// step that lowers the likelihood.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Maneuver : int {
  left_lane_change = 0,
  right_lane_change = 1,
  left_turn = 2,
  right_turn = 3,
  driving_straight = 4,
};

inline constexpr int kNumManeuvers = 5;
inline constexpr std::array<Maneuver, kNumManeuvers> kAllManeuvers = {
    Maneuver::left_lane_change, Maneuver::right_lane_change, Maneuver::left_turn,
    Maneuver::right_turn, Maneuver::driving_straight};

std::string_view to_string(Maneuver m);
// Throws std::invalid_argument for unknown names.
Maneuver maneuver_from_string(std::string_view name);
inline int index_of(Maneuver m) { return static_cast<int>(m); }
inline bool is_maneuver(Maneuver m) { return m != Maneuver::driving_straight; }

/// Outside-vehicle context of one chunk: lane availability, road-artifact
/// proximity and trailing speed statistics (km/h).
struct OutsideFeature {
  int lane_left = 0;
  int lane_right = 0;
  int road_artifact = 0;
  double speed_avg = 0.0;
  double speed_max = 0.0;
  double speed_min = 0.0;

  Vec vector() const;
  static OutsideFeature from_vector(const Vec& x);
  bool valid() const;
};

/// Labeled pair of input (outside) and output (inside) sequences of equal
/// length K. Entries of `inputs` have dim_x coordinates, `outputs` dim_z.
struct FeatureSequence {
  Maneuver label = Maneuver::driving_straight;
  std::vector<Vec> inputs;
  std::vector<Vec> outputs;
  double chunk_duration_s = kDefaultChunkSeconds;

  int length() const { return static_cast<int>(outputs.size()); }
  // Throws std::invalid_argument on empty or ragged sequences.
  void check(int dim_x, int dim_z) const;
};

/// Parameters owned by one latent state i. Transition weights are stored as
/// one row per destination state over the augmented input [1; x].
struct StateParams {
  Vec mu;     // dim_z
  Vec a;      // dim_x
  Vec b;      // dim_z
  Mat sigma;  // dim_z x dim_z, symmetric positive definite
  Mat w;      // n_states x (dim_x + 1)
};

struct ModelParams {
  int n_states = 1;
  int dim_x = kDimX;
  int dim_z = kDimZ;
  std::vector<StateParams> states;
  Mat w0;  // n_states x (dim_x + 1), virtual start-state row

  // Zero weights and gains, zero means and identity covariances.
  static ModelParams zeros(int n_states, int dim_x = kDimX, int dim_z = kDimZ);
};

struct ManeuverModelSet {
  std::array<ModelParams, kNumManeuvers> models;
  std::array<double, kNumManeuvers> prior{0.2, 0.2, 0.2, 0.2, 0.2};

  const ModelParams& operator[](Maneuver m) const { return models[index_of(m)]; }
  ModelParams& operator[](Maneuver m) { return models[index_of(m)]; }
};

// [1; x]
Vec augment(const Vec& x);

// Numerically stable softmax; entries sum to one.
Vec softmax(const Vec& scores);
double log_sum_exp(const Eigen::Ref<const Vec>& v);

/// P(Y_t = . | Y_{t-1} = i, X_t = x) for source-state parameters `sp`.
Vec transition_row(const StateParams& sp, const Vec& x);
/// P(Y_1 = . | X_1 = x1) from the log-linear virtual start row.
Vec initial_row(const ModelParams& params, const Vec& x1);

// Scalar gain c = 1 + a.x + b.z_prev on the state mean.
double mean_gain(const StateParams& sp, const Vec& x, const Vec& z_prev);
Vec emission_mean(const StateParams& sp, const Vec& x, const Vec& z_prev);

/// Cholesky factor of a covariance plus its log determinant, reused across
/// many density evaluations.
class GaussianFactor {
 public:
  // Throws NumericalError if sigma is not positive definite.
  explicit GaussianFactor(const Mat& sigma);

  double logpdf(const Vec& z, const Vec& mean) const;
  // Squared Mahalanobis distance of `d` under the covariance.
  double mahalanobis2(const Vec& d) const;
  Vec solve(const Vec& v) const { return llt_.solve(v); }
  double log_det() const { return log_det_; }

 private:
  Eigen::LLT<Mat> llt_;
  double log_det_ = 0.0;
  int dim_ = 0;
};

double emission_logpdf(const StateParams& sp, const Vec& z, const Vec& x, const Vec& z_prev);

struct SampledPath {
  std::vector<int> states;
  std::vector<Vec> outputs;
};

/// Draws a latent path and outputs given the inputs; Z_0 is the zero vector.
SampledPath sample_sequence(const ModelParams& params, const std::vector<Vec>& inputs,
                            std::uint64_t seed);

/// Human-readable list of contract violations; empty when valid.
std::vector<std::string> validate(const ModelParams& params);

}  // namespace aiohmm

#endif  // AIOHMM_CORE_MODEL_HPP
