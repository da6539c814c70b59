#include "aiohmm/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace aiohmm {

namespace {

constexpr std::array<std::string_view, kNumManeuvers> kNames = {
    "left_lane_change", "right_lane_change", "left_turn", "right_turn", "driving_straight"};

void require_dim(const Vec& v, int dim, const char* what) {
  if (v.size() != dim) {
    std::ostringstream os;
    os << what << ": expected dimension " << dim << ", got " << v.size();
    throw std::invalid_argument(os.str());
  }
}

bool all_finite(const Mat& m) { return m.allFinite(); }

int draw_categorical(const Vec& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (int j = 0; j < p.size(); ++j) {
    acc += p[j];
    if (u < acc) return j;
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace

std::string_view to_string(Maneuver m) { return kNames.at(static_cast<std::size_t>(m)); }

Maneuver maneuver_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Maneuver>(i);
  }
  throw std::invalid_argument("unknown maneuver class '" + std::string(name) + "'");
}

Vec OutsideFeature::vector() const {
  Vec x(kDimX);
  x << lane_left, lane_right, road_artifact, speed_avg, speed_max, speed_min;
  return x;
}

OutsideFeature OutsideFeature::from_vector(const Vec& x) {
  require_dim(x, kDimX, "OutsideFeature");
  OutsideFeature f;
  f.lane_left = static_cast<int>(x[0]);
  f.lane_right = static_cast<int>(x[1]);
  f.road_artifact = static_cast<int>(x[2]);
  f.speed_avg = x[3];
  f.speed_max = x[4];
  f.speed_min = x[5];
  return f;
}

bool OutsideFeature::valid() const {
  auto bit = [](int v) { return v == 0 || v == 1; };
  return bit(lane_left) && bit(lane_right) && bit(road_artifact) && speed_min >= 0.0 &&
         speed_min <= speed_avg && speed_avg <= speed_max;
}

void FeatureSequence::check(int dim_x, int dim_z) const {
  if (outputs.empty()) throw std::invalid_argument("feature sequence is empty");
  if (inputs.size() != outputs.size()) {
    throw std::invalid_argument("feature sequence has " + std::to_string(inputs.size()) +
                                " inputs but " + std::to_string(outputs.size()) + " outputs");
  }
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    require_dim(inputs[t], dim_x, "sequence input");
    require_dim(outputs[t], dim_z, "sequence output");
  }
}

ModelParams ModelParams::zeros(int n_states, int dim_x, int dim_z) {
  if (n_states < 1) throw std::invalid_argument("n_states must be >= 1");
  ModelParams p;
  p.n_states = n_states;
  p.dim_x = dim_x;
  p.dim_z = dim_z;
  p.states.resize(static_cast<std::size_t>(n_states));
  for (auto& s : p.states) {
    s.mu = Vec::Zero(dim_z);
    s.a = Vec::Zero(dim_x);
    s.b = Vec::Zero(dim_z);
    s.sigma = Mat::Identity(dim_z, dim_z);
    s.w = Mat::Zero(n_states, dim_x + 1);
  }
  p.w0 = Mat::Zero(n_states, dim_x + 1);
  return p;
}

Vec augment(const Vec& x) {
  Vec out(x.size() + 1);
  out[0] = 1.0;
  out.tail(x.size()) = x;
  return out;
}

double log_sum_exp(const Eigen::Ref<const Vec>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vec softmax(const Vec& scores) {
  const double m = scores.maxCoeff();
  Vec e = (scores.array() - m).exp();
  return e / e.sum();
}

Vec transition_row(const StateParams& sp, const Vec& x) {
  if (sp.w.cols() != x.size() + 1) {
    throw std::invalid_argument("transition_row: input has dimension " +
                                std::to_string(x.size()) + ", weights expect " +
                                std::to_string(sp.w.cols() - 1));
  }
  if (sp.w.rows() < 1) throw std::invalid_argument("transition_row: no destination weights");
  return softmax(sp.w * augment(x));
}

Vec initial_row(const ModelParams& params, const Vec& x1) {
  if (params.w0.cols() != x1.size() + 1 || params.w0.rows() != params.n_states) {
    throw std::invalid_argument("initial_row: dimension mismatch");
  }
  return softmax(params.w0 * augment(x1));
}

double mean_gain(const StateParams& sp, const Vec& x, const Vec& z_prev) {
  require_dim(x, static_cast<int>(sp.a.size()), "emission input");
  require_dim(z_prev, static_cast<int>(sp.b.size()), "previous output");
  return 1.0 + sp.a.dot(x) + sp.b.dot(z_prev);
}

Vec emission_mean(const StateParams& sp, const Vec& x, const Vec& z_prev) {
  return mean_gain(sp, x, z_prev) * sp.mu;
}

GaussianFactor::GaussianFactor(const Mat& sigma) : llt_(sigma), dim_(static_cast<int>(sigma.rows())) {
  if (sigma.rows() != sigma.cols() || llt_.info() != Eigen::Success || !sigma.allFinite()) {
    throw NumericalError("covariance is not positive definite");
  }
  const Vec diag = llt_.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) throw NumericalError("covariance is not positive definite");
  log_det_ = 2.0 * diag.array().log().sum();
}

double GaussianFactor::mahalanobis2(const Vec& d) const {
  const Vec y = llt_.matrixL().solve(d);
  return y.squaredNorm();
}

double GaussianFactor::logpdf(const Vec& z, const Vec& mean) const {
  require_dim(z, dim_, "emission");
  const double q = mahalanobis2(z - mean);
  return -0.5 * (dim_ * std::log(2.0 * std::numbers::pi) + log_det_ + q);
}

double emission_logpdf(const StateParams& sp, const Vec& z, const Vec& x, const Vec& z_prev) {
  const GaussianFactor g(sp.sigma);
  return g.logpdf(z, emission_mean(sp, x, z_prev));
}

SampledPath sample_sequence(const ModelParams& params, const std::vector<Vec>& inputs,
                            std::uint64_t seed) {
  if (inputs.empty()) throw std::invalid_argument("sample_sequence: need at least one input");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Mat> chol;
  chol.reserve(params.states.size());
  for (const auto& s : params.states) {
    Eigen::LLT<Mat> llt(s.sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("sample_sequence: sigma not PD");
    chol.push_back(llt.matrixL());
  }

  SampledPath out;
  Vec z_prev = Vec::Zero(params.dim_z);
  int state = -1;
  for (const auto& x : inputs) {
    const Vec p = state < 0 ? initial_row(params, x) : transition_row(params.states[state], x);
    state = draw_categorical(p, rng);
    const auto& sp = params.states[static_cast<std::size_t>(state)];
    Vec noise(params.dim_z);
    for (int k = 0; k < params.dim_z; ++k) noise[k] = normal(rng);
    Vec z = emission_mean(sp, x, z_prev) + chol[static_cast<std::size_t>(state)] * noise;
    out.states.push_back(state);
    out.outputs.push_back(z);
    z_prev = std::move(z);
  }
  return out;
}

std::vector<std::string> validate(const ModelParams& params) {
  std::vector<std::string> issues;
  auto report = [&](int i, const std::string& msg) {
    issues.push_back(i < 0 ? msg : "state " + std::to_string(i) + ": " + msg);
  };
  if (params.n_states < 1) report(-1, "n_states must be >= 1");
  if (static_cast<int>(params.states.size()) != params.n_states) {
    report(-1, "expected " + std::to_string(params.n_states) + " states, found " +
                   std::to_string(params.states.size()));
  }
  if (params.w0.rows() != params.n_states || params.w0.cols() != params.dim_x + 1) {
    report(-1, "w0 has wrong shape");
  } else if (!all_finite(params.w0)) {
    report(-1, "w0 has non-finite entries");
  }
  for (std::size_t idx = 0; idx < params.states.size(); ++idx) {
    const int i = static_cast<int>(idx);
    const auto& s = params.states[idx];
    if (s.mu.size() != params.dim_z) report(i, "mu has wrong dimension");
    else if (!all_finite(s.mu)) report(i, "mu has non-finite entries");
    if (s.a.size() != params.dim_x) report(i, "a has wrong dimension");
    else if (!all_finite(s.a)) report(i, "a has non-finite entries");
    if (s.b.size() != params.dim_z) report(i, "b has wrong dimension");
    else if (!all_finite(s.b)) report(i, "b has non-finite entries");
    if (s.w.rows() != params.n_states || s.w.cols() != params.dim_x + 1) {
      report(i, "transition weights have wrong shape");
    } else if (!all_finite(s.w)) {
      report(i, "transition weights have non-finite entries");
    }
    if (s.sigma.rows() != params.dim_z || s.sigma.cols() != params.dim_z) {
      report(i, "sigma has wrong shape");
    } else if (!all_finite(s.sigma)) {
      report(i, "sigma has non-finite entries");
    } else if ((s.sigma - s.sigma.transpose()).cwiseAbs().maxCoeff() >
               1e-12 * std::max(1.0, s.sigma.cwiseAbs().maxCoeff())) {
      report(i, "sigma is not symmetric");
    } else {
      Eigen::SelfAdjointEigenSolver<Mat> eig(s.sigma, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() <= 0.0) report(i, "sigma is not positive definite");
    }
  }
  return issues;
}

}  // namespace aiohmm
