#ifndef AIOHMM_INFERENCE_HPP
#define AIOHMM_INFERENCE_HPP

#include <array>
#include <vector>

#include "aiohmm/core_model.hpp"

namespace aiohmm {

/// Forward-backward output for one sequence.
///
/// gamma(t, j) = P(Y_t = j | Z, X); xi[t - 1](i, j) = P(Y_{t-1} = i, Y_t = j | Z, X)
/// for t = 2..K (indexed by destination chunk). loglik = sum_t log_scale[t].
struct PosteriorStats {
  Mat gamma;
  std::vector<Mat> xi;
  double loglik = 0.0;
  Vec log_scale;
};

/// Per-state Cholesky factors for a model, so repeated evaluations skip the
/// factorization. Construction throws NumericalError on a non-PD covariance.
class PreparedModel {
 public:
  explicit PreparedModel(const ModelParams& params);

  const ModelParams& params() const { return params_; }
  const GaussianFactor& factor(int state) const { return factors_[static_cast<std::size_t>(state)]; }

  // K x |S| matrix of log N(Z_t | c_it mu_i, Sigma_i).
  Mat emission_logliks(const FeatureSequence& seq) const;

 private:
  ModelParams params_;
  std::vector<GaussianFactor> factors_;
};

PosteriorStats forward_backward(const ModelParams& params, const FeatureSequence& seq);
PosteriorStats forward_backward(const PreparedModel& model, const FeatureSequence& seq);

/// log P(Z_1..K | X_1..K) by the scaled forward pass alone.
double sequence_loglik(const ModelParams& params, const FeatureSequence& seq);
double sequence_loglik(const PreparedModel& model, const FeatureSequence& seq);

/// Log-likelihoods of every prefix Z_1..k, k = 1..K, from a single forward pass.
std::vector<double> prefix_logliks(const PreparedModel& model, const FeatureSequence& seq);

/// Explicit log-sum-exp over all |S|^K latent paths. Refuses instances with
/// more than one million paths.
double brute_force_loglik(const ModelParams& params, const FeatureSequence& seq);

using ClassPosterior = std::array<double, kNumManeuvers>;

/// Normalizes per-class log-likelihoods against the prior (log-sum-exp).
ClassPosterior posterior_from_logliks(const std::array<double, kNumManeuvers>& logliks,
                                      const std::array<double, kNumManeuvers>& prior);

/// P(M | Z, X) over the five classes using P(Z | X, M) P(M).
ClassPosterior anticipate_posteriors(const ManeuverModelSet& models, const FeatureSequence& seq);

/// Prepared form of a model set for streaming use.
class ManeuverScorer {
 public:
  // Throws std::invalid_argument if any class model fails validation.
  explicit ManeuverScorer(const ManeuverModelSet& models);

  ClassPosterior posteriors(const FeatureSequence& seq) const;
  // Posterior after each prefix of the sequence (one entry per chunk).
  std::vector<ClassPosterior> prefix_posteriors(const FeatureSequence& seq) const;

 private:
  std::array<double, kNumManeuvers> prior_;
  std::vector<PreparedModel> prepared_;
};

}  // namespace aiohmm

#endif  // AIOHMM_INFERENCE_HPP
