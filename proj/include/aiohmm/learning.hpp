#ifndef AIOHMM_LEARNING_HPP
#define AIOHMM_LEARNING_HPP

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aiohmm/core_model.hpp"
#include "aiohmm/inference.hpp"

namespace aiohmm {

using Dataset = std::vector<FeatureSequence>;

/// Model family trained by EM.
///   aio_hmm    - input-driven transitions, mean gain 1 + a.x + b.z_prev
///   io_hmm     - as above with b pinned to zero
///   hmm_output - bias-only transitions and a = b = 0 (outputs only)
enum class Ablation { aio_hmm, io_hmm, hmm_output };

std::string_view to_string(Ablation a);
Ablation ablation_from_string(std::string_view name);

struct EmConfig {
  int n_states = 3;
  int max_iters = 100;
  double loglik_rel_tol = 1e-6;
  // Covariance ridge relative to trace(Sigma) / dim.
  double sigma_ridge = 1e-6;
  double w_step_size = 0.1;
  int w_grad_iters = 25;
  double w_l2 = 1e-3;
  bool diagonal_sigma = false;
  Ablation ablation = Ablation::aio_hmm;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on non-positive tolerances or counts.
  void check() const;
};

struct FitReport {
  ModelParams params;
  std::vector<double> loglik_trace;  // one entry per E-step, for the params of that step
  int iterations_run = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

struct EStepResult {
  std::vector<PosteriorStats> stats;
  double total_loglik = 0.0;
};

/// k-means partition of all outputs into n_states clusters; a = b = 0,
/// all transition weights zero.
ModelParams init_params(const Dataset& data, const EmConfig& cfg);

EStepResult e_step(const ModelParams& params, const Dataset& data);

/// Expected complete-data log-likelihood of `params` under posteriors `stats`
/// (computed for some reference parameters).
double q_value(const ModelParams& params, const std::vector<PosteriorStats>& stats,
               const Dataset& data);
// Emission part of Q contributed by one state.
double q_emission(const ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                  const Dataset& data);

/// Weighted multinomial-logit problem behind one softmax row set: either the
/// transitions out of a source state or the virtual start row.
///
/// objective(W) = loglik(W) / mass - l2 / 2 * ||W||_F^2
struct SoftmaxProblem {
  std::vector<Vec> inputs;   // augmented inputs [1; x]
  std::vector<Vec> targets;  // expected destination counts per input
  double mass = 0.0;

  double loglik(const Mat& w) const;
  double objective(const Mat& w, double l2) const;
  Mat gradient(const Mat& w, double l2) const;
};

// source < 0 selects the virtual start row (targets are gamma at t = 1).
SoftmaxProblem transition_problem(const std::vector<PosteriorStats>& stats, const Dataset& data,
                                  int source);

/// Closed-form block maximizers of Q. Each updates one block of one state in
/// place and returns false when the state was left unchanged.
namespace mstep {
bool update_mean(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                 const Dataset& data, std::vector<std::string>* warnings = nullptr);
bool update_covariance(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                       const Dataset& data, const EmConfig& cfg,
                       std::vector<std::string>* warnings = nullptr);
bool update_input_gain(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                       const Dataset& data, std::vector<std::string>* warnings = nullptr);
bool update_autoregressive_gain(ModelParams& params, int state,
                                const std::vector<PosteriorStats>& stats, const Dataset& data,
                                std::vector<std::string>* warnings = nullptr);
// Regularized gradient ascent with backtracking on one softmax row set.
Mat ascend_softmax(const SoftmaxProblem& problem, Mat w, const EmConfig& cfg);
}  // namespace mstep

/// One generalized-EM sweep: mu -> Sigma -> a -> b per state, then the
/// transition and start weights.
ModelParams m_step(const ModelParams& params, const std::vector<PosteriorStats>& stats,
                   const Dataset& data, const EmConfig& cfg,
                   std::vector<std::string>* warnings = nullptr);

FitReport fit_em(const Dataset& data, const EmConfig& cfg);

/// Independent fit per class with a uniform prior. Every class needs at least
/// one sequence.
ManeuverModelSet fit_all(const std::array<Dataset, kNumManeuvers>& per_class, const EmConfig& cfg);

// Splits a labeled dataset by class.
std::array<Dataset, kNumManeuvers> split_by_class(const Dataset& data);

}  // namespace aiohmm

#endif  // AIOHMM_LEARNING_HPP
