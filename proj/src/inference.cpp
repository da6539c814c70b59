#include "aiohmm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace aiohmm {

namespace {

constexpr double kMaxPaths = 1e6;

// Transition matrix A(i, j) at chunk t given input x_t.
Mat transition_matrix(const ModelParams& p, const Vec& x) {
  Mat a(p.n_states, p.n_states);
  for (int i = 0; i < p.n_states; ++i) a.row(i) = transition_row(p.states[i], x).transpose();
  return a;
}

struct ForwardPass {
  Mat alpha;                // K x S, rows sum to one
  Vec log_scale;            // K
  std::vector<Mat> trans;   // K - 1 transition matrices, trans[t - 1] for chunk t
};

ForwardPass run_forward(const PreparedModel& model, const FeatureSequence& seq, const Mat& emis,
                        bool keep_transitions) {
  const auto& p = model.params();
  const int k_len = seq.length();
  const int s = p.n_states;
  ForwardPass fw;
  fw.alpha.resize(k_len, s);
  fw.log_scale.resize(k_len);
  if (keep_transitions) fw.trans.reserve(static_cast<std::size_t>(std::max(0, k_len - 1)));

  Vec predicted = initial_row(p, seq.inputs[0]);
  for (int t = 0; t < k_len; ++t) {
    if (t > 0) {
      Mat a = transition_matrix(p, seq.inputs[t]);
      predicted = a.transpose() * fw.alpha.row(t - 1).transpose();
      if (keep_transitions) fw.trans.push_back(std::move(a));
    }
    Vec log_terms = predicted.array().log().matrix() + emis.row(t).transpose();
    const double log_c = log_sum_exp(log_terms);
    if (!std::isfinite(log_c)) {
      throw NumericalError("forward recursion underflow at chunk " + std::to_string(t + 1) +
                           " (all forward probabilities vanished)");
    }
    fw.log_scale[t] = log_c;
    fw.alpha.row(t) = (log_terms.array() - log_c).exp().matrix().transpose();
  }
  return fw;
}

}  // namespace

PreparedModel::PreparedModel(const ModelParams& params) : params_(params) {
  factors_.reserve(params.states.size());
  for (const auto& s : params.states) factors_.emplace_back(s.sigma);
}

Mat PreparedModel::emission_logliks(const FeatureSequence& seq) const {
  seq.check(params_.dim_x, params_.dim_z);
  const int k_len = seq.length();
  Mat e(k_len, params_.n_states);
  Vec z_prev = Vec::Zero(params_.dim_z);
  for (int t = 0; t < k_len; ++t) {
    for (int i = 0; i < params_.n_states; ++i) {
      const auto& sp = params_.states[static_cast<std::size_t>(i)];
      e(t, i) = factors_[static_cast<std::size_t>(i)].logpdf(
          seq.outputs[t], emission_mean(sp, seq.inputs[t], z_prev));
    }
    z_prev = seq.outputs[t];
  }
  return e;
}

PosteriorStats forward_backward(const ModelParams& params, const FeatureSequence& seq) {
  return forward_backward(PreparedModel(params), seq);
}

PosteriorStats forward_backward(const PreparedModel& model, const FeatureSequence& seq) {
  const Mat emis = model.emission_logliks(seq);
  const ForwardPass fw = run_forward(model, seq, emis, true);
  const int k_len = seq.length();
  const int s = model.params().n_states;

  // ratio(t, j) = exp(e_tj - log c_t); clamped against overflow for states the
  // forward pass already ruled out.
  Mat ratio(k_len, s);
  for (int t = 0; t < k_len; ++t) {
    for (int j = 0; j < s; ++j) ratio(t, j) = std::exp(std::min(emis(t, j) - fw.log_scale[t], 700.0));
  }

  Mat beta = Mat::Ones(k_len, s);
  for (int t = k_len - 1; t > 0; --t) {
    const Vec weighted = ratio.row(t).transpose().cwiseProduct(beta.row(t).transpose());
    beta.row(t - 1) = (fw.trans[static_cast<std::size_t>(t - 1)] * weighted).transpose();
  }

  PosteriorStats out;
  out.log_scale = fw.log_scale;
  out.loglik = fw.log_scale.sum();
  out.gamma = fw.alpha.cwiseProduct(beta);
  for (int t = 0; t < k_len; ++t) {
    const double z = out.gamma.row(t).sum();
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw NumericalError("posterior normalization failed at chunk " + std::to_string(t + 1));
    }
    out.gamma.row(t) /= z;
  }
  out.xi.reserve(static_cast<std::size_t>(std::max(0, k_len - 1)));
  for (int t = 1; t < k_len; ++t) {
    const Vec right = ratio.row(t).transpose().cwiseProduct(beta.row(t).transpose());
    Mat x = fw.alpha.row(t - 1).transpose().asDiagonal() * fw.trans[static_cast<std::size_t>(t - 1)] *
            right.asDiagonal();
    const double z = x.sum();
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw NumericalError("pairwise posterior normalization failed at chunk " + std::to_string(t + 1));
    }
    out.xi.push_back(x / z);
  }
  return out;
}

double sequence_loglik(const ModelParams& params, const FeatureSequence& seq) {
  return sequence_loglik(PreparedModel(params), seq);
}

double sequence_loglik(const PreparedModel& model, const FeatureSequence& seq) {
  const Mat emis = model.emission_logliks(seq);
  return run_forward(model, seq, emis, false).log_scale.sum();
}

std::vector<double> prefix_logliks(const PreparedModel& model, const FeatureSequence& seq) {
  const Mat emis = model.emission_logliks(seq);
  const ForwardPass fw = run_forward(model, seq, emis, false);
  std::vector<double> out(static_cast<std::size_t>(seq.length()));
  double acc = 0.0;
  for (int t = 0; t < seq.length(); ++t) {
    acc += fw.log_scale[t];
    out[static_cast<std::size_t>(t)] = acc;
  }
  return out;
}

double brute_force_loglik(const ModelParams& params, const FeatureSequence& seq) {
  seq.check(params.dim_x, params.dim_z);
  const int k_len = seq.length();
  const int s = params.n_states;
  if (std::pow(static_cast<double>(s), k_len) > kMaxPaths) {
    throw std::invalid_argument("brute_force_loglik: " + std::to_string(s) + "^" +
                                std::to_string(k_len) + " paths exceeds the 1e6 limit");
  }
  // Independent evaluation of every factor, no shared forward-pass code.
  Mat emis(k_len, s);
  for (int t = 0; t < k_len; ++t) {
    const Vec z_prev = t == 0 ? Vec::Zero(params.dim_z) : seq.outputs[t - 1];
    for (int i = 0; i < s; ++i) {
      emis(t, i) = emission_logpdf(params.states[i], seq.outputs[t], seq.inputs[t], z_prev);
    }
  }
  const Vec init = initial_row(params, seq.inputs[0]).array().log();
  std::vector<Mat> log_trans;
  for (int t = 1; t < k_len; ++t) {
    Mat a(s, s);
    for (int i = 0; i < s; ++i) a.row(i) = transition_row(params.states[i], seq.inputs[t]).transpose();
    log_trans.push_back(a.array().log().matrix());
  }

  const auto n_paths = static_cast<long>(std::llround(std::pow(static_cast<double>(s), k_len)));
  Vec path_logp(n_paths);
  std::vector<int> path(static_cast<std::size_t>(k_len), 0);
  for (long n = 0; n < n_paths; ++n) {
    long code = n;
    for (int t = 0; t < k_len; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(code % s);
      code /= s;
    }
    double lp = init[path[0]] + emis(0, path[0]);
    for (int t = 1; t < k_len; ++t) {
      lp += log_trans[static_cast<std::size_t>(t - 1)](path[t - 1], path[t]) + emis(t, path[t]);
    }
    path_logp[n] = lp;
  }
  return log_sum_exp(path_logp);
}

ClassPosterior posterior_from_logliks(const std::array<double, kNumManeuvers>& logliks,
                                      const std::array<double, kNumManeuvers>& prior) {
  Vec lp(kNumManeuvers);
  for (int m = 0; m < kNumManeuvers; ++m) {
    if (!(prior[m] >= 0.0)) throw std::invalid_argument("prior entries must be non-negative");
    lp[m] = prior[m] > 0.0 ? logliks[m] + std::log(prior[m]) : -std::numeric_limits<double>::infinity();
  }
  const double norm = log_sum_exp(lp);
  if (!std::isfinite(norm)) throw NumericalError("class posterior is undefined (all terms vanish)");
  ClassPosterior out{};
  for (int m = 0; m < kNumManeuvers; ++m) out[m] = std::exp(lp[m] - norm);
  return out;
}

ClassPosterior anticipate_posteriors(const ManeuverModelSet& models, const FeatureSequence& seq) {
  return ManeuverScorer(models).posteriors(seq);
}

ManeuverScorer::ManeuverScorer(const ManeuverModelSet& models) : prior_(models.prior) {
  prepared_.reserve(kNumManeuvers);
  for (int m = 0; m < kNumManeuvers; ++m) {
    const auto issues = validate(models.models[m]);
    if (!issues.empty()) {
      throw std::invalid_argument("model for " + std::string(to_string(static_cast<Maneuver>(m))) +
                                  " is invalid: " + issues.front());
    }
    prepared_.emplace_back(models.models[m]);
  }
}

ClassPosterior ManeuverScorer::posteriors(const FeatureSequence& seq) const {
  std::array<double, kNumManeuvers> ll{};
  for (int m = 0; m < kNumManeuvers; ++m) ll[m] = sequence_loglik(prepared_[m], seq);
  return posterior_from_logliks(ll, prior_);
}

std::vector<ClassPosterior> ManeuverScorer::prefix_posteriors(const FeatureSequence& seq) const {
  std::array<std::vector<double>, kNumManeuvers> ll;
  for (int m = 0; m < kNumManeuvers; ++m) ll[m] = prefix_logliks(prepared_[m], seq);
  std::vector<ClassPosterior> out;
  out.reserve(static_cast<std::size_t>(seq.length()));
  for (int t = 0; t < seq.length(); ++t) {
    std::array<double, kNumManeuvers> step{};
    for (int m = 0; m < kNumManeuvers; ++m) step[m] = ll[m][static_cast<std::size_t>(t)];
    out.push_back(posterior_from_logliks(step, prior_));
  }
  return out;
}

}  // namespace aiohmm
