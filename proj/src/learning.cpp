#include "aiohmm/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

#include "parallel.hpp"

namespace aiohmm {

namespace {

constexpr double kFrozenMass = 1e-12;
constexpr double kNormalRidge = 1e-8;
constexpr double kSingularRcond = 1e-12;
constexpr int kMaxHalvings = 10;
constexpr int kMaxKmeansIters = 100;

void warn(std::vector<std::string>* warnings, std::string msg) {
  if (!warnings) return;
  if (std::find(warnings->begin(), warnings->end(), msg) == warnings->end()) {
    warnings->push_back(std::move(msg));
  }
}

std::string state_tag(int i) { return "state " + std::to_string(i); }

const Vec& zero_like(const Vec& v) {
  static thread_local Vec zero;
  if (zero.size() != v.size()) zero = Vec::Zero(v.size());
  return zero;
}

// Visits every chunk with (gamma_it, x_t, z_t, z_{t-1}).
template <typename Fn>
void for_each_chunk(const std::vector<PosteriorStats>& stats, const Dataset& data, int state, Fn&& fn) {
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& seq = data[n];
    const auto& gamma = stats[n].gamma;
    for (int t = 0; t < seq.length(); ++t) {
      const double g = gamma(t, state);
      if (g <= 0.0) continue;
      const Vec& z_prev = t == 0 ? zero_like(seq.outputs[0]) : seq.outputs[t - 1];
      fn(g, seq.inputs[t], seq.outputs[t], z_prev);
    }
  }
}

double state_mass(const std::vector<PosteriorStats>& stats, int state) {
  double m = 0.0;
  for (const auto& s : stats) m += s.gamma.col(state).sum();
  return m;
}

// Solves the normal equations a x = r; a singular matrix gets a small ridge.
Vec solve_normal(const Mat& a, const Vec& r, const std::string& what,
                 std::vector<std::string>* warnings) {
  Eigen::LDLT<Mat> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > kSingularRcond) {
    return ldlt.solve(r);
  }
  warn(warnings, what + ": singular normal equations, ridge " + "1e-8 applied");
  const Mat ridged = a + kNormalRidge * Mat::Identity(a.rows(), a.cols());
  Eigen::LLT<Mat> llt(ridged);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(what + ": normal equations singular even after ridge");
  }
  return llt.solve(r);
}

Mat input_mask(int n_states, int dim_x, Ablation ablation) {
  Mat m = Mat::Ones(n_states, dim_x + 1);
  if (ablation == Ablation::hmm_output) m.rightCols(dim_x).setZero();
  return m;
}

}  // namespace

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::aio_hmm: return "aio_hmm";
    case Ablation::io_hmm: return "io_hmm";
    case Ablation::hmm_output: return "hmm_output";
  }
  return "aio_hmm";
}

Ablation ablation_from_string(std::string_view name) {
  if (name == "aio_hmm") return Ablation::aio_hmm;
  if (name == "io_hmm") return Ablation::io_hmm;
  if (name == "hmm_output") return Ablation::hmm_output;
  throw std::invalid_argument("unknown ablation '" + std::string(name) + "'");
}

void EmConfig::check() const {
  if (n_states < 1) throw std::invalid_argument("EmConfig: n_states must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("EmConfig: max_iters must be >= 1");
  if (!(loglik_rel_tol > 0.0)) throw std::invalid_argument("EmConfig: loglik_rel_tol must be > 0");
  if (!(sigma_ridge > 0.0)) throw std::invalid_argument("EmConfig: sigma_ridge must be > 0");
  if (!(w_step_size > 0.0)) throw std::invalid_argument("EmConfig: w_step_size must be > 0");
  if (w_grad_iters < 1) throw std::invalid_argument("EmConfig: w_grad_iters must be >= 1");
  if (!(w_l2 > 0.0)) throw std::invalid_argument("EmConfig: w_l2 must be > 0");
}

// --- initialization -------------------------------------------------------

ModelParams init_params(const Dataset& data, const EmConfig& cfg) {
  cfg.check();
  if (data.empty()) throw std::invalid_argument("init_params: dataset is empty");
  const int dim_x = static_cast<int>(data.front().inputs.at(0).size());
  const int dim_z = static_cast<int>(data.front().outputs.at(0).size());
  std::vector<const Vec*> points;
  for (const auto& seq : data) {
    seq.check(dim_x, dim_z);
    for (const auto& z : seq.outputs) points.push_back(&z);
  }
  const int k = cfg.n_states;

  std::vector<const Vec*> distinct;
  for (const Vec* p : points) {
    if (static_cast<int>(distinct.size()) >= k) break;
    const bool seen = std::any_of(distinct.begin(), distinct.end(), [&](const Vec* d) { return *d == *p; });
    if (!seen) distinct.push_back(p);
  }
  if (static_cast<int>(distinct.size()) < k) {
    throw std::invalid_argument("init_params: only " + std::to_string(distinct.size()) +
                                " distinct outputs for " + std::to_string(k) + " states");
  }

  const std::size_t n_pts = points.size();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Vec> centers;
  centers.push_back(*points[std::uniform_int_distribution<std::size_t>(0, n_pts - 1)(rng)]);
  std::vector<double> d2(n_pts, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t p = 0; p < n_pts; ++p) {
      d2[p] = std::min(d2[p], (*points[p] - centers.back()).squaredNorm());
      total += d2[p];
    }
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t pick = n_pts - 1;
    for (std::size_t p = 0; p < n_pts; ++p) {
      acc += d2[p];
      if (acc > u && d2[p] > 0.0) {
        pick = p;
        break;
      }
    }
    if (d2[pick] == 0.0) {
      // Degenerate draw; take the farthest point instead.
      pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
    }
    centers.push_back(*points[pick]);
  }

  std::vector<int> assign(n_pts, -1);
  for (int iter = 0; iter < kMaxKmeansIters; ++iter) {
    bool changed = false;
    for (std::size_t p = 0; p < n_pts; ++p) {
      int best = 0;
      double best_d = (*points[p] - centers[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (*points[p] - centers[static_cast<std::size_t>(c)]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[p] != best) {
        assign[p] = best;
        changed = true;
      }
    }
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : assign) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Refill an empty cluster with the point farthest from its center.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t p = 0; p < n_pts; ++p) {
        if (counts[static_cast<std::size_t>(assign[p])] <= 1) continue;
        const double d = (*points[p] - centers[static_cast<std::size_t>(assign[p])]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = p;
        }
      }
      --counts[static_cast<std::size_t>(assign[far])];
      assign[far] = c;
      ++counts[static_cast<std::size_t>(c)];
      changed = true;
    }
    for (int c = 0; c < k; ++c) centers[static_cast<std::size_t>(c)].setZero(dim_z);
    for (std::size_t p = 0; p < n_pts; ++p) centers[static_cast<std::size_t>(assign[p])] += *points[p];
    for (int c = 0; c < k; ++c) centers[static_cast<std::size_t>(c)] /= counts[static_cast<std::size_t>(c)];
    if (!changed) break;
  }

  Vec global_mean = Vec::Zero(dim_z);
  for (const Vec* p : points) global_mean += *p;
  global_mean /= static_cast<double>(n_pts);
  Mat global_cov = Mat::Zero(dim_z, dim_z);
  for (const Vec* p : points) global_cov += (*p - global_mean) * (*p - global_mean).transpose();
  global_cov /= static_cast<double>(n_pts);
  const double global_scale = global_cov.trace() / dim_z;

  ModelParams params = ModelParams::zeros(k, dim_x, dim_z);
  for (int c = 0; c < k; ++c) {
    auto& s = params.states[static_cast<std::size_t>(c)];
    s.mu = centers[static_cast<std::size_t>(c)];
    Mat cov = Mat::Zero(dim_z, dim_z);
    int count = 0;
    for (std::size_t p = 0; p < n_pts; ++p) {
      if (assign[p] != c) continue;
      cov += (*points[p] - s.mu) * (*points[p] - s.mu).transpose();
      ++count;
    }
    cov /= count;
    double scale = cov.trace() / dim_z;
    if (!(scale > 0.0)) scale = global_scale > 0.0 ? global_scale : 1.0;
    if (cfg.diagonal_sigma) cov = Mat(cov.diagonal().asDiagonal());
    s.sigma = cov + cfg.sigma_ridge * scale * Mat::Identity(dim_z, dim_z);
  }
  return params;
}

// --- E-step and Q ---------------------------------------------------------

EStepResult e_step(const ModelParams& params, const Dataset& data) {
  const PreparedModel model(params);
  EStepResult out;
  out.stats.resize(data.size());
  detail::parallel_for(data.size(), [&](std::size_t n) {
    try {
      out.stats[n] = forward_backward(model, data[n]);
    } catch (const NumericalError& e) {
      throw NumericalError("sequence " + std::to_string(n) + ": " + e.what());
    }
  });
  for (const auto& s : out.stats) out.total_loglik += s.loglik;
  return out;
}

double q_emission(const ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                  const Dataset& data) {
  const auto& sp = params.states.at(static_cast<std::size_t>(state));
  const GaussianFactor g(sp.sigma);
  double q = 0.0;
  for_each_chunk(stats, data, state, [&](double w, const Vec& x, const Vec& z, const Vec& z_prev) {
    q += w * g.logpdf(z, emission_mean(sp, x, z_prev));
  });
  return q;
}

double q_value(const ModelParams& params, const std::vector<PosteriorStats>& stats,
               const Dataset& data) {
  double q = 0.0;
  for (int i = 0; i < params.n_states; ++i) {
    q += q_emission(params, i, stats, data);
    q += transition_problem(stats, data, i).loglik(params.states[static_cast<std::size_t>(i)].w);
  }
  q += transition_problem(stats, data, -1).loglik(params.w0);
  return q;
}

// --- softmax rows ----------------------------------------------------------

SoftmaxProblem transition_problem(const std::vector<PosteriorStats>& stats, const Dataset& data,
                                  int source) {
  SoftmaxProblem p;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto& seq = data[n];
    if (source < 0) {
      p.inputs.push_back(augment(seq.inputs[0]));
      p.targets.push_back(stats[n].gamma.row(0).transpose());
    } else {
      for (int t = 1; t < seq.length(); ++t) {
        p.inputs.push_back(augment(seq.inputs[t]));
        p.targets.push_back(stats[n].xi[static_cast<std::size_t>(t - 1)].row(source).transpose());
      }
    }
  }
  for (const auto& q : p.targets) p.mass += q.sum();
  return p;
}

double SoftmaxProblem::loglik(const Mat& w) const {
  double ll = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Vec scores = w * inputs[t];
    const double lse = log_sum_exp(scores);
    for (int j = 0; j < scores.size(); ++j) {
      if (targets[t][j] > 0.0) ll += targets[t][j] * (scores[j] - lse);
    }
  }
  return ll;
}

double SoftmaxProblem::objective(const Mat& w, double l2) const {
  const double data_term = mass > 0.0 ? loglik(w) / mass : 0.0;
  return data_term - 0.5 * l2 * w.squaredNorm();
}

Mat SoftmaxProblem::gradient(const Mat& w, double l2) const {
  Mat g = Mat::Zero(w.rows(), w.cols());
  if (mass > 0.0) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const Vec p = softmax(w * inputs[t]);
      const Vec resid = targets[t] - targets[t].sum() * p;
      g.noalias() += resid * inputs[t].transpose();
    }
    g /= mass;
  }
  return g - l2 * w;
}

namespace mstep {

bool update_mean(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                 const Dataset& data, std::vector<std::string>* warnings) {
  if (state_mass(stats, state) < kFrozenMass) {
    warn(warnings, state_tag(state) + ": responsibilities below 1e-12, state frozen");
    return false;
  }
  auto& sp = params.states[static_cast<std::size_t>(state)];
  Vec num = Vec::Zero(params.dim_z);
  double den = 0.0;
  for_each_chunk(stats, data, state, [&](double g, const Vec& x, const Vec& z, const Vec& z_prev) {
    const double c = mean_gain(sp, x, z_prev);
    num += (c * g) * z;
    den += c * c * g;
  });
  if (!(den > 0.0) || !std::isfinite(den)) {
    warn(warnings, state_tag(state) + ": mean gain vanished, mean not updated");
    return false;
  }
  sp.mu = num / den;
  return true;
}

bool update_covariance(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                       const Dataset& data, const EmConfig& cfg, std::vector<std::string>* warnings) {
  const double mass = state_mass(stats, state);
  if (mass < kFrozenMass) return false;
  auto& sp = params.states[static_cast<std::size_t>(state)];
  const int d = params.dim_z;
  Mat s = Mat::Zero(d, d);
  for_each_chunk(stats, data, state, [&](double g, const Vec& x, const Vec& z, const Vec& z_prev) {
    const Vec r = z - mean_gain(sp, x, z_prev) * sp.mu;
    s.noalias() += g * r * r.transpose();
  });
  s /= mass;
  s = (0.5 * (s + s.transpose())).eval();
  if (cfg.diagonal_sigma) s = Mat(s.diagonal().asDiagonal());
  double scale = s.trace() / d;
  if (!(scale > 0.0)) scale = 1.0;
  s += cfg.sigma_ridge * scale * Mat::Identity(d, d);

  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success) {
    warn(warnings, state_tag(state) + ": covariance update not positive definite, kept previous");
    return false;
  }
  // The ridge makes this a near-maximizer; keep the previous value if it
  // scores higher so the sweep never lowers Q.
  const double q_old = q_emission(params, state, stats, data);
  Mat previous = sp.sigma;
  sp.sigma = s;
  if (q_emission(params, state, stats, data) < q_old) {
    sp.sigma = std::move(previous);
    return false;
  }
  return true;
}

namespace {

// Shared solver for the a and b blocks. `regress` selects the regressor
// (x_t or z_{t-1}); `other` returns the fixed part contributed by the other
// gain.
template <typename Regress, typename Other>
bool update_gain(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                 const Dataset& data, Vec StateParams::*field, const char* name, Regress regress,
                 Other other, std::vector<std::string>* warnings) {
  if (state_mass(stats, state) < kFrozenMass) return false;
  auto& sp = params.states[static_cast<std::size_t>(state)];
  const GaussianFactor g(sp.sigma);
  const Vec sinv_mu = g.solve(sp.mu);
  const double s = sp.mu.dot(sinv_mu);
  if (!(s > 1e-300)) {
    warn(warnings, state_tag(state) + ": mean is zero, " + name + " not updated");
    return false;
  }
  const int dim = static_cast<int>((sp.*field).size());
  Mat a = Mat::Zero(dim, dim);
  Vec r = Vec::Zero(dim);
  for_each_chunk(stats, data, state, [&](double w, const Vec& x, const Vec& z, const Vec& z_prev) {
    const Vec& u = regress(x, z_prev);
    a.noalias() += w * u * u.transpose();
    r += (w * (z.dot(sinv_mu) / s - 1.0 - other(sp, x, z_prev))) * u;
  });
  const Vec solution = solve_normal(a, r, state_tag(state) + " " + name, warnings);
  if (!solution.allFinite()) throw NumericalError(state_tag(state) + ": non-finite " + name + " update");

  const double q_old = q_emission(params, state, stats, data);
  Vec previous = sp.*field;
  sp.*field = solution;
  if (q_emission(params, state, stats, data) < q_old) {
    sp.*field = std::move(previous);
    return false;
  }
  return true;
}

}  // namespace

bool update_input_gain(ModelParams& params, int state, const std::vector<PosteriorStats>& stats,
                       const Dataset& data, std::vector<std::string>* warnings) {
  return update_gain(
      params, state, stats, data, &StateParams::a, "a",
      [](const Vec& x, const Vec&) -> const Vec& { return x; },
      [](const StateParams& sp, const Vec&, const Vec& z_prev) { return sp.b.dot(z_prev); }, warnings);
}

bool update_autoregressive_gain(ModelParams& params, int state,
                                const std::vector<PosteriorStats>& stats, const Dataset& data,
                                std::vector<std::string>* warnings) {
  return update_gain(
      params, state, stats, data, &StateParams::b, "b",
      [](const Vec&, const Vec& z_prev) -> const Vec& { return z_prev; },
      [](const StateParams& sp, const Vec& x, const Vec&) { return sp.a.dot(x); }, warnings);
}

Mat ascend_softmax(const SoftmaxProblem& problem, Mat w, const EmConfig& cfg) {
  const Mat mask = input_mask(static_cast<int>(w.rows()), static_cast<int>(w.cols()) - 1, cfg.ablation);
  w = w.cwiseProduct(mask);
  if (!(problem.mass > 0.0)) return w;

  // Diagonal preconditioner from the second moment of each input coordinate,
  // so km/h-scale inputs and binary inputs take comparable steps.
  Vec second = Vec::Zero(w.cols());
  for (std::size_t t = 0; t < problem.inputs.size(); ++t) {
    second += problem.targets[t].sum() * problem.inputs[t].cwiseAbs2();
  }
  second /= problem.mass;
  const Vec precond = second.cwiseMax(1.0).cwiseInverse();

  double f = problem.objective(w, cfg.w_l2);
  double ll = problem.loglik(w);
  for (int iter = 0; iter < cfg.w_grad_iters; ++iter) {
    const Mat dir = problem.gradient(w, cfg.w_l2).cwiseProduct(mask) * precond.asDiagonal();
    if (dir.squaredNorm() == 0.0) break;
    double step = cfg.w_step_size;
    bool accepted = false;
    for (int h = 0; h <= kMaxHalvings; ++h, step *= 0.5) {
      Mat cand = w + step * dir;
      const double f_new = problem.objective(cand, cfg.w_l2);
      const double ll_new = problem.loglik(cand);
      // Accept only if the regularized objective and the plain expected
      // log-likelihood both hold, so the data likelihood stays monotone.
      if (f_new >= f && ll_new >= ll) {
        w = std::move(cand);
        f = f_new;
        ll = ll_new;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  return w;
}

}  // namespace mstep

ModelParams m_step(const ModelParams& params, const std::vector<PosteriorStats>& stats,
                   const Dataset& data, const EmConfig& cfg, std::vector<std::string>* warnings) {
  if (stats.size() != data.size()) throw std::invalid_argument("m_step: stats/data size mismatch");
  ModelParams next = params;
  for (int i = 0; i < next.n_states; ++i) {
    auto& sp = next.states[static_cast<std::size_t>(i)];
    if (cfg.ablation == Ablation::hmm_output) sp.a.setZero();
    if (cfg.ablation != Ablation::aio_hmm) sp.b.setZero();

    mstep::update_mean(next, i, stats, data, warnings);
    mstep::update_covariance(next, i, stats, data, cfg, warnings);
    if (cfg.ablation != Ablation::hmm_output) mstep::update_input_gain(next, i, stats, data, warnings);
    if (cfg.ablation == Ablation::aio_hmm) mstep::update_autoregressive_gain(next, i, stats, data, warnings);
  }
  for (int i = 0; i < next.n_states; ++i) {
    auto& sp = next.states[static_cast<std::size_t>(i)];
    sp.w = mstep::ascend_softmax(transition_problem(stats, data, i), sp.w, cfg);
  }
  next.w0 = mstep::ascend_softmax(transition_problem(stats, data, -1), next.w0, cfg);
  return next;
}

FitReport fit_em(const Dataset& data, const EmConfig& cfg) {
  cfg.check();
  if (data.empty()) throw std::invalid_argument("fit_em: dataset is empty");
  FitReport report;
  ModelParams params = init_params(data, cfg);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const EStepResult e = e_step(params, data);
    if (!report.loglik_trace.empty()) {
      const double prev = report.loglik_trace.back();
      if (e.total_loglik < prev - 1e-8) {
        std::ostringstream os;
        os.precision(17);
        os << "EM log-likelihood decreased at iteration " << iter << ": " << prev << " -> "
           << e.total_loglik;
        throw InternalError(os.str());
      }
      report.loglik_trace.push_back(e.total_loglik);
      if (e.total_loglik - prev < cfg.loglik_rel_tol * std::abs(prev)) {
        report.converged = true;
        break;
      }
    } else {
      report.loglik_trace.push_back(e.total_loglik);
    }
    if (iter + 1 == cfg.max_iters) break;
    params = m_step(params, e.stats, data, cfg, &report.warnings);
  }
  report.iterations_run = static_cast<int>(report.loglik_trace.size());
  report.params = std::move(params);
  return report;
}

std::array<Dataset, kNumManeuvers> split_by_class(const Dataset& data) {
  std::array<Dataset, kNumManeuvers> out;
  for (const auto& seq : data) out[static_cast<std::size_t>(index_of(seq.label))].push_back(seq);
  return out;
}

ManeuverModelSet fit_all(const std::array<Dataset, kNumManeuvers>& per_class, const EmConfig& cfg) {
  cfg.check();
  for (int m = 0; m < kNumManeuvers; ++m) {
    if (per_class[static_cast<std::size_t>(m)].empty()) {
      throw std::invalid_argument("fit_all: no training sequences for class " +
                                  std::string(to_string(static_cast<Maneuver>(m))));
    }
  }
  ManeuverModelSet set;
  detail::parallel_for(kNumManeuvers, [&](std::size_t m) {
    set.models[m] = fit_em(per_class[m], cfg).params;
  });
  return set;
}

}  // namespace aiohmm
