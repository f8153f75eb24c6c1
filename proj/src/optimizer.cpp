#include "cpdyn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpdyn/dynamics.hpp"

namespace cpdyn {

std::pair<double, AdaptiveLrState> adaptive_lr_step_size(const AdaptiveLr& cfg,
                                                         AdaptiveLrState state,
                                                         double grad_sq_norm, int64_t t) {
  if (t < 1) throw std::invalid_argument("adaptive_lr_step_size: t must be >= 1");
  state.gamma_ema = cfg.beta * state.gamma_ema + (1.0 - cfg.beta) * grad_sq_norm;
  const double corrected = state.gamma_ema / (1.0 - std::pow(cfg.beta, static_cast<double>(t)));
  const double eta = cfg.eta_base / (std::sqrt(corrected) + cfg.eps);
  return {eta, state};
}

Trainer::Trainer(CPFactorization f, std::shared_ptr<const Problem> problem, LossKind kind,
                 LrScheme lr)
    : f_(std::move(f)), problem_(std::move(problem)), kind_(std::move(kind)), lr_(lr) {
  if (!problem_) throw std::invalid_argument("Trainer: null problem");
}

const Evaluation& Trainer::evaluate_current() {
  if (!eval_valid_) {
    eval_ = evaluate_objective(f_, *problem_, kind_);
    eval_valid_ = true;
  }
  return eval_;
}

Trainer::StepInfo Trainer::step() {
  const Evaluation& ev = evaluate_current();
  StepInfo info;
  info.loss = ev.loss;
  info.grad_sq_norm = ev.grad_sq_norm;
  if (!std::isfinite(ev.loss) || !std::isfinite(ev.grad_sq_norm)) {
    info.finite = false;
    return info;
  }
  double eta;
  if (const auto* fixed = std::get_if<FixedLr>(&lr_)) {
    eta = fixed->eta;
  } else {
    auto [e, st] = adaptive_lr_step_size(std::get<AdaptiveLr>(lr_), lr_state_,
                                         ev.grad_sq_norm, iter_ + 1);
    eta = e;
    lr_state_ = st;
  }
  info.eta = eta;
  for (int64_t r = 0; r < f_.rank(); ++r) {
    for (int n = 0; n < f_.order(); ++n) {
      auto& w = f_.weights[r][n];
      const auto& g = ev.grad[r][n];
      for (size_t i = 0; i < w.size(); ++i) w[i] -= eta * g[i];
    }
  }
  time_ += eta;
  ++iter_;
  eval_valid_ = false;
  return info;
}

TrajectoryRecord make_record(const CPFactorization& f, const Evaluation& ev,
                             const Problem& problem, int64_t iter, double time,
                             const RecordOptions& opts) {
  TrajectoryRecord rec;
  rec.iter = iter;
  rec.time = time;
  rec.loss = ev.loss;
  rec.unbalancedness = unbalancedness_magnitude(f);

  const int64_t R = f.rank();
  rec.component_norms.resize(R);
  for (int64_t r = 0; r < R; ++r) rec.component_norms[r] = component_norm(f, r);
  if (opts.top_k > 0 && opts.top_k < R) {
    std::sort(rec.component_norms.begin(), rec.component_norms.end(), std::greater<>());
    rec.component_norms.resize(opts.top_k);
  }

  if (opts.gammas) {
    rec.gammas.resize(R);
    for (int64_t r = 0; r < R; ++r) {
      rec.gammas[r] = component_gamma(f, problem, ev.loss_grad, r);
    }
  }
  if (opts.vector_sq_norms) {
    rec.vector_sq_norms.resize(R);
    for (int64_t r = 0; r < R; ++r) {
      rec.vector_sq_norms[r].resize(f.order());
      for (int n = 0; n < f.order(); ++n) {
        const double norm = vec_norm(f.weights[r][n]);
        rec.vector_sq_norms[r][n] = norm * norm;
      }
    }
  }
  if (opts.ground_truth != nullptr) {
    rec.recon_error = distance(end_tensor(f), *opts.ground_truth);
  }
  return rec;
}

TrainResult train(CPFactorization init, std::shared_ptr<const Problem> problem,
                  const LossKind& kind, const TrainConfig& config) {
  if (config.max_iters < 1) throw std::invalid_argument("train: max_iters must be >= 1");
  Trainer trainer(std::move(init), std::move(problem), kind, config.lr);

  TrainResult result;
  const int64_t every = std::max<int64_t>(1, config.record.every);
  while (true) {
    const Evaluation& ev = trainer.evaluate_current();
    const bool finite = std::isfinite(ev.loss) && std::isfinite(ev.grad_sq_norm);
    const int64_t iter = trainer.iteration();

    StopReason stop = StopReason::max_iters;
    bool stopping = true;
    if (!finite) {
      stop = StopReason::non_finite;
    } else if (ev.loss < config.stop_loss) {
      stop = StopReason::loss_threshold;
    } else if (iter >= config.max_iters) {
      stop = StopReason::max_iters;
    } else {
      stopping = false;
    }

    const bool record_now = stopping || iter == 0 || iter % every == 0;
    if (record_now) {
      result.records.push_back(make_record(trainer.factorization(), ev, trainer.problem(),
                                           iter, trainer.time(), config.record));
    }
    if (stopping) {
      result.stop = stop;
      result.final_loss = ev.loss;
      break;
    }
    const Trainer::StepInfo info = trainer.step();
    if (record_now) result.records.back().eta = info.eta;
  }
  result.iters = trainer.iteration();
  result.time = trainer.time();
  result.factorization = trainer.factorization();
  return result;
}

AdamOptimizer::AdamOptimizer(const AdamConfig& cfg, size_t n_params)
    : lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps),
      m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("AdamOptimizer: size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < m_.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace cpdyn
