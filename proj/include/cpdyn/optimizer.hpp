#pragma once

#include <limits>
#include <memory>
#include <variant>
#include <vector>

#include "cpdyn/losses.hpp"

namespace cpdyn {

struct FixedLr {
  double eta;
};

// Base learning rate divided by the square root of a bias-corrected
// exponential moving average of squared gradient norms. Only the step size
// is affected, never the direction.
struct AdaptiveLr {
  double eta_base = 1e-2;
  double beta = 0.99;
  double eps = 1e-6;
};

using LrScheme = std::variant<FixedLr, AdaptiveLr>;

struct AdaptiveLrState {
  double gamma_ema = 0.0;  // gamma_0 = 0
};

// eta_t = eta / (sqrt(gamma_t / (1 - beta^t)) + eps), t >= 1, with
// gamma_t = beta * gamma_{t-1} + (1 - beta) * |grad phi|^2.
std::pair<double, AdaptiveLrState> adaptive_lr_step_size(const AdaptiveLr& cfg,
                                                         AdaptiveLrState state,
                                                         double grad_sq_norm, int64_t t);

struct RecordOptions {
  int64_t every = 100;
  // 0 records every component norm in component order (identity stable);
  // k > 0 records the k largest norms at each step, sorted descending.
  int64_t top_k = 0;
  bool gammas = false;
  bool vector_sq_norms = false;
  const Tensor* ground_truth = nullptr;  // enables the recon_error column
};

struct TrainConfig {
  LrScheme lr = AdaptiveLr{};
  double stop_loss = 1e-8;
  int64_t max_iters = 1'000'000;
  RecordOptions record;
  uint64_t seed = 0;  // not consumed by the descent itself; echoed in manifests
};

struct TrajectoryRecord {
  int64_t iter = 0;
  double time = 0.0;  // cumulative sum of step sizes
  double eta = 0.0;   // step applied from this iterate (0 at the final record)
  double loss = 0.0;
  double unbalancedness = 0.0;
  std::vector<double> component_norms;
  std::vector<double> gammas;
  std::vector<std::vector<double>> vector_sq_norms;
  double recon_error = std::numeric_limits<double>::quiet_NaN();
};

enum class StopReason { loss_threshold, max_iters, non_finite };

struct TrainResult {
  CPFactorization factorization;
  std::vector<TrajectoryRecord> records;
  StopReason stop = StopReason::max_iters;
  int64_t iters = 0;
  double time = 0.0;
  double final_loss = 0.0;
};

// Stepwise gradient descent on the factorization objective; explicit-Euler
// discretization of the gradient flow. Exposed for lockstep experiments.
class Trainer {
 public:
  Trainer(CPFactorization f, std::shared_ptr<const Problem> problem, LossKind kind,
          LrScheme lr);

  // Evaluation at the current iterate (cached until the next step).
  const Evaluation& evaluate_current();

  struct StepInfo {
    double loss = 0.0;
    double eta = 0.0;
    double grad_sq_norm = 0.0;
    bool finite = true;
  };

  // One descent update from the current iterate. Refuses to move (finite ==
  // false) when the loss or gradient is non-finite.
  StepInfo step();

  const CPFactorization& factorization() const { return f_; }
  const Problem& problem() const { return *problem_; }
  const LossKind& loss_kind() const { return kind_; }
  double time() const { return time_; }
  int64_t iteration() const { return iter_; }

  // Swap the step-size scheme mid-run (resets adaptive state).
  void set_lr(LrScheme lr) {
    lr_ = lr;
    lr_state_ = AdaptiveLrState{};
  }

 private:
  CPFactorization f_;
  std::shared_ptr<const Problem> problem_;
  LossKind kind_;
  LrScheme lr_;
  AdaptiveLrState lr_state_;
  Evaluation eval_;
  bool eval_valid_ = false;
  double time_ = 0.0;
  int64_t iter_ = 0;
};

// Runs descent until loss < stop_loss or max_iters, recording every
// record.every iterations plus the first and last iterates.
TrainResult train(CPFactorization init, std::shared_ptr<const Problem> problem,
                  const LossKind& kind, const TrainConfig& config);

TrajectoryRecord make_record(const CPFactorization& f, const Evaluation& ev,
                             const Problem& problem, int64_t iter, double time,
                             const RecordOptions& opts);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t batch_size = 5000;
  double stop_loss = 1e-8;
  int64_t max_iters = 10'000;
  uint64_t seed = 0;
};

// Adam over a flat parameter vector with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(const AdamConfig& cfg, size_t n_params);
  void step(std::span<double> params, std::span<const double> grads);
  int64_t iterations() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

}  // namespace cpdyn
