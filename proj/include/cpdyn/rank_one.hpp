#pragma once

#include <optional>
#include <string>

#include "cpdyn/optimizer.hpp"

namespace cpdyn {

// Validation of the three preconditions for rank-one trajectory following
// under the Huber loss: transition point below every observed magnitude,
// balanced initialization, and a leading component with positive projection
// on -grad L(0) plus the norm-separation inequality against every other
// component.
struct AssumptionReport {
  double delta_h = 0.0;
  double min_abs_y = 0.0;
  bool transition_ok = false;

  double unbalancedness = 0.0;
  bool balanced_ok = false;

  double loss_grad_norm_at_origin = 0.0;
  std::vector<double> gamma_hat;       // <-grad L(0), unit component tensor> per r
  std::optional<int64_t> leading;      // first r satisfying the leading conditions
  bool leading_ok = false;

  std::string failure;  // empty when everything holds
  bool all_ok() const { return transition_ok && balanced_ok && leading_ok; }
};

AssumptionReport validate_assumptions(const CPFactorization& base_init,
                                      const ObservationSet& obs, double delta_h,
                                      double balance_tolerance = 1e-10);

// Throws unless rho lies in (0, min |y| - delta_h).
void validate_reference_radius(double rho, const ObservationSet& obs, double delta_h);

struct CrossingResult {
  bool crossed = false;
  int64_t iter = 0;   // 0 when the run ends without crossing (flagged above)
  double time = 0.0;
};

// Advances the trainer until |W_e| >= rho at a discrete iterate (no
// interpolation). The infimum convention: an initialization already at the
// sphere gives iter 0, and a run that never crosses returns 0 with
// crossed == false.
CrossingResult detect_crossing(Trainer& trainer, double rho, int64_t max_iters);

// One-component factorization whose vectors carry the leading component's
// directions at norm rho^{1/N} each: balanced, with end tensor norm rho.
CPFactorization companion_rank_one_init(const CPFactorization& f_at_t0, double rho);

// Index of the component with the largest norm.
int64_t leading_component(const CPFactorization& f);

struct TraceRow {
  int64_t step = 0;
  double time = 0.0;
  double distance = 0.0;
  double main_norm = 0.0;
  double companion_norm = 0.0;
};

struct RankOneTrace {
  std::vector<TraceRow> rows;
  double max_distance = 0.0;
  bool hit_distance_cap = false;
};

// Runs main (already at its crossing) and companion trainers in lockstep,
// recording |main - companion| each step until cumulative time reaches
// `horizon` or the main end tensor norm reaches `distance_cap`.
RankOneTrace track_companion_distance(Trainer& main, Trainer& companion, double horizon,
                                      double distance_cap);

struct RankOneArmResult {
  double alpha = 0.0;
  CrossingResult crossing;
  int64_t leading = 0;
  double nonleading_norm_sum_at_t0 = 0.0;
  RankOneTrace trace;
};

struct RankOneExperimentConfig {
  double rho = 0.0;
  std::vector<double> alphas;       // positive, decreasing
  CPFactorization base_init;        // the unscaled initialization
  double horizon = 0.0;             // time budget after the crossing
  double distance_cap = 0.0;
  double delta_h = 0.0;
  double lr = 0.0;                  // fixed step for both trajectories
  int64_t max_escape_iters = 0;
  // The iterate that first crosses the sphere lands a step-size-dependent
  // distance past it; refining the step for the final approach keeps that
  // overshoot below the alpha-driven residuals being measured. Crossing
  // detection itself stays at discrete iterates.
  double refine_threshold = 0.95;   // switch to the fine step at this * rho
  double crossing_refine = 1000.0;  // escape-step divisor near the sphere
};

struct RankOneExperimentResult {
  AssumptionReport assumptions;
  std::vector<RankOneArmResult> arms;
};

RankOneExperimentResult run_rank_one_experiment(const RankOneExperimentConfig& config,
                                                std::shared_ptr<const Problem> problem);

// Convergence probe: random balanced rank-one trajectories emanating from
// the reference sphere, plus the full factorization at the smallest alpha,
// all measured against the target tensor.
struct Corollary2Report {
  std::vector<double> companion_final_distances;
  std::vector<double> companion_min_distances;
  double full_run_min_distance = 0.0;
  double full_run_final_distance = 0.0;
  double epsilon = 0.0;
  bool converged = false;  // every min distance within epsilon
};

Corollary2Report corollary2_probe(const RankOneExperimentConfig& config,
                                  std::shared_ptr<const Problem> problem,
                                  const Tensor& target, int64_t num_trajectories,
                                  double epsilon, int64_t max_iters, uint64_t seed);

}  // namespace cpdyn
