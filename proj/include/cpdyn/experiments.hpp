#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cpdyn/dynamics.hpp"
#include "cpdyn/problems.hpp"
#include "cpdyn/rank_one.hpp"

namespace cpdyn {

// Synthetic completion/sensing run: ground truth, sampled problem, one
// training arm per initialization scale.
struct SyntheticExperimentConfig {
  Shape shape;
  int64_t gt_rank = 1;
  bool sensing = false;
  int64_t observations = 0;   // completion
  int64_t measurements = 0;   // sensing
  int64_t components = 0;     // R
  std::vector<double> init_stds;
  LossKind loss = SquaredLoss{1.0};
  LrScheme lr = AdaptiveLr{};
  double stop_loss = 1e-8;
  int64_t max_iters = 1'000'000;
  int64_t record_every = 100;
  int64_t top_k = 0;
  int64_t rip_trials = 0;     // sensing only; 0 disables the estimate
  uint64_t seed = 0;
};

struct SyntheticArmResult {
  double init_std = 0.0;
  TrainResult train;
  double recon_error = 0.0;
  std::vector<double> final_norms_sorted;  // descending
};

struct SyntheticExperimentResult {
  Tensor ground_truth;
  std::vector<SyntheticArmResult> arms;
  std::optional<RipEstimate> rip;
};

SyntheticExperimentResult run_synthetic_experiment(const SyntheticExperimentConfig& cfg);

// Known preset names: fig3-desk, fig3-paper, fig5-desk, fig5-paper,
// fig6-desk, fig6-paper, fig7-desk, fig7-paper. Desk presets shrink the
// component count and run length to minutes-scale workloads.
SyntheticExperimentConfig synthetic_preset(const std::string& name, uint64_t seed);

// Small-step run plus the conservation/ODE/bounds analyses.
struct DynamicsExperimentConfig {
  Shape shape{std::vector<int64_t>{8, 8, 8}};
  int64_t gt_rank = 3;
  int64_t observations = 150;
  int64_t components = 10;
  double init_std = 0.01;
  LossKind loss = SquaredLoss{0.5};
  double conservation_lr = 1e-3;
  int64_t conservation_steps = 10'000;
  double conservation_tol = 1e-3;
  double ode_lr = 1e-5;
  int64_t ode_steps = 1'000;
  double ode_tol = 1e-2;
  double sigma_floor = 1e-6;
  double slack_coeff = 1e-2;
  // Unbalancedness magnitude injected at init for the bounds run
  // (mode-0 squared norms shifted by this amount); 0 keeps the run balanced.
  double epsilon_offset = 0.0;
  // Flip component 0 to be anti-aligned with -grad L(0) in the bounds run
  // so the negative-gamma branch is exercised.
  bool force_negative_gamma = true;
  uint64_t seed = 0;
};

struct DynamicsExperimentResult {
  DynamicsCheckReport conservation;
  DynamicsCheckReport conservation_half_lr;
  double drift_ratio = 0.0;  // full-lr violation / half-lr violation
  DynamicsCheckReport ode;
  DynamicsCheckReport bounds;
  bool negative_gamma_seen = false;
  std::vector<TrajectoryRecord> ode_records;
  std::vector<TrajectoryRecord> bounds_records;
  bool all_pass() const {
    return conservation.pass && conservation_half_lr.pass && ode.pass && bounds.pass;
  }
};

DynamicsExperimentResult run_dynamics_experiment(const DynamicsExperimentConfig& cfg);

// Rank-one trajectory study on a rank-one-solvable completion instance with
// fully observed entries. Ground-truth vector entries are drawn with
// magnitudes in [0.5, 1.5] so observed values stay away from zero.
struct RankOneStudyConfig {
  Shape shape{std::vector<int64_t>{4, 4, 4}};
  // delta_h large enough that escape times stay minutes-scale at the
  // smallest alpha, rho at the midpoint of its admissible interval.
  double delta_frac = 0.4;  // delta_h as a fraction of min |y|
  double rho_frac = 0.5;    // rho as a fraction of (min |y| - delta_h)
  std::vector<double> alphas{1e-1, 1e-2, 1e-3};
  int64_t base_components = 3;
  // Close to the leading component so the alpha-driven residual mass at the
  // crossing stays above the Euler floor of the companion distance.
  double nonleading_scale = 0.8;
  double lr = 0.01;
  double horizon = 400.0;
  double cap_mult = 2.0;  // distance cap as a multiple of |W*|
  int64_t max_escape_iters = 60'000'000;
  int64_t corollary_trajectories = 5;
  double corollary_eps = 1e-2;
  int64_t corollary_max_iters = 60'000'000;
  uint64_t seed = 0;
};

struct RankOneStudyResult {
  Tensor ground_truth;
  double min_abs_y = 0.0;
  double delta_h = 0.0;
  double rho = 0.0;
  RankOneExperimentResult experiment;
  Corollary2Report corollary2;
};

RankOneStudyResult run_rank_one_study(const RankOneStudyConfig& cfg);

// Writes trajectory/checkpoint/summary files for every arm of a synthetic
// run under out_dir (one subdirectory per initialization scale).
void write_synthetic_outputs(const std::filesystem::path& out_dir,
                             const SyntheticExperimentResult& result);

}  // namespace cpdyn
