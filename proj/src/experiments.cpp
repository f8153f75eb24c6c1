#include "cpdyn/experiments.hpp"

#include <cmath>
#include <stdexcept>

#include "cpdyn/io.hpp"
#include "cpdyn/rng.hpp"

namespace cpdyn {

SyntheticExperimentResult run_synthetic_experiment(const SyntheticExperimentConfig& cfg) {
  if (cfg.components < 1) throw std::invalid_argument("synthetic run: components must be >= 1");
  if (cfg.init_stds.empty()) throw std::invalid_argument("synthetic run: no init stds");

  SyntheticExperimentResult result;
  GroundTruthSpec gt_spec{cfg.shape, cfg.gt_rank, cfg.seed, true};
  result.ground_truth = generate_ground_truth(gt_spec);

  std::shared_ptr<const Problem> problem;
  if (cfg.sensing) {
    if (cfg.measurements < 1) throw std::invalid_argument("synthetic run: measurements must be >= 1");
    auto meas = sample_measurements(result.ground_truth, cfg.measurements, cfg.seed);
    if (cfg.rip_trials > 0) {
      result.rip = estimate_rip_delta(meas, 1, cfg.rip_trials, cfg.seed);
    }
    problem = std::make_shared<const Problem>(std::move(meas));
  } else {
    if (cfg.observations < 1) throw std::invalid_argument("synthetic run: observations must be >= 1");
    problem = std::make_shared<const Problem>(
        sample_observations(result.ground_truth, cfg.observations, cfg.seed));
  }

  for (double std_dev : cfg.init_stds) {
    InitSpec init{GaussianInit{std_dev},
                  derive_seed(cfg.seed, "init:" + format_double17(std_dev))};
    CPFactorization f0 = initialize(init, cfg.shape, cfg.components);

    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.stop_loss = cfg.stop_loss;
    tc.max_iters = cfg.max_iters;
    tc.seed = cfg.seed;
    tc.record.every = cfg.record_every;
    tc.record.top_k = cfg.top_k;
    tc.record.ground_truth = &result.ground_truth;

    SyntheticArmResult arm;
    arm.init_std = std_dev;
    arm.train = train(std::move(f0), problem, cfg.loss, tc);
    arm.recon_error = distance(end_tensor(arm.train.factorization), result.ground_truth);
    arm.final_norms_sorted.resize(arm.train.factorization.rank());
    for (int64_t r = 0; r < arm.train.factorization.rank(); ++r) {
      arm.final_norms_sorted[r] = component_norm(arm.train.factorization, r);
    }
    std::sort(arm.final_norms_sorted.begin(), arm.final_norms_sorted.end(), std::greater<>());
    result.arms.push_back(std::move(arm));
  }
  return result;
}

SyntheticExperimentConfig synthetic_preset(const std::string& name, uint64_t seed) {
  SyntheticExperimentConfig cfg;
  cfg.seed = seed;
  const bool desk = name.ends_with("-desk");
  const bool paper = name.ends_with("-paper");
  if (!desk && !paper) throw std::invalid_argument("unknown preset: " + name);

  cfg.loss = SquaredLoss{1.0};
  cfg.lr = AdaptiveLr{};
  cfg.max_iters = paper ? 1'000'000 : 200'000;
  cfg.record_every = 100;
  cfg.init_stds = paper ? std::vector<double>{0.05, 0.01, 0.005} : std::vector<double>{0.005};
  cfg.top_k = paper ? 10 : 0;

  const std::string fig = name.substr(0, name.find('-'));
  if (fig == "fig3" || fig == "fig5" || fig == "fig7") {
    cfg.shape = Shape({10, 10, 10, 10});
    cfg.gt_rank = 5;
    cfg.components = paper ? 1000 : 100;
    cfg.observations = 2000;
  } else if (fig == "fig6") {
    cfg.shape = Shape({10, 10, 10});
    cfg.gt_rank = 3;
    cfg.components = 100;
    cfg.observations = 300;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }

  if (fig == "fig5") {
    cfg.loss = HuberLoss{5e-7};
    // With a transition point this small the run starts below the generic
    // 1e-8 threshold (initial loss ~ delta_h * mean |y|). Stop once the
    // quadratic regime is fully fit instead: 1e-13 < delta_h^2 / 2.
    cfg.stop_loss = 1e-13;
    // Mean-normalized Huber gradients near the origin are of order
    // delta_h * |w|^(N-1) / sqrt(|Omega|) ~ 1e-14, far below the scheme's
    // default 1e-6 epsilon; the step size would stay epsilon-pinned and the
    // escape from the origin would take ~1e7 iterations. An epsilon below
    // the smallest gradient norm keeps the scheme in its normalized regime
    // (fixed step length eta_base) for the whole run.
    cfg.lr = AdaptiveLr{1e-2, 0.99, 1e-15};
  }
  if (fig == "fig7") {
    cfg.sensing = true;
    cfg.observations = 0;
    cfg.measurements = 2000;
    cfg.rip_trials = 50;
    // Sensing gradients at small init also sit orders of magnitude below
    // the default epsilon; same reasoning as the Huber preset.
    cfg.lr = AdaptiveLr{1e-2, 0.99, 1e-15};
  }
  return cfg;
}

namespace {

// Shifts mode-0 squared norms up by `offset`, giving the factorization an
// unbalancedness magnitude of exactly offset while keeping directions.
void inject_unbalance(CPFactorization& f, double offset) {
  for (auto& comp : f.weights) {
    auto& v = comp[0];
    const double norm = vec_norm(v);
    if (norm == 0.0) continue;
    const double c = std::sqrt((norm * norm + offset)) / norm;
    for (auto& x : v) x *= c;
  }
}

}  // namespace

DynamicsExperimentResult run_dynamics_experiment(const DynamicsExperimentConfig& cfg) {
  DynamicsExperimentResult result;

  GroundTruthSpec gt_spec{cfg.shape, cfg.gt_rank, cfg.seed, true};
  const Tensor gt = generate_ground_truth(gt_spec);
  auto problem = std::make_shared<const Problem>(
      sample_observations(gt, cfg.observations, cfg.seed));

  InitSpec init{BalancedGaussianInit{cfg.init_std}, derive_seed(cfg.seed, "init")};
  const CPFactorization base = initialize(init, cfg.shape, cfg.components);

  auto run_recorded = [&](const CPFactorization& f0, double lr, int64_t steps,
                          bool gammas) {
    TrainConfig tc;
    tc.lr = FixedLr{lr};
    tc.stop_loss = 0.0;  // run the full step budget
    tc.max_iters = steps;
    tc.record.every = 1;
    tc.record.gammas = gammas;
    tc.record.vector_sq_norms = true;
    return train(f0, problem, cfg.loss, tc);
  };

  // Conservation at the configured step size and at half of it.
  {
    TrainResult full = run_recorded(base, cfg.conservation_lr, cfg.conservation_steps, false);
    TrainResult half = run_recorded(base, cfg.conservation_lr / 2.0, cfg.conservation_steps, false);
    result.conservation = check_balancedness_conservation(full.records, cfg.conservation_tol);
    result.conservation_half_lr =
        check_balancedness_conservation(half.records, cfg.conservation_tol);
    result.drift_ratio = result.conservation_half_lr.max_violation > 0.0
                             ? result.conservation.max_violation /
                                   result.conservation_half_lr.max_violation
                             : std::numeric_limits<double>::infinity();
  }

  // Norm-evolution checks at the small step size.
  {
    TrainResult ode_run = run_recorded(base, cfg.ode_lr, cfg.ode_steps, true);
    result.ode = check_corollary1_ode(ode_run.records, cfg.ode_tol, cfg.sigma_floor);
    result.ode_records = std::move(ode_run.records);
  }
  {
    CPFactorization f0 = base;
    if (cfg.force_negative_gamma && f0.rank() > 0) {
      const auto lg = loss_gradient_tensor(f0, *problem, cfg.loss);
      if (component_gamma(f0, *problem, lg, 0) > 0.0) {
        for (auto& x : f0.weights[0][0]) x = -x;
      }
    }
    if (cfg.epsilon_offset > 0.0) inject_unbalance(f0, cfg.epsilon_offset);
    TrainResult bounds_run = run_recorded(f0, cfg.ode_lr, cfg.ode_steps, true);
    result.bounds = check_theorem1_bounds(bounds_run.records, cfg.slack_coeff);
    for (const auto& rec : bounds_run.records) {
      for (double g : rec.gammas) {
        if (g < 0.0) result.negative_gamma_seen = true;
      }
    }
    result.bounds_records = std::move(bounds_run.records);
  }
  return result;
}

RankOneStudyResult run_rank_one_study(const RankOneStudyConfig& cfg) {
  RankOneStudyResult out;
  const int N = cfg.shape.order();
  if (N < 3) throw std::invalid_argument("rank-one study: order must be >= 3");

  // Rank-one ground truth with entry magnitudes bounded away from zero.
  RngStream gt_rng{derive_seed(cfg.seed, "rank1_gt")};
  std::vector<std::vector<double>> gt_vectors(N);
  for (int n = 0; n < N; ++n) {
    gt_vectors[n].resize(cfg.shape.dims[n]);
    for (auto& x : gt_vectors[n]) {
      const double mag = 0.5 + gt_rng.uniform01();
      x = gt_rng.below(2) == 0 ? mag : -mag;
    }
  }
  out.ground_truth = outer_product(gt_vectors);

  // Fully observed completion: the problem admits the rank-one solution.
  ObservationSet obs;
  obs.shape = cfg.shape;
  for (int64_t flat = 0; flat < out.ground_truth.size(); ++flat) {
    obs.entries.push_back({out.ground_truth.multi_index(flat), out.ground_truth[flat]});
  }
  out.min_abs_y = obs.min_abs_value();
  out.delta_h = cfg.delta_frac * out.min_abs_y;
  out.rho = cfg.rho_frac * (out.min_abs_y - out.delta_h);
  auto problem = std::make_shared<const Problem>(std::move(obs));

  // Base init: leading component along the ground-truth directions (unit
  // norms), remaining components random balanced at nonleading_scale.
  CPFactorization base;
  base.shape = cfg.shape;
  base.weights.resize(cfg.base_components);
  base.weights[0].resize(N);
  for (int n = 0; n < N; ++n) {
    base.weights[0][n] = gt_vectors[n];
    const double norm = vec_norm(base.weights[0][n]);
    for (auto& x : base.weights[0][n]) x /= norm;
  }
  RngStream init_rng{derive_seed(cfg.seed, "rank1_init")};
  for (int64_t r = 1; r < cfg.base_components; ++r) {
    base.weights[r].resize(N);
    for (int n = 0; n < N; ++n) {
      auto& v = base.weights[r][n];
      v.resize(cfg.shape.dims[n]);
      for (auto& x : v) x = init_rng.normal();
      const double norm = vec_norm(v);
      for (auto& x : v) x *= cfg.nonleading_scale / norm;
    }
  }

  RankOneExperimentConfig exp_cfg;
  exp_cfg.rho = out.rho;
  exp_cfg.alphas = cfg.alphas;
  exp_cfg.base_init = base;
  exp_cfg.horizon = cfg.horizon;
  exp_cfg.distance_cap = cfg.cap_mult * frobenius_norm(out.ground_truth);
  exp_cfg.delta_h = out.delta_h;
  exp_cfg.lr = cfg.lr;
  exp_cfg.max_escape_iters = cfg.max_escape_iters;

  out.experiment = run_rank_one_experiment(exp_cfg, problem);
  out.corollary2 = corollary2_probe(exp_cfg, problem, out.ground_truth,
                                    cfg.corollary_trajectories, cfg.corollary_eps,
                                    cfg.corollary_max_iters, derive_seed(cfg.seed, "cor2"));
  return out;
}

void write_synthetic_outputs(const std::filesystem::path& out_dir,
                             const SyntheticExperimentResult& result) {
  namespace fs = std::filesystem;
  for (const auto& arm : result.arms) {
    char label[48];
    std::snprintf(label, sizeof(label), "std_%g", arm.init_std);
    const fs::path arm_dir = out_dir / label;
    fs::create_directories(arm_dir);
    write_trajectory_csv(arm_dir / "trajectory.csv", arm.train.records);
    save_checkpoint(arm_dir / "checkpoint.json", arm.train.factorization);

    nlohmann::json summary;
    summary["init_std"] = arm.init_std;
    summary["final_loss"] = arm.train.final_loss;
    summary["iters"] = arm.train.iters;
    summary["time"] = arm.train.time;
    summary["stop"] = to_string(arm.train.stop);
    summary["recon_error"] = arm.recon_error;
    summary["final_norms_sorted"] = arm.final_norms_sorted;
    write_json(arm_dir / "summary.json", summary);
  }
}

}  // namespace cpdyn
