#include <doctest.h>

#include "cpdyn/dynamics.hpp"
#include "cpdyn/experiments.hpp"
#include "oracles.hpp"

using namespace cpdyn;

namespace {

struct DeskRun {
  std::shared_ptr<const Problem> problem;
  CPFactorization init;
};

DeskRun desk_run(uint64_t seed, int64_t R = 4) {
  const Shape shape({5, 5, 5});
  GroundTruthSpec spec{shape, 2, seed, true};
  const Tensor gt = generate_ground_truth(spec);
  DeskRun run;
  run.problem = std::make_shared<const Problem>(sample_observations(gt, 40, seed));
  run.init = initialize({BalancedGaussianInit{0.05}, derive_seed(seed, "init")}, shape, R);
  return run;
}

TrainResult recorded_run(const DeskRun& run, double lr, int64_t steps) {
  TrainConfig cfg;
  cfg.lr = FixedLr{lr};
  cfg.stop_loss = 0.0;
  cfg.max_iters = steps;
  cfg.record.every = 1;
  cfg.record.gammas = true;
  cfg.record.vector_sq_norms = true;
  return train(run.init, run.problem, make_squared(0.5), cfg);
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("gamma of a zero component is zero by convention") {
  CPFactorization f;
  f.shape = Shape({2, 2, 2});
  f.weights = {{{1, 0}, {1, 0}, {1, 0}}, {{0, 0}, {0, 0}, {0, 0}}};
  ObservationSet obs;
  obs.shape = f.shape;
  // Nonzero residual at (0,0,0) so the aligned component feels a pull.
  obs.entries = {{{0, 0, 0}, 3.0}, {{1, 1, 1}, -2.0}};
  const Problem p{obs};
  CHECK(gamma(f, p, make_squared(0.5), 1) == 0.0);
  CHECK(gamma(f, p, make_squared(0.5), 0) != 0.0);
}

TEST_CASE("sparse gamma equals the dense computation and respects Cauchy-Schwarz") {
  RngStream rng{41};
  const auto inst = testing::random_instance(rng, false, false);
  const auto& obs = std::get<ObservationSet>(inst.problem);
  const Tensor dense_grad = testing::dense_loss_gradient_oracle(inst.f, inst.problem, inst.kind);
  for (int64_t r = 0; r < inst.f.rank(); ++r) {
    const double got = gamma(inst.f, inst.problem, inst.kind, r);
    const double expect = -inner(dense_grad, outer_product(component_direction(inst.f, r)));
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));
    CHECK(std::fabs(got) <= frobenius_norm(dense_grad) + 1e-12);
  }
  (void)obs;
}

TEST_CASE("frozen weights conserve balance exactly") {
  const auto run = desk_run(50);
  TrainConfig cfg;
  cfg.lr = FixedLr{0.0};
  cfg.stop_loss = 0.0;
  cfg.max_iters = 5;
  cfg.record.every = 1;
  cfg.record.vector_sq_norms = true;
  const TrainResult res = train(run.init, run.problem, make_squared(0.5), cfg);
  const auto report = check_balancedness_conservation(res.records, 1e-12);
  CHECK(report.pass);
  CHECK(report.max_violation == 0.0);
}

TEST_CASE("conservation drift shrinks with the step size") {
  const auto run = desk_run(51);
  const TrainResult full = recorded_run(run, 1e-3, 500);
  const TrainResult half = recorded_run(run, 5e-4, 500);
  const auto rep_full = check_balancedness_conservation(full.records, 1e-3);
  const auto rep_half = check_balancedness_conservation(half.records, 1e-3);
  CHECK(rep_full.pass);
  CHECK(rep_half.pass);
  CHECK(rep_half.max_violation < rep_full.max_violation);
  CHECK(rep_full.max_violation / rep_half.max_violation >= 1.5);
}

TEST_CASE("norm evolution matches the balanced ODE and shrinks with lr") {
  const auto run = desk_run(52);
  const TrainResult fine = recorded_run(run, 1e-5, 300);
  const auto rep_fine = check_corollary1_ode(fine.records, 1e-2);
  CHECK(rep_fine.pass);

  // Euler order: with weights large enough that truncation error dominates
  // rounding noise, the residual scales linearly in the step size over a
  // matched time horizon.
  const Shape shape({5, 5, 5});
  GroundTruthSpec spec{shape, 2, 52, true};
  const Tensor gt = generate_ground_truth(spec);
  auto problem = std::make_shared<const Problem>(sample_observations(gt, 40, 52));
  const CPFactorization big =
      initialize({BalancedGaussianInit{0.3}, derive_seed(52, "init")}, shape, 4);
  auto residual_at = [&](double lr) {
    TrainConfig cfg;
    cfg.lr = FixedLr{lr};
    cfg.stop_loss = 0.0;
    cfg.max_iters = static_cast<int64_t>(0.2 / lr);
    cfg.record.every = 1;
    cfg.record.gammas = true;
    cfg.record.vector_sq_norms = true;
    const TrainResult res = train(big, problem, make_squared(0.5), cfg);
    return check_corollary1_ode(res.records, 1.0).max_violation;
  };
  const double coarse = residual_at(1e-2);
  const double fine_matched = residual_at(1e-3);
  CHECK(coarse / fine_matched > 5.0);
  CHECK(coarse / fine_matched < 20.0);
}

TEST_CASE("ode check tolerates an identically-zero component") {
  auto run = desk_run(53, 3);
  for (auto& v : run.init.weights[2]) std::fill(v.begin(), v.end(), 0.0);
  const TrainResult res = recorded_run(run, 1e-5, 50);
  for (const auto& rec : res.records) {
    CHECK(rec.component_norms[2] == 0.0);
    CHECK(rec.gammas[2] == 0.0);
  }
  const auto report = check_corollary1_ode(res.records, 1e-2);
  CHECK(report.pass);
}

TEST_CASE("theorem-1 bounds hold for balanced and unbalanced inits") {
  // Balanced: the sandwich collapses onto the ODE.
  const auto run = desk_run(54);
  const TrainResult balanced = recorded_run(run, 1e-5, 200);
  const auto rep_balanced = check_theorem1_bounds(balanced.records, 1e-2);
  CHECK(rep_balanced.pass);

  // Unbalanced (epsilon = 0.5) with one anti-aligned component so the
  // negative-gamma branch is exercised.
  DynamicsExperimentConfig cfg;
  cfg.shape = Shape({5, 5, 5});
  cfg.gt_rank = 2;
  cfg.observations = 40;
  cfg.components = 4;
  cfg.init_std = 0.05;
  cfg.conservation_steps = 100;
  cfg.ode_steps = 200;
  cfg.ode_lr = 1e-5;
  cfg.epsilon_offset = 0.5;
  cfg.seed = 54;
  const DynamicsExperimentResult result = run_dynamics_experiment(cfg);
  CHECK(result.bounds.pass);
  CHECK(result.negative_gamma_seen);
  CHECK(result.bounds_records.front().unbalancedness == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("growth windows order staggered components") {
  // Fabricated norm series: component 0 grows early to the largest final
  // norm, 1 later to a smaller one, 2 last. Distinct finals pin the sort.
  std::vector<TrajectoryRecord> records;
  auto build = [&](std::vector<std::pair<double, double>> ramps,
                   std::vector<double> finals) {
    records.clear();
    for (int i = 0; i <= 100; ++i) {
      TrajectoryRecord rec;
      rec.iter = i;
      rec.time = i;
      rec.component_norms.resize(ramps.size());
      for (size_t c = 0; c < ramps.size(); ++c) {
        const auto [start, end] = ramps[c];
        double v = 0.001;
        if (i >= end) v = finals[c];
        else if (i > start) v = 0.001 + (i - start) / (end - start) * finals[c];
        rec.component_norms[c] = v;
      }
      records.push_back(rec);
    }
  };

  build({{10, 30}, {40, 60}, {70, 90}}, {1.0, 0.9, 0.8});
  const auto windows = component_growth_windows(records, 3);
  REQUIRE(windows.size() == 3);
  CHECK(windows[0].component == 0);
  CHECK(windows[1].component == 1);
  CHECK(windows[2].component == 2);
  CHECK(incremental_order_holds(windows));

  // The largest component finishing last breaks the ordering.
  build({{70, 90}, {40, 60}, {10, 30}}, {1.0, 0.9, 0.8});
  const auto broken = component_growth_windows(records, 3);
  CHECK_FALSE(incremental_order_holds(broken));
}

}  // TEST_SUITE
