#include <doctest.h>

#include "cpdyn/experiments.hpp"
#include "cpdyn/rank_one.hpp"
#include "oracles.hpp"

using namespace cpdyn;

namespace {

// Fully observed rank-one completion instance with entries away from zero.
struct RankOneFixture {
  Tensor gt;
  std::shared_ptr<const Problem> problem;
  std::vector<std::vector<double>> directions;
  double min_abs_y = 0.0;
};

RankOneFixture rank_one_fixture(uint64_t seed, const Shape& shape) {
  RngStream rng{seed};
  RankOneFixture fx;
  fx.directions.resize(shape.order());
  for (int n = 0; n < shape.order(); ++n) {
    fx.directions[n].resize(shape.dims[n]);
    for (auto& x : fx.directions[n]) {
      const double mag = 0.5 + rng.uniform01();
      x = rng.below(2) == 0 ? mag : -mag;
    }
  }
  fx.gt = outer_product(fx.directions);
  for (auto& v : fx.directions) {
    const double norm = vec_norm(v);
    for (auto& x : v) x /= norm;
  }
  ObservationSet obs;
  obs.shape = shape;
  for (int64_t flat = 0; flat < fx.gt.size(); ++flat) {
    obs.entries.push_back({fx.gt.multi_index(flat), fx.gt[flat]});
  }
  fx.min_abs_y = obs.min_abs_value();
  fx.problem = std::make_shared<const Problem>(std::move(obs));
  return fx;
}

CPFactorization aligned_init(const RankOneFixture& fx, int64_t R, double other_scale,
                             uint64_t seed) {
  CPFactorization f;
  f.shape = fx.gt.shape();
  f.weights.resize(R);
  f.weights[0] = fx.directions;
  RngStream rng{seed};
  for (int64_t r = 1; r < R; ++r) {
    f.weights[r].resize(f.order());
    for (int n = 0; n < f.order(); ++n) {
      auto& v = f.weights[r][n];
      v.resize(f.shape.dims[n]);
      for (auto& x : v) x = rng.normal();
      const double norm = vec_norm(v);
      for (auto& x : v) x *= other_scale / norm;
    }
  }
  return f;
}

}  // namespace

TEST_SUITE("rank_one") {

TEST_CASE("assumption validation on an aligned single component") {
  const auto fx = rank_one_fixture(61, Shape({4, 4, 4}));
  CPFactorization f;
  f.shape = fx.gt.shape();
  f.weights = {fx.directions};
  const double delta = 0.1 * fx.min_abs_y;
  const auto& obs = std::get<ObservationSet>(*fx.problem);
  const AssumptionReport rep = validate_assumptions(f, obs, delta);
  CHECK(rep.transition_ok);
  CHECK(rep.balanced_ok);
  CHECK(rep.leading_ok);
  CHECK(rep.leading.value() == 0);
  CHECK(rep.gamma_hat[0] > 0.0);
  CHECK(rep.all_ok());
}

TEST_CASE("assumption validation failures") {
  const auto fx = rank_one_fixture(62, Shape({4, 4, 4}));
  const auto& obs = std::get<ObservationSet>(*fx.problem);
  CPFactorization f;
  f.shape = fx.gt.shape();
  f.weights = {fx.directions};

  // Transition point too large.
  const AssumptionReport bad_delta = validate_assumptions(f, obs, fx.min_abs_y * 1.5);
  CHECK_FALSE(bad_delta.transition_ok);
  CHECK_FALSE(bad_delta.all_ok());

  // Identical component norms: the strict separation inequality fails since
  // the gradient-ratio factor is always >= 1.
  const CPFactorization equal = aligned_init(fx, 2, 1.0, 7);
  const AssumptionReport no_lead = validate_assumptions(equal, obs, 0.1 * fx.min_abs_y);
  CHECK_FALSE(no_lead.leading_ok);

  // Unbalanced initialization.
  CPFactorization unbal = f;
  for (auto& x : unbal.weights[0][0]) x *= 2.0;
  const AssumptionReport rep = validate_assumptions(unbal, obs, 0.1 * fx.min_abs_y);
  CHECK_FALSE(rep.balanced_ok);
}

TEST_CASE("reference radius validation") {
  const auto fx = rank_one_fixture(63, Shape({4, 4, 4}));
  const auto& obs = std::get<ObservationSet>(*fx.problem);
  const double delta = 0.1 * fx.min_abs_y;
  CHECK_NOTHROW(validate_reference_radius(0.5 * (fx.min_abs_y - delta), obs, delta));
  CHECK_THROWS_AS(validate_reference_radius(fx.min_abs_y - delta, obs, delta),
                  std::invalid_argument);
  CHECK_THROWS_AS(validate_reference_radius(0.0, obs, delta), std::invalid_argument);
}

TEST_CASE("crossing detection conventions") {
  const auto fx = rank_one_fixture(64, Shape({4, 4, 4}));
  const double delta = 0.1 * fx.min_abs_y;
  const LossKind kind = make_huber(delta);

  // Initialization on (just past) the sphere: the infimum is attained at 0.
  CPFactorization at_sphere;
  at_sphere.shape = fx.gt.shape();
  at_sphere.weights = {fx.directions};
  const double rho = 0.25 * (fx.min_abs_y - delta);
  const double scale = std::pow(1.01 * rho, 1.0 / 3.0);
  for (auto& v : at_sphere.weights[0]) {
    for (auto& x : v) x *= scale;
  }
  Trainer tr(at_sphere, fx.problem, kind, FixedLr{0.01});
  const CrossingResult hit = detect_crossing(tr, rho, 100);
  CHECK(hit.crossed);
  CHECK(hit.iter == 0);
  CHECK(hit.time == 0.0);

  // A frozen run never crosses; the infimum convention reports zero.
  CPFactorization zero;
  zero.shape = fx.gt.shape();
  zero.weights.assign(1, std::vector<std::vector<double>>(3, std::vector<double>(4, 0.0)));
  Trainer frozen(zero, fx.problem, kind, FixedLr{0.01});
  const CrossingResult miss = detect_crossing(frozen, rho, 50);
  CHECK_FALSE(miss.crossed);
  CHECK(miss.iter == 0);
}

TEST_CASE("companion initialization lands on the sphere, balanced and aligned") {
  const auto fx = rank_one_fixture(65, Shape({4, 4, 4}));
  const CPFactorization f = aligned_init(fx, 3, 0.3, 9);
  const double rho = 0.05;
  const CPFactorization companion = companion_rank_one_init(f, rho);
  CHECK(companion.rank() == 1);
  CHECK(component_norm(companion, 0) == doctest::Approx(rho).epsilon(1e-12));
  CHECK(unbalancedness_magnitude(companion) <= 1e-14);

  const Tensor lead = outer_product(f.weights[leading_component(f)]);
  const Tensor comp = outer_product(companion.weights[0]);
  const double cosine = inner(lead, comp) / (frobenius_norm(lead) * frobenius_norm(comp));
  CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));

  // Zeroing one mode of every component leaves whichever component leads
  // with a zero vector, which the construction must reject.
  CPFactorization broken = f;
  for (auto& comp_weights : broken.weights) {
    std::fill(comp_weights[1].begin(), comp_weights[1].end(), 0.0);
  }
  CHECK_THROWS_AS(companion_rank_one_init(broken, rho), std::invalid_argument);
}

TEST_CASE("a balanced single-component run tracks its own companion exactly") {
  const auto fx = rank_one_fixture(66, Shape({4, 4, 4}));
  const double delta = 0.1 * fx.min_abs_y;
  const double rho = 0.5 * (fx.min_abs_y - delta);
  const LossKind kind = make_huber(delta);

  CPFactorization f;
  f.shape = fx.gt.shape();
  f.weights = {fx.directions};
  const double scale = 0.1;
  for (auto& v : f.weights[0]) {
    for (auto& x : v) x *= scale;
  }
  Trainer main(f, fx.problem, kind, FixedLr{0.05});
  const CrossingResult t0 = detect_crossing(main, rho, 2'000'000);
  REQUIRE(t0.crossed);
  Trainer companion(companion_rank_one_init(main.factorization(), rho), fx.problem, kind,
                    FixedLr{0.05});
  const RankOneTrace trace = track_companion_distance(main, companion, 5.0, 100.0);
  // The only mismatch is the sphere-overshoot rescaling at T0.
  CHECK(trace.rows.front().distance <= 2.0 * (trace.rows.front().main_norm - rho) + 1e-9);
  CHECK(trace.max_distance <= 10.0 * (trace.rows.front().distance + 1e-9));
}

TEST_CASE("alpha sweep: later crossings and closer tracking as alpha shrinks") {
  const auto fx = rank_one_fixture(67, Shape({3, 3, 3}));
  RankOneExperimentConfig cfg;
  const double delta = 0.1 * fx.min_abs_y;
  cfg.delta_h = delta;
  cfg.rho = 0.5 * (fx.min_abs_y - delta);
  cfg.alphas = {0.5, 0.25};
  cfg.base_init = aligned_init(fx, 2, 0.5, 11);
  cfg.horizon = 30.0;
  cfg.distance_cap = 3.0 * frobenius_norm(fx.gt);
  cfg.lr = 0.05;
  cfg.max_escape_iters = 3'000'000;

  const RankOneExperimentResult res = run_rank_one_experiment(cfg, fx.problem);
  REQUIRE(res.arms.size() == 2);
  REQUIRE(res.arms[0].crossing.crossed);
  REQUIRE(res.arms[1].crossing.crossed);
  CHECK(res.arms[1].crossing.time >= res.arms[0].crossing.time);
  CHECK(res.arms[1].trace.max_distance < res.arms[0].trace.max_distance);
  CHECK(res.arms[1].nonleading_norm_sum_at_t0 < res.arms[0].nonleading_norm_sum_at_t0);

  // Alphas must decrease.
  RankOneExperimentConfig bad = cfg;
  bad.alphas = {0.25, 0.5};
  CHECK_THROWS_AS(run_rank_one_experiment(bad, fx.problem), std::invalid_argument);
}

TEST_CASE("corollary-2 probe converges for rank-one targets and reports failure otherwise") {
  const auto fx = rank_one_fixture(68, Shape({3, 3, 3}));
  RankOneExperimentConfig cfg;
  const double delta = 0.1 * fx.min_abs_y;
  cfg.delta_h = delta;
  cfg.rho = 0.5 * (fx.min_abs_y - delta);
  cfg.alphas = {0.1};
  cfg.base_init = aligned_init(fx, 2, 0.5, 13);
  cfg.lr = 0.05;

  const Corollary2Report good =
      corollary2_probe(cfg, fx.problem, fx.gt, 3, 1e-2, 400'000, 5);
  CHECK(good.converged);
  CHECK(good.full_run_min_distance <= 1e-2);
  for (double d : good.companion_min_distances) CHECK(d <= 1e-2);

  // Negative control: a higher-rank target is not reached.
  GroundTruthSpec spec{Shape({3, 3, 3}), 3, 99, false};
  Tensor far_target = generate_ground_truth(spec);
  far_target *= 3.0;
  const Corollary2Report bad = corollary2_probe(cfg, fx.problem, far_target, 2, 1e-2, 50'000, 5);
  CHECK_FALSE(bad.converged);
}

}  // TEST_SUITE
