#include "cpdyn/rank_one.hpp"

#include <cmath>
#include <stdexcept>

#include "cpdyn/rng.hpp"

namespace cpdyn {

AssumptionReport validate_assumptions(const CPFactorization& base_init,
                                      const ObservationSet& obs, double delta_h,
                                      double balance_tolerance) {
  AssumptionReport rep;
  rep.delta_h = delta_h;
  rep.min_abs_y = obs.min_abs_value();
  rep.transition_ok = delta_h > 0.0 && delta_h < rep.min_abs_y;
  if (!rep.transition_ok) rep.failure = "delta_h >= min |y| over observations";

  rep.unbalancedness = unbalancedness_magnitude(base_init);
  rep.balanced_ok = rep.unbalancedness <= balance_tolerance;
  if (!rep.balanced_ok && rep.failure.empty()) {
    rep.failure = "initialization is not balanced";
  }

  // -grad L(0) projected on each unit component tensor, computed sparsely.
  const LossKind kind = HuberLoss{delta_h};
  const std::vector<double> lprime = completion_lprime_at_origin(obs, kind);
  double grad_sq = 0.0;
  for (double v : lprime) grad_sq += v * v;
  rep.loss_grad_norm_at_origin = std::sqrt(grad_sq);

  const int64_t R = base_init.rank();
  const int N = base_init.order();
  rep.gamma_hat.resize(R);
  for (int64_t r = 0; r < R; ++r) {
    const auto dirs = component_direction(base_init, r);
    double g = 0.0;
    for (size_t i = 0; i < obs.entries.size(); ++i) {
      double prod = 1.0;
      for (int n = 0; n < N; ++n) prod *= dirs[n][obs.entries[i].index[n]];
      g -= lprime[i] * prod;
    }
    rep.gamma_hat[r] = g;
  }

  // Leading component: positive projection and the norm-separation
  // inequality (vacuous when R = 1). Under a balanced init the per-mode
  // norms of a component coincide; the smallest mode norm is used so a
  // slightly unbalanced input fails conservatively.
  auto min_mode_norm = [&](int64_t r) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& v : base_init.weights[r]) m = std::min(m, vec_norm(v));
    return m;
  };
  for (int64_t rbar = 0; rbar < R && !rep.leading; ++rbar) {
    if (!(rep.gamma_hat[rbar] > 0.0)) continue;
    bool ok = true;
    if (R > 1) {
      if (N <= 2) {
        ok = false;  // separation exponent 1/(N-2) needs order >= 3
      } else {
        const double factor =
            std::pow(rep.loss_grad_norm_at_origin / rep.gamma_hat[rbar], 1.0 / (N - 2.0));
        for (int64_t r = 0; r < R && ok; ++r) {
          if (r == rbar) continue;
          if (!(min_mode_norm(rbar) > min_mode_norm(r) * factor)) ok = false;
        }
      }
    }
    if (ok) rep.leading = rbar;
  }
  rep.leading_ok = rep.leading.has_value();
  if (!rep.leading_ok && rep.failure.empty()) {
    rep.failure = "no leading component satisfies the separation inequality";
  }
  return rep;
}

void validate_reference_radius(double rho, const ObservationSet& obs, double delta_h) {
  const double bound = obs.min_abs_value() - delta_h;
  if (!(rho > 0.0) || !(rho < bound)) {
    throw std::invalid_argument("reference radius must lie in (0, min |y| - delta_h)");
  }
}

CrossingResult detect_crossing(Trainer& trainer, double rho, int64_t max_iters) {
  CrossingResult res;
  for (int64_t i = 0; i <= max_iters; ++i) {
    if (end_tensor_norm(trainer.factorization()) >= rho) {
      res.crossed = true;
      res.iter = trainer.iteration();
      res.time = trainer.time();
      return res;
    }
    if (i == max_iters) break;
    const auto info = trainer.step();
    if (!info.finite) break;
  }
  res.crossed = false;
  res.iter = 0;  // convention: inf over the empty set
  res.time = 0.0;
  return res;
}

int64_t leading_component(const CPFactorization& f) {
  int64_t best = 0;
  double best_norm = -1.0;
  for (int64_t r = 0; r < f.rank(); ++r) {
    const double norm = component_norm(f, r);
    if (norm > best_norm) {
      best_norm = norm;
      best = r;
    }
  }
  return best;
}

CPFactorization companion_rank_one_init(const CPFactorization& f_at_t0, double rho) {
  const int64_t lead = leading_component(f_at_t0);
  const int N = f_at_t0.order();
  const double target = std::pow(rho, 1.0 / N);
  CPFactorization companion;
  companion.shape = f_at_t0.shape;
  companion.weights.resize(1);
  companion.weights[0].resize(N);
  for (int n = 0; n < N; ++n) {
    const auto& v = f_at_t0.weights[lead][n];
    const double norm = vec_norm(v);
    if (norm == 0.0) {
      throw std::invalid_argument("companion init: leading component has a zero vector");
    }
    companion.weights[0][n].resize(v.size());
    const double c = target / norm;
    for (size_t i = 0; i < v.size(); ++i) companion.weights[0][n][i] = c * v[i];
  }
  return companion;
}

RankOneTrace track_companion_distance(Trainer& main, Trainer& companion, double horizon,
                                      double distance_cap) {
  RankOneTrace trace;
  const double t_base = main.time();
  int64_t step = 0;
  while (true) {
    const Tensor main_we = end_tensor(main.factorization());
    const Tensor comp_we = end_tensor(companion.factorization());
    TraceRow row;
    row.step = step;
    row.time = main.time() - t_base;
    row.distance = distance(main_we, comp_we);
    row.main_norm = frobenius_norm(main_we);
    row.companion_norm = frobenius_norm(comp_we);
    trace.rows.push_back(row);
    trace.max_distance = std::max(trace.max_distance, row.distance);
    if (row.main_norm >= distance_cap) {
      trace.hit_distance_cap = true;
      break;
    }
    if (row.time >= horizon) break;
    const auto a = main.step();
    const auto b = companion.step();
    if (!a.finite || !b.finite) break;
    ++step;
  }
  return trace;
}

RankOneExperimentResult run_rank_one_experiment(const RankOneExperimentConfig& config,
                                                std::shared_ptr<const Problem> problem) {
  const auto* obs = std::get_if<ObservationSet>(problem.get());
  if (obs == nullptr) {
    throw std::invalid_argument("rank-one experiment: completion problem required");
  }
  validate_reference_radius(config.rho, *obs, config.delta_h);
  for (size_t i = 1; i < config.alphas.size(); ++i) {
    if (!(config.alphas[i] < config.alphas[i - 1])) {
      throw std::invalid_argument("rank-one experiment: alphas must decrease");
    }
  }
  if (config.alphas.empty() || config.alphas.front() <= 0.0 || config.alphas.back() <= 0.0) {
    throw std::invalid_argument("rank-one experiment: alphas must be positive");
  }

  RankOneExperimentResult result;
  result.assumptions = validate_assumptions(config.base_init, *obs, config.delta_h);
  const LossKind kind = HuberLoss{config.delta_h};

  for (double alpha : config.alphas) {
    RankOneArmResult arm;
    arm.alpha = alpha;
    CPFactorization f0 = scaled(config.base_init, alpha);
    if (end_tensor_norm(f0) >= config.rho) {
      throw std::invalid_argument("rank-one experiment: initialization outside the sphere");
    }
    Trainer main(std::move(f0), problem, kind, FixedLr{config.lr});
    if (config.crossing_refine > 1.0 && config.refine_threshold < 1.0) {
      const CrossingResult approach =
          detect_crossing(main, config.refine_threshold * config.rho, config.max_escape_iters);
      if (approach.crossed) {
        main.set_lr(FixedLr{config.lr / config.crossing_refine});
        arm.crossing = detect_crossing(main, config.rho, config.max_escape_iters);
        main.set_lr(FixedLr{config.lr});
      }
    } else {
      arm.crossing = detect_crossing(main, config.rho, config.max_escape_iters);
    }
    if (!arm.crossing.crossed) {
      result.arms.push_back(std::move(arm));
      continue;
    }
    arm.leading = leading_component(main.factorization());
    for (int64_t r = 0; r < main.factorization().rank(); ++r) {
      if (r != arm.leading) {
        arm.nonleading_norm_sum_at_t0 += component_norm(main.factorization(), r);
      }
    }
    Trainer companion(companion_rank_one_init(main.factorization(), config.rho), problem,
                      kind, FixedLr{config.lr});
    arm.trace = track_companion_distance(main, companion, config.horizon, config.distance_cap);
    result.arms.push_back(std::move(arm));
  }
  return result;
}

Corollary2Report corollary2_probe(const RankOneExperimentConfig& config,
                                  std::shared_ptr<const Problem> problem,
                                  const Tensor& target, int64_t num_trajectories,
                                  double epsilon, int64_t max_iters, uint64_t seed) {
  const auto* obs = std::get_if<ObservationSet>(problem.get());
  if (obs == nullptr) {
    throw std::invalid_argument("corollary2 probe: completion problem required");
  }
  validate_reference_radius(config.rho, *obs, config.delta_h);
  const LossKind kind = HuberLoss{config.delta_h};
  const int N = config.base_init.order();
  const double vec_scale = std::pow(config.rho, 1.0 / N);

  Corollary2Report rep;
  rep.epsilon = epsilon;
  RngStream rng{derive_seed(seed, "corollary2")};

  auto run_to_target = [&](Trainer& tr, double& min_dist, double& final_dist) {
    min_dist = distance(end_tensor(tr.factorization()), target);
    for (int64_t i = 0; i < max_iters; ++i) {
      const auto info = tr.step();
      if (!info.finite) break;
      const double d = distance(end_tensor(tr.factorization()), target);
      min_dist = std::min(min_dist, d);
      final_dist = d;
      if (info.loss < 1e-14) break;
    }
  };

  bool all_within = true;
  for (int64_t k = 0; k < num_trajectories; ++k) {
    // Random balanced rank-one start on the sphere: unit directions scaled
    // to norm rho^{1/N} per mode.
    CPFactorization f;
    f.shape = config.base_init.shape;
    f.weights.resize(1);
    f.weights[0].resize(N);
    for (int n = 0; n < N; ++n) {
      auto& v = f.weights[0][n];
      v.resize(f.shape.dims[n]);
      for (auto& x : v) x = rng.normal();
      const double norm = vec_norm(v);
      for (auto& x : v) x *= vec_scale / norm;
    }
    Trainer tr(std::move(f), problem, kind, FixedLr{config.lr});
    double min_d = 0.0, final_d = 0.0;
    run_to_target(tr, min_d, final_d);
    rep.companion_min_distances.push_back(min_d);
    rep.companion_final_distances.push_back(final_d);
    if (min_d > epsilon) all_within = false;
  }

  {
    Trainer full(scaled(config.base_init, config.alphas.back()), problem, kind,
                 FixedLr{config.lr});
    double min_d = 0.0, final_d = 0.0;
    run_to_target(full, min_d, final_d);
    rep.full_run_min_distance = min_d;
    rep.full_run_final_distance = final_d;
    if (min_d > epsilon) all_within = false;
  }
  rep.converged = all_within;
  return rep;
}

}  // namespace cpdyn
