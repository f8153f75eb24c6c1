#pragma once

#include <span>
#include <string>

#include "cpdyn/optimizer.hpp"

namespace cpdyn {

// gamma_r = <-grad L(W_e), (x)_n w_hat_r^n>, computed from an already
// evaluated loss gradient; zero when any weight vector of component r is
// zero. Completion instances never materialize the gradient tensor.
double component_gamma(const CPFactorization& f, const Problem& p,
                       const LossGradient& loss_grad, int64_t r);

// Convenience form that evaluates the loss gradient itself.
double gamma(const CPFactorization& f, const Problem& p, const LossKind& kind, int64_t r);

struct DynamicsCheckReport {
  std::string name;
  double max_violation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::vector<double> residuals;  // per checked step (optional diagnostics)
  std::string detail;
};

// Deviation over time of pairwise squared-norm differences from their
// initial values; exactly conserved in continuous time, drifts O(lr^2) per
// step under explicit Euler. Records must carry vector_sq_norms.
DynamicsCheckReport check_balancedness_conservation(std::span<const TrajectoryRecord> records,
                                                    double tolerance);

// Residual of the forward-difference norm derivative against
// N * gamma_r * sigma_r^{2 - 2/N}, for a balanced run recorded at adjacent
// iterates with gammas. Components below sigma_floor are skipped; residuals
// are normalized by max(|fd|, |rhs|, 1e-3 * max |rhs| over the run).
DynamicsCheckReport check_corollary1_ode(std::span<const TrajectoryRecord> records,
                                         double tolerance, double sigma_floor = 1e-6);

// Two-sided bounds on the norm derivative under initial unbalancedness
// epsilon (taken from the first record), with per-step slack
// slack_coeff * (1 + |gamma_r|). Steps with sigma_r = 0 are skipped.
DynamicsCheckReport check_theorem1_bounds(std::span<const TrajectoryRecord> records,
                                          double slack_coeff);

// Iteration window over which a component grows from 10% to 90% of its
// final norm; used to verify that components are learned one after another.
struct GrowthWindow {
  int64_t component = 0;
  double final_norm = 0.0;
  double t10 = 0.0;
  double t90 = 0.0;
};

// Windows of the k components largest at the end of the run, ordered by
// final norm descending. Requires full (identity-stable) component norms.
std::vector<GrowthWindow> component_growth_windows(std::span<const TrajectoryRecord> records,
                                                   int64_t k);

// True when each window closes no later than the next one's close: the
// largest component finishes growing first, and so on down the list.
bool incremental_order_holds(std::span<const GrowthWindow> windows);

}  // namespace cpdyn
