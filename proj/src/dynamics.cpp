#include "cpdyn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cpdyn {

double component_gamma(const CPFactorization& f, const Problem& p,
                       const LossGradient& loss_grad, int64_t r) {
  const auto dirs = component_direction(f, r);
  for (const auto& d : dirs) {
    bool all_zero = true;
    for (double x : d) {
      if (x != 0.0) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) return 0.0;  // convention: w_hat = 0 for a zero vector
  }
  if (const auto* obs = std::get_if<ObservationSet>(&p)) {
    double g = 0.0;
    for (size_t i = 0; i < obs->entries.size(); ++i) {
      double prod = 1.0;
      const auto& idx = obs->entries[i].index;
      for (int n = 0; n < f.order(); ++n) prod *= dirs[n][idx[n]];
      g -= loss_grad.sparse[i] * prod;
    }
    return g;
  }
  return -inner_with_outer(*loss_grad.dense, dirs);
}

double gamma(const CPFactorization& f, const Problem& p, const LossKind& kind, int64_t r) {
  return component_gamma(f, p, loss_gradient_tensor(f, p, kind), r);
}

DynamicsCheckReport check_balancedness_conservation(std::span<const TrajectoryRecord> records,
                                                    double tolerance) {
  DynamicsCheckReport report;
  report.name = "balancedness_conservation";
  report.tolerance = tolerance;
  if (records.empty() || records.front().vector_sq_norms.empty()) {
    throw std::invalid_argument("conservation check: records lack vector_sq_norms");
  }
  const auto& init = records.front().vector_sq_norms;
  const size_t R = init.size();
  const size_t N = init.front().size();
  report.residuals.reserve(records.size());
  for (const auto& rec : records) {
    double worst = 0.0;
    for (size_t r = 0; r < R; ++r) {
      for (size_t n = 0; n < N; ++n) {
        for (size_t nb = n + 1; nb < N; ++nb) {
          const double now = rec.vector_sq_norms[r][n] - rec.vector_sq_norms[r][nb];
          const double was = init[r][n] - init[r][nb];
          worst = std::max(worst, std::fabs(now - was));
        }
      }
    }
    report.residuals.push_back(worst);
    report.max_violation = std::max(report.max_violation, worst);
  }
  report.pass = report.max_violation <= tolerance;
  return report;
}

namespace {

void require_step_adjacent(std::span<const TrajectoryRecord> records) {
  for (size_t i = 1; i < records.size(); ++i) {
    if (records[i].iter != records[i - 1].iter + 1) {
      throw std::invalid_argument("dynamics check: records not step-adjacent");
    }
  }
}

}  // namespace

DynamicsCheckReport check_corollary1_ode(std::span<const TrajectoryRecord> records,
                                         double tolerance, double sigma_floor) {
  DynamicsCheckReport report;
  report.name = "corollary1_ode";
  report.tolerance = tolerance;
  if (records.size() < 2) throw std::invalid_argument("ode check: need at least two records");
  require_step_adjacent(records);
  if (records.front().gammas.empty()) {
    throw std::invalid_argument("ode check: records lack gammas");
  }
  const size_t R = records.front().component_norms.size();
  // The factorization order comes from the per-vector norm layout.
  if (records.front().vector_sq_norms.empty()) {
    throw std::invalid_argument("ode check: records lack vector_sq_norms (order unknown)");
  }
  const double order = static_cast<double>(records.front().vector_sq_norms.front().size());
  const double exponent = 2.0 - 2.0 / order;

  // Scale floor for relative residuals: a fraction of the largest ODE
  // right-hand side seen in the run, so near-zero crossings of gamma do not
  // blow up the ratio while genuine formula violations still register.
  double max_rhs = 0.0;
  for (size_t i = 0; i + 1 < records.size(); ++i) {
    for (size_t r = 0; r < R; ++r) {
      const double sigma = records[i].component_norms[r];
      if (sigma < sigma_floor) continue;
      max_rhs = std::max(max_rhs, std::fabs(order * records[i].gammas[r] *
                                            std::pow(sigma, exponent)));
    }
  }
  const double denom_floor = std::max(1e-3 * max_rhs, 1e-300);

  for (size_t i = 0; i + 1 < records.size(); ++i) {
    const double eta = records[i].eta;
    if (!(eta > 0.0)) throw std::invalid_argument("ode check: record missing step size");
    double worst = 0.0;
    for (size_t r = 0; r < R; ++r) {
      const double sigma = records[i].component_norms[r];
      if (sigma < sigma_floor) continue;
      const double fd = (records[i + 1].component_norms[r] - sigma) / eta;
      const double rhs = order * records[i].gammas[r] * std::pow(sigma, exponent);
      const double rel = std::fabs(fd - rhs) / std::max({std::fabs(fd), std::fabs(rhs), denom_floor});
      worst = std::max(worst, rel);
    }
    report.residuals.push_back(worst);
    report.max_violation = std::max(report.max_violation, worst);
  }
  report.pass = report.max_violation <= tolerance;
  return report;
}

DynamicsCheckReport check_theorem1_bounds(std::span<const TrajectoryRecord> records,
                                          double slack_coeff) {
  DynamicsCheckReport report;
  report.name = "theorem1_bounds";
  report.tolerance = 0.0;
  if (records.size() < 2) throw std::invalid_argument("bounds check: need at least two records");
  require_step_adjacent(records);
  if (records.front().gammas.empty() || records.front().vector_sq_norms.empty()) {
    throw std::invalid_argument("bounds check: records lack gammas or vector_sq_norms");
  }
  const double epsilon = records.front().unbalancedness;
  const double order = static_cast<double>(records.front().vector_sq_norms.front().size());
  const size_t R = records.front().component_norms.size();
  report.detail = "epsilon=" + std::to_string(epsilon);

  for (size_t i = 0; i + 1 < records.size(); ++i) {
    const double eta = records[i].eta;
    if (!(eta > 0.0)) throw std::invalid_argument("bounds check: record missing step size");
    double worst = 0.0;
    for (size_t r = 0; r < R; ++r) {
      const double sigma = records[i].component_norms[r];
      if (sigma <= 0.0) continue;  // theorem precondition
      const double fd = (records[i + 1].component_norms[r] - sigma) / eta;
      const double g = records[i].gammas[r];
      const double base = std::pow(sigma, 2.0 / order) + epsilon;
      const double a = order * g * sigma * sigma / base;
      const double b = order * g * std::pow(base, order - 1.0);
      const double lower = std::min(a, b);  // a for gamma >= 0, b for gamma < 0
      const double upper = std::max(a, b);
      const double slack = slack_coeff * (1.0 + std::fabs(g));
      const double violation = std::max({lower - slack - fd, fd - upper - slack, 0.0});
      worst = std::max(worst, violation);
    }
    report.residuals.push_back(worst);
    report.max_violation = std::max(report.max_violation, worst);
  }
  report.pass = report.max_violation <= 0.0;
  return report;
}

std::vector<GrowthWindow> component_growth_windows(std::span<const TrajectoryRecord> records,
                                                   int64_t k) {
  if (records.empty()) throw std::invalid_argument("growth windows: no records");
  const auto& final_norms = records.back().component_norms;
  const int64_t R = static_cast<int64_t>(final_norms.size());
  std::vector<int64_t> order(R);
  for (int64_t r = 0; r < R; ++r) order[r] = r;
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return final_norms[a] > final_norms[b]; });

  std::vector<GrowthWindow> windows;
  for (int64_t j = 0; j < std::min(k, R); ++j) {
    const int64_t r = order[j];
    GrowthWindow w;
    w.component = r;
    w.final_norm = final_norms[r];
    w.t10 = records.back().time;
    w.t90 = records.back().time;
    for (const auto& rec : records) {
      if (rec.component_norms[r] >= 0.1 * w.final_norm) {
        w.t10 = rec.time;
        break;
      }
    }
    for (const auto& rec : records) {
      if (rec.component_norms[r] >= 0.9 * w.final_norm) {
        w.t90 = rec.time;
        break;
      }
    }
    windows.push_back(w);
  }
  return windows;
}

bool incremental_order_holds(std::span<const GrowthWindow> windows) {
  for (size_t i = 1; i < windows.size(); ++i) {
    if (windows[i - 1].t90 > windows[i].t90) return false;
  }
  return true;
}

}  // namespace cpdyn
