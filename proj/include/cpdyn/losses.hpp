#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "cpdyn/cp_model.hpp"
#include "cpdyn/tensor.hpp"

namespace cpdyn {

struct SquaredLoss {
  double coeff = 0.5;  // loss(z) = coeff * z^2
};

struct HuberLoss {
  double delta;  // transition point between quadratic and linear regimes
};

using LossKind = std::variant<SquaredLoss, HuberLoss>;

// Validating constructors for configs; the structs themselves stay plain.
LossKind make_squared(double coeff);
LossKind make_huber(double delta);

double scalar_loss(const LossKind& kind, double z);
double scalar_loss_derivative(const LossKind& kind, double z);

struct Observation {
  std::vector<int64_t> index;
  double value = 0.0;
};

// Completion problem data: observed entries of the ground truth.
struct ObservationSet {
  Shape shape;
  std::vector<Observation> entries;

  // Indices unique and in range, set nonempty.
  void validate() const;
  double min_abs_value() const;
};

// Sensing problem data: measurement tensors with values <A_i, W*>.
struct MeasurementSet {
  Shape shape;
  std::vector<Tensor> tensors;
  std::vector<double> values;

  void validate() const;
};

using Problem = std::variant<ObservationSet, MeasurementSet>;

const Shape& problem_shape(const Problem& p);

// Mean over observed entries of loss(prediction - value); the end tensor is
// never materialized.
double completion_loss(const CPFactorization& f, const ObservationSet& obs,
                       const LossKind& kind);

// Mean over measurements of loss(<A_i, W_e> - y_i).
double sensing_loss(const CPFactorization& f, const MeasurementSet& meas,
                    const LossKind& kind);

double problem_loss(const CPFactorization& f, const Problem& p, const LossKind& kind);

// grad L(W_e): sparse per-observation coefficients for completion (value
// loss'(pred - y) / |Omega| aligned with the observation list), dense tensor
// for sensing.
struct LossGradient {
  std::vector<double> sparse;
  std::optional<Tensor> dense;

  double norm() const;
};

LossGradient loss_gradient_tensor(const CPFactorization& f, const Problem& p,
                                  const LossKind& kind);

// Dense completion-loss gradient at an arbitrary tensor (analysis/test use).
Tensor completion_loss_gradient_at(const Tensor& w, const ObservationSet& obs,
                                   const LossKind& kind);

// Per-observation loss'(0 - y) / |Omega|: the loss gradient at the origin.
std::vector<double> completion_lprime_at_origin(const ObservationSet& obs,
                                                const LossKind& kind);

// Gradient blocks of the factorization objective, same layout as weights.
using GradientBlocks = std::vector<std::vector<std::vector<double>>>;

// d phi / d w_r^n = matricize(grad L(W_e), n) * kron_except(w_r, n).
// Completion instances are computed sparsely over the observation set; the
// matricized form is algebraically identical.
GradientBlocks objective_gradient(const CPFactorization& f, const Problem& p,
                                  const LossKind& kind);

// One combined pass: loss, objective gradient, squared gradient norm, and
// the loss-gradient data needed for per-component projections.
struct Evaluation {
  double loss = 0.0;
  GradientBlocks grad;
  double grad_sq_norm = 0.0;
  LossGradient loss_grad;
};

Evaluation evaluate_objective(const CPFactorization& f, const Problem& p,
                              const LossKind& kind);

double grad_blocks_sq_norm(const GradientBlocks& g);

}  // namespace cpdyn
