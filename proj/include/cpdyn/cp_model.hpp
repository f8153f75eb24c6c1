#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "cpdyn/tensor.hpp"

namespace cpdyn {

// R-component CP factorization over an order-N shape.
// weights[r][n] is the n-th weight vector of component r, length dims[n].
struct CPFactorization {
  Shape shape;
  std::vector<std::vector<std::vector<double>>> weights;

  int64_t rank() const { return static_cast<int64_t>(weights.size()); }
  int order() const { return shape.order(); }

  // Checks vector lengths against the shape and that all entries are finite.
  void validate() const;
};

struct GaussianInit {
  double stddev;
};

// Gaussian sample rebalanced so every vector in a component has the
// geometric-mean norm of that component. Preserves each component tensor
// and yields unbalancedness magnitude zero.
struct BalancedGaussianInit {
  double stddev;
};

struct ScaledInit {
  CPFactorization base;
  double alpha;
};

struct InitSpec {
  std::variant<GaussianInit, BalancedGaussianInit, ScaledInit> kind;
  uint64_t seed = 0;
};

// Materializes sum_r w_r^1 (x) ... (x) w_r^N. Shape must be materializable.
Tensor end_tensor(const CPFactorization& f);

// Entry of the end tensor at `index` without materializing it.
double predict(const CPFactorization& f, std::span<const int64_t> index);

// Product of the N weight-vector norms of component r; equals the Frobenius
// norm of the component's rank-one tensor.
double component_norm(const CPFactorization& f, int64_t r);

// Normalized weight vectors of component r; a zero vector normalizes to zero.
std::vector<std::vector<double>> component_direction(const CPFactorization& f, int64_t r);

// max over components r and mode pairs (n, n') of | |w_r^n|^2 - |w_r^n'|^2 |.
double unbalancedness_magnitude(const CPFactorization& f);

// Frobenius norm of the end tensor via the Gram identity
// |W_e|^2 = sum_{r,r'} prod_n <w_r^n, w_r'^n>; no materialization.
double end_tensor_norm(const CPFactorization& f);

// Smallest component count guaranteed to express every tensor of this
// shape: prod(dims) / max(dims).
int64_t sufficient_R(const Shape& shape);

CPFactorization initialize(const InitSpec& spec, const Shape& shape, int64_t R);

// Scales every weight vector by alpha (component norms scale by alpha^N).
CPFactorization scaled(const CPFactorization& base, double alpha);

}  // namespace cpdyn
