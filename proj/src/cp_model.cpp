#include "cpdyn/cp_model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cpdyn/rng.hpp"

namespace cpdyn {

void CPFactorization::validate() const {
  const int N = order();
  for (const auto& comp : weights) {
    if (static_cast<int>(comp.size()) != N) {
      throw std::invalid_argument("CPFactorization: component order mismatch");
    }
    for (int n = 0; n < N; ++n) {
      if (static_cast<int64_t>(comp[n].size()) != shape.dims[n]) {
        throw std::invalid_argument("CPFactorization: weight vector length mismatch");
      }
      for (double v : comp[n]) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument("CPFactorization: non-finite weight");
        }
      }
    }
  }
}

Tensor end_tensor(const CPFactorization& f) {
  Tensor out{f.shape};
  for (const auto& comp : f.weights) {
    add_outer_product(out, comp, 1.0);
  }
  return out;
}

double predict(const CPFactorization& f, std::span<const int64_t> index) {
  const int N = f.order();
  if (static_cast<int>(index.size()) != N) {
    throw std::invalid_argument("predict: index order mismatch");
  }
  for (int n = 0; n < N; ++n) {
    if (index[n] < 0 || index[n] >= f.shape.dims[n]) {
      throw std::out_of_range("predict: index out of range");
    }
  }
  double sum = 0.0;
  for (const auto& comp : f.weights) {
    double p = 1.0;
    for (int n = 0; n < N; ++n) p *= comp[n][index[n]];
    sum += p;
  }
  return sum;
}

double component_norm(const CPFactorization& f, int64_t r) {
  double p = 1.0;
  for (const auto& v : f.weights[r]) p *= vec_norm(v);
  return p;
}

std::vector<std::vector<double>> component_direction(const CPFactorization& f, int64_t r) {
  std::vector<std::vector<double>> dirs;
  dirs.reserve(f.order());
  for (const auto& v : f.weights[r]) {
    const double norm = vec_norm(v);
    std::vector<double> d(v.size(), 0.0);
    if (norm > 0.0) {
      for (size_t i = 0; i < v.size(); ++i) d[i] = v[i] / norm;
    }
    dirs.push_back(std::move(d));
  }
  return dirs;
}

double unbalancedness_magnitude(const CPFactorization& f) {
  double worst = 0.0;
  for (const auto& comp : f.weights) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& v : comp) {
      double sq = 0.0;
      for (double x : v) sq += x * x;
      lo = std::min(lo, sq);
      hi = std::max(hi, sq);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

double end_tensor_norm(const CPFactorization& f) {
  const int64_t R = f.rank();
  double sq = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    for (int64_t s = 0; s < R; ++s) {
      double p = 1.0;
      for (int n = 0; n < f.order(); ++n) {
        p *= vec_dot(f.weights[r][n], f.weights[s][n]);
      }
      sq += p;
    }
  }
  return std::sqrt(std::max(sq, 0.0));
}

int64_t sufficient_R(const Shape& shape) {
  int64_t max_dim = 1;
  for (int64_t d : shape.dims) max_dim = std::max(max_dim, d);
  int64_t total = 1;
  for (int64_t d : shape.dims) {
    if (total > std::numeric_limits<int64_t>::max() / d) {
      throw std::overflow_error("sufficient_R: product overflows int64");
    }
    total *= d;
  }
  return total / max_dim;
}

namespace {

CPFactorization gaussian_sample(const Shape& shape, int64_t R, double stddev, uint64_t seed) {
  RngStream rng{seed};
  CPFactorization f;
  f.shape = shape;
  f.weights.resize(R);
  for (auto& comp : f.weights) {
    comp.resize(shape.order());
    for (int n = 0; n < shape.order(); ++n) {
      comp[n].resize(shape.dims[n]);
      for (auto& x : comp[n]) x = rng.normal(0.0, stddev);
    }
  }
  return f;
}

void rebalance(CPFactorization& f) {
  const int N = f.order();
  for (auto& comp : f.weights) {
    double log_sum = 0.0;
    bool zero = false;
    std::vector<double> norms(N);
    for (int n = 0; n < N; ++n) {
      norms[n] = vec_norm(comp[n]);
      if (norms[n] == 0.0) zero = true;
      else log_sum += std::log(norms[n]);
    }
    if (zero) {
      // A zero vector kills the component tensor; zero the whole component.
      for (auto& v : comp) std::fill(v.begin(), v.end(), 0.0);
      continue;
    }
    const double target = std::exp(log_sum / N);  // geometric mean
    for (int n = 0; n < N; ++n) {
      const double c = target / norms[n];
      for (auto& x : comp[n]) x *= c;
    }
  }
}

}  // namespace

CPFactorization scaled(const CPFactorization& base, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("scaled: alpha must be positive");
  CPFactorization f = base;
  for (auto& comp : f.weights) {
    for (auto& v : comp) {
      for (auto& x : v) x *= alpha;
    }
  }
  return f;
}

CPFactorization initialize(const InitSpec& spec, const Shape& shape, int64_t R) {
  if (R < 1) throw std::invalid_argument("initialize: R must be >= 1");
  if (const auto* g = std::get_if<GaussianInit>(&spec.kind)) {
    if (g->stddev <= 0.0) throw std::invalid_argument("initialize: stddev must be positive");
    return gaussian_sample(shape, R, g->stddev, spec.seed);
  }
  if (const auto* b = std::get_if<BalancedGaussianInit>(&spec.kind)) {
    if (b->stddev <= 0.0) throw std::invalid_argument("initialize: stddev must be positive");
    CPFactorization f = gaussian_sample(shape, R, b->stddev, spec.seed);
    rebalance(f);
    return f;
  }
  const auto& s = std::get<ScaledInit>(spec.kind);
  if (!(s.base.shape == shape) || s.base.rank() != R) {
    throw std::invalid_argument("initialize: scaled base does not match shape/R");
  }
  return scaled(s.base, s.alpha);
}

}  // namespace cpdyn
