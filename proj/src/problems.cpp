#include "cpdyn/problems.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cpdyn/cp_model.hpp"
#include "cpdyn/rng.hpp"

namespace cpdyn {

Tensor generate_ground_truth(const GroundTruthSpec& spec) {
  if (spec.rank < 1) throw std::invalid_argument("generate_ground_truth: rank must be >= 1");
  RngStream rng{derive_seed(spec.seed, "ground_truth")};
  for (int attempt = 0; attempt < 16; ++attempt) {
    Tensor out{spec.shape};
    for (int64_t r = 0; r < spec.rank; ++r) {
      std::vector<std::vector<double>> vectors(spec.shape.order());
      for (int n = 0; n < spec.shape.order(); ++n) {
        vectors[n].resize(spec.shape.dims[n]);
        for (auto& x : vectors[n]) x = rng.normal();
      }
      add_scaled(out, outer_product(vectors), 1.0);
    }
    const double norm = frobenius_norm(out);
    if (norm == 0.0) continue;  // probability-zero degenerate draw
    if (spec.normalize) out *= 1.0 / norm;
    return out;
  }
  throw std::runtime_error("generate_ground_truth: repeated zero draws");
}

ObservationSet sample_observations(const Tensor& ground_truth, int64_t count, uint64_t seed) {
  const int64_t total = ground_truth.size();
  if (count < 1 || count > total) {
    throw std::invalid_argument("sample_observations: count out of range");
  }
  RngStream rng{derive_seed(seed, "observations")};
  // Partial Fisher-Yates over the flat index range: first `count` entries of
  // a uniform permutation, i.e. sampling without repetition.
  std::vector<int64_t> flat(total);
  std::iota(flat.begin(), flat.end(), 0);
  for (int64_t i = 0; i < count; ++i) {
    std::swap(flat[i], flat[i + rng.below(total - i)]);
  }
  ObservationSet obs;
  obs.shape = ground_truth.shape();
  obs.entries.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    obs.entries.push_back({ground_truth.multi_index(flat[i]), ground_truth[flat[i]]});
  }
  return obs;
}

MeasurementSet sample_measurements(const Tensor& ground_truth, int64_t count, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_measurements: count must be >= 1");
  RngStream rng{derive_seed(seed, "measurements")};
  const double stddev = 1.0 / std::sqrt(static_cast<double>(ground_truth.size()));
  MeasurementSet meas;
  meas.shape = ground_truth.shape();
  meas.tensors.reserve(count);
  meas.values.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    Tensor a{meas.shape};
    for (auto& x : a.data()) x = rng.normal(0.0, stddev);
    meas.values.push_back(inner(a, ground_truth));
    meas.tensors.push_back(std::move(a));
  }
  return meas;
}

RipEstimate estimate_rip_delta(const MeasurementSet& meas, int rank, int64_t trials,
                               uint64_t seed) {
  if (rank != 1) throw std::invalid_argument("estimate_rip_delta: only rank-one probing supported");
  if (trials < 1) throw std::invalid_argument("estimate_rip_delta: trials must be >= 1");
  RngStream rng{derive_seed(seed, "rip")};
  RipEstimate est;
  est.min_sum = std::numeric_limits<double>::infinity();
  est.max_sum = -est.min_sum;
  est.trials = trials;
  const int N = meas.shape.order();
  for (int64_t t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> vectors(N);
    for (int n = 0; n < N; ++n) {
      vectors[n].resize(meas.shape.dims[n]);
      for (auto& x : vectors[n]) x = rng.normal();
      const double norm = vec_norm(vectors[n]);
      for (auto& x : vectors[n]) x /= norm;
    }
    double sum = 0.0;
    for (const auto& a : meas.tensors) {
      const double ip = inner_with_outer(a, vectors);
      sum += ip * ip;
    }
    est.min_sum = std::min(est.min_sum, sum);
    est.max_sum = std::max(est.max_sum, sum);
    est.delta_lower_bound = std::max(est.delta_lower_bound, std::fabs(sum - 1.0));
  }
  return est;
}

}  // namespace cpdyn
