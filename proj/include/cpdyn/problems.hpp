#pragma once

#include <cstdint>

#include "cpdyn/losses.hpp"
#include "cpdyn/tensor.hpp"

namespace cpdyn {

struct GroundTruthSpec {
  Shape shape;
  int64_t rank = 1;
  uint64_t seed = 0;
  bool normalize = true;  // rescale to unit Frobenius norm
};

// Sum of `rank` outer products with i.i.d. standard normal vector entries,
// optionally normalized to unit Frobenius norm.
Tensor generate_ground_truth(const GroundTruthSpec& spec);

// `count` distinct indices drawn uniformly without repetition, valued from
// the ground truth.
ObservationSet sample_observations(const Tensor& ground_truth, int64_t count, uint64_t seed);

// Gaussian measurement tensors with entry stddev (prod dims)^{-1/2}, so each
// tensor has expected squared Frobenius norm 1; values are exact inner
// products with the ground truth.
MeasurementSet sample_measurements(const Tensor& ground_truth, int64_t count, uint64_t seed);

// Sampled lower bound on the 1-RIP parameter: max deviation of
// sum_i <A_i, W>^2 from 1 over random unit-norm rank-one tensors W.
struct RipEstimate {
  double delta_lower_bound = 0.0;
  double min_sum = 0.0;
  double max_sum = 0.0;
  int64_t trials = 0;
};

RipEstimate estimate_rip_delta(const MeasurementSet& meas, int rank, int64_t trials,
                               uint64_t seed);

}  // namespace cpdyn
