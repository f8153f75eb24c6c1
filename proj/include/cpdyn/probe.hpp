#pragma once

#include <span>
#include <string>

#include "cpdyn/optimizer.hpp"

namespace cpdyn {

struct RawDataset {
  int64_t count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> pixels;  // count * rows * cols, row-major per image
  std::vector<uint8_t> labels;  // count, values 0..9
};

// Parses the big-endian IDX container pair (magic 2051 for u8 images,
// 2049 for labels). Truncation errors report the offending byte offset.
RawDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct BinaryDataset {
  int64_t count = 0;
  int n_inputs = 0;
  std::vector<uint8_t> bits;  // count * n_inputs, values 0/1
  std::vector<uint8_t> labels;
};

// Grayscale -> {0,1} by rounding pixel/255 to the nearest integer
// (threshold 127.5).
BinaryDataset binarize(const RawDataset& raw);

enum class ProbeVariant { original, rand_image, rand_label };
const char* to_string(ProbeVariant v);

struct ProbeData {
  BinaryDataset train;
  BinaryDataset test;
};

// original: identity. rand_image: every pixel replaced by a uniform {0,1}
// draw. rand_label: labels permuted independently within train and test.
ProbeData make_variant(const ProbeData& base, ProbeVariant variant, uint64_t seed);

// Uniform subset of n samples, original order preserved.
BinaryDataset subsample(const BinaryDataset& d, int64_t n, uint64_t seed);

struct ProbeFitResult {
  double train_mse = 0.0;          // unscaled predictions vs 0/1 labels
  double test_mse_clipped = 0.0;   // per-sample squared errors clipped at 1
  int64_t iters = 0;
  StopReason stop = StopReason::max_iters;
  CPFactorization model;           // shape (2,...,2), R = k
};

// Fits the one-vs-all task for `digit` with a k-component factorization
// predictor via mini-batch Adam on targets scaled by two. Weights start at
// N(1, 1e-3^2); predictions are halved for evaluation.
ProbeFitResult fit_rank_k(const ProbeData& data, int digit, int64_t k,
                          const AdamConfig& cfg, uint64_t seed);

struct RidgeResult {
  double train_mse = 0.0;
  double test_mse_clipped = 0.0;
};

// Ridge regression on the binary pixels with an unpenalized intercept:
// columns and targets are centered, (Xc^T Xc + alpha I) w = Xc^T yc is
// solved by Cholesky, and the intercept is recovered from the means. The
// Gram matrix and factor are label-independent, so one solver serves all
// ten digits of a dataset.
class RidgeSolver {
 public:
  RidgeSolver(const BinaryDataset& train, double alpha);
  RidgeResult solve(const ProbeData& data, int digit) const;

 private:
  int n_ = 0;
  int64_t count_ = 0;
  std::vector<double> chol_;      // lower-triangular factor, row-major
  std::vector<double> col_mean_;
};

RidgeResult ridge_baseline(const ProbeData& data, int digit, double alpha = 0.5);

struct ProbeRow {
  ProbeVariant variant;
  int digit = 0;
  int64_t k = 0;
  double train_mse = 0.0;
  double test_mse_clipped = 0.0;
  int64_t iters = 0;
  double wall_seconds = 0.0;
};

// Full grid of variant x digit x rank fits. Each task is an independent,
// seeded job; `jobs` > 1 runs them on a thread pool without changing any
// result.
std::vector<ProbeRow> run_probe(const ProbeData& original,
                                std::span<const ProbeVariant> variants,
                                std::span<const int> digits,
                                std::span<const int64_t> ranks, const AdamConfig& cfg,
                                uint64_t seed, int jobs);

}  // namespace cpdyn
