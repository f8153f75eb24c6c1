#include "cpdyn/probe.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define CPDYN_PROBE_AVX2 1
#endif

#include "cpdyn/rng.hpp"

namespace cpdyn {

namespace {

uint32_t read_be32(const std::vector<unsigned char>& buf, size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw std::runtime_error(path + ": truncated at byte offset " + std::to_string(offset));
  }
  return (static_cast<uint32_t>(buf[offset]) << 24) | (static_cast<uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<uint32_t>(buf[offset + 2]) << 8) | static_cast<uint32_t>(buf[offset + 3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

RawDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 2051) {
    throw std::runtime_error(images_path + ": bad magic " + std::to_string(img_magic) +
                             " (expected 2051)");
  }
  const uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 2049) {
    throw std::runtime_error(labels_path + ": bad magic " + std::to_string(lab_magic) +
                             " (expected 2049)");
  }
  RawDataset ds;
  ds.count = read_be32(img, 4, images_path);
  ds.rows = static_cast<int>(read_be32(img, 8, images_path));
  ds.cols = static_cast<int>(read_be32(img, 12, images_path));
  const int64_t lab_count = read_be32(lab, 4, labels_path);
  if (lab_count != ds.count) {
    throw std::runtime_error("image/label count mismatch: " + std::to_string(ds.count) +
                             " vs " + std::to_string(lab_count));
  }
  const size_t img_bytes = 16 + static_cast<size_t>(ds.count) * ds.rows * ds.cols;
  if (img.size() < img_bytes) {
    throw std::runtime_error(images_path + ": truncated at byte offset " +
                             std::to_string(img.size()) + " (need " + std::to_string(img_bytes) + ")");
  }
  const size_t lab_bytes = 8 + static_cast<size_t>(ds.count);
  if (lab.size() < lab_bytes) {
    throw std::runtime_error(labels_path + ": truncated at byte offset " +
                             std::to_string(lab.size()) + " (need " + std::to_string(lab_bytes) + ")");
  }
  ds.pixels.assign(img.begin() + 16, img.begin() + static_cast<int64_t>(img_bytes));
  ds.labels.assign(lab.begin() + 8, lab.begin() + static_cast<int64_t>(lab_bytes));
  for (uint8_t l : ds.labels) {
    if (l > 9) throw std::runtime_error(labels_path + ": label out of range 0-9");
  }
  return ds;
}

BinaryDataset binarize(const RawDataset& raw) {
  BinaryDataset ds;
  ds.count = raw.count;
  ds.n_inputs = raw.rows * raw.cols;
  ds.labels = raw.labels;
  ds.bits.resize(raw.pixels.size());
  for (size_t i = 0; i < raw.pixels.size(); ++i) {
    ds.bits[i] = raw.pixels[i] >= 128 ? 1 : 0;
  }
  return ds;
}

const char* to_string(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::original: return "original";
    case ProbeVariant::rand_image: return "rand_image";
    case ProbeVariant::rand_label: return "rand_label";
  }
  return "?";
}

ProbeData make_variant(const ProbeData& base, ProbeVariant variant, uint64_t seed) {
  ProbeData out = base;
  if (variant == ProbeVariant::original) return out;
  if (variant == ProbeVariant::rand_image) {
    RngStream rng{derive_seed(seed, "rand_image")};
    for (auto& b : out.train.bits) b = static_cast<uint8_t>(rng.below(2));
    for (auto& b : out.test.bits) b = static_cast<uint8_t>(rng.below(2));
    return out;
  }
  RngStream train_rng{derive_seed(seed, "rand_label_train")};
  RngStream test_rng{derive_seed(seed, "rand_label_test")};
  train_rng.shuffle(out.train.labels);
  test_rng.shuffle(out.test.labels);
  return out;
}

BinaryDataset subsample(const BinaryDataset& d, int64_t n, uint64_t seed) {
  if (n >= d.count) return d;
  if (n < 1) throw std::invalid_argument("subsample: n must be >= 1");
  RngStream rng{derive_seed(seed, "subsample")};
  std::vector<int64_t> idx(d.count);
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(d.count - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  BinaryDataset out;
  out.count = n;
  out.n_inputs = d.n_inputs;
  out.bits.resize(static_cast<size_t>(n) * d.n_inputs);
  out.labels.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(out.bits.data() + i * d.n_inputs, d.bits.data() + idx[i] * d.n_inputs,
                d.n_inputs);
    out.labels[i] = d.labels[idx[i]];
  }
  return out;
}

namespace {

// Four samples per block: one AVX register wide, and the per-component
// prefix buffer (N+1) x 4 doubles stays L1-resident. Partial blocks are
// padded with repeats of the first row under zero residual coefficients,
// so every loop below has a constant trip count the compiler can vectorize.
constexpr int kLanes = 4;

// Forward products for one component over a block. pre has layout
// (N+1) x kLanes; pre[n] holds the product of the first n selected weights.
inline void forward_block(const double* __restrict__ w, int64_t n_inputs,
                          const uint8_t* const* rows, double* __restrict__ pre) {
  for (int l = 0; l < kLanes; ++l) pre[l] = 1.0;
  for (int64_t n = 0; n < n_inputs; ++n) {
    const double w0 = w[2 * n];
    const double d = w[2 * n + 1] - w0;
    const double* cur = pre + n * kLanes;
    double* nxt = pre + (n + 1) * kLanes;
    for (int l = 0; l < kLanes; ++l) {
      nxt[l] = cur[l] * (w0 + d * static_cast<double>(rows[l][n]));
    }
  }
}

// Input layout specialized to one training split: pixels that are constant
// across the split contribute a sample-independent factor per mode (their
// gradients reduce to one scalar per mode), while the varying pixels are
// packed contiguously as doubles for the per-sample loops.
struct TaskLayout {
  int64_t n_var = 0;
  std::vector<int32_t> var_modes;
  std::vector<int32_t> const_modes;
  std::vector<uint8_t> const_vals;
  std::vector<uint8_t> packed;  // count x n_var bit values

  void build(const BinaryDataset& ds) {
    const int64_t N = ds.n_inputs;
    var_modes.clear();
    const_modes.clear();
    const_vals.clear();
    for (int64_t n = 0; n < N; ++n) {
      const uint8_t first = ds.bits[n];
      bool constant = true;
      for (int64_t s = 1; s < ds.count && constant; ++s) {
        constant = ds.bits[s * N + n] == first;
      }
      if (constant) {
        const_modes.push_back(static_cast<int32_t>(n));
        const_vals.push_back(first);
      } else {
        var_modes.push_back(static_cast<int32_t>(n));
      }
    }
    n_var = static_cast<int64_t>(var_modes.size());
    packed.resize(static_cast<size_t>(ds.count) * n_var);
    for (int64_t s = 0; s < ds.count; ++s) {
      const uint8_t* row = ds.bits.data() + s * N;
      uint8_t* out = packed.data() + s * n_var;
      for (int64_t j = 0; j < n_var; ++j) out[j] = row[var_modes[j]];
    }
  }
};

// Fast mini-batch pass for weights with no exact zeros: the gradient of the
// product with respect to the mode-n factor is prediction / value_n, so one
// forward pass per component suffices and no prefix buffer is touched.
// Returns the sum of squared scaled residuals; grads must be zeroed.
double batch_pass_division(const BinaryDataset& ds, const TaskLayout& layout,
                           std::span<const int64_t> batch, int digit,
                           std::span<const double> w, int64_t k,
                           std::vector<double>& scratch, std::span<double> grads) {
  const int64_t N = ds.n_inputs;
  const int64_t V = layout.n_var;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double sq_sum = 0.0;

  // Per-component packed views: variable-mode weights/reciprocals plus the
  // product over constant modes, refreshed once per batch.
  scratch.resize(static_cast<size_t>(k) * V * 4 + k);
  double* wpack = scratch.data();                                    // k x V x {w0, d}
  double* ipack = scratch.data() + static_cast<size_t>(k) * V * 2;   // k x V x {i0, di}
  double* cprod = scratch.data() + static_cast<size_t>(k) * V * 4;   // k
  for (int64_t r = 0; r < k; ++r) {
    const double* wr = w.data() + r * N * 2;
    for (int64_t j = 0; j < V; ++j) {
      const int64_t n = layout.var_modes[j];
      const double w0 = wr[2 * n];
      const double w1 = wr[2 * n + 1];
      wpack[(r * V + j) * 2] = w0;
      wpack[(r * V + j) * 2 + 1] = w1 - w0;
      ipack[(r * V + j) * 2] = 1.0 / w0;
      ipack[(r * V + j) * 2 + 1] = 1.0 / w1 - 1.0 / w0;
    }
    double c = 1.0;
    for (size_t m = 0; m < layout.const_modes.size(); ++m) {
      c *= wr[2 * layout.const_modes[m] + layout.const_vals[m]];
    }
    cprod[r] = c;
  }

  const uint8_t* rows[kLanes];
  double err[kLanes];
  std::vector<double> preds(static_cast<size_t>(k) * kLanes);
  std::vector<double> err_pred_sum(k, 0.0);
  std::vector<uint8_t> lane_x(static_cast<size_t>(V) * kLanes);  // mode-major block
  // Vector accumulators for the variable-mode gradients; the horizontal
  // reductions happen once per batch instead of once per block.
  std::vector<double> gacc(static_cast<size_t>(k) * V * 2 * kLanes, 0.0);
  for (size_t start = 0; start < batch.size(); start += kLanes) {
    const int lanes = static_cast<int>(std::min<size_t>(kLanes, batch.size() - start));
    for (int l = 0; l < kLanes; ++l) {
      rows[l] = layout.packed.data() + batch[start + std::min<size_t>(l, lanes - 1)] * V;
    }
    // Interleave the block's samples so every loop below is unit-stride
    // across the lanes; the byte buffer stays cache-resident and the
    // widening to doubles happens in-register.
    {
      uint8_t* __restrict__ xb = lane_x.data();
      for (int64_t j = 0; j < V; ++j) {
        for (int l = 0; l < kLanes; ++l) xb[j * kLanes + l] = rows[l][j];
      }
    }
    const uint8_t* __restrict__ xb = lane_x.data();

#ifdef CPDYN_PROBE_AVX2
    for (int64_t r = 0; r < k; ++r) {
      const double* __restrict__ wr = wpack + r * V * 2;
      __m256d acc = _mm256_set1_pd(cprod[r]);
      for (int64_t j = 0; j < V; ++j) {
        const __m256d w0 = _mm256_set1_pd(wr[2 * j]);
        const __m256d d = _mm256_set1_pd(wr[2 * j + 1]);
        uint32_t quad;
        std::memcpy(&quad, xb + j * kLanes, 4);
        const __m256d x =
            _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(_mm_cvtsi32_si128(static_cast<int>(quad))));
        acc = _mm256_mul_pd(acc, _mm256_fmadd_pd(d, x, w0));
      }
      _mm256_storeu_pd(preds.data() + r * kLanes, acc);
    }
#else
    for (int64_t r = 0; r < k; ++r) {
      const double* __restrict__ wr = wpack + r * V * 2;
      double acc[kLanes];
      for (int l = 0; l < kLanes; ++l) acc[l] = cprod[r];
      for (int64_t j = 0; j < V; ++j) {
        const double w0 = wr[2 * j];
        const double d = wr[2 * j + 1];
        for (int l = 0; l < kLanes; ++l) {
          acc[l] *= w0 + d * static_cast<double>(xb[j * kLanes + l]);
        }
      }
      for (int l = 0; l < kLanes; ++l) preds[r * kLanes + l] = acc[l];
    }
#endif
    for (int l = 0; l < kLanes; ++l) {
      double pred = 0.0;
      for (int64_t r = 0; r < k; ++r) pred += preds[r * kLanes + l];
      if (l >= lanes) {
        err[l] = 0.0;
        continue;
      }
      const double target = ds.labels[batch[start + l]] == digit ? 2.0 : 0.0;
      const double z = pred - target;
      sq_sum += z * z;
      err[l] = 2.0 * inv_b * z;
    }
#ifdef CPDYN_PROBE_AVX2
    for (int64_t r = 0; r < k; ++r) {
      const double* __restrict__ inv = ipack + r * V * 2;
      double* __restrict__ ga = gacc.data() + static_cast<size_t>(r) * V * 2 * kLanes;
      double c[kLanes];
      for (int l = 0; l < kLanes; ++l) c[l] = err[l] * preds[r * kLanes + l];
      for (int l = 0; l < kLanes; ++l) err_pred_sum[r] += c[l];
      const __m256d cv = _mm256_loadu_pd(c);
      for (int64_t j = 0; j < V; ++j) {
        const __m256d i0 = _mm256_set1_pd(inv[2 * j]);
        const __m256d di = _mm256_set1_pd(inv[2 * j + 1]);
        uint32_t quad;
        std::memcpy(&quad, xb + j * kLanes, 4);
        const __m256d x =
            _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(_mm_cvtsi32_si128(static_cast<int>(quad))));
        const __m256d t = _mm256_mul_pd(cv, _mm256_fmadd_pd(di, x, i0));
        double* cell = ga + j * 2 * kLanes;
        _mm256_storeu_pd(cell, _mm256_add_pd(_mm256_loadu_pd(cell), t));
        const __m256d tx = _mm256_mul_pd(t, x);
        _mm256_storeu_pd(cell + kLanes, _mm256_add_pd(_mm256_loadu_pd(cell + kLanes), tx));
      }
    }
#else
    for (int64_t r = 0; r < k; ++r) {
      const double* __restrict__ inv = ipack + r * V * 2;
      double* __restrict__ ga = gacc.data() + static_cast<size_t>(r) * V * 2 * kLanes;
      double c[kLanes];
      for (int l = 0; l < kLanes; ++l) c[l] = err[l] * preds[r * kLanes + l];
      for (int l = 0; l < kLanes; ++l) err_pred_sum[r] += c[l];
      for (int64_t j = 0; j < V; ++j) {
        const double i0 = inv[2 * j];
        const double di = inv[2 * j + 1];
        double* cell = ga + j * 2 * kLanes;
        for (int l = 0; l < kLanes; ++l) {
          const double x = static_cast<double>(xb[j * kLanes + l]);
          const double t = c[l] * (i0 + di * x);
          cell[l] += t;
          cell[kLanes + l] += t * x;
        }
      }
    }
#endif
  }
  // Fold the lane accumulators into the gradient cells: lane sums give
  // (sum t) and (sum t*x); the x=0 cell is their difference.
  for (int64_t r = 0; r < k; ++r) {
    const double* ga = gacc.data() + static_cast<size_t>(r) * V * 2 * kLanes;
    double* gr = grads.data() + r * N * 2;
    for (int64_t j = 0; j < V; ++j) {
      const double* cell = ga + j * 2 * kLanes;
      double total = 0.0, g1 = 0.0;
      for (int l = 0; l < kLanes; ++l) {
        total += cell[l];
        g1 += cell[kLanes + l];
      }
      const int64_t n = layout.var_modes[j];
      gr[2 * n] += total - g1;
      gr[2 * n + 1] += g1;
    }
  }
  // Constant modes: every sample selects the same weight, so the chain rule
  // reduces to the shared residual-times-prediction sum over the batch.
  for (int64_t r = 0; r < k; ++r) {
    const double* wr = w.data() + r * N * 2;
    double* gr = grads.data() + r * N * 2;
    for (size_t m = 0; m < layout.const_modes.size(); ++m) {
      const int64_t n = layout.const_modes[m];
      const int sel = layout.const_vals[m];
      gr[2 * n + sel] += err_pred_sum[r] / wr[2 * n + sel];
    }
  }
  return sq_sum;
}

// General pass via prefix/suffix products; valid for any weights (used when
// some weight is exactly zero and the division form is undefined).
double batch_pass(const BinaryDataset& ds, std::span<const int64_t> batch, int digit,
                  std::span<const double> w, int64_t k, std::vector<double>& pre_buf,
                  std::span<double> grads) {
  const int64_t N = ds.n_inputs;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double sq_sum = 0.0;

  const uint8_t* rows[kLanes];
  double err[kLanes];
  for (size_t start = 0; start < batch.size(); start += kLanes) {
    const int lanes = static_cast<int>(std::min<size_t>(kLanes, batch.size() - start));
    for (int l = 0; l < kLanes; ++l) {
      rows[l] = ds.bits.data() + batch[start + std::min<size_t>(l, lanes - 1)] * N;
    }

    for (int64_t r = 0; r < k; ++r) {
      forward_block(w.data() + r * N * 2, N, rows, pre_buf.data() + r * (N + 1) * kLanes);
    }
    for (int l = 0; l < kLanes; ++l) {
      double pred = 0.0;
      for (int64_t r = 0; r < k; ++r) pred += pre_buf[r * (N + 1) * kLanes + N * kLanes + l];
      if (l >= lanes) {
        err[l] = 0.0;  // padded lane: contributes nothing anywhere below
        continue;
      }
      const double target = ds.labels[batch[start + l]] == digit ? 2.0 : 0.0;
      const double z = pred - target;
      sq_sum += z * z;
      err[l] = 2.0 * inv_b * z;
    }
    // Backward: suffix products folded with the residual coefficient. For
    // each mode the two gradient cells are reductions over the lanes.
    for (int64_t r = 0; r < k; ++r) {
      const double* __restrict__ pre = pre_buf.data() + r * (N + 1) * kLanes;
      const double* __restrict__ wr = w.data() + r * N * 2;
      double* __restrict__ gr = grads.data() + r * N * 2;
      double suf[kLanes];
      for (int l = 0; l < kLanes; ++l) suf[l] = err[l];
      for (int64_t n = N - 1; n >= 0; --n) {
        const double w0 = wr[2 * n];
        const double d = wr[2 * n + 1] - w0;
        const double* cur = pre + n * kLanes;
        double total = 0.0, g1 = 0.0;
        for (int l = 0; l < kLanes; ++l) {
          const double x = static_cast<double>(rows[l][n]);
          const double t = cur[l] * suf[l];
          total += t;
          g1 += t * x;
          suf[l] *= w0 + d * x;
        }
        gr[2 * n] += total - g1;
        gr[2 * n + 1] += g1;
      }
    }
  }
  return sq_sum;
}

// Mean squared error of halved predictions over a whole split, optionally
// clipping each per-sample squared error at 1.
double eval_split(const BinaryDataset& ds, int digit, std::span<const double> w, int64_t k,
                  std::vector<double>& pre_buf, bool clip, bool* finite) {
  const int64_t N = ds.n_inputs;
  double total = 0.0;
  const uint8_t* rows[kLanes];
  for (int64_t start = 0; start < ds.count; start += kLanes) {
    const int lanes = static_cast<int>(std::min<int64_t>(kLanes, ds.count - start));
    for (int l = 0; l < kLanes; ++l) {
      rows[l] = ds.bits.data() + (start + std::min<int64_t>(l, lanes - 1)) * N;
    }
    for (int64_t r = 0; r < k; ++r) {
      forward_block(w.data() + r * N * 2, N, rows, pre_buf.data() + r * (N + 1) * kLanes);
    }
    for (int l = 0; l < lanes; ++l) {
      double pred = 0.0;
      for (int64_t r = 0; r < k; ++r) pred += pre_buf[r * (N + 1) * kLanes + N * kLanes + l];
      if (!std::isfinite(pred)) *finite = false;
      const double y = ds.labels[start + l] == digit ? 1.0 : 0.0;
      double e = pred / 2.0 - y;
      double sq = e * e;
      if (clip) sq = std::min(sq, 1.0);
      total += sq;
    }
  }
  return total / static_cast<double>(ds.count);
}

}  // namespace

ProbeFitResult fit_rank_k(const ProbeData& data, int digit, int64_t k, const AdamConfig& cfg,
                          uint64_t seed) {
  if (k < 1) throw std::invalid_argument("fit_rank_k: k must be >= 1");
  if (data.train.count < 1) throw std::invalid_argument("fit_rank_k: empty training set");
  const int64_t N = data.train.n_inputs;

  std::vector<double> w(static_cast<size_t>(k) * N * 2);
  {
    RngStream init_rng{derive_seed(seed, "probe_init")};
    for (auto& x : w) x = init_rng.normal(1.0, 1e-3);
  }
  std::vector<double> grads(w.size(), 0.0);
  std::vector<double> pre_buf(static_cast<size_t>(k) * (N + 1) * kLanes);
  std::vector<double> scratch;
  TaskLayout layout;
  layout.build(data.train);
  AdamOptimizer adam(cfg, w.size());

  RngStream shuffle_rng{derive_seed(seed, "probe_shuffle")};
  std::vector<int64_t> perm(data.train.count);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_rng.shuffle(perm);

  const int64_t bsize = std::min<int64_t>(cfg.batch_size, data.train.count);
  int64_t cursor = 0;

  ProbeFitResult res;
  res.stop = StopReason::max_iters;
  while (res.iters < cfg.max_iters) {
    if (cursor + bsize > data.train.count) {
      shuffle_rng.shuffle(perm);
      cursor = 0;
    }
    std::span<const int64_t> batch(perm.data() + cursor, static_cast<size_t>(bsize));

    std::fill(grads.begin(), grads.end(), 0.0);
    bool any_zero = false;
    for (double x : w) any_zero = any_zero || x == 0.0;
    const double sq_sum =
        any_zero ? batch_pass(data.train, batch, digit, w, k, pre_buf, grads)
                 : batch_pass_division(data.train, layout, batch, digit, w, k, scratch, grads);
    const double loss = sq_sum / static_cast<double>(bsize);
    if (!std::isfinite(loss)) {
      res.stop = StopReason::non_finite;
      break;
    }
    if (loss < cfg.stop_loss) {
      res.stop = StopReason::loss_threshold;
      break;
    }
    adam.step(w, grads);
    cursor += bsize;
    ++res.iters;
  }

  bool finite = true;
  res.train_mse = eval_split(data.train, digit, w, k, pre_buf, false, &finite);
  res.test_mse_clipped = eval_split(data.test, digit, w, k, pre_buf, true, &finite);
  if (!finite) res.stop = StopReason::non_finite;

  res.model.shape = Shape(std::vector<int64_t>(N, 2));
  res.model.weights.resize(k);
  for (int64_t r = 0; r < k; ++r) {
    res.model.weights[r].resize(N);
    for (int64_t n = 0; n < N; ++n) {
      res.model.weights[r][n] = {w[(r * N + n) * 2], w[(r * N + n) * 2 + 1]};
    }
  }
  return res;
}

RidgeSolver::RidgeSolver(const BinaryDataset& train, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("RidgeSolver: alpha must be positive");
  n_ = train.n_inputs;
  count_ = train.count;
  const int n = n_;

  // Gram matrix of the binary design via per-sample active-pixel lists.
  std::vector<double> gram(static_cast<size_t>(n) * n, 0.0);
  std::vector<int> active;
  active.reserve(n);
  for (int64_t s = 0; s < count_; ++s) {
    const uint8_t* row = train.bits.data() + s * n;
    active.clear();
    for (int i = 0; i < n; ++i) {
      if (row[i]) active.push_back(i);
    }
    for (size_t a = 0; a < active.size(); ++a) {
      double* gram_row = gram.data() + static_cast<size_t>(active[a]) * n;
      for (size_t b = a; b < active.size(); ++b) gram_row[active[b]] += 1.0;
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) gram[static_cast<size_t>(i) * n + j] = gram[static_cast<size_t>(j) * n + i];
  }

  col_mean_.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    col_mean_[i] = gram[static_cast<size_t>(i) * n + i] / static_cast<double>(count_);
  }

  // Centered normal equations: A = X^T X - count * mean mean^T + alpha I.
  chol_ = std::move(gram);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      chol_[static_cast<size_t>(i) * n + j] -= static_cast<double>(count_) * col_mean_[i] * col_mean_[j];
    }
    chol_[static_cast<size_t>(i) * n + i] += alpha;
  }

  // In-place lower Cholesky.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = chol_[static_cast<size_t>(i) * n + j];
      for (int m = 0; m < j; ++m) {
        s -= chol_[static_cast<size_t>(i) * n + m] * chol_[static_cast<size_t>(j) * n + m];
      }
      if (i == j) {
        if (!(s > 0.0)) throw std::runtime_error("RidgeSolver: matrix not positive definite");
        chol_[static_cast<size_t>(i) * n + i] = std::sqrt(s);
      } else {
        chol_[static_cast<size_t>(i) * n + j] = s / chol_[static_cast<size_t>(j) * n + j];
      }
    }
    for (int j = i + 1; j < n; ++j) chol_[static_cast<size_t>(i) * n + j] = 0.0;
  }
}

RidgeResult RidgeSolver::solve(const ProbeData& data, int digit) const {
  const int n = n_;
  const BinaryDataset& train = data.train;
  if (train.count != count_ || train.n_inputs != n) {
    throw std::invalid_argument("RidgeSolver: dataset does not match the prepared Gram matrix");
  }

  double y_mean = 0.0;
  std::vector<double> rhs(n, 0.0);
  for (int64_t s = 0; s < count_; ++s) {
    if (train.labels[s] != digit) continue;
    y_mean += 1.0;
    const uint8_t* row = train.bits.data() + s * n;
    for (int i = 0; i < n; ++i) {
      if (row[i]) rhs[i] += 1.0;
    }
  }
  y_mean /= static_cast<double>(count_);
  for (int i = 0; i < n; ++i) rhs[i] -= static_cast<double>(count_) * col_mean_[i] * y_mean;

  // Forward/back substitution with the stored factor.
  std::vector<double> z(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = rhs[i];
    for (int m = 0; m < i; ++m) s -= chol_[static_cast<size_t>(i) * n + m] * z[m];
    z[i] = s / chol_[static_cast<size_t>(i) * n + i];
  }
  std::vector<double> wvec(n, 0.0);
  for (int i = n - 1; i >= 0; --i) {
    double s = z[i];
    for (int m = i + 1; m < n; ++m) s -= chol_[static_cast<size_t>(m) * n + i] * wvec[m];
    wvec[i] = s / chol_[static_cast<size_t>(i) * n + i];
  }
  double intercept = y_mean;
  for (int i = 0; i < n; ++i) intercept -= col_mean_[i] * wvec[i];

  auto eval = [&](const BinaryDataset& ds, bool clip) {
    double total = 0.0;
    for (int64_t s = 0; s < ds.count; ++s) {
      const uint8_t* row = ds.bits.data() + s * ds.n_inputs;
      double pred = intercept;
      for (int i = 0; i < ds.n_inputs; ++i) {
        if (row[i]) pred += wvec[i];
      }
      const double y = ds.labels[s] == digit ? 1.0 : 0.0;
      double sq = (pred - y) * (pred - y);
      if (clip) sq = std::min(sq, 1.0);
      total += sq;
    }
    return total / static_cast<double>(ds.count);
  };

  RidgeResult res;
  res.train_mse = eval(train, false);
  res.test_mse_clipped = eval(data.test, true);
  return res;
}

RidgeResult ridge_baseline(const ProbeData& data, int digit, double alpha) {
  return RidgeSolver(data.train, alpha).solve(data, digit);
}

std::vector<ProbeRow> run_probe(const ProbeData& original,
                                std::span<const ProbeVariant> variants,
                                std::span<const int> digits,
                                std::span<const int64_t> ranks, const AdamConfig& cfg,
                                uint64_t seed, int jobs) {
  std::vector<ProbeData> datasets;
  datasets.reserve(variants.size());
  for (ProbeVariant v : variants) {
    datasets.push_back(make_variant(original, v, derive_seed(seed, to_string(v))));
  }

  struct Task {
    size_t variant_index;
    int digit;
    int64_t k;
  };
  std::vector<Task> tasks;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    for (int d : digits) {
      for (int64_t k : ranks) tasks.push_back({vi, d, k});
    }
  }

  std::vector<ProbeRow> rows(tasks.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      const ProbeVariant v = variants[t.variant_index];
      const uint64_t task_seed =
          derive_seed(seed, std::string("task:") + to_string(v) + ":" +
                                std::to_string(t.digit) + ":" + std::to_string(t.k));
      const auto start = std::chrono::steady_clock::now();
      const ProbeFitResult fit = fit_rank_k(datasets[t.variant_index], t.digit, t.k, cfg, task_seed);
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      rows[i] = {v, t.digit, t.k, fit.train_mse, fit.test_mse_clipped, fit.iters, elapsed.count()};
    }
  };

  const int n_threads = std::max(1, jobs);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

}  // namespace cpdyn
