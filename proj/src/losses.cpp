#include "cpdyn/losses.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace cpdyn {

LossKind make_squared(double coeff) {
  if (coeff != 0.5 && coeff != 1.0) {
    throw std::invalid_argument("squared loss coefficient must be 0.5 or 1.0");
  }
  return SquaredLoss{coeff};
}

LossKind make_huber(double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
  return HuberLoss{delta};
}

double scalar_loss(const LossKind& kind, double z) {
  if (const auto* s = std::get_if<SquaredLoss>(&kind)) {
    return s->coeff * z * z;
  }
  const double d = std::get<HuberLoss>(kind).delta;
  const double az = std::fabs(z);
  if (az < d) return 0.5 * z * z;
  return d * (az - 0.5 * d);
}

double scalar_loss_derivative(const LossKind& kind, double z) {
  if (const auto* s = std::get_if<SquaredLoss>(&kind)) {
    return 2.0 * s->coeff * z;
  }
  const double d = std::get<HuberLoss>(kind).delta;
  if (z > d) return d;
  if (z < -d) return -d;
  return z;
}

void ObservationSet::validate() const {
  if (entries.empty()) throw std::invalid_argument("ObservationSet: empty");
  std::set<std::vector<int64_t>> seen;
  for (const auto& e : entries) {
    if (static_cast<int>(e.index.size()) != shape.order()) {
      throw std::invalid_argument("ObservationSet: index order mismatch");
    }
    for (int n = 0; n < shape.order(); ++n) {
      if (e.index[n] < 0 || e.index[n] >= shape.dims[n]) {
        throw std::invalid_argument("ObservationSet: index out of range");
      }
    }
    if (!seen.insert(e.index).second) {
      throw std::invalid_argument("ObservationSet: duplicate index");
    }
  }
}

double ObservationSet::min_abs_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& e : entries) m = std::min(m, std::fabs(e.value));
  return m;
}

void MeasurementSet::validate() const {
  if (tensors.empty()) throw std::invalid_argument("MeasurementSet: empty");
  if (tensors.size() != values.size()) {
    throw std::invalid_argument("MeasurementSet: tensor/value count mismatch");
  }
  for (const auto& t : tensors) {
    if (!(t.shape() == shape)) throw std::invalid_argument("MeasurementSet: shape mismatch");
  }
}

const Shape& problem_shape(const Problem& p) {
  if (const auto* obs = std::get_if<ObservationSet>(&p)) return obs->shape;
  return std::get<MeasurementSet>(p).shape;
}

double completion_loss(const CPFactorization& f, const ObservationSet& obs,
                       const LossKind& kind) {
  if (!(f.shape == obs.shape)) throw std::invalid_argument("completion_loss: shape mismatch");
  double total = 0.0;
  for (const auto& e : obs.entries) {
    total += scalar_loss(kind, predict(f, e.index) - e.value);
  }
  return total / static_cast<double>(obs.entries.size());
}

double sensing_loss(const CPFactorization& f, const MeasurementSet& meas,
                    const LossKind& kind) {
  if (!(f.shape == meas.shape)) throw std::invalid_argument("sensing_loss: shape mismatch");
  const Tensor we = end_tensor(f);
  double total = 0.0;
  for (size_t i = 0; i < meas.tensors.size(); ++i) {
    total += scalar_loss(kind, inner(meas.tensors[i], we) - meas.values[i]);
  }
  return total / static_cast<double>(meas.tensors.size());
}

double problem_loss(const CPFactorization& f, const Problem& p, const LossKind& kind) {
  if (const auto* obs = std::get_if<ObservationSet>(&p)) return completion_loss(f, *obs, kind);
  return sensing_loss(f, std::get<MeasurementSet>(p), kind);
}

double LossGradient::norm() const {
  if (dense) return frobenius_norm(*dense);
  double s = 0.0;
  for (double v : sparse) s += v * v;
  return std::sqrt(s);
}

Tensor completion_loss_gradient_at(const Tensor& w, const ObservationSet& obs,
                                   const LossKind& kind) {
  Tensor g{w.shape()};
  const double inv = 1.0 / static_cast<double>(obs.entries.size());
  for (const auto& e : obs.entries) {
    g.at(e.index) += inv * scalar_loss_derivative(kind, w.at(e.index) - e.value);
  }
  return g;
}

std::vector<double> completion_lprime_at_origin(const ObservationSet& obs,
                                                const LossKind& kind) {
  std::vector<double> out;
  out.reserve(obs.entries.size());
  const double inv = 1.0 / static_cast<double>(obs.entries.size());
  for (const auto& e : obs.entries) {
    out.push_back(inv * scalar_loss_derivative(kind, -e.value));
  }
  return out;
}

namespace {

// Component-contiguous scratch layout for the gradient hot loops: entry
// (n, i, r) of the weights lives at (mode_offset[n] + i) * R + r, so the
// prefix/suffix recursions run over contiguous component lanes.
struct FlatWorkspace {
  int N = 0;
  int64_t R = 0;
  std::vector<int64_t> mode_offset;
  std::vector<double> w;
  std::vector<double> g;
  std::vector<double> prefix;  // (N + 1) x R

  void load(const CPFactorization& f) {
    N = f.order();
    R = f.rank();
    mode_offset.assign(N + 1, 0);
    for (int n = 0; n < N; ++n) mode_offset[n + 1] = mode_offset[n] + f.shape.dims[n];
    w.assign(static_cast<size_t>(mode_offset[N]) * R, 0.0);
    g.assign(w.size(), 0.0);
    prefix.assign(static_cast<size_t>(N + 1) * R, 0.0);
    for (int64_t r = 0; r < R; ++r) {
      for (int n = 0; n < N; ++n) {
        const auto& v = f.weights[r][n];
        for (size_t i = 0; i < v.size(); ++i) w[(mode_offset[n] + i) * R + r] = v[i];
      }
    }
  }

  // Forward prefix products for one multi-index; returns the prediction.
  double forward(const int64_t* idx) {
    double* __restrict__ pre = prefix.data();
    for (int64_t r = 0; r < R; ++r) pre[r] = 1.0;
    for (int n = 0; n < N; ++n) {
      const double* __restrict__ wn = w.data() + (mode_offset[n] + idx[n]) * R;
      const double* cur = pre + n * R;
      double* nxt = pre + (n + 1) * R;
      for (int64_t r = 0; r < R; ++r) nxt[r] = cur[r] * wn[r];
    }
    double pred = 0.0;
    const double* last = pre + N * R;
    for (int64_t r = 0; r < R; ++r) pred += last[r];
    return pred;
  }

  // Backward pass folding coefficient c into the suffix products and
  // accumulating c * prefix * suffix into the gradient.
  void backward(const int64_t* idx, double c, double* __restrict__ suf) {
    for (int64_t r = 0; r < R; ++r) suf[r] = c;
    for (int n = N - 1; n >= 0; --n) {
      const int64_t off = (mode_offset[n] + idx[n]) * R;
      const double* __restrict__ wn = w.data() + off;
      double* __restrict__ gn = g.data() + off;
      const double* __restrict__ pre = prefix.data() + n * R;
      for (int64_t r = 0; r < R; ++r) {
        gn[r] += pre[r] * suf[r];
        suf[r] *= wn[r];
      }
    }
  }

  GradientBlocks unload(const CPFactorization& f) const {
    GradientBlocks blocks(R);
    for (int64_t r = 0; r < R; ++r) {
      blocks[r].resize(N);
      for (int n = 0; n < N; ++n) {
        auto& v = blocks[r][n];
        v.resize(f.shape.dims[n]);
        for (size_t i = 0; i < v.size(); ++i) v[i] = g[(mode_offset[n] + i) * R + r];
      }
    }
    return blocks;
  }
};

// Completion: one pass over observations computes predictions, loss, the
// sparse loss gradient, and the chain-rule accumulation into weight blocks.
Evaluation evaluate_completion(const CPFactorization& f, const ObservationSet& obs,
                               const LossKind& kind) {
  const int N = f.order();
  const double inv = 1.0 / static_cast<double>(obs.entries.size());

  FlatWorkspace ws;
  ws.load(f);
  std::vector<double> suffix(ws.R);

  // Observation indices flattened once so the hot loop stays pointer-free.
  std::vector<int64_t> indices(obs.entries.size() * N);
  for (size_t oi = 0; oi < obs.entries.size(); ++oi) {
    for (int n = 0; n < N; ++n) indices[oi * N + n] = obs.entries[oi].index[n];
  }

  Evaluation ev;
  ev.loss_grad.sparse.resize(obs.entries.size());
  for (size_t oi = 0; oi < obs.entries.size(); ++oi) {
    const int64_t* idx = indices.data() + oi * N;
    const double z = ws.forward(idx) - obs.entries[oi].value;
    ev.loss += scalar_loss(kind, z);
    const double c = inv * scalar_loss_derivative(kind, z);
    ev.loss_grad.sparse[oi] = c;
    if (c != 0.0) ws.backward(idx, c, suffix.data());
  }
  ev.loss *= inv;
  ev.grad = ws.unload(f);
  ev.grad_sq_norm = grad_blocks_sq_norm(ev.grad);
  return ev;
}

// Sensing: residual pass over measurements, dense loss-gradient tensor,
// then an entrywise chain-rule pass into the weight blocks.
Evaluation evaluate_sensing(const CPFactorization& f, const MeasurementSet& meas,
                            const LossKind& kind) {
  const int N = f.order();
  const double inv = 1.0 / static_cast<double>(meas.tensors.size());

  Evaluation ev;
  const Tensor we = end_tensor(f);
  Tensor g{f.shape};
  // Fused residual + accumulation sweep: each measurement row is dotted
  // against the end tensor and immediately folded into the gradient while
  // still cache-hot (the rows dominate the memory traffic here).
  {
    const int64_t len = we.size();
    const double* __restrict__ we_ptr = we.data().data();
    double* __restrict__ g_ptr = g.data().data();
    for (size_t i = 0; i < meas.tensors.size(); ++i) {
      const double* __restrict__ row = meas.tensors[i].data().data();
      double z = -meas.values[i];
      for (int64_t j = 0; j < len; ++j) z += row[j] * we_ptr[j];
      ev.loss += scalar_loss(kind, z);
      const double c = inv * scalar_loss_derivative(kind, z);
      if (c != 0.0) {
        for (int64_t j = 0; j < len; ++j) g_ptr[j] += c * row[j];
      }
    }
  }
  ev.loss *= inv;

  FlatWorkspace ws;
  ws.load(f);
  std::vector<double> suffix(ws.R);
  std::vector<int64_t> idx(N, 0);
  for (int64_t flat = 0; flat < g.size(); ++flat) {
    const double gv = g[flat];
    if (gv != 0.0) {
      ws.forward(idx.data());
      ws.backward(idx.data(), gv, suffix.data());
    }
    for (int n = N - 1; n >= 0; --n) {
      if (++idx[n] < f.shape.dims[n]) break;
      idx[n] = 0;
    }
  }
  ev.loss_grad.dense = std::move(g);
  ev.grad = ws.unload(f);
  ev.grad_sq_norm = grad_blocks_sq_norm(ev.grad);
  return ev;
}

}  // namespace

Evaluation evaluate_objective(const CPFactorization& f, const Problem& p,
                              const LossKind& kind) {
  if (const auto* obs = std::get_if<ObservationSet>(&p)) {
    if (!(f.shape == obs->shape)) throw std::invalid_argument("evaluate: shape mismatch");
    return evaluate_completion(f, *obs, kind);
  }
  const auto& meas = std::get<MeasurementSet>(p);
  if (!(f.shape == meas.shape)) throw std::invalid_argument("evaluate: shape mismatch");
  return evaluate_sensing(f, meas, kind);
}

LossGradient loss_gradient_tensor(const CPFactorization& f, const Problem& p,
                                  const LossKind& kind) {
  if (const auto* obs = std::get_if<ObservationSet>(&p)) {
    LossGradient lg;
    lg.sparse.reserve(obs->entries.size());
    const double inv = 1.0 / static_cast<double>(obs->entries.size());
    for (const auto& e : obs->entries) {
      lg.sparse.push_back(inv * scalar_loss_derivative(kind, predict(f, e.index) - e.value));
    }
    return lg;
  }
  const auto& meas = std::get<MeasurementSet>(p);
  const Tensor we = end_tensor(f);
  Tensor g{f.shape};
  const double inv = 1.0 / static_cast<double>(meas.tensors.size());
  for (size_t i = 0; i < meas.tensors.size(); ++i) {
    const double c = inv * scalar_loss_derivative(kind, inner(meas.tensors[i], we) - meas.values[i]);
    if (c != 0.0) add_scaled(g, meas.tensors[i], c);
  }
  LossGradient lg;
  lg.dense = std::move(g);
  return lg;
}

GradientBlocks objective_gradient(const CPFactorization& f, const Problem& p,
                                  const LossKind& kind) {
  return evaluate_objective(f, p, kind).grad;
}

double grad_blocks_sq_norm(const GradientBlocks& g) {
  double s = 0.0;
  for (const auto& comp : g) {
    for (const auto& v : comp) {
      for (double x : v) s += x * x;
    }
  }
  return s;
}

}  // namespace cpdyn
