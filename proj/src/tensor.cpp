#include "cpdyn/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cpdyn {

Shape::Shape(std::vector<int64_t> d) : dims(std::move(d)) {
  if (dims.empty()) throw std::invalid_argument("Shape: order must be >= 1");
  for (int64_t v : dims) {
    if (v < 1) throw std::invalid_argument("Shape: all dims must be >= 1");
  }
}

int64_t Shape::element_count() const {
  int64_t total = 1;
  for (int64_t v : dims) {
    if (total > std::numeric_limits<int64_t>::max() / v) {
      throw std::overflow_error("Shape: element count exceeds int64");
    }
    total *= v;
  }
  return total;
}

bool Shape::materializable() const {
  int64_t total = 1;
  for (int64_t v : dims) {
    if (total > std::numeric_limits<int64_t>::max() / v) return false;
    total *= v;
  }
  return true;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_.element_count()), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_.element_count()) {
    throw std::invalid_argument("Tensor: data length does not match shape");
  }
}

int64_t Tensor::flat_index(std::span<const int64_t> index) const {
  if (static_cast<int>(index.size()) != order()) {
    throw std::invalid_argument("Tensor: index order mismatch");
  }
  int64_t flat = 0;
  for (int n = 0; n < order(); ++n) {
    const int64_t i = index[n];
    if (i < 0 || i >= shape_.dims[n]) {
      throw std::out_of_range("Tensor: index out of range at mode " + std::to_string(n));
    }
    flat = flat * shape_.dims[n] + i;
  }
  return flat;
}

std::vector<int64_t> Tensor::multi_index(int64_t flat) const {
  std::vector<int64_t> idx(order());
  for (int n = order() - 1; n >= 0; --n) {
    idx[n] = flat % shape_.dims[n];
    flat /= shape_.dims[n];
  }
  return idx;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(shape_ == other.shape_)) throw std::invalid_argument("Tensor +=: shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (!(shape_ == other.shape_)) throw std::invalid_argument("Tensor -=: shape mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double c) {
  for (double& v : data_) v *= c;
  return *this;
}

Tensor outer_product(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw std::invalid_argument("outer_product: empty vector list");
  std::vector<int64_t> dims;
  dims.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.empty()) throw std::invalid_argument("outer_product: empty vector");
    dims.push_back(static_cast<int64_t>(v.size()));
  }
  Tensor out{Shape(std::move(dims))};
  // Row-major fill: the running product expands one mode at a time.
  std::span<double> data = out.data();
  data[0] = 1.0;
  int64_t filled = 1;
  for (const auto& v : vectors) {
    const int64_t d = static_cast<int64_t>(v.size());
    for (int64_t i = filled - 1; i >= 0; --i) {
      const double base = data[i];
      for (int64_t j = d - 1; j >= 0; --j) {
        data[i * d + j] = base * v[j];
      }
    }
    filled *= d;
  }
  return out;
}

Matrix matricize(const Tensor& t, int mode) {
  const int N = t.order();
  if (mode < 0 || mode >= N) throw std::invalid_argument("matricize: mode out of range");
  const auto& dims = t.shape().dims;
  const int64_t rows = dims[mode];
  const int64_t cols = t.size() / rows;

  // Strides of the flat row-major layout.
  std::vector<int64_t> stride(N);
  int64_t s = 1;
  for (int n = N - 1; n >= 0; --n) {
    stride[n] = s;
    s *= dims[n];
  }

  Matrix m;
  m.rows = rows;
  m.cols = cols;
  m.data.assign(static_cast<size_t>(rows * cols), 0.0);

  // Walk columns in row-major order over the remaining axes.
  std::vector<int64_t> idx(N, 0);
  for (int64_t col = 0; col < cols; ++col) {
    int64_t base = 0;
    for (int n = 0; n < N; ++n) {
      if (n != mode) base += idx[n] * stride[n];
    }
    for (int64_t r = 0; r < rows; ++r) {
      m.data[r * cols + col] = t[base + r * stride[mode]];
    }
    for (int n = N - 1; n >= 0; --n) {
      if (n == mode) continue;
      if (++idx[n] < dims[n]) break;
      idx[n] = 0;
    }
  }
  return m;
}

std::vector<double> kron_except(std::span<const std::vector<double>> vectors, int skip) {
  const int N = static_cast<int>(vectors.size());
  if (N < 2) throw std::invalid_argument("kron_except: need at least two vectors");
  if (skip < 0 || skip >= N) throw std::invalid_argument("kron_except: skip out of range");
  std::vector<double> out{1.0};
  for (int n = 0; n < N; ++n) {
    if (n == skip) continue;
    const auto& v = vectors[n];
    std::vector<double> next(out.size() * v.size());
    size_t k = 0;
    for (double a : out) {
      for (double b : v) next[k++] = a * b;
    }
    out = std::move(next);
  }
  return out;
}

double inner(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("inner: shape mismatch");
  double s = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (int64_t i = 0; i < a.size(); ++i) s += da[i] * db[i];
  return s;
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double distance(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("distance: shape mismatch");
  double s = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = da[i] - db[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void add_scaled(Tensor& y, const Tensor& x, double c) {
  if (!(y.shape() == x.shape())) throw std::invalid_argument("add_scaled: shape mismatch");
  auto dy = y.data();
  const auto dx = x.data();
  for (int64_t i = 0; i < y.size(); ++i) dy[i] += c * dx[i];
}

namespace {

void add_outer_recurse(double* out, int64_t& flat, std::span<const std::vector<double>> vectors,
                       size_t mode, double partial) {
  const auto& v = vectors[mode];
  if (mode + 1 == vectors.size()) {
    for (double x : v) out[flat++] += partial * x;
    return;
  }
  for (double x : v) add_outer_recurse(out, flat, vectors, mode + 1, partial * x);
}

}  // namespace

void add_outer_product(Tensor& out, std::span<const std::vector<double>> vectors, double coeff) {
  if (static_cast<int>(vectors.size()) != out.order()) {
    throw std::invalid_argument("add_outer_product: order mismatch");
  }
  for (int n = 0; n < out.order(); ++n) {
    if (static_cast<int64_t>(vectors[n].size()) != out.shape().dims[n]) {
      throw std::invalid_argument("add_outer_product: dimension mismatch");
    }
  }
  int64_t flat = 0;
  add_outer_recurse(out.data().data(), flat, vectors, 0, coeff);
}

std::vector<double> mat_vec(const Matrix& m, std::span<const double> v) {
  if (static_cast<int64_t>(v.size()) != m.cols) {
    throw std::invalid_argument("mat_vec: dimension mismatch");
  }
  std::vector<double> out(static_cast<size_t>(m.rows), 0.0);
  for (int64_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (int64_t c = 0; c < m.cols; ++c) s += row[c] * v[c];
    out[r] = s;
  }
  return out;
}

double vec_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double vec_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inner_with_outer(const Tensor& t, std::span<const std::vector<double>> vectors) {
  if (static_cast<int>(vectors.size()) != t.order()) {
    throw std::invalid_argument("inner_with_outer: order mismatch");
  }
  // Contract the last axis first; the buffer shrinks by one mode per pass.
  std::vector<double> buf(t.data().begin(), t.data().end());
  int64_t size = t.size();
  for (int n = t.order() - 1; n >= 0; --n) {
    const auto& v = vectors[n];
    const int64_t d = static_cast<int64_t>(v.size());
    const int64_t outer = size / d;
    for (int64_t i = 0; i < outer; ++i) {
      double s = 0.0;
      const double* row = buf.data() + i * d;
      for (int64_t j = 0; j < d; ++j) s += row[j] * v[j];
      buf[i] = s;
    }
    size = outer;
  }
  return buf[0];
}

}  // namespace cpdyn
