#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cpdyn {

// Axis lengths d_1..d_N of an order-N tensor. Shapes may be declared for
// factorizations that are never materialized (e.g. order 784), so the
// element count is checked only where a dense tensor is actually built.
struct Shape {
  std::vector<int64_t> dims;

  Shape() = default;
  explicit Shape(std::vector<int64_t> d);

  int order() const { return static_cast<int>(dims.size()); }
  bool operator==(const Shape&) const = default;

  // Product of dims; throws std::overflow_error if it exceeds int64.
  int64_t element_count() const;
  bool materializable() const;
};

// Dense order-N tensor of doubles in generalized row-major layout
// (last index varies fastest).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int order() const { return shape_.order(); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  double operator[](int64_t flat) const { return data_[flat]; }
  double& operator[](int64_t flat) { return data_[flat]; }

  int64_t flat_index(std::span<const int64_t> index) const;
  std::vector<int64_t> multi_index(int64_t flat) const;
  double at(std::span<const int64_t> index) const { return data_[flat_index(index)]; }
  double& at(std::span<const int64_t> index) { return data_[flat_index(index)]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double c);

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Dense row-major matrix; the landing type for matricization.
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  double operator()(int64_t r, int64_t c) const { return data[r * cols + c]; }
  double& operator()(int64_t r, int64_t c) { return data[r * cols + c]; }
};

// Order-N outer product: entry (i_1..i_N) = prod_n v_n[i_n].
Tensor outer_product(std::span<const std::vector<double>> vectors);

// Mode-n matricization (mode is 0-based). Rows index mode n; columns
// enumerate the remaining axes in row-major order, consistent with
// kron_except below.
Matrix matricize(const Tensor& t, int mode);

// Kronecker product of all vectors except the skipped one, ordered so that
// matricize(outer_product(v), n) * kron_except(v, n)
//   == prod_{n' != n} |v_n'|^2 * v_n.
std::vector<double> kron_except(std::span<const std::vector<double>> vectors, int skip);

double inner(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a);
double distance(const Tensor& a, const Tensor& b);

// y += c * x (shapes must match).
void add_scaled(Tensor& y, const Tensor& x, double c);

// out += coeff * v_1 (x) ... (x) v_N without allocating the outer product.
void add_outer_product(Tensor& out, std::span<const std::vector<double>> vectors, double coeff);

std::vector<double> mat_vec(const Matrix& m, std::span<const double> v);

double vec_norm(std::span<const double> v);
double vec_dot(std::span<const double> a, std::span<const double> b);

// <t, v_1 (x) ... (x) v_N> by sequential axis contraction; never forms the
// outer product.
double inner_with_outer(const Tensor& t, std::span<const std::vector<double>> vectors);

}  // namespace cpdyn
