#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace sagvae {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense row-major tensor of doubles. Plain value type; gradient tracking
/// lives in the Tape (autodiff.hpp), which pairs these as value/grad buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor eye(int n);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D / 3-D accessors (row-major).
  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& operator()(int b, int i, int j) {
    return data_[(static_cast<size_t>(b) * shape_[1] + i) * shape_[2] + j];
  }
  double operator()(int b, int i, int j) const {
    return data_[(static_cast<size_t>(b) * shape_[1] + i) * shape_[2] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double max_abs() const;

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// C = A.B (or C += with accumulate), plain 2-D kernel, row-parallel and
/// bit-deterministic for any thread count.
void matmul_kernel(const double* a, const double* b, double* c, int p, int q, int r,
                   bool accumulate);

Tensor matmul_nn(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

}  // namespace sagvae
