#include "sagvae/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sagvae {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::eye(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

void matmul_kernel(const double* a, const double* b, double* c, int p, int q, int r,
                   bool accumulate) {
  // i-k-j order: C rows are written by exactly one thread, so the result is
  // identical for any thread count.
  const int64_t work = static_cast<int64_t>(p) * q * r;
  auto row_block = [&](int i) {
    double* ci = c + static_cast<int64_t>(i) * r;
    if (!accumulate)
      for (int j = 0; j < r; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<int64_t>(i) * q;
    for (int k = 0; k < q; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b + static_cast<int64_t>(k) * r;
      for (int j = 0; j < r; ++j) ci[j] += aik * bk[j];
    }
  };
  if (work > 65536) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < p; ++i) row_block(i);
  } else {
    for (int i = 0; i < p; ++i) row_block(i);
  }
}

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul_nn: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  matmul_kernel(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1), false);
  return c;
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose2d: need 2-D tensor");
  Tensor t({a.dim(1), a.dim(0)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace sagvae
