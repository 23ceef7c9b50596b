#include "sagvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sagvae {

namespace {

constexpr int64_t kParallelCutoff = 1 << 15;

bool is_scalar_shape(const Shape& s) { return shape_numel(s) == 1; }

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Tape::Node& Tape::at(Var v) {
  if (!v.valid() || v.tape != this || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Tape: variable does not belong to this record");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || v.tape != this || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Tape: variable does not belong to this record");
  return nodes_[static_cast<size_t>(v.id)];
}

void Tape::check_same_tape(Var a, Var b) const {
  if (a.tape != this || b.tape != this)
    throw std::logic_error("Tape: mixing variables from different records");
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::reset() { nodes_.clear(); }

const Tensor& Tape::val(Var v) const { return at(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = at(v);
  if (n.grad.empty()) throw std::logic_error("Tape: gradient not populated; run backward first");
  return n.grad;
}

bool Tape::all_values_finite() const {
  for (const Node& n : nodes_)
    if (!n.value.all_finite()) return false;
  return true;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return wrap(push(std::move(n)));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = Op::Param;
  n.value = p.value;
  n.bound = &p;
  n.needs_grad = true;
  return wrap(push(std::move(n)));
}

Var Tape::matmul(Var va, Var vb) {
  check_same_tape(va, vb);
  const Tensor& a = at(va).value;
  const Tensor& b = at(vb).value;
  const int na = a.ndim(), nb = b.ndim();
  Node n;
  n.op = Op::MatMul;
  n.a = va.id;
  n.b = vb.id;
  n.needs_grad = at(va).needs_grad || at(vb).needs_grad;
  auto bad = [&] {
    return std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                 " and " + shape_str(b.shape()));
  };
  if (na == 2 && nb == 2) {
    if (a.dim(1) != b.dim(0)) throw bad();
    n.value = Tensor({a.dim(0), b.dim(1)});
    matmul_kernel(a.data(), b.data(), n.value.data(), a.dim(0), a.dim(1), b.dim(1), false);
  } else if (na == 3 && nb == 2) {
    if (a.dim(2) != b.dim(0)) throw bad();
    const int m = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(1);
    n.value = Tensor({m, p, r});
    // one kernel call: stack the batch along rows
    matmul_kernel(a.data(), b.data(), n.value.data(), m * p, q, r, false);
  } else if (na == 2 && nb == 3) {
    if (a.dim(1) != b.dim(1)) throw bad();
    const int m = b.dim(0), p = a.dim(0), q = a.dim(1), r = b.dim(2);
    n.value = Tensor({m, p, r});
    const int64_t work = static_cast<int64_t>(m) * p * q * r;
if (work > 65536) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
      matmul_kernel(a.data(), b.data() + static_cast<int64_t>(i) * q * r,
                    n.value.data() + static_cast<int64_t>(i) * p * r, p, q, r, false);
} else {
    for (int i = 0; i < m; ++i)
      matmul_kernel(a.data(), b.data() + static_cast<int64_t>(i) * q * r,
                    n.value.data() + static_cast<int64_t>(i) * p * r, p, q, r, false);
}
  } else if (na == 3 && nb == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) throw bad();
    const int m = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
    n.value = Tensor({m, p, r});
    const int64_t work = static_cast<int64_t>(m) * p * q * r;
if (work > 65536) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
      matmul_kernel(a.data() + static_cast<int64_t>(i) * p * q,
                    b.data() + static_cast<int64_t>(i) * q * r,
                    n.value.data() + static_cast<int64_t>(i) * p * r, p, q, r, false);
} else {
    for (int i = 0; i < m; ++i)
      matmul_kernel(a.data() + static_cast<int64_t>(i) * p * q,
                    b.data() + static_cast<int64_t>(i) * q * r,
                    n.value.data() + static_cast<int64_t>(i) * p * r, p, q, r, false);
}
  } else {
    throw bad();
  }
  return wrap(push(std::move(n)));
}

Var Tape::transpose(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Transpose;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  if (a.ndim() == 2) {
    n.value = transpose2d(a);
  } else if (a.ndim() == 3) {
    n.value = Tensor({a.dim(0), a.dim(2), a.dim(1)});
    for (int b = 0; b < a.dim(0); ++b)
      for (int i = 0; i < a.dim(1); ++i)
        for (int j = 0; j < a.dim(2); ++j) n.value(b, j, i) = a(b, i, j);
  } else {
    throw std::invalid_argument("transpose: need 2-D or 3-D, got " + shape_str(a.shape()));
  }
  return wrap(push(std::move(n)));
}

Var Tape::reshape(Var va, Shape s) {
  const Tensor& a = at(va).value;
  if (shape_numel(s) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(s) +
                                " changes element count");
  Node n;
  n.op = Op::Reshape;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.aux_shape = a.shape();
  n.value = Tensor(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
  return wrap(push(std::move(n)));
}

Var Tape::add(Var va, Var vb) {
  check_same_tape(va, vb);
  const Tensor& a = at(va).value;
  const Tensor& b = at(vb).value;
  Node n;
  n.op = Op::Add;
  n.a = va.id;
  n.b = vb.id;
  n.needs_grad = at(va).needs_grad || at(vb).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t na = a.size();
  if (a.same_shape(b)) {
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + b[i];
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + b[i];
}
  } else if (is_scalar_shape(b.shape())) {
    const double s = b[0];
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + s;
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + s;
}
  } else if (is_suffix(a.shape(), b.shape())) {
    const int64_t nb = b.size();
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + b[i % nb];
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] + b[i % nb];
}
  } else {
    throw std::invalid_argument("add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                                shape_str(a.shape()));
  }
  return wrap(push(std::move(n)));
}

Var Tape::sub(Var va, Var vb) {
  check_same_tape(va, vb);
  return add(va, scale(vb, -1.0));
}

Var Tape::mul(Var va, Var vb) {
  check_same_tape(va, vb);
  const Tensor& a = at(va).value;
  const Tensor& b = at(vb).value;
  Node n;
  n.op = Op::Mul;
  n.a = va.id;
  n.b = vb.id;
  n.needs_grad = at(va).needs_grad || at(vb).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t na = a.size();
  if (a.same_shape(b)) {
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * b[i];
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * b[i];
}
  } else if (is_scalar_shape(b.shape())) {
    const double s = b[0];
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * s;
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * s;
}
  } else if (is_suffix(a.shape(), b.shape())) {
    const int64_t nb = b.size();
if (na > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * b[i % nb];
} else {
    for (int64_t i = 0; i < na; ++i) n.value[i] = a[i] * b[i % nb];
}
  } else {
    throw std::invalid_argument("mul: cannot broadcast " + shape_str(b.shape()) + " onto " +
                                shape_str(a.shape()));
  }
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var va, double c) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Scale;
  n.a = va.id;
  n.c0 = c;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) n.value[i] = a[i] * c;
} else {
  for (int64_t i = 0; i < count; ++i) n.value[i] = a[i] * c;
}
  return wrap(push(std::move(n)));
}

Var Tape::add_const(Var va, double c) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::AddConst;
  n.a = va.id;
  n.c0 = c;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) n.value[i] = a[i] + c;
} else {
  for (int64_t i = 0; i < count; ++i) n.value[i] = a[i] + c;
}
  return wrap(push(std::move(n)));
}

Var Tape::exp_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Exp;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
  bool bad = false;
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static) reduction(|| : bad)
  for (int64_t i = 0; i < count; ++i) {
    n.value[i] = std::exp(a[i]);
    if (!std::isfinite(n.value[i])) bad = true;
  }
} else {
  for (int64_t i = 0; i < count; ++i) {
    n.value[i] = std::exp(a[i]);
    if (!std::isfinite(n.value[i])) bad = true;
  }
}
  if (bad)
    for (int64_t i = 0; i < count; ++i)
      if (!std::isfinite(n.value[i]))
        throw std::domain_error("exp: overflow at input " + std::to_string(a[i]));
  return wrap(push(std::move(n)));
}

Var Tape::log_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Log;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
  bool bad = false;
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static) reduction(|| : bad)
  for (int64_t i = 0; i < count; ++i) {
    if (a[i] <= 0.0) {
      bad = true;
    } else {
      n.value[i] = std::log(a[i]);
    }
  }
} else {
  for (int64_t i = 0; i < count; ++i) {
    if (a[i] <= 0.0) {
      bad = true;
    } else {
      n.value[i] = std::log(a[i]);
    }
  }
}
  if (bad)
    for (int64_t i = 0; i < count; ++i)
      if (a[i] <= 0.0)
        throw std::domain_error("log: non-positive input " + std::to_string(a[i]));
  return wrap(push(std::move(n)));
}

Var Tape::sigmoid_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Sigmoid;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) {
    const double x = a[i];
    n.value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
} else {
  for (int64_t i = 0; i < count; ++i) {
    const double x = a[i];
    n.value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
}
  return wrap(push(std::move(n)));
}

Var Tape::tanh_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Tanh;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) n.value[i] = std::tanh(a[i]);
} else {
  for (int64_t i = 0; i < count; ++i) n.value[i] = std::tanh(a[i]);
}
  return wrap(push(std::move(n)));
}

Var Tape::relu_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Relu;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
  return wrap(push(std::move(n)));
}

Var Tape::softplus_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Softplus;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t count = a.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) n.value[i] = stable_softplus(a[i]);
} else {
  for (int64_t i = 0; i < count; ++i) n.value[i] = stable_softplus(a[i]);
}
  return wrap(push(std::move(n)));
}

Var Tape::rsqrt_(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Rsqrt;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a[i] <= 0.0)
      throw std::domain_error("rsqrt: non-positive input " + std::to_string(a[i]));
    n.value[i] = 1.0 / std::sqrt(a[i]);
  }
  return wrap(push(std::move(n)));
}

Var Tape::clamp_(Var va, double lo, double hi) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::Clamp;
  n.a = va.id;
  n.c0 = lo;
  n.c1 = hi;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) n.value[i] = std::clamp(a[i], lo, hi);
  return wrap(push(std::move(n)));
}

Var Tape::sum(Var va) {
  const Tensor& a = at(va).value;
  Node n;
  n.op = Op::SumAll;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  n.value = Tensor::scalar(s);
  return wrap(push(std::move(n)));
}

Var Tape::mean_axis0(Var va) {
  const Tensor& a = at(va).value;
  if (a.ndim() < 2) throw std::invalid_argument("mean_axis0: need at least 2 dims");
  Node n;
  n.op = Op::MeanAxis0;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  const int m = a.dim(0);
  Shape out(a.shape().begin() + 1, a.shape().end());
  n.value = Tensor(out);
  const int64_t block = n.value.size();
  for (int i = 0; i < m; ++i)
    for (int64_t j = 0; j < block; ++j) n.value[j] += a[static_cast<int64_t>(i) * block + j];
  for (int64_t j = 0; j < block; ++j) n.value[j] /= m;
  return wrap(push(std::move(n)));
}

Var Tape::rowsum(Var va) {
  const Tensor& a = at(va).value;
  if (a.ndim() < 2) throw std::invalid_argument("rowsum: need at least 2 dims");
  Node n;
  n.op = Op::RowSum;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  Shape out(a.shape().begin(), a.shape().end() - 1);
  n.value = Tensor(out);
  const int64_t cols = a.dim(a.ndim() - 1);
  for (int64_t r = 0; r < n.value.size(); ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += a[r * cols + c];
    n.value[r] = s;
  }
  return wrap(push(std::move(n)));
}

Var Tape::softmax_lastdim(Var va) {
  const Tensor& a = at(va).value;
  if (a.ndim() < 1) throw std::invalid_argument("softmax_lastdim: empty shape");
  Node n;
  n.op = Op::SoftmaxLast;
  n.a = va.id;
  n.needs_grad = at(va).needs_grad;
  n.value = Tensor(a.shape());
  const int64_t k = a.dim(a.ndim() - 1);
  const int64_t rows = a.size() / k;
if (rows * k > kParallelCutoff) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * k;
    double* y = n.value.data() + r * k;
    double mx = x[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (int64_t j = 0; j < k; ++j) y[j] /= s;
  }
} else {
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * k;
    double* y = n.value.data() + r * k;
    double mx = x[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (int64_t j = 0; j < k; ++j) y[j] /= s;
  }
}
  return wrap(push(std::move(n)));
}

Var Tape::masked_softmax(Var logits, const Tensor& mask) {
  const Tensor& a = at(logits).value;
  const int nd = a.ndim();
  if (nd < 2 || mask.ndim() != 2 || a.dim(nd - 1) != mask.dim(1) ||
      a.dim(nd - 2) != mask.dim(0))
    throw std::invalid_argument("masked_softmax: logits " + shape_str(a.shape()) +
                                " incompatible with mask " + shape_str(mask.shape()));
  Node n;
  n.op = Op::MaskedSoftmax;
  n.a = logits.id;
  n.needs_grad = at(logits).needs_grad;
  n.aux = mask;
  n.value = Tensor(a.shape());
  const int cols = mask.dim(1);
  const int mrows = mask.dim(0);
  const int64_t rows = a.size() / cols;
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * cols;
    const double* mk = mask.data() + (r % mrows) * static_cast<int64_t>(cols);
    double* y = n.value.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j)
      if (mk[j] != 0.0) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx))
      throw std::domain_error("masked_softmax: row " + std::to_string(r % mrows) +
                              " has no unmasked entries");
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += (y[j] = mk[j] != 0.0 ? std::exp(x[j] - mx) : 0.0);
    for (int j = 0; j < cols; ++j) y[j] /= s;
  }
  return wrap(push(std::move(n)));
}

Var Tape::weighted_masked_softmax(Var logits, Var weights, const Tensor& mask) {
  check_same_tape(logits, weights);
  const Tensor& a = at(logits).value;
  const Tensor& w = at(weights).value;
  const int nd = a.ndim();
  if (nd < 2 || w.ndim() != 2 || mask.ndim() != 2 || !w.same_shape(mask) ||
      a.dim(nd - 1) != w.dim(1) || a.dim(nd - 2) != w.dim(0))
    throw std::invalid_argument("weighted_masked_softmax: shapes " + shape_str(a.shape()) +
                                ", " + shape_str(w.shape()) + ", " + shape_str(mask.shape()));
  Node n;
  n.op = Op::WeightedMaskedSoftmax;
  n.a = logits.id;
  n.b = weights.id;
  n.needs_grad = at(logits).needs_grad || at(weights).needs_grad;
  n.aux = mask;
  n.value = Tensor(a.shape());
  const int cols = mask.dim(1);
  const int mrows = mask.dim(0);
  const int64_t rows = a.size() / cols;
  Tensor stats({static_cast<int>(rows), 2});  // per-row max and normalizer
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * cols;
    const int64_t wr = (r % mrows) * static_cast<int64_t>(cols);
    const double* mk = mask.data() + wr;
    const double* wv = w.data() + wr;
    double* y = n.value.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j)
      if (mk[j] != 0.0) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx))
      throw std::domain_error("weighted_masked_softmax: row " + std::to_string(r % mrows) +
                              " has no unmasked entries");
    double s = 0.0;
    for (int j = 0; j < cols; ++j)
      s += (y[j] = mk[j] != 0.0 ? std::exp(x[j] - mx) * wv[j] : 0.0);
    if (!(s > 0.0))
      throw std::domain_error("weighted_masked_softmax: row " + std::to_string(r % mrows) +
                              " has zero total weight");
    for (int j = 0; j < cols; ++j) y[j] /= s;
    stats(static_cast<int>(r), 0) = mx;
    stats(static_cast<int>(r), 1) = s;
  }
  n.aux2 = std::move(stats);
  return wrap(push(std::move(n)));
}

Var Tape::select_last(Var va, int index) {
  const Tensor& a = at(va).value;
  if (a.ndim() < 1) throw std::invalid_argument("select_last: empty shape");
  const int k = a.dim(a.ndim() - 1);
  if (index < 0 || index >= k)
    throw std::invalid_argument("select_last: index " + std::to_string(index) +
                                " out of range for last dim " + std::to_string(k));
  Node n;
  n.op = Op::SelectLast;
  n.a = va.id;
  n.c0 = index;
  n.needs_grad = at(va).needs_grad;
  Shape out(a.shape().begin(), a.shape().end() - 1);
  if (out.empty()) out = {1};
  n.value = Tensor(out);
  for (int64_t r = 0; r < n.value.size(); ++r) n.value[r] = a[r * k + index];
  return wrap(push(std::move(n)));
}

Var Tape::sym_from_upper(Var upper, int n_nodes, double diag) {
  const Tensor& u = at(upper).value;
  const int64_t pairs = static_cast<int64_t>(n_nodes) * (n_nodes - 1) / 2;
  if (u.ndim() != 1 || u.size() != pairs)
    throw std::invalid_argument("sym_from_upper: expected [" + std::to_string(pairs) +
                                "] upper-triangle vector, got " + shape_str(u.shape()));
  Node n;
  n.op = Op::SymFromUpper;
  n.a = upper.id;
  n.c0 = diag;
  n.needs_grad = at(upper).needs_grad;
  n.value = Tensor({n_nodes, n_nodes});
  int64_t k = 0;
  for (int s = 0; s < n_nodes; ++s) {
    n.value(s, s) = diag;
    for (int t = s + 1; t < n_nodes; ++t, ++k) {
      n.value(s, t) = u[k];
      n.value(t, s) = u[k];
    }
  }
  return wrap(push(std::move(n)));
}

void Tape::accumulate_broadcast_grad(const Tensor& g_out, Tensor& g_in) {
  if (g_in.same_shape(g_out)) {
    const int64_t count = g_in.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) g_in[i] += g_out[i];
} else {
    for (int64_t i = 0; i < count; ++i) g_in[i] += g_out[i];
}
  } else if (is_scalar_shape(g_in.shape())) {
    double s = 0.0;
    for (int64_t i = 0; i < g_out.size(); ++i) s += g_out[i];
    g_in[0] += s;
  } else {
    const int64_t nb = g_in.size();
    for (int64_t i = 0; i < g_out.size(); ++i) g_in[i % nb] += g_out[i];
  }
}

void Tape::backward(Var loss) {
  Node& top = at(loss);
  if (top.value.size() != 1)
    throw std::logic_error("backward: loss must be scalar, got " + shape_str(top.value.shape()));
  if (!top.needs_grad)
    throw std::logic_error("backward: loss does not depend on any parameter");
  for (Node& n : nodes_) {
    if (n.needs_grad)
      n.grad = Tensor(n.value.shape());
    else
      n.grad = Tensor();
  }
  top.grad[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    const Tensor& g = n.grad;
    Node* na = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
    Node* nb = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
    auto wants = [](Node* p) { return p && p->needs_grad && !p->grad.empty(); };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Param:
        break;
      case Op::MatMul: {
        const Tensor& a = na->value;
        const Tensor& b = nb->value;
        const int da = a.ndim(), db = b.ndim();
        if (da == 2 && db == 2) {
          if (wants(na)) {
            Tensor bt = transpose2d(b);
            matmul_kernel(g.data(), bt.data(), na->grad.data(), a.dim(0), b.dim(1), a.dim(1), true);
          }
          if (wants(nb)) {
            Tensor at_ = transpose2d(a);
            matmul_kernel(at_.data(), g.data(), nb->grad.data(), a.dim(1), a.dim(0), b.dim(1), true);
          }
        } else if (da == 3 && db == 2) {
          const int m = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(1);
          if (wants(na)) {
            Tensor bt = transpose2d(b);
            matmul_kernel(g.data(), bt.data(), na->grad.data(), m * p, r, q, true);
          }
          if (wants(nb)) {
            for (int i = 0; i < m; ++i) {
              Tensor ai({p, q}, std::vector<double>(
                                    a.data() + static_cast<int64_t>(i) * p * q,
                                    a.data() + static_cast<int64_t>(i + 1) * p * q));
              Tensor at_ = transpose2d(ai);
              matmul_kernel(at_.data(), g.data() + static_cast<int64_t>(i) * p * r,
                            nb->grad.data(), q, p, r, true);
            }
          }
        } else if (da == 2 && db == 3) {
          const int m = b.dim(0), p = a.dim(0), q = a.dim(1), r = b.dim(2);
          if (wants(na)) {
            for (int i = 0; i < m; ++i) {
              Tensor bi({q, r}, std::vector<double>(
                                    b.data() + static_cast<int64_t>(i) * q * r,
                                    b.data() + static_cast<int64_t>(i + 1) * q * r));
              Tensor bt = transpose2d(bi);
              matmul_kernel(g.data() + static_cast<int64_t>(i) * p * r, bt.data(),
                            na->grad.data(), p, r, q, true);
            }
          }
          if (wants(nb)) {
            Tensor at_ = transpose2d(a);
            for (int i = 0; i < m; ++i)
              matmul_kernel(at_.data(), g.data() + static_cast<int64_t>(i) * p * r,
                            nb->grad.data() + static_cast<int64_t>(i) * q * r, q, p, r, true);
          }
        } else {  // 3,3
          const int m = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
          const int64_t bwork = static_cast<int64_t>(m) * p * q * r;
if (bwork > 65536) {
#pragma omp parallel for schedule(static)
          for (int i = 0; i < m; ++i) {
            if (wants(na)) {
              Tensor bi({q, r}, std::vector<double>(
                                    b.data() + static_cast<int64_t>(i) * q * r,
                                    b.data() + static_cast<int64_t>(i + 1) * q * r));
              Tensor bt = transpose2d(bi);
              matmul_kernel(g.data() + static_cast<int64_t>(i) * p * r, bt.data(),
                            na->grad.data() + static_cast<int64_t>(i) * p * q, p, r, q, true);
            }
            if (wants(nb)) {
              Tensor ai({p, q}, std::vector<double>(
                                    a.data() + static_cast<int64_t>(i) * p * q,
                                    a.data() + static_cast<int64_t>(i + 1) * p * q));
              Tensor at_ = transpose2d(ai);
              matmul_kernel(at_.data(), g.data() + static_cast<int64_t>(i) * p * r,
                            nb->grad.data() + static_cast<int64_t>(i) * q * r, q, p, r, true);
            }
          }
} else {
          for (int i = 0; i < m; ++i) {
            if (wants(na)) {
              Tensor bi({q, r}, std::vector<double>(
                                    b.data() + static_cast<int64_t>(i) * q * r,
                                    b.data() + static_cast<int64_t>(i + 1) * q * r));
              Tensor bt = transpose2d(bi);
              matmul_kernel(g.data() + static_cast<int64_t>(i) * p * r, bt.data(),
                            na->grad.data() + static_cast<int64_t>(i) * p * q, p, r, q, true);
            }
            if (wants(nb)) {
              Tensor ai({p, q}, std::vector<double>(
                                    a.data() + static_cast<int64_t>(i) * p * q,
                                    a.data() + static_cast<int64_t>(i + 1) * p * q));
              Tensor at_ = transpose2d(ai);
              matmul_kernel(at_.data(), g.data() + static_cast<int64_t>(i) * p * r,
                            nb->grad.data() + static_cast<int64_t>(i) * q * r, q, p, r, true);
            }
          }
}
        }
        break;
      }
      case Op::Transpose: {
        if (wants(na)) {
          const Tensor& a = na->value;
          if (a.ndim() == 2) {
            for (int i = 0; i < a.dim(0); ++i)
              for (int j = 0; j < a.dim(1); ++j) na->grad(i, j) += g(j, i);
          } else {
            for (int b = 0; b < a.dim(0); ++b)
              for (int i = 0; i < a.dim(1); ++i)
                for (int j = 0; j < a.dim(2); ++j) na->grad(b, i, j) += g(b, j, i);
          }
        }
        break;
      }
      case Op::Reshape: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
} else {
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
}
        }
        break;
      }
      case Op::Add: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
} else {
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
}
        }
        if (wants(nb)) accumulate_broadcast_grad(g, nb->grad);
        break;
      }
      case Op::Sub:
        break;  // lowered to add+scale at build time
      case Op::Mul: {
        const Tensor& a = na->value;
        const Tensor& b = nb->value;
        if (wants(na)) {
          const int64_t count = g.size();
          if (a.same_shape(b)) {
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * b[i];
} else {
            for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * b[i];
}
          } else if (is_scalar_shape(b.shape())) {
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * b[0];
} else {
            for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * b[0];
}
          } else {
            const int64_t nbs = b.size();
            for (int64_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * b[i % nbs];
          }
        }
        if (wants(nb)) {
          const int64_t count = g.size();
          if (a.same_shape(b)) {
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < count; ++i) nb->grad[i] += g[i] * a[i];
} else {
            for (int64_t i = 0; i < count; ++i) nb->grad[i] += g[i] * a[i];
}
          } else if (is_scalar_shape(b.shape())) {
            double s = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) s += g[i] * a[i];
            nb->grad[0] += s;
          } else {
            const int64_t nbs = b.size();
            for (int64_t i = 0; i < g.size(); ++i) nb->grad[i % nbs] += g[i] * a[i];
          }
        }
        break;
      }
      case Op::Scale: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * n.c0;
} else {
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * n.c0;
}
        }
        break;
      }
      case Op::AddConst: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
} else {
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i];
}
        }
        break;
      }
      case Op::Exp: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * n.value[i];
} else {
          for (int64_t i = 0; i < count; ++i) na->grad[i] += g[i] * n.value[i];
}
        }
        break;
      }
      case Op::Log: {
        if (wants(na))
          for (int64_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] / na->value[i];
        break;
      }
      case Op::Sigmoid: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i)
            na->grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
} else {
          for (int64_t i = 0; i < count; ++i)
            na->grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
}
        }
        break;
      }
      case Op::Tanh: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i)
            na->grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
} else {
          for (int64_t i = 0; i < count; ++i)
            na->grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
}
        }
        break;
      }
      case Op::Relu: {
        if (wants(na))
          for (int64_t i = 0; i < g.size(); ++i)
            na->grad[i] += na->value[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Op::Softplus: {
        if (wants(na)) {
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < count; ++i) {
            const double x = na->value[i];
            const double s =
                x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            na->grad[i] += g[i] * s;
          }
} else {
          for (int64_t i = 0; i < count; ++i) {
            const double x = na->value[i];
            const double s =
                x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            na->grad[i] += g[i] * s;
          }
}
        }
        break;
      }
      case Op::Rsqrt: {
        if (wants(na))
          for (int64_t i = 0; i < g.size(); ++i)
            na->grad[i] += g[i] * (-0.5) * n.value[i] / na->value[i];
        break;
      }
      case Op::Clamp: {
        if (wants(na))
          for (int64_t i = 0; i < g.size(); ++i)
            if (na->value[i] > n.c0 && na->value[i] < n.c1) na->grad[i] += g[i];
        break;
      }
      case Op::SumAll: {
        if (wants(na))
          for (int64_t i = 0; i < na->grad.size(); ++i) na->grad[i] += g[0];
        break;
      }
      case Op::MeanAxis0: {
        if (wants(na)) {
          const int m = na->value.dim(0);
          const int64_t block = g.size();
if (block > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t j = 0; j < block; ++j)
            for (int i = 0; i < m; ++i)
              na->grad[static_cast<int64_t>(i) * block + j] += g[j] / m;
} else {
          for (int64_t j = 0; j < block; ++j)
            for (int i = 0; i < m; ++i)
              na->grad[static_cast<int64_t>(i) * block + j] += g[j] / m;
}
        }
        break;
      }
      case Op::RowSum: {
        if (wants(na)) {
          const int64_t cols = na->value.dim(na->value.ndim() - 1);
          for (int64_t r = 0; r < g.size(); ++r)
            for (int64_t c = 0; c < cols; ++c) na->grad[r * cols + c] += g[r];
        }
        break;
      }
      case Op::SoftmaxLast: {
        if (wants(na)) {
          const int64_t k = n.value.dim(n.value.ndim() - 1);
          const int64_t rows = n.value.size() / k;
if (rows * k > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * k;
            const double* gr = g.data() + r * k;
            double dot = 0.0;
            for (int64_t j = 0; j < k; ++j) dot += gr[j] * y[j];
            for (int64_t j = 0; j < k; ++j) na->grad[r * k + j] += y[j] * (gr[j] - dot);
          }
} else {
          for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * k;
            const double* gr = g.data() + r * k;
            double dot = 0.0;
            for (int64_t j = 0; j < k; ++j) dot += gr[j] * y[j];
            for (int64_t j = 0; j < k; ++j) na->grad[r * k + j] += y[j] * (gr[j] - dot);
          }
}
        }
        break;
      }
      case Op::MaskedSoftmax: {
        if (wants(na)) {
          const int cols = n.aux.dim(1);
          const int64_t rows = n.value.size() / cols;
if (rows * cols > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * cols;
            const double* gr = g.data() + r * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
            for (int j = 0; j < cols; ++j) na->grad[r * cols + j] += y[j] * (gr[j] - dot);
          }
} else {
          for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * cols;
            const double* gr = g.data() + r * cols;
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
            for (int j = 0; j < cols; ++j) na->grad[r * cols + j] += y[j] * (gr[j] - dot);
          }
}
        }
        break;
      }
      case Op::WeightedMaskedSoftmax: {
        const int cols = n.aux.dim(1);
        const int mrows = n.aux.dim(0);
        const int64_t rows = n.value.size() / cols;
if (rows * cols > kParallelCutoff) {
#pragma omp parallel for schedule(static)
        for (int q = 0; q < mrows; ++q) {
          for (int64_t r = q; r < rows; r += mrows) {
            const double* y = n.value.data() + r * cols;
            const double* gr = g.data() + r * cols;
            const double* x = na->value.data() + r * cols;
            const int64_t wr = static_cast<int64_t>(q) * cols;
            const double* mk = n.aux.data() + wr;
            const double mx = n.aux2(static_cast<int>(r), 0);
            const double s = n.aux2(static_cast<int>(r), 1);
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
            if (wants(na))
              for (int j = 0; j < cols; ++j)
                na->grad[r * cols + j] += y[j] * (gr[j] - dot);
            if (wants(nb))
              for (int j = 0; j < cols; ++j)
                if (mk[j] != 0.0)
                  nb->grad[wr + j] += std::exp(x[j] - mx) * (gr[j] - dot) / s;
          }
        }
} else {
        for (int q = 0; q < mrows; ++q) {
          for (int64_t r = q; r < rows; r += mrows) {
            const double* y = n.value.data() + r * cols;
            const double* gr = g.data() + r * cols;
            const double* x = na->value.data() + r * cols;
            const int64_t wr = static_cast<int64_t>(q) * cols;
            const double* mk = n.aux.data() + wr;
            const double mx = n.aux2(static_cast<int>(r), 0);
            const double s = n.aux2(static_cast<int>(r), 1);
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
            if (wants(na))
              for (int j = 0; j < cols; ++j)
                na->grad[r * cols + j] += y[j] * (gr[j] - dot);
            if (wants(nb))
              for (int j = 0; j < cols; ++j)
                if (mk[j] != 0.0)
                  nb->grad[wr + j] += std::exp(x[j] - mx) * (gr[j] - dot) / s;
          }
        }
}
        break;
      }
      case Op::SelectLast: {
        if (wants(na)) {
          const int k = na->value.dim(na->value.ndim() - 1);
          const int idx = static_cast<int>(n.c0);
          const int64_t count = g.size();
if (count > kParallelCutoff) {
#pragma omp parallel for schedule(static)
          for (int64_t r = 0; r < count; ++r) na->grad[r * k + idx] += g[r];
} else {
          for (int64_t r = 0; r < count; ++r) na->grad[r * k + idx] += g[r];
}
        }
        break;
      }
      case Op::SymFromUpper: {
        if (wants(na)) {
          const int nn = n.value.dim(0);
          int64_t k = 0;
          for (int s = 0; s < nn; ++s)
            for (int t = s + 1; t < nn; ++t, ++k) na->grad[k] += g(s, t) + g(t, s);
        }
        break;
      }
    }
  }

  for (Node& n : nodes_) {
    if (n.op == Op::Param && !n.grad.empty())
      for (int64_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
  }
}

}  // namespace sagvae
