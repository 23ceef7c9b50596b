#pragma once

#include <deque>
#include <string>
#include <vector>

#include "sagvae/tensor.hpp"

namespace sagvae {

/// Named trainable tensor. Gradients accumulate here across backward passes
/// until zero_grad(); m/v are optimizer moment buffers (see training.hpp).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;

  Parameter(std::string n, Tensor init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; invalid once the tape resets.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode record of one forward pass. Rebuilt from scratch every step:
/// ops append in topological order, backward() walks them once in reverse.
class Tape {
 public:
  Var constant(Tensor value);            // no gradient tracked
  Var param(Parameter& p);               // gradient lands in p.grad

  Var matmul(Var a, Var b);              // 2-D x 2-D, plus batched forms where
                                         // one side is shared across dim 0
  Var transpose(Var a);                  // swaps the last two dims
  Var reshape(Var a, Shape s);

  Var add(Var a, Var b);                 // b may be scalar or a trailing-shape
  Var sub(Var a, Var b);                 //   broadcast of a
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_const(Var a, double c);

  Var exp_(Var a);
  Var log_(Var a);
  Var sigmoid_(Var a);
  Var tanh_(Var a);
  Var relu_(Var a);
  Var softplus_(Var a);
  Var rsqrt_(Var a);
  Var clamp_(Var a, double lo, double hi);

  Var sum(Var a);                        // all entries -> [1]
  Var mean_axis0(Var a);
  Var rowsum(Var a);                     // sum over the last dim

  Var softmax_lastdim(Var a);
  /// Row simplex over mask-true positions, exact zeros elsewhere.
  /// logits [n,n] or [m,n,n]; mask is a 0/1 tensor [n,n] shared across the
  /// batch. Throws std::domain_error on an all-false row.
  Var masked_softmax(Var logits, const Tensor& mask);
  /// Softmax variant weighting exp(e_ij) by weights[i,j] >= 0 before
  /// normalizing; gradients flow to both logits and weights.
  Var weighted_masked_softmax(Var logits, Var weights, const Tensor& mask);

  Var select_last(Var a, int index);     // [...,k] -> [...]
  /// Scatter a strict-upper-triangle vector [n(n-1)/2] into a symmetric
  /// [n,n] matrix with the given diagonal value.
  Var sym_from_upper(Var upper, int n, double diag);

  /// Seeds d(loss)/d(loss)=1 and sweeps the record once in reverse,
  /// accumulating into every bound Parameter's grad.
  void backward(Var loss);

  const Tensor& val(Var v) const;
  const Tensor& grad(Var v) const;       // valid after backward()
  int size() const { return static_cast<int>(nodes_.size()); }
  void reset();

  bool all_values_finite() const;

 private:
  enum class Op {
    Leaf, Param, MatMul, Transpose, Reshape, Add, Sub, Mul, Scale, AddConst,
    Exp, Log, Sigmoid, Tanh, Relu, Softplus, Rsqrt, Clamp, SumAll, MeanAxis0,
    RowSum, SoftmaxLast, MaskedSoftmax, WeightedMaskedSoftmax, SelectLast,
    SymFromUpper,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Parameter* bound = nullptr;
    double c0 = 0.0, c1 = 0.0;
    Shape aux_shape;
    Tensor aux;    // op dependent: mask, original shape carrier
    Tensor aux2;   // op dependent: saved per-row stats
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  Node& at(Var v);
  const Node& at(Var v) const;
  void check_same_tape(Var a, Var b) const;
  static void accumulate_broadcast_grad(const Tensor& g_out, Tensor& g_in);

  std::deque<Node> nodes_;
};

// Operator sugar for composing losses.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace sagvae
