#include "sagvae/decoder.hpp"

namespace sagvae {

Var normalize_adjacency(Tape& tape, Var a_soft) {
  const Tensor& a = tape.val(a_soft);
  if (a.ndim() != 2 || a.dim(0) != a.dim(1))
    throw std::invalid_argument("normalize_adjacency: need square matrix, got " +
                                shape_str(a.shape()));
  const int n = a.dim(0);
  Var a_hat = tape.add(a_soft, tape.constant(Tensor::eye(n)));
  Var deg = tape.rowsum(a_hat);                       // >= 1 by the self-loop
  Var dis = tape.rsqrt_(deg);
  Var col = tape.reshape(dis, {n, 1});
  Var row = tape.reshape(dis, {1, n});
  return tape.mul(a_hat, tape.matmul(col, row));
}

Var attention_scores(Tape& tape, Var h, const Tensor& neighbor_mask, Var v, Var w_l, Var w_r) {
  Var left = tape.matmul(h, w_l);
  Var right = tape.matmul(h, w_r);
  Var e = tape.matmul(left, tape.transpose(right));
  return tape.weighted_masked_softmax(e, v, neighbor_mask);
}

Var attention_apply(Tape& tape, Var alpha, Var h, Var w_g, Var w_f) {
  return tape.matmul(tape.matmul(alpha, tape.matmul(h, w_g)), w_f);
}

}  // namespace sagvae
