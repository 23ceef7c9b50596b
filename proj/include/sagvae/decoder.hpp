#pragma once

#include "sagvae/autodiff.hpp"

namespace sagvae {

/// Symmetric degree normalization D^-1/2 (A+I) D^-1/2. Self-loops are added
/// here, so the input must have a zero diagonal; entries in [0,1].
Var normalize_adjacency(Tape& tape, Var a_soft);

/// Neighborhood attention rows: alpha_ij = exp(e_ij) v_ij normalized over
/// the mask-true entries of row i, with e = (h W_l)(h W_r)^T.
/// h is [n,w] or [m,n,w]; v carries the edge-confidence weights (diagonal 1).
Var attention_scores(Tape& tape, Var h, const Tensor& neighbor_mask, Var v, Var w_l, Var w_r);

/// Attention-mixed features [alpha (h W_g)] W_f.
Var attention_apply(Tape& tape, Var alpha, Var h, Var w_g, Var w_f);

}  // namespace sagvae
