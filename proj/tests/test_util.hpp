#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sagvae/autodiff.hpp"
#include "sagvae/random.hpp"

namespace sagvae::test {

inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences against the tape gradients for every entry of
/// every listed parameter. `forward` must rebuild the whole forward pass and
/// return the scalar loss value (noise must be frozen inside it).
/// Returns the worst relative error seen.
inline double max_grad_fd_error(const std::vector<Parameter*>& params,
                                const std::function<double(Tape&)>& forward_loss_value,
                                const std::function<Var(Tape&)>& forward_loss_var,
                                double h = 1e-5, double floor = 1e-4) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Var loss = forward_loss_var(tape);
  tape.backward(loss);

  double worst = 0.0;
  for (Parameter* p : params) {
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      Tape tp;
      const double fp = forward_loss_value(tp);
      p->value[i] = saved - h;
      Tape tm;
      const double fm = forward_loss_value(tm);
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(p->grad[i], numeric, floor));
    }
  }
  return worst;
}

/// Convenience overload: one builder used for both the analytic and the
/// numeric evaluations.
inline double max_grad_fd_error(const std::vector<Parameter*>& params,
                                const std::function<Var(Tape&)>& build, double h = 1e-5,
                                double floor = 1e-4) {
  return max_grad_fd_error(
      params, [&](Tape& t) { return t.val(build(t))[0]; }, build, h, floor);
}

inline Tensor random_tensor(Shape shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

inline Tensor random_positive(Shape shape, RngStream& rng, double lo = 0.2, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform01();
  return t;
}

}  // namespace sagvae::test
