#include "sagvae/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sagvae {

std::vector<int> RngStream::sample_without_replacement(int n, int k) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = 0; i < k && i < n - 1; ++i) {
    const int j = i + uniform_int(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(std::min(k, n)));
  return idx;
}

Var sample_gaussian(Tape& tape, const GaussianPosterior& post, const Tensor& eps) {
  if (!tape.val(post.mu).same_shape(eps))
    throw std::invalid_argument("sample_gaussian: noise shape " + shape_str(eps.shape()) +
                                " does not match mu " + shape_str(tape.val(post.mu).shape()));
  Var lv = tape.clamp_(post.logvar, -kLogvarClamp, kLogvarClamp);
  Var sigma = tape.exp_(tape.scale(lv, 0.5));
  return tape.add(post.mu, tape.mul(sigma, tape.constant(eps)));
}

Var sample_gaussian(Tape& tape, const GaussianPosterior& post, RngStream& rng) {
  return sample_gaussian(tape, post, rng.gaussian_tensor(tape.val(post.mu).shape()));
}

Var kl_gaussian_std(Tape& tape, const GaussianPosterior& post) {
  Var lv = tape.clamp_(post.logvar, -kLogvarClamp, kLogvarClamp);
  Var mu2 = tape.mul(post.mu, post.mu);
  Var var = tape.exp_(lv);
  Var inner = tape.add_const(tape.sub(tape.add(mu2, var), lv), -1.0);
  return tape.scale(tape.sum(inner), 0.5);
}

double kl_gaussian_std_value(const Tensor& mu, const Tensor& logvar) {
  if (!mu.same_shape(logvar))
    throw std::invalid_argument("kl_gaussian_std: mu/logvar shape mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < mu.size(); ++i) {
    const double lv = std::clamp(logvar[i], -kLogvarClamp, kLogvarClamp);
    s += 0.5 * (mu[i] * mu[i] + std::exp(lv) - 1.0 - lv);
  }
  return s;
}

Var sample_gumbel_softmax(Tape& tape, Var log_alpha, double tau, const Tensor& gumbel_noise) {
  if (tau <= 0.0)
    throw std::invalid_argument("sample_gumbel_softmax: tau must be positive, got " +
                                std::to_string(tau));
  Var noisy = tape.add(log_alpha, tape.constant(gumbel_noise));
  return tape.softmax_lastdim(tape.scale(noisy, 1.0 / tau));
}

Var sample_gumbel_softmax(Tape& tape, Var log_alpha, double tau, RngStream& rng) {
  return sample_gumbel_softmax(tape, log_alpha, tau,
                               rng.gumbel_tensor(tape.val(log_alpha).shape()));
}

GumbelSoftmaxSample sample_gumbel_softmax_value(const Tensor& log_alpha, double tau,
                                                RngStream& rng) {
  Tape tape;
  Var s = sample_gumbel_softmax(tape, tape.constant(log_alpha), tau, rng);
  return GumbelSoftmaxSample{tape.val(s), tau};
}

Var kl_edge(Tape& tape, Var q_probs, const std::array<double, 2>& prior) {
  const Tensor& q = tape.val(q_probs);
  if (q.ndim() < 1 || q.dim(q.ndim() - 1) != 2)
    throw std::invalid_argument("kl_edge: expected trailing class dim of 2, got " +
                                shape_str(q.shape()));
  for (int k = 0; k < 2; ++k) {
    if (prior[static_cast<size_t>(k)] <= 0.0) {
      for (int64_t i = 0; i < q.size() / 2; ++i)
        if (q[i * 2 + k] > 0.0)
          throw std::domain_error("kl_edge: infinite KL, prior class " + std::to_string(k) +
                                  " has zero probability but posterior mass " +
                                  std::to_string(q[i * 2 + k]));
    }
  }
  Tensor log_prior({2}, {std::log(prior[0]), std::log(prior[1])});
  Var diff = tape.sub(tape.log_(q_probs), tape.constant(log_prior));
  return tape.sum(tape.mul(q_probs, diff));
}

double kl_edge_value(const Tensor& q_probs, const std::array<double, 2>& prior) {
  if (q_probs.ndim() < 1 || q_probs.dim(q_probs.ndim() - 1) != 2)
    throw std::invalid_argument("kl_edge: expected trailing class dim of 2");
  double s = 0.0;
  for (int64_t i = 0; i < q_probs.size() / 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      const double qk = q_probs[i * 2 + k];
      const double pk = prior[static_cast<size_t>(k)];
      if (qk == 0.0) continue;
      if (pk <= 0.0)
        throw std::domain_error("kl_edge: infinite KL against zero-probability prior class");
      s += qk * std::log(qk / pk);
    }
  }
  return s;
}

}  // namespace sagvae
