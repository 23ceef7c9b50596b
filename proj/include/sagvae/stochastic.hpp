#pragma once

#include <array>

#include "sagvae/autodiff.hpp"
#include "sagvae/random.hpp"

namespace sagvae {

/// Diagonal Gaussian q(z) = N(mu, diag(exp(logvar))) as tape variables.
/// logvar is clamped to [-10, 10] before exponentiation.
struct GaussianPosterior {
  Var mu;
  Var logvar;
};

constexpr double kLogvarClamp = 10.0;

/// Reparameterized draw z = mu + exp(logvar/2) * eps with the given noise.
Var sample_gaussian(Tape& tape, const GaussianPosterior& post, const Tensor& eps);
Var sample_gaussian(Tape& tape, const GaussianPosterior& post, RngStream& rng);

/// Analytic KL(q || N(0,I)) summed over all entries.
Var kl_gaussian_std(Tape& tape, const GaussianPosterior& post);
double kl_gaussian_std_value(const Tensor& mu, const Tensor& logvar);

/// Relaxed categorical draw, softmax((log_alpha + G)/tau) over the last dim.
struct GumbelSoftmaxSample {
  Tensor simplex;
  double tau = 1.0;
};

Var sample_gumbel_softmax(Tape& tape, Var log_alpha, double tau, const Tensor& gumbel_noise);
Var sample_gumbel_softmax(Tape& tape, Var log_alpha, double tau, RngStream& rng);
GumbelSoftmaxSample sample_gumbel_softmax_value(const Tensor& log_alpha, double tau,
                                                RngStream& rng);

/// Categorical KL between per-position simplices q [...,K] and a fixed prior
/// simplex, summed over positions. Throws on a zero prior class with
/// nonzero posterior mass.
Var kl_edge(Tape& tape, Var q_probs, const std::array<double, 2>& prior);
double kl_edge_value(const Tensor& q_probs, const std::array<double, 2>& prior);

}  // namespace sagvae
