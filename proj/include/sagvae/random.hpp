#pragma once

#include <cstdint>
#include <random>

#include "sagvae/tensor.hpp"

namespace sagvae {

/// Deterministic random stream. mt19937_64 is fully specified by the
/// standard and the derived draws below avoid std::*_distribution, whose
/// output is implementation-defined, so a seed reproduces bit-identical
/// streams everywhere.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in the open interval (0,1).
  double uniform01() {
    const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double gaussian() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Standard Gumbel, -log(-log u), with u kept away from {0,1}.
  double gumbel() {
    double u = uniform01();
    u = std::min(std::max(u, 1e-10), 1.0 - 1e-10);
    return -std::log(-std::log(u));
  }

  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

  Tensor gaussian_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = gaussian();
    return t;
  }

  Tensor gumbel_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = gumbel();
    return t;
  }

  Tensor uniform_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = uniform01();
    return t;
  }

  /// Fisher-Yates partial shuffle: first k entries of a random permutation
  /// of 0..n-1.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 gen_;
};

}  // namespace sagvae
