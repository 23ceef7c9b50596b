#include <cmath>

#include "doctest.h"
#include "sagvae/decoder.hpp"
#include "sagvae/model.hpp"
#include "test_util.hpp"

using namespace sagvae;
using sagvae::test::max_grad_fd_error;
using sagvae::test::random_positive;
using sagvae::test::random_tensor;

namespace {

// independent dense oracle for the symmetric normalization
Tensor normalize_oracle(const Tensor& a) {
  const int n = a.dim(0);
  std::vector<double> deg(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) deg[static_cast<size_t>(i)] += a(i, j) + (i == j ? 1.0 : 0.0);
  }
  Tensor out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double ahat = a(i, j) + (i == j ? 1.0 : 0.0);
      out(i, j) = ahat / std::sqrt(deg[static_cast<size_t>(i)] * deg[static_cast<size_t>(j)]);
    }
  return out;
}

// per-node loop oracle for the attention mix [alpha (h Wg)] Wf
Tensor attention_apply_oracle(const Tensor& alpha, const Tensor& h, const Tensor& wg,
                              const Tensor& wf) {
  const int n = h.dim(0), d = h.dim(1), dbar = wg.dim(1);
  Tensor hg({n, dbar});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dbar; ++k)
      for (int j = 0; j < d; ++j) hg(i, k) += h(i, j) * wg(j, k);
  Tensor mixed({n, dbar});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dbar; ++k)
      for (int j = 0; j < n; ++j) mixed(i, k) += alpha(i, j) * hg(j, k);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < dbar; ++k) out(i, j) += mixed(i, k) * wf(k, j);
  return out;
}

}  // namespace

TEST_CASE("normalize_adjacency: single node with no edges gives [1]") {
  Tape t;
  Var out = normalize_adjacency(t, t.constant(Tensor({1, 1})));
  CHECK(t.val(out)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("normalize_adjacency: 3-node path, hand-evaluated entries") {
  Tensor a({3, 3});
  a(0, 1) = a(1, 0) = 1.0;
  a(1, 2) = a(2, 1) = 1.0;
  Tape t;
  const Tensor& nt = t.val(normalize_adjacency(t, t.constant(a)));
  CHECK(nt(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(nt(0, 1) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-12));
  CHECK(nt(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(nt(0, 2) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("normalize_adjacency: matches the dense oracle on random soft inputs") {
  RngStream rng(61);
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + rng.uniform_int(9);
    Tensor a({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = rng.uniform01();
    Tape t;
    const Tensor& got = t.val(normalize_adjacency(t, t.constant(a)));
    Tensor want = normalize_oracle(a);
    for (int64_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("normalize_adjacency: invariant under node relabeling") {
  RngStream rng(62);
  const int n = 6;
  Tensor a({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = rng.uniform01();
  std::vector<int> perm = rng.sample_without_replacement(n, n);
  Tensor ap({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      ap(i, j) = a(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  Tape t;
  const Tensor& na = t.val(normalize_adjacency(t, t.constant(a)));
  const Tensor& nap = t.val(normalize_adjacency(t, t.constant(ap)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(std::abs(nap(i, j) - na(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)])) <=
            1e-12);
}

TEST_CASE("normalize_adjacency: differentiable w.r.t. the soft adjacency") {
  RngStream rng(63);
  const int n = 4;
  Tensor upper({n * (n - 1) / 2});
  for (int64_t i = 0; i < upper.size(); ++i) upper[i] = rng.uniform01();
  Parameter u("u", upper);
  Tensor upstream = random_tensor({n, n}, rng);
  auto build = [&](Tape& t) {
    Var a = t.sym_from_upper(t.param(u), n, 0.0);
    return t.sum(t.mul(normalize_adjacency(t, a), t.constant(upstream)));
  };
  CHECK(max_grad_fd_error({&u}, build, 1e-6) < 1e-4);
}

TEST_CASE("attention_scores: unit weights reduce the weighted softmax to the plain one") {
  RngStream rng(64);
  const int n = 5, d = 3, dbar = 2;
  Tensor h = random_tensor({n, d}, rng);
  Tensor wl = random_tensor({d, dbar}, rng);
  Tensor wr = random_tensor({d, dbar}, rng);
  Tensor mask = Tensor::full({n, n}, 1.0);
  Tape t;
  Var alpha = attention_scores(t, t.constant(h), mask, t.constant(Tensor::full({n, n}, 1.0)),
                               t.constant(wl), t.constant(wr));
  Var left = t.matmul(t.constant(h), t.constant(wl));
  Var right = t.matmul(t.constant(h), t.constant(wr));
  Var plain = t.masked_softmax(t.matmul(left, t.transpose(right)), mask);
  for (int64_t i = 0; i < n * n; ++i)
    CHECK(t.val(alpha)[i] == doctest::Approx(t.val(plain)[i]).epsilon(1e-13));
}

TEST_CASE("attention_scores: an isolated node attends only to itself") {
  RngStream rng(65);
  const int n = 4, d = 3;
  Tensor h = random_tensor({n, d}, rng);
  Tensor mask({n, n});
  mask(0, 0) = mask(1, 1) = mask(2, 2) = mask(3, 3) = 1.0;
  mask(1, 2) = mask(2, 1) = 1.0;  // node 0 and 3 isolated
  Tape t;
  Var alpha = attention_scores(t, t.constant(h), mask, t.constant(Tensor::full({n, n}, 1.0)),
                               t.constant(random_tensor({d, 2}, rng)),
                               t.constant(random_tensor({d, 2}, rng)));
  CHECK(t.val(alpha)(0, 0) == 1.0);
  CHECK(t.val(alpha)(3, 3) == 1.0);
  CHECK(t.val(alpha)(0, 1) == 0.0);
}

TEST_CASE("attention_scores: star center weights a doubled edge 2:1") {
  // 4-node star, node 0 center; equal relevance via h = 0
  const int n = 4, d = 2;
  Tensor h({n, d});  // zero features -> all e_ij equal
  Tensor mask({n, n});
  mask(0, 0) = mask(1, 1) = mask(2, 2) = mask(3, 3) = 1.0;
  for (int leaf = 1; leaf < 4; ++leaf) mask(0, leaf) = mask(leaf, 0) = 1.0;
  Tensor v = Tensor::full({n, n}, 1.0);
  v(0, 1) = v(1, 0) = 2.0;  // edge to leaf 1 carries weight 2
  Tape t;
  RngStream rng(66);
  Var alpha = attention_scores(t, t.constant(h), mask, t.constant(v),
                               t.constant(random_tensor({d, 2}, rng)),
                               t.constant(random_tensor({d, 2}, rng)));
  // center row: self 1, leaf1 2, leaf2 1, leaf3 1 -> normalized by 5
  CHECK(t.val(alpha)(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(t.val(alpha)(0, 2) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(t.val(alpha)(0, 3) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(t.val(alpha)(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(t.val(alpha)(0, 1) / t.val(alpha)(0, 2) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("attention_apply: identity attention reduces to H Wg Wf") {
  RngStream rng(67);
  const int n = 4, d = 3, dbar = 2;
  Tensor h = random_tensor({n, d}, rng);
  Tensor wg = random_tensor({d, dbar}, rng);
  Tensor wf = random_tensor({dbar, d}, rng);
  Tape t;
  Var out = attention_apply(t, t.constant(Tensor::eye(n)), t.constant(h), t.constant(wg),
                            t.constant(wf));
  Tensor want = matmul_nn(matmul_nn(h, wg), wf);
  for (int64_t i = 0; i < want.size(); ++i)
    CHECK(t.val(out)[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("attention_apply: zero fuse matrix gives zero output") {
  RngStream rng(68);
  const int n = 3, d = 2;
  Tape t;
  Var out = attention_apply(t, t.constant(Tensor::full({n, n}, 1.0 / n)),
                            t.constant(random_tensor({n, d}, rng)),
                            t.constant(random_tensor({d, 1}, rng)), t.constant(Tensor({1, d})));
  for (int64_t i = 0; i < n * d; ++i) CHECK(t.val(out)[i] == 0.0);
}

TEST_CASE("attention_apply: matches the per-node loop oracle") {
  RngStream rng(69);
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + rng.uniform_int(4);
    const int d = 1 + rng.uniform_int(4);
    const int dbar = 1 + rng.uniform_int(3);
    Tensor alpha({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) alpha(i, j) = rng.uniform01();
    Tensor h = random_tensor({n, d}, rng);
    Tensor wg = random_tensor({d, dbar}, rng);
    Tensor wf = random_tensor({dbar, d}, rng);
    Tape t;
    Var out =
        attention_apply(t, t.constant(alpha), t.constant(h), t.constant(wg), t.constant(wf));
    Tensor want = attention_apply_oracle(alpha, h, wg, wf);
    for (int64_t i = 0; i < want.size(); ++i) CHECK(std::abs(t.val(out)[i] - want[i]) <= 1e-12);
  }
}

namespace {

ModelConfig small_decoder_cfg() {
  ModelConfig cfg;
  cfg.latent_mode = LatentMode::kDimensionWise;
  cfg.n = 5;
  cfg.d = 3;
  cfg.latent_dim = 2;
  cfg.enc_hidden = {8};
  cfg.edge_hidden = {8};
  cfg.dec_hidden = {4};
  cfg.output_activation = OutputActivation::kSigmoid;
  return cfg;
}

}  // namespace

TEST_CASE("decode: closed gate and zero skip reduce to the attention-free conv stack") {
  RngStream rng(70);
  ModelConfig cfg = small_decoder_cfg();
  SagVae model(cfg, rng);
  for (const auto& p : model.params().all())
    if (p->name.find("w_skip") != std::string::npos) p->value.fill(0.0);

  const int m = 2;
  Tensor h1 = random_tensor({m, cfg.n, cfg.latent_dim}, rng);
  Tensor a({cfg.n, cfg.n});
  for (int i = 0; i < cfg.n; ++i)
    for (int j = i + 1; j < cfg.n; ++j) a(i, j) = a(j, i) = rng.uniform01();

  Tape t;
  DecodeOut out = model.decode(t, t.constant(h1), t.constant(a),
                               t.constant(Tensor::full({cfg.n, cfg.n}, 1.0)),
                               Tensor::full({cfg.n, cfg.n}, 1.0));

  // reference: H <- tanh(A~ H) W per hidden layer, sigmoid((A~ H) W) at the end
  Tensor at = normalize_oracle(a);
  const Tensor& w0 = model.params().find("dec.0.w")->value;
  const Tensor& w1 = model.params().find("dec.1.w")->value;
  for (int s = 0; s < m; ++s) {
    Tensor h({cfg.n, cfg.latent_dim});
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.latent_dim; ++j) h(i, j) = h1(s, i, j);
    Tensor g1 = matmul_nn(at, h);
    for (int64_t i = 0; i < g1.size(); ++i) g1[i] = std::tanh(g1[i]);
    Tensor h2 = matmul_nn(g1, w0);
    Tensor g2 = matmul_nn(at, h2);
    Tensor pre = matmul_nn(g2, w1);
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.d; ++j) {
        const double want = 1.0 / (1.0 + std::exp(-pre(i, j)));
        CHECK(t.val(out.x_hat)(s, i, j) == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("decode: lambda starts at zero, so the first pass is attention-free") {
  RngStream rng(71);
  ModelConfig cfg = small_decoder_cfg();
  SagVae model(cfg, rng);  // freshly initialized: lambda == 0

  const int m = 2;
  Tensor h1 = random_tensor({m, cfg.n, cfg.latent_dim}, rng);
  Tensor a({cfg.n, cfg.n});
  for (int i = 0; i < cfg.n; ++i)
    for (int j = i + 1; j < cfg.n; ++j) a(i, j) = a(j, i) = rng.uniform01();
  Tensor v = random_positive({cfg.n, cfg.n}, rng, 0.2, 1.0);
  for (int i = 0; i < cfg.n; ++i) v(i, i) = 1.0;

  Tape t;
  DecodeOut out =
      model.decode(t, t.constant(h1), t.constant(a), t.constant(v),
                   Tensor::full({cfg.n, cfg.n}, 1.0));

  // reference with the attention branch removed entirely
  Tensor at = normalize_oracle(a);
  const Tensor& w0 = model.params().find("dec.0.w")->value;
  const Tensor& w1 = model.params().find("dec.1.w")->value;
  const Tensor& ws0 = model.params().find("dec.0.w_skip")->value;
  const Tensor& ws1 = model.params().find("dec.1.w_skip")->value;
  for (int s = 0; s < m; ++s) {
    Tensor h({cfg.n, cfg.latent_dim});
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.latent_dim; ++j) h(i, j) = h1(s, i, j);
    Tensor skip_src = matmul_nn(at, h);
    Tensor g1 = skip_src;
    for (int64_t i = 0; i < g1.size(); ++i) g1[i] = std::tanh(g1[i]);
    Tensor h2 = matmul_nn(g1, w0);
    Tensor sk0 = matmul_nn(skip_src, ws0);
    for (int64_t i = 0; i < h2.size(); ++i) h2[i] += sk0[i];
    Tensor pre = matmul_nn(matmul_nn(at, h2), w1);
    Tensor sk1 = matmul_nn(skip_src, ws1);
    for (int64_t i = 0; i < pre.size(); ++i) pre[i] += sk1[i];
    for (int i = 0; i < cfg.n; ++i)
      for (int j = 0; j < cfg.d; ++j) {
        const double want = 1.0 / (1.0 + std::exp(-pre(i, j)));
        CHECK(t.val(out.x_hat)(s, i, j) == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("decode: zero adjacency makes nodes independent") {
  RngStream rng(72);
  ModelConfig cfg = small_decoder_cfg();
  SagVae model(cfg, rng);

  Tensor h1 = random_tensor({2, cfg.n, cfg.latent_dim}, rng);
  // second sample differs from the first only at node 2
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < cfg.latent_dim; ++j) h1(1, i, j) = h1(0, i, j);
  h1(1, 2, 0) += 0.9;

  Tape t;
  DecodeOut out = model.decode(t, t.constant(h1), t.constant(Tensor({cfg.n, cfg.n})),
                               t.constant(Tensor::full({cfg.n, cfg.n}, 1.0)),
                               Tensor::eye(cfg.n));
  bool node2_changed = false;
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j < cfg.d; ++j) {
      const double d0 = t.val(out.x_hat)(0, i, j);
      const double d1 = t.val(out.x_hat)(1, i, j);
      if (i == 2) {
        if (std::abs(d0 - d1) > 1e-9) node2_changed = true;
      } else {
        CHECK(d0 == doctest::Approx(d1).epsilon(1e-14));
      }
    }
  CHECK(node2_changed);
}

TEST_CASE("decode: output stays inside the sigmoid range") {
  RngStream rng(73);
  ModelConfig cfg = small_decoder_cfg();
  SagVae model(cfg, rng);
  Tensor h1 = random_tensor({3, cfg.n, cfg.latent_dim}, rng, 4.0);
  Tensor a({cfg.n, cfg.n});
  for (int i = 0; i < cfg.n; ++i)
    for (int j = i + 1; j < cfg.n; ++j) a(i, j) = a(j, i) = rng.uniform01();
  Tape t;
  DecodeOut out = model.decode(t, t.constant(h1), t.constant(a),
                               t.constant(Tensor::full({cfg.n, cfg.n}, 1.0)),
                               Tensor::full({cfg.n, cfg.n}, 1.0));
  for (int64_t i = 0; i < t.val(out.x_hat).size(); ++i) {
    CHECK(t.val(out.x_hat)[i] > 0.0);
    CHECK(t.val(out.x_hat)[i] < 1.0);
  }
  CHECK(t.val(out.x_hat).all_finite());
}

TEST_CASE("decode: full gradient check on a 5-node two-layer instance") {
  RngStream rng(74);
  ModelConfig cfg = small_decoder_cfg();
  SagVae model(cfg, rng);
  // open the gate so the attention branch carries gradient too
  model.params().find("dec.0.lambda")->value[0] = 0.35;
  model.params().find("dec.1.lambda")->value[0] = -0.2;

  Tensor h1 = random_tensor({2, cfg.n, cfg.latent_dim}, rng);
  Tensor a({cfg.n, cfg.n});
  for (int i = 0; i < cfg.n; ++i)
    for (int j = i + 1; j < cfg.n; ++j) a(i, j) = a(j, i) = rng.uniform01();
  Tensor v = random_positive({cfg.n, cfg.n}, rng, 0.3, 1.0);
  for (int i = 0; i < cfg.n; ++i) v(i, i) = 1.0;
  Tensor upstream = random_tensor({2, cfg.n, cfg.d}, rng);

  std::vector<Parameter*> dec_params;
  for (const auto& p : model.params().all())
    if (p->name.rfind("dec.", 0) == 0) dec_params.push_back(p.get());

  auto build = [&](Tape& t) {
    DecodeOut out = model.decode(t, t.constant(h1), t.constant(a), t.constant(v),
                                 Tensor::full({cfg.n, cfg.n}, 1.0));
    return t.sum(t.mul(out.x_hat, t.constant(upstream)));
  };
  CHECK(max_grad_fd_error(dec_params, build, 1e-5, 1e-3) < 1e-3);
}
