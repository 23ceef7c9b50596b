#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sagvae/autodiff.hpp"
#include "sagvae/decoder.hpp"
#include "sagvae/random.hpp"
#include "sagvae/stochastic.hpp"

namespace sagvae {

enum class LatentMode { kDataPointWise, kDimensionWise };
enum class OutputActivation { kSigmoid, kIdentity };
enum class ReconLoss { kBernoulli, kSquaredError };

std::string to_string(LatentMode m);
LatentMode latent_mode_from_string(const std::string& s);

struct ModelConfig {
  LatentMode latent_mode = LatentMode::kDimensionWise;
  int n = 0;                            // graph nodes / feature dimensions
  int d = 1;                            // features carried by each node
  int latent_dim = 4;                   // d_z per node, or code width in
                                        // data-point-wise mode
  std::vector<int> enc_hidden{256, 256};
  std::vector<int> edge_hidden{256, 256};
  std::vector<int> dec_hidden{};        // widths between latent and output
  OutputActivation output_activation = OutputActivation::kSigmoid;
  double prior_p = 0.5;                 // Bernoulli prior on edge presence
  bool identity_adjacency = false;      // ablation: adjacency pinned to I

  int pair_count() const { return n * (n - 1) / 2; }
  int input_width() const { return n * d; }
  int latent_node_width() const {
    return latent_mode == LatentMode::kDimensionWise ? latent_dim : 1;
  }
  void validate() const;
};

/// Owns the named trainable tensors; order is creation order and is the
/// serialization order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  int64_t total_size() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct EncodedZ {
  GaussianPosterior post;  // dim-wise: [m,n,d_z]; data-point-wise: [m,latent_dim]
};

struct EdgeEncoding {
  Var logits_pairs;  // [m,P,2], class 0 = edge present
  Var probs_pairs;   // [P,2] noise-free, batch-averaged
  Var probs_sym;     // [n,n] presence probability, diagonal 1
  Var v_pairs;       // [P]
  Var v_sym;         // [n,n] attention edge weights, diagonal 1
  Var a_upper;       // [P] averaged Gumbel-Softmax draw (when sampled)
  Var a_sym0;        // [n,n] soft adjacency, zero diagonal (when sampled)
  bool sampled = false;
};

struct DecodeOut {
  Var x_hat;  // [m,n,d] after the output activation
  Var x_pre;  // pre-activation, used for the stable Bernoulli loss
};

struct ElboTerms {
  Var total;   // recon + kl_z + kl_a (kl_a already carries beta_a)
  Var recon;
  Var kl_z;
  Var kl_a;
  Var x_hat;
  EdgeEncoding edges;  // sampled=false under the identity ablation
};

/// Joint VAE over a data representation Z and a latent feature-relation
/// graph A, decoded by a self-attention graph network.
class SagVae {
 public:
  SagVae(ModelConfig cfg, RngStream& init_rng);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// x is [m, n*d] (node-major flattening of [m,n,d]).
  EncodedZ encode_z(Tape& tape, const Tensor& x) const;

  /// Pair logits, averaged probabilities, edge weights V and (when rng is
  /// non-null) one shared soft adjacency draw for the batch.
  EdgeEncoding encode_edges(Tape& tape, const Tensor& x, double tau, RngStream* rng) const;

  /// h1 is the latent node features [m,n,w0]; a_sym0 a zero-diagonal
  /// adjacency (soft or hard); neighbor_mask the 0/1 attention mask.
  DecodeOut decode(Tape& tape, Var h1, Var a_sym0, Var v_sym,
                   const Tensor& neighbor_mask) const;

  /// Latent sample to decoder input: reshape in dimension-wise mode, a
  /// learned projection to n node slots in data-point-wise mode.
  Var latent_to_nodes(Tape& tape, Var z) const;

  ElboTerms elbo(Tape& tape, const Tensor& x, double tau, double beta_a, ReconLoss loss,
                 RngStream& rng) const;

  void save_checkpoint(const std::string& path) const;
  static SagVae load_checkpoint(const std::string& path);

 private:
  struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
  };
  struct DecoderLayer {
    Parameter* w = nullptr;      // d_l -> d_{l+1}
    Parameter* w_skip = nullptr; // w0  -> d_{l+1}
    Parameter* w_left = nullptr;
    Parameter* w_right = nullptr;
    Parameter* w_gate = nullptr; // d_l -> d_bar
    Parameter* w_fuse = nullptr; // d_bar -> d_l
    Parameter* lambda = nullptr; // scalar gate, starts closed
  };

  explicit SagVae(ModelConfig cfg);  // params loaded afterwards
  void build_params(RngStream* init_rng);
  Linear make_linear(const std::string& name, int in, int out, RngStream* rng);
  Var apply_linear(Tape& tape, const Linear& lin, Var x) const;
  Var trunk_forward(Tape& tape, const std::vector<Linear>& trunk, Var x) const;

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<Linear> z_trunk_;
  Linear z_mu_, z_logvar_;
  std::vector<Linear> edge_trunk_;
  Linear edge_logit_, edge_weight_;
  Linear dp_proj_;                     // data-point-wise only
  std::vector<DecoderLayer> dec_layers_;
  std::vector<int> dec_widths_;        // [w0, dec_hidden..., d]
};

double default_beta_a(int n);

}  // namespace sagvae
