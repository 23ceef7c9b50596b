#pragma once

#include <string>
#include <vector>

#include "sagvae/model.hpp"

namespace sagvae {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double tau_start = 1.0;
  double tau_end = 0.3;
  int tau_anneal_epochs = -1;   // -1: first 60% of epochs
  double beta_a = -1.0;         // -1: 1/(n^2-n)
  uint64_t seed = 0;
  ReconLoss recon_loss = ReconLoss::kBernoulli;
  std::string checkpoint_path;  // rewritten every epoch when set
  double divergence_limit = 1e6;
  bool verbose = false;

  int resolved_anneal_epochs() const {
    return tau_anneal_epochs >= 0 ? tau_anneal_epochs
                                  : static_cast<int>(0.6 * epochs);
  }
  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double recon = 0, kl_z = 0, kl_a = 0, total = 0;
  double edge_prior_dev = 0;  // mean |q(edge) - prior|, collapse monitor
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Geometric interpolation tau_start -> tau_end over the anneal horizon,
/// constant afterwards.
double temperature_schedule(int epoch, const TrainConfig& cfg);

/// Adaptive moment optimizer over a ParamStore; moment buffers live on the
/// parameters themselves.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

/// Scalar view of one ELBO evaluation.
struct LossValues {
  double total = 0, recon = 0, kl_z = 0, kl_a = 0;
};

/// Forward-only ELBO on a batch; throws std::runtime_error naming the term
/// if any component is non-finite.
LossValues elbo_loss(const SagVae& model, const Tensor& x_batch, double tau, double beta_a,
                     ReconLoss loss, RngStream& rng);

/// Full optimization loop over x_all [M, n*d]; updates the model in place.
TrainReport train(SagVae& model, const Tensor& x_all, const TrainConfig& cfg);

void write_train_report_csv(const TrainReport& report, const std::string& path);

/// Batch-averaged edge presence probabilities over all samples (chunked),
/// symmetric with unit diagonal.
Tensor edge_probabilities(const SagVae& model, const Tensor& x, int chunk = 256);

/// Deterministic reconstruction: z = posterior mean, soft adjacency from the
/// full-batch edge probabilities. Returns [m, n*d].
Tensor reconstruct_mean(const SagVae& model, const Tensor& x, int chunk = 128);

}  // namespace sagvae
