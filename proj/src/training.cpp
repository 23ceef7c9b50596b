#include "sagvae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace sagvae {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(tau_start > 0.0) || !(tau_end > 0.0))
    throw std::invalid_argument("TrainConfig: temperatures must be positive");
  if (tau_end > tau_start)
    throw std::invalid_argument("TrainConfig: tau_end must not exceed tau_start");
  if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: negative learning rate");
  if (beta_a != -1.0 && !(beta_a > 0.0))
    throw std::invalid_argument("TrainConfig: beta_a must be positive");
}

double temperature_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("temperature_schedule: negative step");
  const int horizon = cfg.resolved_anneal_epochs();
  if (epoch >= horizon || horizon == 0) return cfg.tau_end;
  const double frac = static_cast<double>(epoch) / horizon;
  return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac);
}

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& p : params.all()) {
    const int64_t count = p->value.size();
    auto update = [&](int64_t i) {
      const double g = p->grad[i];
      p->m[i] = beta1_ * p->m[i] + (1.0 - beta1_) * g;
      p->v[i] = beta2_ * p->v[i] + (1.0 - beta2_) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    };
    if (count > (1 << 15)) {
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < count; ++i) update(i);
    } else {
      for (int64_t i = 0; i < count; ++i) update(i);
    }
  }
}

namespace {

LossValues read_terms(const Tape& tape, const ElboTerms& t) {
  LossValues v;
  v.total = tape.val(t.total)[0];
  v.recon = tape.val(t.recon)[0];
  v.kl_z = tape.val(t.kl_z)[0];
  v.kl_a = tape.val(t.kl_a)[0];
  if (!std::isfinite(v.recon)) throw std::runtime_error("elbo: reconstruction term is not finite");
  if (!std::isfinite(v.kl_z)) throw std::runtime_error("elbo: KL(Z) term is not finite");
  if (!std::isfinite(v.kl_a)) throw std::runtime_error("elbo: KL(A) term is not finite");
  if (!std::isfinite(v.total)) throw std::runtime_error("elbo: total loss is not finite");
  return v;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx, int lo, int hi) {
  const int w = x.dim(1);
  Tensor out({hi - lo, w});
  for (int r = lo; r < hi; ++r)
    for (int c = 0; c < w; ++c) out(r - lo, c) = x(idx[static_cast<size_t>(r)], c);
  return out;
}

double edge_prior_deviation(const Tape& tape, const SagVae& model, const ElboTerms& terms) {
  if (!terms.edges.sampled) return 0.0;
  const Tensor& pairs = tape.val(terms.edges.probs_pairs);
  const double prior = model.config().prior_p;
  double dev = 0.0;
  const int64_t count = pairs.size() / 2;
  for (int64_t k = 0; k < count; ++k) dev += std::abs(pairs[k * 2] - prior);
  return count > 0 ? dev / static_cast<double>(count) : 0.0;
}

}  // namespace

LossValues elbo_loss(const SagVae& model, const Tensor& x_batch, double tau, double beta_a,
                     ReconLoss loss, RngStream& rng) {
  Tape tape;
  ElboTerms terms = model.elbo(tape, x_batch, tau, beta_a, loss, rng);
  return read_terms(tape, terms);
}

TrainReport train(SagVae& model, const Tensor& x_all, const TrainConfig& cfg) {
  cfg.validate();
  if (x_all.ndim() != 2 || x_all.dim(0) < 1)
    throw std::invalid_argument("train: dataset must be a non-empty [M, n*d] tensor");
  const auto t0 = std::chrono::steady_clock::now();
  const int total_rows = x_all.dim(0);
  const double beta_a =
      cfg.beta_a > 0.0 ? cfg.beta_a : default_beta_a(model.config().n);

  RngStream rng(cfg.seed);
  Adam opt(cfg.learning_rate);
  TrainReport report;

  std::vector<int> order(static_cast<size_t>(total_rows));
  for (int i = 0; i < total_rows; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = temperature_schedule(epoch, cfg);
    // Fisher-Yates
    for (int i = total_rows - 1; i > 0; --i) {
      const int j = rng.uniform_int(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    double dev = 0.0;
    int batches = 0;
    for (int lo = 0; lo < total_rows; lo += cfg.batch_size) {
      const int hi = std::min(lo + cfg.batch_size, total_rows);
      Tensor xb = gather_rows(x_all, order, lo, hi);
      Tape tape;
      LossValues v;
      try {
        ElboTerms terms = model.elbo(tape, xb, tau, beta_a, cfg.recon_loss, rng);
        v = read_terms(tape, terms);
        if (v.total > cfg.divergence_limit)
          throw std::runtime_error("elbo: loss " + std::to_string(v.total) +
                                   " exceeds divergence limit");
        for (const auto& p : model.params().all()) p->zero_grad();
        tape.backward(terms.total);
        dev = edge_prior_deviation(tape, model, terms);
      } catch (const std::runtime_error& e) {
        report.aborted = true;
        report.abort_reason = std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) +
                              "); last good checkpoint kept";
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report;
      } catch (const std::domain_error& e) {  // numeric blow-up inside an op
        report.aborted = true;
        report.abort_reason = std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) +
                              "); last good checkpoint kept";
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report;
      }
      opt.step(model.params());
      const double w = hi - lo;
      stats.recon += v.recon * w;
      stats.kl_z += v.kl_z * w;
      stats.kl_a += v.kl_a * w;
      stats.total += v.total * w;
      ++batches;
    }
    stats.recon /= total_rows;
    stats.kl_z /= total_rows;
    stats.kl_a /= total_rows;
    stats.total /= total_rows;
    stats.edge_prior_dev = dev;
    report.epochs.push_back(stats);
    if (!cfg.checkpoint_path.empty()) model.save_checkpoint(cfg.checkpoint_path);
    if (cfg.verbose && ((epoch + 1) % 25 == 0 || epoch == 0))
      std::fprintf(stderr, "epoch %d/%d  total %.5f  recon %.5f  kl_z %.5f  kl_a %.6f  dev %.4f\n",
                   epoch + 1, cfg.epochs, stats.total, stats.recon, stats.kl_z, stats.kl_a,
                   stats.edge_prior_dev);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open report for writing: " + path);
  f << "epoch,recon,kl_z,kl_a,total\n";
  char buf[160];
  for (const EpochStats& e : report.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.recon, e.kl_z,
                  e.kl_a, e.total);
    f << buf;
  }
}

Tensor edge_probabilities(const SagVae& model, const Tensor& x, int chunk) {
  const ModelConfig& cfg = model.config();
  if (cfg.identity_adjacency) return Tensor::eye(cfg.n);
  const int m = x.dim(0);
  const int w = x.dim(1);
  Tensor acc({cfg.n, cfg.n});
  for (int lo = 0; lo < m; lo += chunk) {
    const int hi = std::min(lo + chunk, m);
    Tensor xc({hi - lo, w},
              std::vector<double>(x.data() + static_cast<int64_t>(lo) * w,
                                  x.data() + static_cast<int64_t>(hi) * w));
    Tape tape;
    EdgeEncoding ee = model.encode_edges(tape, xc, 1.0, nullptr);
    const Tensor& probs = tape.val(ee.probs_sym);
    const double weight = static_cast<double>(hi - lo) / m;
    for (int64_t i = 0; i < probs.size(); ++i) acc[i] += probs[i] * weight;
  }
  return acc;
}

Tensor reconstruct_mean(const SagVae& model, const Tensor& x, int chunk) {
  const ModelConfig& cfg = model.config();
  const int m = x.dim(0);
  const int w = x.dim(1);
  Tensor probs = edge_probabilities(model, x);
  Tensor out({m, w});
  for (int lo = 0; lo < m; lo += chunk) {
    const int hi = std::min(lo + chunk, m);
    Tensor xc({hi - lo, w},
              std::vector<double>(x.data() + static_cast<int64_t>(lo) * w,
                                  x.data() + static_cast<int64_t>(hi) * w));
    Tape tape;
    EncodedZ enc = model.encode_z(tape, xc);
    Var h1 = model.latent_to_nodes(tape, enc.post.mu);
    Var a0, v;
    Tensor mask;
    if (cfg.identity_adjacency) {
      a0 = tape.constant(Tensor({cfg.n, cfg.n}));
      v = tape.constant(Tensor::full({cfg.n, cfg.n}, 1.0));
      mask = Tensor::eye(cfg.n);
    } else {
      Tensor a_soft = probs;
      for (int i = 0; i < cfg.n; ++i) a_soft(i, i) = 0.0;
      a0 = tape.constant(a_soft);
      EdgeEncoding ee = model.encode_edges(tape, xc, 1.0, nullptr);
      v = ee.v_sym;
      mask = Tensor::full({cfg.n, cfg.n}, 1.0);
    }
    DecodeOut dec = model.decode(tape, h1, a0, v, mask);
    const Tensor& xh = tape.val(dec.x_hat);
    for (int r = 0; r < hi - lo; ++r)
      for (int c = 0; c < w; ++c) out(lo + r, c) = xh[static_cast<int64_t>(r) * w + c];
  }
  return out;
}

}  // namespace sagvae
