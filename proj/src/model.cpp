#include "sagvae/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sagvae {

using json = nlohmann::json;

std::string to_string(LatentMode m) {
  return m == LatentMode::kDimensionWise ? "dimension-wise" : "data-point-wise";
}

LatentMode latent_mode_from_string(const std::string& s) {
  if (s == "dimension-wise") return LatentMode::kDimensionWise;
  if (s == "data-point-wise") return LatentMode::kDataPointWise;
  throw std::invalid_argument("unknown latent mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (n < 1) throw std::invalid_argument("ModelConfig: n must be >= 1");
  if (d < 1) throw std::invalid_argument("ModelConfig: d must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
  if (!identity_adjacency && n < 2)
    throw std::invalid_argument("ModelConfig: edge inference needs n >= 2");
  if (prior_p <= 0.0 || prior_p >= 1.0)
    throw std::invalid_argument("ModelConfig: prior_p must lie in (0,1)");
}

double default_beta_a(int n) { return 1.0 / (static_cast<double>(n) * n - n); }

Parameter& ParamStore::create(const std::string& name, Tensor init) {
  if (find(name)) throw std::logic_error("ParamStore: duplicate parameter '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

int64_t ParamStore::total_size() const {
  int64_t s = 0;
  for (const auto& p : params_) s += p->value.size();
  return s;
}

namespace {

Tensor glorot(Shape shape, RngStream* rng) {
  Tensor t(shape);
  if (!rng) return t;
  const double fan_in = shape.size() == 2 ? shape[0] : 1;
  const double fan_out = shape.size() == 2 ? shape[1] : 1;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = (2.0 * rng->uniform01() - 1.0) * limit;
  return t;
}

}  // namespace

SagVae::SagVae(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

SagVae::SagVae(ModelConfig cfg, RngStream& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_params(&init_rng);
}

SagVae::Linear SagVae::make_linear(const std::string& name, int in, int out, RngStream* rng) {
  Linear lin;
  lin.w = &store_.create(name + ".w", glorot({in, out}, rng));
  lin.b = &store_.create(name + ".b", Tensor({out}));
  return lin;
}

void SagVae::build_params(RngStream* rng) {
  const int in_w = cfg_.input_width();
  const int z_out = cfg_.latent_mode == LatentMode::kDimensionWise
                        ? cfg_.n * cfg_.latent_dim
                        : cfg_.latent_dim;

  int w = in_w;
  for (size_t i = 0; i < cfg_.enc_hidden.size(); ++i) {
    z_trunk_.push_back(make_linear("zenc.trunk." + std::to_string(i), w, cfg_.enc_hidden[i], rng));
    w = cfg_.enc_hidden[i];
  }
  z_mu_ = make_linear("zenc.mu", w, z_out, rng);
  z_logvar_ = make_linear("zenc.logvar", w, z_out, rng);

  if (!cfg_.identity_adjacency) {
    w = in_w;
    for (size_t i = 0; i < cfg_.edge_hidden.size(); ++i) {
      edge_trunk_.push_back(
          make_linear("eenc.trunk." + std::to_string(i), w, cfg_.edge_hidden[i], rng));
      w = cfg_.edge_hidden[i];
    }
    edge_logit_ = make_linear("eenc.logit", w, 2 * cfg_.pair_count(), rng);
    edge_weight_ = make_linear("eenc.weight", w, cfg_.pair_count(), rng);
  }

  if (cfg_.latent_mode == LatentMode::kDataPointWise)
    dp_proj_ = make_linear("dpw.proj", cfg_.latent_dim, cfg_.n, rng);

  dec_widths_.clear();
  dec_widths_.push_back(cfg_.latent_node_width());
  for (int h : cfg_.dec_hidden) dec_widths_.push_back(h);
  dec_widths_.push_back(cfg_.d);
  const int w0 = dec_widths_.front();
  for (size_t l = 0; l + 1 < dec_widths_.size(); ++l) {
    const int din = dec_widths_[l];
    const int dout = dec_widths_[l + 1];
    const int dbar = (din + 1) / 2;
    const std::string base = "dec." + std::to_string(l);
    DecoderLayer layer;
    layer.w = &store_.create(base + ".w", glorot({din, dout}, rng));
    layer.w_skip = &store_.create(base + ".w_skip", glorot({w0, dout}, rng));
    layer.w_left = &store_.create(base + ".w_left", glorot({din, dbar}, rng));
    layer.w_right = &store_.create(base + ".w_right", glorot({din, dbar}, rng));
    layer.w_gate = &store_.create(base + ".w_gate", glorot({din, dbar}, rng));
    layer.w_fuse = &store_.create(base + ".w_fuse", glorot({dbar, din}, rng));
    layer.lambda = &store_.create(base + ".lambda", Tensor({1}));  // gate starts closed
    dec_layers_.push_back(layer);
  }
}

Var SagVae::apply_linear(Tape& tape, const Linear& lin, Var x) const {
  return tape.add(tape.matmul(x, tape.param(*lin.w)), tape.param(*lin.b));
}

Var SagVae::trunk_forward(Tape& tape, const std::vector<Linear>& trunk, Var x) const {
  Var h = x;
  for (const Linear& lin : trunk) h = tape.tanh_(apply_linear(tape, lin, h));
  return h;
}

EncodedZ SagVae::encode_z(Tape& tape, const Tensor& x) const {
  if (x.ndim() != 2 || x.dim(1) != cfg_.input_width())
    throw std::invalid_argument("encode_z: expected [m," + std::to_string(cfg_.input_width()) +
                                "], got " + shape_str(x.shape()));
  const int m = x.dim(0);
  Var h = trunk_forward(tape, z_trunk_, tape.constant(x));
  Var mu = apply_linear(tape, z_mu_, h);
  Var logvar = apply_linear(tape, z_logvar_, h);
  if (cfg_.latent_mode == LatentMode::kDimensionWise) {
    mu = tape.reshape(mu, {m, cfg_.n, cfg_.latent_dim});
    logvar = tape.reshape(logvar, {m, cfg_.n, cfg_.latent_dim});
  }
  return EncodedZ{GaussianPosterior{mu, logvar}};
}

EdgeEncoding SagVae::encode_edges(Tape& tape, const Tensor& x, double tau, RngStream* rng) const {
  if (cfg_.identity_adjacency)
    throw std::logic_error("encode_edges: model runs with the identity-adjacency ablation");
  if (x.ndim() != 2 || x.dim(1) != cfg_.input_width())
    throw std::invalid_argument("encode_edges: expected [m," +
                                std::to_string(cfg_.input_width()) + "], got " +
                                shape_str(x.shape()));
  const int m = x.dim(0);
  const int pairs = cfg_.pair_count();

  EdgeEncoding out;
  Var h = trunk_forward(tape, edge_trunk_, tape.constant(x));
  out.logits_pairs = tape.reshape(apply_linear(tape, edge_logit_, h), {m, pairs, 2});
  out.probs_pairs = tape.mean_axis0(tape.softmax_lastdim(out.logits_pairs));
  out.probs_sym = tape.sym_from_upper(tape.select_last(out.probs_pairs, 0), cfg_.n, 1.0);

  out.v_pairs = tape.mean_axis0(tape.sigmoid_(apply_linear(tape, edge_weight_, h)));
  out.v_sym = tape.sym_from_upper(out.v_pairs, cfg_.n, 1.0);

  if (rng != nullptr) {
    Var sample = sample_gumbel_softmax(tape, out.logits_pairs, tau,
                                       rng->gumbel_tensor({m, pairs, 2}));
    out.a_upper = tape.select_last(tape.mean_axis0(sample), 0);
    out.a_sym0 = tape.sym_from_upper(out.a_upper, cfg_.n, 0.0);
    out.sampled = true;
  }
  return out;
}

Var SagVae::latent_to_nodes(Tape& tape, Var z) const {
  const Tensor& zv = tape.val(z);
  if (cfg_.latent_mode == LatentMode::kDimensionWise) {
    // already [m,n,d_z]
    return z;
  }
  const int m = zv.dim(0);
  Var h = apply_linear(tape, dp_proj_, z);
  return tape.reshape(h, {m, cfg_.n, 1});
}

DecodeOut SagVae::decode(Tape& tape, Var h1, Var a_sym0, Var v_sym,
                         const Tensor& neighbor_mask) const {
  const Tensor& h1v = tape.val(h1);
  if (h1v.ndim() != 3 || h1v.dim(1) != cfg_.n || h1v.dim(2) != dec_widths_.front())
    throw std::invalid_argument("decode: expected latent [m," + std::to_string(cfg_.n) + "," +
                                std::to_string(dec_widths_.front()) + "], got " +
                                shape_str(h1v.shape()));

  Var a_tilde = normalize_adjacency(tape, a_sym0);
  // attention weights: V times (A+I); both diagonals are 1 so self stays 1
  Var w_att = tape.mul(tape.add(a_sym0, tape.constant(Tensor::eye(cfg_.n))), v_sym);
  Var skip_src = tape.matmul(a_tilde, h1);

  Var h = h1;
  const size_t layers = dec_layers_.size();
  Var x_pre;
  for (size_t l = 0; l < layers; ++l) {
    const DecoderLayer& ly = dec_layers_[l];
    Var ah = tape.matmul(a_tilde, h);
    Var alpha = attention_scores(tape, h, neighbor_mask, w_att, tape.param(*ly.w_left),
                                 tape.param(*ly.w_right));
    Var h_bar = attention_apply(tape, alpha, h, tape.param(*ly.w_gate), tape.param(*ly.w_fuse));
    Var gated = tape.add(tape.mul(h_bar, tape.param(*ly.lambda)), ah);
    Var skip = tape.matmul(skip_src, tape.param(*ly.w_skip));
    if (l + 1 < layers) {
      h = tape.add(tape.matmul(tape.tanh_(gated), tape.param(*ly.w)), skip);
    } else {
      x_pre = tape.add(tape.matmul(gated, tape.param(*ly.w)), skip);
    }
  }
  DecodeOut out;
  out.x_pre = x_pre;
  out.x_hat = cfg_.output_activation == OutputActivation::kSigmoid ? tape.sigmoid_(x_pre) : x_pre;
  return out;
}

ElboTerms SagVae::elbo(Tape& tape, const Tensor& x, double tau, double beta_a, ReconLoss loss,
                       RngStream& rng) const {
  const int m = x.dim(0);
  ElboTerms out;

  EncodedZ enc = encode_z(tape, x);
  Var z = sample_gaussian(tape, enc.post, rng);
  Var h1 = latent_to_nodes(tape, z);

  Var a0, v;
  Tensor mask;
  if (cfg_.identity_adjacency) {
    a0 = tape.constant(Tensor({cfg_.n, cfg_.n}));
    v = tape.constant(Tensor::full({cfg_.n, cfg_.n}, 1.0));
    mask = Tensor::eye(cfg_.n);
  } else {
    out.edges = encode_edges(tape, x, tau, &rng);
    a0 = out.edges.a_sym0;
    v = out.edges.v_sym;
    mask = Tensor::full({cfg_.n, cfg_.n}, 1.0);
  }

  DecodeOut dec = decode(tape, h1, a0, v, mask);
  out.x_hat = dec.x_hat;

  Var xt = tape.reshape(tape.constant(x), {m, cfg_.n, cfg_.d});
  if (loss == ReconLoss::kBernoulli) {
    if (cfg_.output_activation != OutputActivation::kSigmoid)
      throw std::invalid_argument("elbo: Bernoulli loss needs a sigmoid output");
    Var bce = tape.sub(tape.softplus_(dec.x_pre), tape.mul(xt, dec.x_pre));
    out.recon = tape.scale(tape.sum(bce), 1.0 / m);
  } else {
    Var diff = tape.sub(dec.x_hat, xt);
    out.recon = tape.scale(tape.sum(tape.mul(diff, diff)), 0.5 / m);
  }

  out.kl_z = tape.scale(kl_gaussian_std(tape, enc.post), 1.0 / m);

  if (cfg_.identity_adjacency) {
    out.kl_a = tape.constant(Tensor::scalar(0.0));
  } else {
    // ordered-pair count: each unordered pair appears twice in the n^2-n sum
    Var kl_pairs = kl_edge(tape, out.edges.probs_pairs, {cfg_.prior_p, 1.0 - cfg_.prior_p});
    out.kl_a = tape.scale(kl_pairs, 2.0 * beta_a);
  }

  out.total = tape.add(tape.add(out.recon, out.kl_z), out.kl_a);
  return out;
}

void SagVae::save_checkpoint(const std::string& path) const {
  json j;
  j["latent_mode"] = to_string(cfg_.latent_mode);
  j["n"] = cfg_.n;
  j["d"] = cfg_.d;
  j["latent_dim"] = cfg_.latent_dim;
  j["enc_hidden"] = cfg_.enc_hidden;
  j["edge_hidden"] = cfg_.edge_hidden;
  j["dec_hidden"] = cfg_.dec_hidden;
  j["output_activation"] =
      cfg_.output_activation == OutputActivation::kSigmoid ? "sigmoid" : "identity";
  j["prior_p"] = cfg_.prior_p;
  j["identity_adjacency"] = cfg_.identity_adjacency;
  const std::string header = j.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write("SAGVCKP1", 8);
  const uint32_t hlen = static_cast<uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(header.data(), hlen);
  const uint64_t count = store_.all().size();
  f.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& p : store_.all()) {
    const uint32_t nlen = static_cast<uint32_t>(p->name.size());
    f.write(reinterpret_cast<const char*>(&nlen), 4);
    f.write(p->name.data(), nlen);
    const uint32_t ndim = static_cast<uint32_t>(p->value.ndim());
    f.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int i = 0; i < p->value.ndim(); ++i) {
      const int64_t dim = p->value.dim(i);
      f.write(reinterpret_cast<const char*>(&dim), 8);
    }
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * 8));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

SagVae SagVae::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "SAGVCKP1", 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
  json j = json::parse(header);

  ModelConfig cfg;
  cfg.latent_mode = latent_mode_from_string(j.at("latent_mode").get<std::string>());
  cfg.n = j.at("n").get<int>();
  cfg.d = j.at("d").get<int>();
  cfg.latent_dim = j.at("latent_dim").get<int>();
  cfg.enc_hidden = j.at("enc_hidden").get<std::vector<int>>();
  cfg.edge_hidden = j.at("edge_hidden").get<std::vector<int>>();
  cfg.dec_hidden = j.at("dec_hidden").get<std::vector<int>>();
  cfg.output_activation = j.at("output_activation").get<std::string>() == "sigmoid"
                              ? OutputActivation::kSigmoid
                              : OutputActivation::kIdentity;
  cfg.prior_p = j.at("prior_p").get<double>();
  cfg.identity_adjacency = j.at("identity_adjacency").get<bool>();

  SagVae model(cfg);
  model.build_params(nullptr);

  uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 8);
  if (count != model.store_.all().size())
    throw std::runtime_error("checkpoint parameter count mismatch: file has " +
                             std::to_string(count) + ", model defines " +
                             std::to_string(model.store_.all().size()));
  for (uint64_t t = 0; t < count; ++t) {
    uint32_t nlen = 0;
    f.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    uint32_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), 4);
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) {
      int64_t dim = 0;
      f.read(reinterpret_cast<char*>(&dim), 8);
      shape[i] = static_cast<int>(dim);
    }
    Parameter* p = model.store_.find(name);
    if (!p) throw std::runtime_error("checkpoint names unknown parameter '" + name + "'");
    if (p->value.shape() != shape)
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file " +
                               shape_str(shape) + " vs model " + shape_str(p->value.shape()));
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.size() * 8));
    if (!f) throw std::runtime_error("truncated checkpoint tensor '" + name + "'");
  }
  return model;
}

}  // namespace sagvae
