// Command-line front end: training, edge retrieval evaluation, baselines,
// image reconstruction under perturbations, class-conditional sampling,
// synthetic data generation and adjacency export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sagvae/data.hpp"
#include "sagvae/metrics.hpp"
#include "sagvae/training.hpp"

using namespace sagvae;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TrainSpec {
  Tensor features;  // [m, n*d]
  int n = 0, d = 0;
  ModelConfig model;
  TrainConfig train;
  std::string checkpoint_out = "model.ckpt";
  std::string report_out = "report.csv";
};

ModelConfig model_from_json(const json& j, int n, int d) {
  ModelConfig cfg;
  cfg.n = n;
  cfg.d = d;
  cfg.latent_mode = latent_mode_from_string(j.value("latent_mode", "dimension-wise"));
  cfg.latent_dim = j.value("latent_dim", 4);
  cfg.enc_hidden = j.value("enc_hidden", std::vector<int>{256, 256});
  cfg.edge_hidden = j.value("edge_hidden", std::vector<int>{256, 256});
  cfg.dec_hidden = j.value("dec_hidden", std::vector<int>{});
  cfg.output_activation = j.value("output_activation", std::string("sigmoid")) == "sigmoid"
                              ? OutputActivation::kSigmoid
                              : OutputActivation::kIdentity;
  cfg.prior_p = j.value("prior_p", 0.5);
  cfg.identity_adjacency = j.value("identity_adjacency", false);
  return cfg;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", 200);
  cfg.batch_size = j.value("batch_size", 32);
  cfg.learning_rate = j.value("learning_rate", 1e-3);
  cfg.tau_start = j.value("tau_start", 1.0);
  cfg.tau_end = j.value("tau_end", 0.3);
  cfg.tau_anneal_epochs = j.value("tau_anneal_epochs", -1);
  cfg.beta_a = j.value("beta_a", -1.0);
  cfg.seed = j.value("seed", 0);
  cfg.recon_loss = j.value("recon_loss", std::string("bernoulli")) == "bernoulli"
                       ? ReconLoss::kBernoulli
                       : ReconLoss::kSquaredError;
  cfg.divergence_limit = j.value("divergence_limit", 1e6);
  cfg.verbose = j.value("verbose", false);
  return cfg;
}

TrainSpec load_train_spec(const std::string& config_path) {
  std::ifstream f(config_path);
  if (!f) throw std::runtime_error("cannot open config: " + config_path);
  json j = json::parse(f);

  TrainSpec spec;
  if (j.contains("features")) {
    Tensor feats = load_feature_container(j.at("features").get<std::string>());
    spec.n = feats.dim(1);
    spec.d = feats.dim(2);
    spec.features = Tensor({feats.dim(0), spec.n * spec.d},
                           std::vector<double>(feats.data(), feats.data() + feats.size()));
  } else if (j.contains("images")) {
    std::vector<int> filter = j.value("class_filter", std::vector<int>{});
    ImageDataset ds =
        load_idx_images(j.at("images").get<std::string>(), j.at("labels").get<std::string>(),
                        filter);
    spec.n = ds.side * ds.side;
    spec.d = 1;
    spec.features = ds.images;
  } else {
    throw std::runtime_error(config_path + ": config needs either 'features' or 'images'");
  }
  spec.model = model_from_json(j.value("model", json::object()), spec.n, spec.d);
  spec.train = train_from_json(j.value("train", json::object()));
  if (j.contains("out")) {
    spec.checkpoint_out = j["out"].value("checkpoint", spec.checkpoint_out);
    spec.report_out = j["out"].value("report", spec.report_out);
  }
  return spec;
}

Tensor flat_from_container(const std::string& path) {
  Tensor feats = load_feature_container(path);
  return Tensor({feats.dim(0), feats.dim(1) * feats.dim(2)},
                std::vector<double>(feats.data(), feats.data() + feats.size()));
}

double mse(const Tensor& a, int row_a, const Tensor& b, int row_b) {
  const int w = a.dim(1);
  double s = 0.0;
  for (int c = 0; c < w; ++c) {
    const double d = a(row_a, c) - b(row_b, c);
    s += d * d;
  }
  return s / w;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed_override) {
  TrainSpec spec = load_train_spec(config_path);
  if (seed_override) spec.train.seed = *seed_override;
  spec.train.checkpoint_path = spec.checkpoint_out;
  RngStream init(spec.train.seed + 0x9e3779b97f4a7c15ull);
  SagVae model(spec.model, init);
  std::fprintf(stderr, "training: %d samples, n=%d d=%d, %lld parameters\n",
               spec.features.dim(0), spec.n, spec.d,
               static_cast<long long>(model.params().total_size()));
  TrainReport report = train(model, spec.features, spec.train);
  write_train_report_csv(report, spec.report_out);
  if (report.aborted) {
    std::fprintf(stderr, "training aborted: %s\n", report.abort_reason.c_str());
    return 1;
  }
  model.save_checkpoint(spec.checkpoint_out);
  std::fprintf(stderr, "done in %.1fs; checkpoint %s, report %s\n", report.wall_seconds,
               spec.checkpoint_out.c_str(), spec.report_out.c_str());
  return 0;
}

int cmd_gen_karate(const std::string& edges, const std::string& labels, const std::string& out_dir,
                   int patterns, int samples, int dim, uint64_t seed) {
  fs::create_directories(out_dir);
  KarateGenConfig cfg;
  cfg.edges_csv = edges;
  cfg.labels_csv = labels;
  cfg.n_patterns = patterns;
  cfg.samples_per_pattern = samples;
  cfg.feature_dim = dim;
  cfg.seed = seed;
  auto sets = gen_karate_synthetic(cfg);

  int train_rows = 0;
  for (const auto& ds : sets)
    if (!ds.holdout) train_rows += ds.samples();
  Tensor train_feats({train_rows, sets[0].nodes(), sets[0].feature_dim()});
  int row = 0;
  for (size_t p = 0; p < sets.size(); ++p) {
    save_feature_container(sets[p].features,
                           (fs::path(out_dir) / ("pattern" + std::to_string(p + 1) + ".bin"))
                               .string());
    if (!sets[p].holdout) {
      for (int s = 0; s < sets[p].samples(); ++s, ++row)
        for (int i = 0; i < sets[p].nodes(); ++i)
          for (int f = 0; f < sets[p].feature_dim(); ++f)
            train_feats(row, i, f) = sets[p].features(s, i, f);
    }
  }
  save_feature_container(train_feats, (fs::path(out_dir) / "train_features.bin").string());
  save_edge_list_csv(sets[0].true_adjacency, (fs::path(out_dir) / "edges.csv").string());
  save_labels_csv(sets[0].node_labels, (fs::path(out_dir) / "labels.csv").string());
  std::fprintf(stderr, "wrote %d patterns (%d train rows) to %s\n",
               static_cast<int>(sets.size()), train_rows, out_dir.c_str());
  return 0;
}

int cmd_eval_edges(const std::string& ckpt, const std::string& features,
                   const std::string& truth_csv, const std::string& out_csv,
                   const std::string& export_base, double threshold,
                   const std::string& method_name) {
  SagVae model = SagVae::load_checkpoint(ckpt);
  Tensor x = flat_from_container(features);
  Tensor probs = edge_probabilities(model, x);
  Tensor truth = load_edge_list_csv(truth_csv, model.config().n);
  EdgeMetrics m = edge_prf(probs, truth, threshold);
  write_metrics_csv({{method_name, m}}, out_csv);
  if (!export_base.empty()) export_adjacency(probs, export_base);
  std::printf("%s: precision %.4f recall %.4f f1 %.4f (tp %lld fp %lld fn %lld)\n",
              method_name.c_str(), m.precision, m.recall, m.f1, static_cast<long long>(m.tp),
              static_cast<long long>(m.fp), static_cast<long long>(m.fn));
  return 0;
}

int cmd_baseline_edges(const std::string& features, const std::string& truth_csv,
                       const std::string& out_csv, const std::string& export_base,
                       double threshold) {
  Tensor feats = load_feature_container(features);
  Tensor probs = pairwise_product_baseline(feats);
  Tensor truth = load_edge_list_csv(truth_csv, feats.dim(1));
  EdgeMetrics m = edge_prf(probs, truth, threshold);
  write_metrics_csv({{"pairwise-product", m}}, out_csv);
  if (!export_base.empty()) export_adjacency(probs, export_base);
  std::printf("pairwise-product: precision %.4f recall %.4f f1 %.4f\n", m.precision, m.recall,
              m.f1);
  return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& images, const std::string& labels,
                    int noise_pixels, int mask_block, const std::string& report_csv,
                    const std::string& grid_pgm, uint64_t seed, int limit) {
  SagVae model = SagVae::load_checkpoint(ckpt);
  ImageDataset ds = load_idx_images(images, labels);
  int count = ds.count();
  if (limit > 0) count = std::min(count, limit);
  const int px = ds.side * ds.side;
  if (model.config().n != px)
    throw std::runtime_error("checkpoint expects " + std::to_string(model.config().n) +
                             " pixels, images have " + std::to_string(px));

  RngStream rng(seed);
  Tensor original({count, px}), perturbed({count, px});
  for (int i = 0; i < count; ++i) {
    Tensor img({px});
    for (int p = 0; p < px; ++p) img[p] = ds.images(i, p);
    Tensor pert = img;
    if (noise_pixels > 0) pert = perturb_uniform(img, noise_pixels, rng);
    if (mask_block > 0) pert = perturb_mask(pert, ds.side, mask_block, rng);
    for (int p = 0; p < px; ++p) {
      original(i, p) = img[p];
      perturbed(i, p) = pert[p];
    }
  }
  Tensor recon = reconstruct_mean(model, perturbed);

  std::ofstream f(report_csv);
  if (!f) throw std::runtime_error("cannot open report for writing: " + report_csv);
  f << "index,mse_to_original,mse_to_perturbed\n";
  char buf[96];
  double mean_orig = 0, mean_pert = 0;
  for (int i = 0; i < count; ++i) {
    const double mo = mse(recon, i, original, i);
    const double mp = mse(recon, i, perturbed, i);
    mean_orig += mo / count;
    mean_pert += mp / count;
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", i, mo, mp);
    f << buf;
  }
  if (!grid_pgm.empty()) {
    const int k = std::min(count, 10);
    auto take = [&](const Tensor& src) {
      Tensor strip({k, px});
      for (int i = 0; i < k; ++i)
        for (int p = 0; p < px; ++p) strip(i, p) = src(i, p);
      return strip;
    };
    write_image_grid_pgm({take(perturbed), take(recon), take(original)}, ds.side, grid_pgm);
  }
  std::printf("reconstructed %d images: mean mse_to_original %.6f, mean mse_to_perturbed %.6f\n",
              count, mean_orig, mean_pert);
  return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& images, const std::string& labels,
               int class_id, int count, int corrupt, const std::string& grid_pgm, uint64_t seed) {
  SagVae model = SagVae::load_checkpoint(ckpt);
  ImageDataset ds = load_idx_images(images, labels);
  ClassPixelStats stats = fit_class_pixel_gaussians(model, ds);
  RngStream rng(seed);
  Tensor samples = noisy_sample(model, stats, class_id, count, corrupt, rng);
  write_image_grid_pgm({samples}, ds.side, grid_pgm);
  std::printf("wrote %d class-%d samples (%d corrupted latents) to %s\n", count, class_id,
              corrupt, grid_pgm.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAG-VAE: joint inference of data representations and a latent feature graph"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  bool seed_set = false;
  app.add_flag_callback("--version", [] { std::puts("sagvae 1.0.0"); std::exit(0); },
                        "print version and exit");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "JSON training config")->required();
  train_cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });

  // gen-karate
  auto* gen_cmd = app.add_subcommand("gen-karate", "generate synthetic graph observations");
  std::string g_edges = "data/karate_edges.csv", g_labels = "data/karate_labels.csv";
  std::string g_out = "karate_out";
  int g_patterns = 5, g_samples = 32, g_dim = 8;
  uint64_t g_seed = 0;
  gen_cmd->add_option("--edges", g_edges, "edge list CSV");
  gen_cmd->add_option("--labels", g_labels, "node label CSV");
  gen_cmd->add_option("--out", g_out, "output directory");
  gen_cmd->add_option("--patterns", g_patterns, "number of weight patterns");
  gen_cmd->add_option("--samples", g_samples, "samples per pattern");
  gen_cmd->add_option("--dim", g_dim, "feature width");
  gen_cmd->add_option("--seed", g_seed, "generator seed");

  // eval-edges
  auto* eval_cmd = app.add_subcommand("eval-edges", "edge retrieval metrics from a checkpoint");
  std::string e_ckpt, e_features, e_truth, e_out = "metrics.csv", e_export;
  std::string e_name = "sag-vae";
  double e_thr = 0.5;
  eval_cmd->add_option("--checkpoint", e_ckpt)->required();
  eval_cmd->add_option("--features", e_features, "feature container")->required();
  eval_cmd->add_option("--truth", e_truth, "true edge list CSV")->required();
  eval_cmd->add_option("--out", e_out, "metrics CSV path");
  eval_cmd->add_option("--export-adj", e_export, "also export CSV+PGM with this base path");
  eval_cmd->add_option("--threshold", e_thr, "binarization threshold");
  eval_cmd->add_option("--method-name", e_name, "method column in the CSV");

  // baseline-edges
  auto* base_cmd = app.add_subcommand("baseline-edges", "pairwise-product baseline metrics");
  std::string b_features, b_truth, b_out = "baseline_metrics.csv", b_export;
  double b_thr = 0.5;
  base_cmd->add_option("--features", b_features)->required();
  base_cmd->add_option("--truth", b_truth)->required();
  base_cmd->add_option("--out", b_out);
  base_cmd->add_option("--export-adj", b_export);
  base_cmd->add_option("--threshold", b_thr);

  // reconstruct
  auto* rec_cmd = app.add_subcommand("reconstruct", "reconstruct perturbed images");
  std::string r_ckpt, r_images, r_labels, r_report = "reconstruction.csv", r_grid;
  int r_noise = 0, r_block = 0, r_limit = 0;
  uint64_t r_seed = 0;
  rec_cmd->add_option("--checkpoint", r_ckpt)->required();
  rec_cmd->add_option("--images", r_images, "IDX image file")->required();
  rec_cmd->add_option("--labels", r_labels, "IDX label file")->required();
  rec_cmd->add_option("--noise-pixels", r_noise, "replace this many pixels with U(0,1)");
  rec_cmd->add_option("--mask-block", r_block, "stamp a white square of this side");
  rec_cmd->add_option("--out-report", r_report, "per-image MSE CSV");
  rec_cmd->add_option("--out-grid", r_grid, "graymap grid (perturbed/reconstruction/original)");
  rec_cmd->add_option("--seed", r_seed, "perturbation seed");
  rec_cmd->add_option("--limit", r_limit, "use only the first N images");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "class-conditional noisy sampling");
  std::string s_ckpt, s_images, s_labels, s_grid = "samples.pgm";
  int s_class = 0, s_count = 10, s_corrupt = 200;
  uint64_t s_seed = 0;
  sample_cmd->add_option("--checkpoint", s_ckpt)->required();
  sample_cmd->add_option("--images", s_images)->required();
  sample_cmd->add_option("--labels", s_labels)->required();
  sample_cmd->add_option("--class", s_class, "class label to sample");
  sample_cmd->add_option("--count", s_count, "number of samples");
  sample_cmd->add_option("--corrupt", s_corrupt, "latent dimensions to overwrite with noise");
  sample_cmd->add_option("--out-grid", s_grid, "output graymap");
  sample_cmd->add_option("--seed", s_seed, "sampling seed");

  // export-adj
  auto* exp_cmd = app.add_subcommand("export-adj", "re-export a probability CSV as CSV+PGM");
  std::string x_in, x_out = "adjacency";
  exp_cmd->add_option("--in", x_in, "probability matrix CSV")->required();
  exp_cmd->add_option("--out", x_out, "output base path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd)
      return cmd_train(config_path, seed_set ? std::optional<uint64_t>(seed) : std::nullopt);
    if (*gen_cmd)
      return cmd_gen_karate(g_edges, g_labels, g_out, g_patterns, g_samples, g_dim, g_seed);
    if (*eval_cmd)
      return cmd_eval_edges(e_ckpt, e_features, e_truth, e_out, e_export, e_thr, e_name);
    if (*base_cmd) return cmd_baseline_edges(b_features, b_truth, b_out, b_export, b_thr);
    if (*rec_cmd)
      return cmd_reconstruct(r_ckpt, r_images, r_labels, r_noise, r_block, r_report, r_grid,
                             r_seed, r_limit);
    if (*sample_cmd)
      return cmd_sample(s_ckpt, s_images, s_labels, s_class, s_count, s_corrupt, s_grid, s_seed);
    if (*exp_cmd) {
      export_adjacency(load_probs_csv(x_in), x_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
