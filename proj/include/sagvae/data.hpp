#pragma once

#include <map>
#include <string>
#include <vector>

#include "sagvae/model.hpp"
#include "sagvae/random.hpp"
#include "sagvae/tensor.hpp"

namespace sagvae {

struct GraphDataset {
  Tensor features;        // [m,n,d]
  Tensor true_adjacency;  // [n,n] binary, zero diagonal, symmetric
  std::vector<int> node_labels;
  bool holdout = false;   // pattern unseen during training

  int samples() const { return features.dim(0); }
  int nodes() const { return features.dim(1); }
  int feature_dim() const { return features.dim(2); }
  Tensor flat_features() const;  // [m, n*d]
  void validate() const;
};

struct ImageDataset {
  Tensor images;  // [m, side*side], values in [0,1]
  std::vector<int> labels;
  int side = 28;

  int count() const { return images.dim(0); }
};

// ---- graph file formats -------------------------------------------------

/// "src,dst" per line, 0-based, undirected. Node count is max index + 1
/// unless n_nodes is given.
Tensor load_edge_list_csv(const std::string& path, int n_nodes = -1);
void save_edge_list_csv(const Tensor& adjacency, const std::string& path);

std::vector<int> load_labels_csv(const std::string& path);
void save_labels_csv(const std::vector<int>& labels, const std::string& path);

/// One sample per CSV file: row per node, comma-separated reals.
Tensor load_feature_csv(const std::string& path);
void save_feature_csv(const Tensor& sample, const std::string& path);

/// Stacked container for [m,n,d] feature tensors: "SGFT0001" magic, three
/// little-endian int64 dims, then float64 data.
Tensor load_feature_container(const std::string& path);
void save_feature_container(const Tensor& features, const std::string& path);

// ---- synthetic graph observations ---------------------------------------

struct KarateGenConfig {
  std::string edges_csv;
  std::string labels_csv;
  int n_patterns = 5;
  int samples_per_pattern = 32;
  int feature_dim = 8;
  double class_mean_std = 2.0;
  uint64_t seed = 0;
};

/// Per-class Gaussian node features pushed through a two-layer graph
/// convolution with per-pattern random weights. The last pattern is marked
/// holdout.
std::vector<GraphDataset> gen_karate_synthetic(const KarateGenConfig& cfg);

/// Row dropout plus Gaussian noise on the surviving entries; `copies`
/// perturbed variants per source sample.
GraphDataset perturb_graph_features(const GraphDataset& ds, double dropout_rate,
                                    double noise_std, int copies, uint64_t seed);

/// Plain (tape-free) symmetric normalization, used by the generators.
Tensor normalized_adjacency_value(const Tensor& adjacency);

// ---- images --------------------------------------------------------------

/// IDX (big-endian) image + label files; class_filter empty keeps all.
ImageDataset load_idx_images(const std::string& images_path, const std::string& labels_path,
                             const std::vector<int>& class_filter = {});

Tensor perturb_uniform(const Tensor& img, int n_pixels, RngStream& rng);
Tensor perturb_mask(const Tensor& img, int side, int block, RngStream& rng);

// ---- class-conditional latent statistics (dimension-wise models) ---------

struct PixelGaussianStats {
  Tensor mu_mean, mu_std, sigma_mean, sigma_std;  // each [n * d_z]
};

struct ClassPixelStats {
  std::map<int, PixelGaussianStats> per_class;
  Tensor edge_probs;  // [n,n] batch-averaged presence probabilities
  Tensor edge_v;      // [n,n] batch-averaged attention weights
};

ClassPixelStats fit_class_pixel_gaussians(const SagVae& model, const ImageDataset& ds,
                                          int chunk = 256);

/// Draw per-pixel (mu, sigma) from the fitted class Gaussians, overwrite
/// n_corrupt latent dimensions with U(0,1), decode. Returns [count, n*d].
Tensor noisy_sample(const SagVae& model, const ClassPixelStats& stats, int class_id, int count,
                    int n_corrupt, RngStream& rng);

}  // namespace sagvae
