#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sagvae/tensor.hpp"

namespace sagvae {

struct EdgeMetrics {
  double precision = 0, recall = 0, f1 = 0;
  double threshold = 0.5;
  int64_t tp = 0, fp = 0, fn = 0;
};

/// Precision/recall/F1 of thresholded edge predictions against the true
/// adjacency, counted on the strict upper triangle (diagonal never counts).
EdgeMetrics edge_prf(const Tensor& pred_probs, const Tensor& true_adj, double threshold = 0.5);

/// sigmoid(<x_bar_s, x_bar_t>) over sample-averaged node features [m,n,d].
Tensor pairwise_product_baseline(const Tensor& features);

/// Writes probs as CSV (full precision) and as an 8-bit P5 graymap where
/// 0 maps to black and 1 to white. Paths get .csv / .pgm appended.
void export_adjacency(const Tensor& probs, const std::string& base_path);

Tensor load_probs_csv(const std::string& path);
void write_probs_csv(const Tensor& probs, const std::string& path);
void write_pgm(const Tensor& matrix01, const std::string& path);

/// Tile row-major images (each [side*side] in [0,1]) into one graymap:
/// one row per named strip.
void write_image_grid_pgm(const std::vector<Tensor>& strips, int side, const std::string& path);

void write_metrics_csv(const std::vector<std::pair<std::string, EdgeMetrics>>& rows,
                       const std::string& path);

}  // namespace sagvae
