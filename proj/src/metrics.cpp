#include "sagvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sagvae {

EdgeMetrics edge_prf(const Tensor& pred_probs, const Tensor& true_adj, double threshold) {
  if (pred_probs.ndim() != 2 || pred_probs.dim(0) != pred_probs.dim(1))
    throw std::invalid_argument("edge_prf: predictions must be square");
  if (!pred_probs.same_shape(true_adj))
    throw std::invalid_argument("edge_prf: prediction shape " + shape_str(pred_probs.shape()) +
                                " vs truth " + shape_str(true_adj.shape()));
  const int n = pred_probs.dim(0);
  for (int s = 0; s < n; ++s)
    for (int t = s + 1; t < n; ++t)
      if (std::abs(pred_probs(s, t) - pred_probs(t, s)) > 1e-9)
        throw std::invalid_argument("edge_prf: predictions are not symmetric at (" +
                                    std::to_string(s) + "," + std::to_string(t) + ")");

  EdgeMetrics m;
  m.threshold = threshold;
  for (int s = 0; s < n; ++s) {
    for (int t = s + 1; t < n; ++t) {
      const bool pred = pred_probs(s, t) > threshold;
      const bool truth = true_adj(s, t) != 0.0;
      if (pred && truth) ++m.tp;
      else if (pred && !truth) ++m.fp;
      else if (!pred && truth) ++m.fn;
    }
  }
  m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Tensor pairwise_product_baseline(const Tensor& features) {
  if (features.ndim() != 3)
    throw std::invalid_argument("pairwise_product_baseline: features must be [m,n,d]");
  const int m = features.dim(0), n = features.dim(1), d = features.dim(2);
  Tensor xbar({n, d});
  for (int s = 0; s < m; ++s)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) xbar(i, j) += features(s, i, j) / m;
  Tensor probs({n, n});
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < n; ++t) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += xbar(s, j) * xbar(t, j);
      probs(s, t) = 1.0 / (1.0 + std::exp(-dot));
    }
  return probs;
}

Tensor load_probs_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty matrix");
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows.front().size());
  Tensor t({r, c});
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[static_cast<size_t>(i)].size()) != c)
      throw std::runtime_error(path + ": ragged rows");
    for (int j = 0; j < c; ++j) t(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }
  return t;
}

void write_probs_csv(const Tensor& probs, const std::string& path) {
  if (probs.ndim() != 2) throw std::invalid_argument("write_probs_csv: need a matrix");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[48];
  for (int i = 0; i < probs.dim(0); ++i) {
    for (int j = 0; j < probs.dim(1); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", probs(i, j));
      f << (j ? "," : "") << buf;
    }
    f << "\n";
  }
}

void write_pgm(const Tensor& matrix01, const std::string& path) {
  if (matrix01.ndim() != 2) throw std::invalid_argument("write_pgm: need a matrix");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f << "P5\n" << matrix01.dim(1) << " " << matrix01.dim(0) << "\n255\n";
  for (int64_t i = 0; i < matrix01.size(); ++i) {
    const double v = std::clamp(matrix01[i], 0.0, 1.0);
    const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
    f.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void export_adjacency(const Tensor& probs, const std::string& base_path) {
  write_probs_csv(probs, base_path + ".csv");
  write_pgm(probs, base_path + ".pgm");
}

void write_image_grid_pgm(const std::vector<Tensor>& strips, int side, const std::string& path) {
  if (strips.empty()) throw std::invalid_argument("write_image_grid_pgm: no strips");
  const int count = strips.front().dim(0);
  for (const Tensor& s : strips)
    if (s.ndim() != 2 || s.dim(0) != count || s.dim(1) != side * side)
      throw std::invalid_argument("write_image_grid_pgm: strips must all be [k, side*side]");
  const int pad = 2;
  const int w = count * (side + pad) - pad;
  const int h = static_cast<int>(strips.size()) * (side + pad) - pad;
  Tensor canvas({h, w});
  for (size_t r = 0; r < strips.size(); ++r) {
    for (int k = 0; k < count; ++k) {
      const int top = static_cast<int>(r) * (side + pad);
      const int left = k * (side + pad);
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
          canvas(top + i, left + j) = strips[r](k, i * side + j);
    }
  }
  write_pgm(canvas, path);
}

void write_metrics_csv(const std::vector<std::pair<std::string, EdgeMetrics>>& rows,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f << "method,precision,recall,f1\n";
  char buf[160];
  for (const auto& [method, m] : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", method.c_str(), m.precision,
                  m.recall, m.f1);
    f << buf;
  }
}

}  // namespace sagvae
