#include "sagvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sagvae/training.hpp"

namespace sagvae {

Tensor GraphDataset::flat_features() const {
  const int m = samples(), w = nodes() * feature_dim();
  return Tensor({m, w}, std::vector<double>(features.data(), features.data() + features.size()));
}

void GraphDataset::validate() const {
  if (features.ndim() != 3) throw std::invalid_argument("GraphDataset: features must be [m,n,d]");
  const int n = nodes();
  if (true_adjacency.ndim() != 2 || true_adjacency.dim(0) != n || true_adjacency.dim(1) != n)
    throw std::invalid_argument("GraphDataset: adjacency shape mismatch");
  if (samples() < 1) throw std::invalid_argument("GraphDataset: need at least one sample");
  if (!features.all_finite()) throw std::invalid_argument("GraphDataset: non-finite features");
  for (int s = 0; s < n; ++s) {
    if (true_adjacency(s, s) != 0.0)
      throw std::invalid_argument("GraphDataset: adjacency diagonal must be zero");
    for (int t = 0; t < n; ++t)
      if (true_adjacency(s, t) != true_adjacency(t, s))
        throw std::invalid_argument("GraphDataset: adjacency must be symmetric");
  }
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

bool parse_int_pair(const std::string& line, int& a, int& b) {
  return std::sscanf(line.c_str(), "%d,%d", &a, &b) == 2;
}

}  // namespace

Tensor load_edge_list_csv(const std::string& path, int n_nodes) {
  const auto lines = read_lines(path);
  std::vector<std::pair<int, int>> edges;
  int max_node = -1;
  for (size_t i = 0; i < lines.size(); ++i) {
    int a, b;
    if (!parse_int_pair(lines[i], a, b)) {
      if (i == 0) continue;  // header
      throw std::runtime_error(path + ": line " + std::to_string(i + 1) +
                               " is not 'src,dst': " + lines[i]);
    }
    if (a < 0 || b < 0)
      throw std::runtime_error(path + ": negative node id on line " + std::to_string(i + 1));
    edges.emplace_back(a, b);
    max_node = std::max({max_node, a, b});
  }
  const int n = n_nodes > 0 ? n_nodes : max_node + 1;
  if (max_node >= n) throw std::runtime_error(path + ": node id exceeds declared count");
  Tensor adj({n, n});
  for (auto [a, b] : edges) {
    if (a == b) continue;  // self-loops live on the normalized side only
    adj(a, b) = 1.0;
    adj(b, a) = 1.0;
  }
  return adj;
}

void save_edge_list_csv(const Tensor& adjacency, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f << "src,dst\n";
  const int n = adjacency.dim(0);
  for (int s = 0; s < n; ++s)
    for (int t = s + 1; t < n; ++t)
      if (adjacency(s, t) != 0.0) f << s << "," << t << "\n";
}

std::vector<int> load_labels_csv(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<int> labels;
  for (size_t i = 0; i < lines.size(); ++i) {
    int v;
    if (std::sscanf(lines[i].c_str(), "%d", &v) != 1) {
      if (i == 0) continue;
      throw std::runtime_error(path + ": line " + std::to_string(i + 1) + " is not an integer");
    }
    labels.push_back(v);
  }
  return labels;
}

void save_labels_csv(const std::vector<int>& labels, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  for (int v : labels) f << v << "\n";
}

Tensor load_feature_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error(path + ": empty feature file");
  std::vector<std::vector<double>> rows;
  for (const auto& line : lines) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(path + ": ragged feature rows");
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  Tensor t({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) t(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return t;
}

void save_feature_csv(const Tensor& sample, const std::string& path) {
  if (sample.ndim() != 2) throw std::invalid_argument("save_feature_csv: need [n,d]");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[48];
  for (int i = 0; i < sample.dim(0); ++i) {
    for (int j = 0; j < sample.dim(1); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", sample(i, j));
      f << (j ? "," : "") << buf;
    }
    f << "\n";
  }
}

Tensor load_feature_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "SGFT0001", 8) != 0)
    throw std::runtime_error(path + ": not a feature container (bad magic at byte 0)");
  int64_t dims[3];
  f.read(reinterpret_cast<char*>(dims), 24);
  if (!f || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::runtime_error(path + ": bad dimensions in header");
  Tensor t({static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])});
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  if (!f)
    throw std::runtime_error(path + ": truncated at byte " +
                             std::to_string(32 + f.gcount()));
  return t;
}

void save_feature_container(const Tensor& features, const std::string& path) {
  if (features.ndim() != 3) throw std::invalid_argument("save_feature_container: need [m,n,d]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f.write("SGFT0001", 8);
  for (int i = 0; i < 3; ++i) {
    const int64_t dim = features.dim(i);
    f.write(reinterpret_cast<const char*>(&dim), 8);
  }
  f.write(reinterpret_cast<const char*>(features.data()),
          static_cast<std::streamsize>(features.size() * 8));
  if (!f) throw std::runtime_error("write failed: " + path);
}

Tensor normalized_adjacency_value(const Tensor& adjacency) {
  const int n = adjacency.dim(0);
  Tensor a_hat = adjacency;
  for (int i = 0; i < n; ++i) a_hat(i, i) += 1.0;
  std::vector<double> dis(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += a_hat(i, j);
    dis[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  Tensor out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(i, j) = dis[static_cast<size_t>(i)] * a_hat(i, j) * dis[static_cast<size_t>(j)];
  return out;
}

std::vector<GraphDataset> gen_karate_synthetic(const KarateGenConfig& cfg) {
  Tensor adj = load_edge_list_csv(cfg.edges_csv);
  std::vector<int> labels = load_labels_csv(cfg.labels_csv);
  const int n = adj.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw std::runtime_error("gen_karate_synthetic: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " nodes");
  if (cfg.n_patterns < 1 || cfg.samples_per_pattern < 1 || cfg.feature_dim < 1)
    throw std::invalid_argument("gen_karate_synthetic: counts must be positive");

  RngStream rng(cfg.seed);
  const int d = cfg.feature_dim;
  std::set<int> classes(labels.begin(), labels.end());
  std::map<int, Tensor> class_mean;
  for (int c : classes) {
    Tensor mu({d});
    for (int j = 0; j < d; ++j) mu[j] = cfg.class_mean_std * rng.gaussian();
    class_mean.emplace(c, std::move(mu));
  }

  Tensor a_tilde = normalized_adjacency_value(adj);
  std::vector<GraphDataset> out;
  for (int pat = 0; pat < cfg.n_patterns; ++pat) {
    Tensor w1({d, d}), w2({d, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int64_t i = 0; i < w1.size(); ++i) w1[i] = rng.gaussian() * scale;
    for (int64_t i = 0; i < w2.size(); ++i) w2[i] = rng.gaussian() * scale;

    GraphDataset ds;
    ds.true_adjacency = adj;
    ds.node_labels = labels;
    ds.holdout = pat == cfg.n_patterns - 1;
    ds.features = Tensor({cfg.samples_per_pattern, n, d});
    for (int s = 0; s < cfg.samples_per_pattern; ++s) {
      Tensor x0({n, d});
      for (int i = 0; i < n; ++i) {
        const Tensor& mu = class_mean.at(labels[static_cast<size_t>(i)]);
        for (int j = 0; j < d; ++j) x0(i, j) = mu[j] + rng.gaussian();
      }
      Tensor h = matmul_nn(a_tilde, matmul_nn(x0, w1));
      for (int64_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i]);
      Tensor x = matmul_nn(a_tilde, matmul_nn(h, w2));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ds.features(s, i, j) = x(i, j);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

GraphDataset perturb_graph_features(const GraphDataset& ds, double dropout_rate, double noise_std,
                                    int copies, uint64_t seed) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("perturb_graph_features: dropout_rate must be in [0,1)");
  if (noise_std < 0.0) throw std::invalid_argument("perturb_graph_features: negative noise_std");
  if (copies < 1) throw std::invalid_argument("perturb_graph_features: copies must be >= 1");
  const int m = ds.samples(), n = ds.nodes(), d = ds.feature_dim();
  RngStream rng(seed);
  GraphDataset out;
  out.true_adjacency = ds.true_adjacency;
  out.node_labels = ds.node_labels;
  out.holdout = ds.holdout;
  out.features = Tensor({m * copies, n, d});
  for (int s = 0; s < m; ++s) {
    for (int c = 0; c < copies; ++c) {
      const int row = s * copies + c;
      for (int i = 0; i < n; ++i) {
        const bool drop = dropout_rate > 0.0 && rng.uniform01() < dropout_rate;
        for (int j = 0; j < d; ++j) {
          double v = drop ? 0.0 : ds.features(s, i, j);
          if (!drop && noise_std > 0.0) v += noise_std * rng.gaussian();
          out.features(row, i, j) = v;
        }
      }
    }
  }
  return out;
}

namespace {

uint32_t read_be32(std::ifstream& f, const std::string& path, int64_t offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f)
    throw std::runtime_error(path + ": truncated at byte " + std::to_string(offset));
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

char hexdigit(uint32_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(uint32_t v) {
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s += hexdigit(v >> (4 * i));
  return s;
}

}  // namespace

ImageDataset load_idx_images(const std::string& images_path, const std::string& labels_path,
                             const std::vector<int>& class_filter) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open file: " + images_path);
  const uint32_t magic_i = read_be32(fi, images_path, 0);
  if (magic_i != 0x00000803u)
    throw std::runtime_error(images_path + ": bad magic " + hex32(magic_i) +
                             " at byte 0 (expected 0x00000803)");
  const uint32_t count = read_be32(fi, images_path, 4);
  const uint32_t rows = read_be32(fi, images_path, 8);
  const uint32_t cols = read_be32(fi, images_path, 12);
  if (rows != cols)
    throw std::runtime_error(images_path + ": non-square images " + std::to_string(rows) + "x" +
                             std::to_string(cols));
  std::vector<unsigned char> pixels(static_cast<size_t>(count) * rows * cols);
  fi.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!fi)
    throw std::runtime_error(images_path + ": truncated at byte " +
                             std::to_string(16 + fi.gcount()));

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("cannot open file: " + labels_path);
  const uint32_t magic_l = read_be32(fl, labels_path, 0);
  if (magic_l != 0x00000801u)
    throw std::runtime_error(labels_path + ": bad magic " + hex32(magic_l) +
                             " at byte 0 (expected 0x00000801)");
  const uint32_t lcount = read_be32(fl, labels_path, 4);
  if (lcount != count)
    throw std::runtime_error(labels_path + ": label count " + std::to_string(lcount) +
                             " does not match image count " + std::to_string(count));
  std::vector<unsigned char> raw_labels(lcount);
  fl.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(lcount));
  if (!fl)
    throw std::runtime_error(labels_path + ": truncated at byte " +
                             std::to_string(8 + fl.gcount()));

  std::set<int> keep(class_filter.begin(), class_filter.end());
  std::vector<int> selected;
  for (uint32_t i = 0; i < count; ++i)
    if (keep.empty() || keep.count(raw_labels[i])) selected.push_back(static_cast<int>(i));

  ImageDataset ds;
  ds.side = static_cast<int>(rows);
  const int px = ds.side * ds.side;
  ds.images = Tensor({static_cast<int>(selected.size()), px});
  ds.labels.reserve(selected.size());
  for (size_t k = 0; k < selected.size(); ++k) {
    const size_t base = static_cast<size_t>(selected[k]) * px;
    for (int p = 0; p < px; ++p)
      ds.images(static_cast<int>(k), p) = pixels[base + static_cast<size_t>(p)] / 255.0;
    ds.labels.push_back(raw_labels[static_cast<size_t>(selected[k])]);
  }
  return ds;
}

Tensor perturb_uniform(const Tensor& img, int n_pixels, RngStream& rng) {
  const int px = static_cast<int>(img.size());
  if (n_pixels < 0 || n_pixels > px)
    throw std::invalid_argument("perturb_uniform: pixel count " + std::to_string(n_pixels) +
                                " out of range for " + std::to_string(px) + " pixels");
  Tensor out = img;
  for (int pos : rng.sample_without_replacement(px, n_pixels)) out[pos] = rng.uniform01();
  return out;
}

Tensor perturb_mask(const Tensor& img, int side, int block, RngStream& rng) {
  if (static_cast<int64_t>(side) * side != img.size())
    throw std::invalid_argument("perturb_mask: image is not side*side");
  if (block < 0 || block > side)
    throw std::invalid_argument("perturb_mask: block " + std::to_string(block) +
                                " exceeds side " + std::to_string(side));
  Tensor out = img;
  if (block == 0) return out;
  const int top = rng.uniform_int(side - block + 1);
  const int left = rng.uniform_int(side - block + 1);
  for (int r = top; r < top + block; ++r)
    for (int c = left; c < left + block; ++c) out[static_cast<int64_t>(r) * side + c] = 1.0;
  return out;
}

namespace {

Tensor edge_v_matrix(const SagVae& model, const Tensor& x, int chunk) {
  const ModelConfig& cfg = model.config();
  const int m = x.dim(0), w = x.dim(1);
  Tensor acc({cfg.n, cfg.n});
  for (int lo = 0; lo < m; lo += chunk) {
    const int hi = std::min(lo + chunk, m);
    Tensor xc({hi - lo, w},
              std::vector<double>(x.data() + static_cast<int64_t>(lo) * w,
                                  x.data() + static_cast<int64_t>(hi) * w));
    Tape tape;
    EdgeEncoding ee = model.encode_edges(tape, xc, 1.0, nullptr);
    const Tensor& v = tape.val(ee.v_sym);
    const double weight = static_cast<double>(hi - lo) / m;
    for (int64_t i = 0; i < v.size(); ++i) acc[i] += v[i] * weight;
  }
  return acc;
}

}  // namespace

ClassPixelStats fit_class_pixel_gaussians(const SagVae& model, const ImageDataset& ds,
                                          int chunk) {
  const ModelConfig& cfg = model.config();
  if (cfg.latent_mode != LatentMode::kDimensionWise)
    throw std::invalid_argument("fit_class_pixel_gaussians: needs a dimension-wise model");
  const int m = ds.count();
  const int latent = cfg.n * cfg.latent_dim;

  Tensor all_mu({m, latent}), all_sigma({m, latent});
  for (int lo = 0; lo < m; lo += chunk) {
    const int hi = std::min(lo + chunk, m);
    Tensor xc({hi - lo, ds.images.dim(1)},
              std::vector<double>(ds.images.data() + static_cast<int64_t>(lo) * ds.images.dim(1),
                                  ds.images.data() + static_cast<int64_t>(hi) * ds.images.dim(1)));
    Tape tape;
    EncodedZ enc = model.encode_z(tape, xc);
    const Tensor& mu = tape.val(enc.post.mu);
    const Tensor& lv = tape.val(enc.post.logvar);
    for (int r = 0; r < hi - lo; ++r)
      for (int j = 0; j < latent; ++j) {
        const int64_t idx = static_cast<int64_t>(r) * latent + j;
        all_mu(lo + r, j) = mu[idx];
        const double clamped = std::clamp(lv[idx], -kLogvarClamp, kLogvarClamp);
        all_sigma(lo + r, j) = std::exp(0.5 * clamped);
      }
  }

  ClassPixelStats stats;
  std::set<int> classes(ds.labels.begin(), ds.labels.end());
  for (int c : classes) {
    std::vector<int> members;
    for (int i = 0; i < m; ++i)
      if (ds.labels[static_cast<size_t>(i)] == c) members.push_back(i);
    PixelGaussianStats pg{Tensor({latent}), Tensor({latent}), Tensor({latent}), Tensor({latent})};
    const double k = static_cast<double>(members.size());
    for (int j = 0; j < latent; ++j) {
      double s_mu = 0, s_mu2 = 0, s_sg = 0, s_sg2 = 0;
      for (int i : members) {
        s_mu += all_mu(i, j);
        s_mu2 += all_mu(i, j) * all_mu(i, j);
        s_sg += all_sigma(i, j);
        s_sg2 += all_sigma(i, j) * all_sigma(i, j);
      }
      pg.mu_mean[j] = s_mu / k;
      pg.mu_std[j] = std::sqrt(std::max(0.0, s_mu2 / k - pg.mu_mean[j] * pg.mu_mean[j]));
      pg.sigma_mean[j] = s_sg / k;
      pg.sigma_std[j] = std::sqrt(std::max(0.0, s_sg2 / k - pg.sigma_mean[j] * pg.sigma_mean[j]));
    }
    stats.per_class.emplace(c, std::move(pg));
  }
  if (!cfg.identity_adjacency) {
    stats.edge_probs = edge_probabilities(model, ds.images);
    stats.edge_v = edge_v_matrix(model, ds.images, chunk);
  } else {
    stats.edge_probs = Tensor::eye(cfg.n);
    stats.edge_v = Tensor::full({cfg.n, cfg.n}, 1.0);
  }
  return stats;
}

Tensor noisy_sample(const SagVae& model, const ClassPixelStats& stats, int class_id, int count,
                    int n_corrupt, RngStream& rng) {
  const ModelConfig& cfg = model.config();
  if (cfg.latent_mode != LatentMode::kDimensionWise)
    throw std::invalid_argument("noisy_sample: needs a dimension-wise model");
  auto it = stats.per_class.find(class_id);
  if (it == stats.per_class.end())
    throw std::invalid_argument("noisy_sample: class " + std::to_string(class_id) +
                                " absent from the fitted statistics");
  const PixelGaussianStats& pg = it->second;
  const int latent = cfg.n * cfg.latent_dim;
  if (n_corrupt < 0 || n_corrupt > latent)
    throw std::invalid_argument("noisy_sample: corrupt count out of range");

  Tensor z({count, cfg.n, cfg.latent_dim});
  for (int s = 0; s < count; ++s) {
    for (int j = 0; j < latent; ++j) {
      const double mu = pg.mu_mean[j] + pg.mu_std[j] * rng.gaussian();
      const double sigma = std::max(0.0, pg.sigma_mean[j] + pg.sigma_std[j] * rng.gaussian());
      z[static_cast<int64_t>(s) * latent + j] = mu + sigma * rng.gaussian();
    }
    for (int pos : rng.sample_without_replacement(latent, n_corrupt))
      z[static_cast<int64_t>(s) * latent + pos] = rng.uniform01();
  }

  Tape tape;
  Var zv = tape.constant(z);
  Var a0, v;
  Tensor mask;
  if (cfg.identity_adjacency) {
    a0 = tape.constant(Tensor({cfg.n, cfg.n}));
    v = tape.constant(Tensor::full({cfg.n, cfg.n}, 1.0));
    mask = Tensor::eye(cfg.n);
  } else {
    Tensor a_soft = stats.edge_probs;
    for (int i = 0; i < cfg.n; ++i) a_soft(i, i) = 0.0;
    a0 = tape.constant(a_soft);
    v = tape.constant(stats.edge_v);
    mask = Tensor::full({cfg.n, cfg.n}, 1.0);
  }
  DecodeOut dec = model.decode(tape, zv, a0, v, mask);
  const Tensor& xh = tape.val(dec.x_hat);
  return Tensor({count, cfg.n * cfg.d},
                std::vector<double>(xh.data(), xh.data() + xh.size()));
}

}  // namespace sagvae
