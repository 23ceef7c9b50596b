#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "sagvae/data.hpp"
#include "test_util.hpp"

using namespace sagvae;

#ifndef SAGVAE_DATA_DIR
#define SAGVAE_DATA_DIR "data"
#endif

namespace {
const std::string kData = SAGVAE_DATA_DIR;
}

TEST_CASE("bundled karate graph: 34 nodes, 78 undirected edges, clean adjacency") {
  Tensor adj = load_edge_list_csv(kData + "/karate_edges.csv");
  CHECK(adj.dim(0) == 34);
  double edges2 = 0.0;
  for (int64_t i = 0; i < adj.size(); ++i) edges2 += adj[i];
  CHECK(edges2 == 2.0 * 78);
  for (int i = 0; i < 34; ++i) {
    CHECK(adj(i, i) == 0.0);
    for (int j = 0; j < 34; ++j) CHECK(adj(i, j) == adj(j, i));
  }
  const auto labels = load_labels_csv(kData + "/karate_labels.csv");
  CHECK(labels.size() == 34);
}

TEST_CASE("gen_karate_synthetic: deterministic, right shapes, holdout flagged") {
  KarateGenConfig cfg;
  cfg.edges_csv = kData + "/karate_edges.csv";
  cfg.labels_csv = kData + "/karate_labels.csv";
  cfg.samples_per_pattern = 5;
  cfg.seed = 3;
  auto a = gen_karate_synthetic(cfg);
  auto b = gen_karate_synthetic(cfg);
  REQUIRE(a.size() == 5);
  CHECK(a[0].features.shape() == Shape{5, 34, 8});
  CHECK(a[4].holdout);
  CHECK_FALSE(a[0].holdout);
  for (size_t p = 0; p < a.size(); ++p) {
    a[p].validate();
    for (int64_t i = 0; i < a[p].features.size(); ++i)
      CHECK(a[p].features[i] == b[p].features[i]);
  }
  cfg.seed = 4;
  auto c = gen_karate_synthetic(cfg);
  CHECK(c[0].features[0] != a[0].features[0]);
}

TEST_CASE("gen_karate_synthetic: same-class nodes are more similar than cross-class") {
  KarateGenConfig cfg;
  cfg.edges_csv = kData + "/karate_edges.csv";
  cfg.labels_csv = kData + "/karate_labels.csv";
  cfg.samples_per_pattern = 8;
  cfg.seed = 11;
  auto patterns = gen_karate_synthetic(cfg);
  double same = 0, cross = 0;
  int64_t n_same = 0, n_cross = 0;
  for (const GraphDataset& ds : patterns) {
    for (int s = 0; s < ds.samples(); ++s) {
      for (int i = 0; i < ds.nodes(); ++i)
        for (int j = i + 1; j < ds.nodes(); ++j) {
          double dot = 0, ni = 0, nj = 0;
          for (int f = 0; f < ds.feature_dim(); ++f) {
            dot += ds.features(s, i, f) * ds.features(s, j, f);
            ni += ds.features(s, i, f) * ds.features(s, i, f);
            nj += ds.features(s, j, f) * ds.features(s, j, f);
          }
          const double cos = dot / std::sqrt(ni * nj + 1e-30);
          if (ds.node_labels[static_cast<size_t>(i)] == ds.node_labels[static_cast<size_t>(j)]) {
            same += cos;
            ++n_same;
          } else {
            cross += cos;
            ++n_cross;
          }
        }
    }
  }
  CHECK(same / n_same > cross / n_cross);
}

TEST_CASE("perturb_graph_features: zero rates copy the source exactly") {
  KarateGenConfig cfg;
  cfg.edges_csv = kData + "/karate_edges.csv";
  cfg.labels_csv = kData + "/karate_labels.csv";
  cfg.samples_per_pattern = 2;
  auto src = gen_karate_synthetic(cfg)[0];
  GraphDataset out = perturb_graph_features(src, 0.0, 0.0, 3, 9);
  CHECK(out.samples() == 6);
  for (int s = 0; s < src.samples(); ++s)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < src.nodes(); ++i)
        for (int f = 0; f < src.feature_dim(); ++f)
          CHECK(out.features(s * 3 + c, i, f) == src.features(s, i, f));
  CHECK_THROWS_AS(perturb_graph_features(src, 1.0, 0.0, 1, 0), std::invalid_argument);
}

TEST_CASE("perturb_graph_features: dropped-row fraction concentrates near the rate") {
  KarateGenConfig cfg;
  cfg.edges_csv = kData + "/karate_edges.csv";
  cfg.labels_csv = kData + "/karate_labels.csv";
  cfg.samples_per_pattern = 1;
  auto src = gen_karate_synthetic(cfg)[0];
  const double rate = 0.3;
  GraphDataset out = perturb_graph_features(src, rate, 0.0, 1000, 17);
  int64_t zero_rows = 0;
  for (int s = 0; s < out.samples(); ++s)
    for (int i = 0; i < out.nodes(); ++i) {
      bool all_zero = true;
      for (int f = 0; f < out.feature_dim(); ++f)
        if (out.features(s, i, f) != 0.0) all_zero = false;
      if (all_zero) ++zero_rows;
    }
  const double frac = static_cast<double>(zero_rows) / (out.samples() * out.nodes());
  CHECK(std::abs(frac - rate) < 0.02);
}

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

}  // namespace

TEST_CASE("load_idx_images: hand-built 4-image fixture round-trips exactly") {
  // four 2x2 images, labels 3,1,4,1, bytes written independently of the loader
  std::vector<unsigned char> img;
  push_be32(img, 0x00000803u);
  push_be32(img, 4);
  push_be32(img, 2);
  push_be32(img, 2);
  const unsigned char pix[16] = {0, 51, 102, 255, 10, 20, 30, 40,
                                 255, 0, 255, 0, 128, 64, 32, 16};
  img.insert(img.end(), pix, pix + 16);
  std::vector<unsigned char> lbl;
  push_be32(lbl, 0x00000801u);
  push_be32(lbl, 4);
  lbl.insert(lbl.end(), {3, 1, 4, 1});
  write_bytes("idx_test_img.bin", img);
  write_bytes("idx_test_lbl.bin", lbl);

  ImageDataset ds = load_idx_images("idx_test_img.bin", "idx_test_lbl.bin");
  CHECK(ds.count() == 4);
  CHECK(ds.side == 2);
  for (int i = 0; i < 4; ++i)
    for (int p = 0; p < 4; ++p)
      CHECK(ds.images(i, p) == doctest::Approx(pix[i * 4 + p] / 255.0).epsilon(1e-15));
  CHECK(ds.labels == std::vector<int>{3, 1, 4, 1});

  SUBCASE("class filter keeps only the requested labels") {
    ImageDataset ones = load_idx_images("idx_test_img.bin", "idx_test_lbl.bin", {1});
    CHECK(ones.count() == 2);
    CHECK(ones.labels == std::vector<int>{1, 1});
    CHECK(ones.images(0, 1) == doctest::Approx(20 / 255.0).epsilon(1e-15));
  }
  SUBCASE("empty filter keeps every class") {
    ImageDataset all = load_idx_images("idx_test_img.bin", "idx_test_lbl.bin", {});
    CHECK(all.count() == 4);
  }
  std::remove("idx_test_img.bin");
  std::remove("idx_test_lbl.bin");
}

TEST_CASE("load_idx_images: wrong magic is rejected with the offending value") {
  std::vector<unsigned char> img;
  push_be32(img, 0x00000802u);
  push_be32(img, 1);
  push_be32(img, 2);
  push_be32(img, 2);
  img.insert(img.end(), 4, 0);
  write_bytes("idx_bad_magic.bin", img);
  try {
    load_idx_images("idx_bad_magic.bin", "idx_bad_magic.bin");
    FAIL("expected a format error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("0x00000802") != std::string::npos);
    CHECK(msg.find("byte 0") != std::string::npos);
  }
  std::remove("idx_bad_magic.bin");
}

TEST_CASE("load_idx_images: truncated payload names the byte offset") {
  std::vector<unsigned char> img;
  push_be32(img, 0x00000803u);
  push_be32(img, 2);
  push_be32(img, 2);
  push_be32(img, 2);
  img.insert(img.end(), 3, 7);  // 3 of 8 payload bytes
  write_bytes("idx_trunc.bin", img);
  try {
    load_idx_images("idx_trunc.bin", "idx_trunc.bin");
    FAIL("expected a truncation error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::remove("idx_trunc.bin");
}

TEST_CASE("bundled digits fixture loads: 1000 images at 14x14 in [0,1]") {
  ImageDataset ds = load_idx_images(kData + "/digits14-images-idx3-ubyte",
                                    kData + "/digits14-labels-idx1-ubyte");
  CHECK(ds.count() == 1000);
  CHECK(ds.side == 14);
  double mx = 0.0;
  for (int64_t i = 0; i < ds.images.size(); ++i) {
    CHECK(ds.images[i] >= 0.0);
    CHECK(ds.images[i] <= 1.0);
    mx = std::max(mx, ds.images[i]);
  }
  CHECK(mx > 0.5);
  std::set<int> classes(ds.labels.begin(), ds.labels.end());
  CHECK(classes.size() == 10);
}

TEST_CASE("perturb_uniform: zero pixels is the identity, count bound enforced") {
  RngStream rng(1);
  Tensor img({16});
  for (int i = 0; i < 16; ++i) img[i] = i / 16.0;
  Tensor same = perturb_uniform(img, 0, rng);
  for (int i = 0; i < 16; ++i) CHECK(same[i] == img[i]);
  CHECK_THROWS_AS(perturb_uniform(img, 17, rng), std::invalid_argument);
}

TEST_CASE("perturb_uniform: changes the requested number of pixels, stays in range") {
  RngStream rng(2);
  Tensor img({784});
  for (int i = 0; i < 784; ++i) img[i] = 0.5;
  const int k = 200;
  Tensor out = perturb_uniform(img, k, rng);
  int changed = 0;
  for (int i = 0; i < 784; ++i) {
    if (out[i] != img[i]) ++changed;
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
  CHECK(changed >= static_cast<int>(0.95 * k));
  CHECK(changed <= k);
}

TEST_CASE("perturb_uniform: replacement positions are uniform (chi-squared at 0.01)") {
  RngStream rng(3);
  Tensor img({784});
  const int draws = 2000, k = 50;
  std::vector<int64_t> hits(784, 0);
  for (int t = 0; t < draws; ++t) {
    Tensor out = perturb_uniform(img, k, rng);
    for (int i = 0; i < 784; ++i)
      if (out[i] != 0.0) ++hits[static_cast<size_t>(i)];
  }
  const double expected = static_cast<double>(draws) * k / 784.0;
  double chi2 = 0.0;
  for (int i = 0; i < 784; ++i) {
    const double d = hits[static_cast<size_t>(i)] - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 877.99);  // 0.99 quantile, 783 dof
}

TEST_CASE("perturb_mask: zero block is the identity") {
  RngStream rng(4);
  Tensor img({784});
  Tensor out = perturb_mask(img, 28, 0, rng);
  for (int i = 0; i < 784; ++i) CHECK(out[i] == img[i]);
}

TEST_CASE("perturb_mask: white 6x6 block, always fully inside the frame") {
  RngStream rng(5);
  Tensor img({784});
  for (int i = 0; i < 784; ++i) img[i] = 0.3;
  for (int draw = 0; draw < 10000; ++draw) {
    Tensor out = perturb_mask(img, 28, 6, rng);
    int ones = 0, rmin = 28, rmax = -1, cmin = 28, cmax = -1;
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c)
        if (out[r * 28 + c] == 1.0) {
          ++ones;
          rmin = std::min(rmin, r);
          rmax = std::max(rmax, r);
          cmin = std::min(cmin, c);
          cmax = std::max(cmax, c);
        }
    REQUIRE(ones == 36);
    REQUIRE(rmax - rmin == 5);
    REQUIRE(cmax - cmin == 5);
  }
}

TEST_CASE("feature container and CSVs round-trip exactly") {
  RngStream rng(6);
  Tensor feats = sagvae::test::random_tensor({3, 4, 2}, rng);
  save_feature_container(feats, "feat_rt.bin");
  Tensor back = load_feature_container("feat_rt.bin");
  REQUIRE(back.shape() == feats.shape());
  for (int64_t i = 0; i < feats.size(); ++i) CHECK(back[i] == feats[i]);
  std::remove("feat_rt.bin");

  Tensor sample({4, 2});
  for (int64_t i = 0; i < sample.size(); ++i) sample[i] = 0.1 * static_cast<double>(i) + 1e-13;
  save_feature_csv(sample, "feat_rt.csv");
  Tensor csv_back = load_feature_csv("feat_rt.csv");
  REQUIRE(csv_back.shape() == sample.shape());
  for (int64_t i = 0; i < sample.size(); ++i) CHECK(csv_back[i] == sample[i]);
  std::remove("feat_rt.csv");

  Tensor adj({5, 5});
  adj(0, 3) = adj(3, 0) = 1.0;
  adj(1, 4) = adj(4, 1) = 1.0;
  save_edge_list_csv(adj, "edges_rt.csv");
  Tensor adj_back = load_edge_list_csv("edges_rt.csv", 5);
  for (int64_t i = 0; i < adj.size(); ++i) CHECK(adj_back[i] == adj[i]);
  std::remove("edges_rt.csv");
}

TEST_CASE("class pixel statistics: shapes, non-negative spreads, clean-sample path") {
  RngStream rng(7);
  ModelConfig cfg;
  cfg.latent_mode = LatentMode::kDimensionWise;
  cfg.n = 9;  // 3x3 images
  cfg.d = 1;
  cfg.latent_dim = 2;
  cfg.enc_hidden = {8};
  cfg.edge_hidden = {8};
  cfg.dec_hidden = {4};
  SagVae model(cfg, rng);

  ImageDataset ds;
  ds.side = 3;
  ds.images = Tensor({20, 9});
  RngStream ir(8);
  for (int64_t i = 0; i < ds.images.size(); ++i) ds.images[i] = ir.uniform01();
  for (int i = 0; i < 20; ++i) ds.labels.push_back(i % 2);

  ClassPixelStats stats = fit_class_pixel_gaussians(model, ds);
  REQUIRE(stats.per_class.size() == 2);
  for (const auto& [c, pg] : stats.per_class) {
    CHECK(pg.mu_mean.shape() == Shape{18});
    for (int64_t i = 0; i < 18; ++i) {
      CHECK(pg.mu_std[i] >= 0.0);
      CHECK(pg.sigma_std[i] >= 0.0);
      CHECK(pg.sigma_mean[i] >= 0.0);
    }
  }

  RngStream s1(9), s2(9), s3(9);
  Tensor clean = noisy_sample(model, stats, 0, 10, 0, s1);
  CHECK(clean.shape() == Shape{10, 9});
  Tensor clean2 = noisy_sample(model, stats, 0, 10, 0, s2);
  for (int64_t i = 0; i < clean.size(); ++i) CHECK(clean[i] == clean2[i]);
  Tensor corrupted = noisy_sample(model, stats, 0, 10, 5, s3);
  bool differs = false;
  for (int64_t i = 0; i < clean.size(); ++i)
    if (corrupted[i] != clean[i]) differs = true;
  CHECK(differs);

  CHECK_THROWS_AS(noisy_sample(model, stats, 42, 1, 0, s1), std::invalid_argument);
  CHECK_THROWS_AS(noisy_sample(model, stats, 0, 1, 100, s1), std::invalid_argument);
}
