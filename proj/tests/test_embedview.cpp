#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "s3d/embedview.hpp"
#include "s3d/error.hpp"
#include "s3d/rng.hpp"

using namespace s3d;
namespace fs = std::filesystem;

namespace {

struct Clusters {
  std::vector<double> points;
  std::vector<int> labels;
  int n = 0;
  int dim = 0;
};

// Three Gaussian blobs: centers 10 apart per axis, spread 0.5.
Clusters three_clusters(int per, int dim, std::uint64_t seed) {
  SplitMix64 g(seed);
  Clusters c;
  c.n = 3 * per;
  c.dim = dim;
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < per; ++i) {
      for (int d = 0; d < dim; ++d) c.points.push_back((d == k ? 10.0 : 0.0) + 0.5 * g.normal());
      c.labels.push_back(k);
    }
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("s3d_embedview_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(TsneConfig, Validation) {
  TsneConfig c;
  EXPECT_NO_THROW(c.validate());
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TsneConfig{};
  c.perplexity = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Affinities, TwoPointsAreMutualNeighbours) {
  for (double dist : {0.01, 1.0, 50.0}) {
    const std::vector<double> pts = {0.0, 0.0, dist, 0.0};
    const auto cond = conditional_affinities(pts, 2, 2, 30.0);
    EXPECT_NEAR(cond[1], 1.0, 1e-12);
    EXPECT_NEAR(cond[2], 1.0, 1e-12);
    EXPECT_EQ(cond[0], 0.0);
    EXPECT_EQ(cond[3], 0.0);
  }
}

TEST(Affinities, EquidistantTriangleIsUniform) {
  const double h = std::sqrt(3.0) / 2.0;
  const std::vector<double> pts = {0.0, 0.0, 1.0, 0.0, 0.5, h};
  const auto cond = conditional_affinities(pts, 3, 2, 2.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(cond[i * 3 + j], i == j ? 0.0 : 0.5, 1e-9);
}

TEST(Affinities, CalibratedRowsAndValidJointMatrix) {
  const Clusters c = three_clusters(20, 5, 1);
  for (double perp : {5.0, 15.0, 30.0}) {
    const auto cond = conditional_affinities(c.points, c.n, c.dim, perp);
    for (double v : row_perplexities(cond, c.n)) ASSERT_NEAR(v, perp, 1e-5);
    const auto p = affinities(c.points, c.n, c.dim, perp);
    double sum = 0.0;
    for (int i = 0; i < c.n; ++i) {
      EXPECT_EQ(p[i * c.n + i], 0.0);
      for (int j = 0; j < c.n; ++j) {
        ASSERT_GE(p[i * c.n + j], 0.0);
        ASSERT_EQ(p[i * c.n + j], p[j * c.n + i]);
        sum += p[i * c.n + j];
      }
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Affinities, TranslationInvariant) {
  const Clusters c = three_clusters(10, 4, 2);
  std::vector<double> moved = c.points;
  for (int i = 0; i < c.n; ++i)
    for (int d = 0; d < c.dim; ++d) moved[i * c.dim + d] += 3.0 * d - 100.0;
  const auto a = affinities(c.points, c.n, c.dim, 8.0);
  const auto b = affinities(moved, c.n, c.dim, 8.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(Affinities, PerplexityClampedToNeighbourCount) {
  const Clusters c = three_clusters(2, 3, 3);  // n = 6
  const auto cond = conditional_affinities(c.points, c.n, c.dim, 15.0);
  for (double v : row_perplexities(cond, c.n)) EXPECT_NEAR(v, 5.0, 1e-5);
}

TEST(Tsne, KlDecreasesAndSeparatesClusters) {
  const Clusters c = three_clusters(20, 5, 4);
  const auto p = affinities(c.points, c.n, c.dim, 15.0);
  TsneConfig cfg;
  cfg.seed = 9;
  const TsneResult r = tsne_embed(p, c.n, cfg);
  ASSERT_EQ(r.coords.size(), std::size_t(2 * c.n));
  EXPECT_LT(r.final_kl, r.initial_kl);
  EXPECT_NEAR(r.final_kl, kl_divergence(p, r.coords, c.n), 1e-12);
  EXPECT_GE(silhouette(r.coords, 2, c.labels), 0.5);
}

TEST(Tsne, DeterministicPerSeed) {
  const Clusters c = three_clusters(10, 3, 5);
  const auto p = affinities(c.points, c.n, c.dim, 5.0);
  TsneConfig cfg;
  cfg.iterations = 120;
  cfg.seed = 3;
  const TsneResult a = tsne_embed(p, c.n, cfg);
  EXPECT_EQ(a.coords, tsne_embed(p, c.n, cfg).coords);
  cfg.seed = 4;
  EXPECT_NE(a.coords, tsne_embed(p, c.n, cfg).coords);
}

TEST(Tsne, ThreeHundredPointsFinishQuickly) {
  const Clusters c = three_clusters(100, 8, 6);
  const auto start = std::chrono::steady_clock::now();
  const auto p = affinities(c.points, c.n, c.dim, 15.0);
  const TsneResult r = tsne_embed(p, c.n, TsneConfig{});
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 30.0);
  EXPECT_GE(silhouette(r.coords, 2, c.labels), 0.5);
}

TEST(Silhouette, HandValue) {
  // Two labels on a line: {0, 1} and {4}. a(0)=1, b(0)=4 -> 0.75;
  // a(1)=1, b(1)=3 -> 2/3; the singleton scores 0.
  const std::vector<double> coords = {0, 0, 1, 0, 4, 0};
  EXPECT_NEAR(silhouette(coords, 2, {0, 0, 1}), (0.75 + 2.0 / 3.0 + 0.0) / 3.0, 1e-12);
}

TEST(CollectEmbeddings, ShapeAndDeterminism) {
  UNetConfig cfg;
  cfg.input_size = 32;
  cfg.depth = 3;
  cfg.base_channels = 4;
  cfg.style_rows = 3;
  cfg.style_dim = 5;
  const UNetParams p = init_params(cfg, 1);
  std::vector<DatasetSample> data;
  for (int i = 0; i < 4; ++i) {
    GeneratedSample g = generate_sample(3, i, 32);
    data.push_back({g.sketch, g.mask, hair_group(g.spec)});
  }
  const EmbeddingSet e = collect_embeddings(p, data);
  EXPECT_EQ(e.n, 4);
  EXPECT_EQ(e.dim, 15);
  EXPECT_EQ(e.data.size(), 60u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(e.labels[i], data[i].group);
  EXPECT_EQ(collect_embeddings(p, data).data, e.data);

  GeneratedSample big = generate_sample(3, 0, 64);
  data.push_back({big.sketch, big.mask, 0});
  EXPECT_THROW(collect_embeddings(p, data), ConfigError);
}

TEST(ExportScatter, CsvAndImage) {
  const fs::path dir = fresh_dir("scatter");
  const std::vector<double> coords = {0.0, 0.0, 1.0, 2.0, -1.0, 0.5};
  export_scatter(coords, {0, 1, 2}, 3, dir / "plot", 64);
  std::ifstream csv(dir / "plot.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "x,y,label");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);

  const RgbImage img = load_ppm(dir / "plot.ppm");
  ASSERT_EQ(img.width, 64);
  bool found[3] = {false, false, false};
  for (std::size_t px = 0; px < img.data.size() / 3; ++px)
    for (int k = 0; k < 3; ++k) {
      const auto c = palette_color(k, 3);
      bool same = true;
      for (int ch = 0; ch < 3; ++ch)
        same = same && quantize_unit(img.data[px * 3 + ch]) == quantize_unit(c[ch]);
      found[k] = found[k] || same;
    }
  EXPECT_TRUE(found[0] && found[1] && found[2]);

  export_scatter({}, {}, 3, dir / "empty", 32);
  std::ifstream empty(dir / "empty.csv");
  std::string all((std::istreambuf_iterator<char>(empty)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, "x,y,label\n");
}
