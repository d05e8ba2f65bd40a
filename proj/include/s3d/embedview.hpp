#pragma once

// Bottleneck-embedding extraction and an exact O(n^2) t-SNE.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "s3d/datagen.hpp"
#include "s3d/unet.hpp"

namespace s3d {

struct TsneConfig {
  double perplexity = 15.0;
  int iterations = 500;
  double learning_rate = 100.0;
  double momentum_early = 0.5;
  double momentum_late = 0.8;
  int momentum_switch = 250;
  double exaggeration = 4.0;
  int exaggeration_iters = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EmbeddingSet {
  int n = 0;
  int dim = 0;
  std::vector<double> data;  // n x dim, row-major
  std::vector<int> labels;
};

EmbeddingSet collect_embeddings(const UNetParams& params,
                                const std::vector<DatasetSample>& samples);

// Row-stochastic conditional affinities p_{j|i}, n x n. A perplexity at or
// above n - 1 is clamped to n - 1, the largest any row can reach.
std::vector<double> conditional_affinities(const std::vector<double>& points, int n, int dim,
                                           double perplexity);
// Perplexity exp(H) of each conditional row (natural log entropy).
std::vector<double> row_perplexities(const std::vector<double>& conditional, int n);
// (P + P^T) / 2n with zero diagonal.
std::vector<double> affinities(const std::vector<double>& points, int n, int dim,
                               double perplexity);

double kl_divergence(const std::vector<double>& p, const std::vector<double>& coords, int n);

struct TsneResult {
  std::vector<double> coords;  // n x 2
  double initial_kl = 0.0;
  double final_kl = 0.0;
};
TsneResult tsne_embed(const std::vector<double>& p, int n, const TsneConfig& config);

// Mean silhouette; points alone in their label score 0.
double silhouette(const std::vector<double>& coords, int dim, const std::vector<int>& labels);

// Writes prefix.csv (x,y,label) and prefix.ppm, points drawn with the
// class palette over white.
void export_scatter(const std::vector<double>& coords, const std::vector<int>& labels,
                    int num_labels, const std::filesystem::path& prefix, int image_size = 256);

}  // namespace s3d
