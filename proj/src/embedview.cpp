#include "s3d/embedview.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "s3d/error.hpp"
#include "s3d/rng.hpp"

namespace s3d {

void TsneConfig::validate() const {
  if (!(perplexity >= 1.0)) throw ConfigError("t-SNE perplexity must be at least 1");
  if (iterations < 1) throw ConfigError("t-SNE needs at least one iteration");
  if (!(learning_rate > 0.0)) throw ConfigError("t-SNE learning rate must be positive");
  if (exaggeration_iters < 0 || momentum_switch < 0) throw ConfigError("t-SNE schedule must be nonnegative");
}

EmbeddingSet collect_embeddings(const UNetParams& params,
                                const std::vector<DatasetSample>& samples) {
  EmbeddingSet set;
  set.dim = params.config.embedding_size();
  for (const DatasetSample& s : samples) {
    const UNetOutput out = forward(params, s.sketch);
    if (static_cast<int>(out.embedding.data.size()) != set.dim) {
      throw ConfigError("embedding size does not match checkpoint");
    }
    set.data.insert(set.data.end(), out.embedding.data.begin(), out.embedding.data.end());
    set.labels.push_back(s.group);
    ++set.n;
  }
  return set;
}

namespace {

std::vector<double> squared_distances(const std::vector<double>& x, int n, int dim) {
  if (x.size() != static_cast<std::size_t>(n) * dim) throw ConfigError("point array has wrong size");
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double t = x[static_cast<std::size_t>(i) * dim + k] - x[static_cast<std::size_t>(j) * dim + k];
        s += t * t;
      }
      d[static_cast<std::size_t>(i) * n + j] = s;
      d[static_cast<std::size_t>(j) * n + i] = s;
    }
  }
  return d;
}

// Fills row with exp(-beta (d - dmin)) normalized; returns entropy in nats.
double row_distribution(const double* dist, int n, int self, double beta, double* row) {
  double dmin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    if (j != self) dmin = std::min(dmin, dist[j]);
  }
  double z = 0.0;
  double weighted = 0.0;
  for (int j = 0; j < n; ++j) {
    if (j == self) {
      row[j] = 0.0;
      continue;
    }
    const double shifted = dist[j] - dmin;
    row[j] = std::exp(-beta * shifted);
    z += row[j];
    weighted += row[j] * shifted;
  }
  for (int j = 0; j < n; ++j) row[j] /= z;
  return std::log(z) + beta * weighted / z;
}

}  // namespace

std::vector<double> conditional_affinities(const std::vector<double>& points, int n, int dim,
                                           double perplexity) {
  if (n < 2) throw ConfigError("affinities need at least two points");
  if (!(perplexity > 0.0)) throw ConfigError("perplexity must be positive");
  const double target = std::min(perplexity, static_cast<double>(n - 1));
  const double log_target = std::log(target);
  const auto dist = squared_distances(points, n, dim);
  std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* di = dist.data() + static_cast<std::size_t>(i) * n;
    double* row = p.data() + static_cast<std::size_t>(i) * n;
    double lo = -60.0, hi = 60.0;  // log beta
    double perp = 0.0;
    for (int step = 0; step < 100; ++step) {
      const double mid = 0.5 * (lo + hi);
      const double h = row_distribution(di, n, i, std::exp(mid), row);
      perp = std::exp(h);
      if (std::abs(perp - target) < 1e-10) break;
      if (h > log_target) {
        lo = mid;  // too flat: sharpen
      } else {
        hi = mid;
      }
    }
    if (!(std::abs(perp - target) <= 1e-5)) {
      throw NumericError("perplexity bisection did not converge for row " + std::to_string(i));
    }
  }
  return p;
}

std::vector<double> row_perplexities(const std::vector<double>& conditional, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double h = 0.0;
    for (int j = 0; j < n; ++j) {
      const double v = conditional[static_cast<std::size_t>(i) * n + j];
      if (v > 0.0) h -= v * std::log(v);
    }
    out[i] = std::exp(h);
  }
  return out;
}

std::vector<double> affinities(const std::vector<double>& points, int n, int dim,
                               double perplexity) {
  const auto c = conditional_affinities(points, n, dim, perplexity);
  std::vector<double> p(c.size(), 0.0);
  const double scale = 1.0 / (2.0 * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      p[static_cast<std::size_t>(i) * n + j] =
          (c[static_cast<std::size_t>(i) * n + j] + c[static_cast<std::size_t>(j) * n + i]) * scale;
    }
  }
  return p;
}

namespace {

// Unnormalized Student-t kernel and its sum.
double student_kernel(const std::vector<double>& y, int n, std::vector<double>& num) {
  num.assign(static_cast<std::size_t>(n) * n, 0.0);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      num[static_cast<std::size_t>(i) * n + j] = v;
      num[static_cast<std::size_t>(j) * n + i] = v;
      z += 2.0 * v;
    }
  }
  return z;
}

}  // namespace

double kl_divergence(const std::vector<double>& p, const std::vector<double>& coords, int n) {
  std::vector<double> num;
  const double z = student_kernel(coords, n, num);
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) kl += p[k] * std::log(p[k] / std::max(num[k] / z, 1e-300));
  }
  return kl;
}

TsneResult tsne_embed(const std::vector<double>& p, int n, const TsneConfig& config) {
  config.validate();
  if (n < 2 || p.size() != static_cast<std::size_t>(n) * n) throw ConfigError("t-SNE needs an n x n P with n >= 2");
  SplitMix64 rng(config.seed);
  TsneResult r;
  r.coords.resize(static_cast<std::size_t>(n) * 2);
  for (double& v : r.coords) v = 1e-4 * rng.normal();
  r.initial_kl = kl_divergence(p, r.coords, n);
  std::vector<double> velocity(r.coords.size(), 0.0);
  std::vector<double> grad(r.coords.size());
  std::vector<double> num;
  for (int it = 0; it < config.iterations; ++it) {
    const double exag = it < config.exaggeration_iters ? config.exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.momentum_early : config.momentum_late;
    const double z = student_kernel(r.coords, n, num);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const std::size_t k = static_cast<std::size_t>(i) * n + j;
        const double m = 4.0 * (exag * p[k] - num[k] / z) * num[k];
        grad[2 * i] += m * (r.coords[2 * i] - r.coords[2 * j]);
        grad[2 * i + 1] += m * (r.coords[2 * i + 1] - r.coords[2 * j + 1]);
      }
    }
    for (std::size_t k = 0; k < r.coords.size(); ++k) {
      velocity[k] = momentum * velocity[k] - config.learning_rate * grad[k];
      r.coords[k] += velocity[k];
      if (!std::isfinite(r.coords[k])) {
        throw NumericError("t-SNE produced non-finite coordinates at iteration " + std::to_string(it));
      }
    }
    // Keep the layout centered.
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
      mx += r.coords[2 * i];
      my += r.coords[2 * i + 1];
    }
    mx /= n;
    my /= n;
    for (int i = 0; i < n; ++i) {
      r.coords[2 * i] -= mx;
      r.coords[2 * i + 1] -= my;
    }
  }
  r.final_kl = kl_divergence(p, r.coords, n);
  return r;
}

double silhouette(const std::vector<double>& coords, int dim, const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  if (coords.size() != static_cast<std::size_t>(n) * dim) throw ConfigError("silhouette: size mismatch");
  if (n == 0) throw UndefinedMetricError("silhouette of an empty set");
  const auto d2 = squared_distances(coords, n, dim);
  int max_label = *std::max_element(labels.begin(), labels.end());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> sum(max_label + 1, 0.0);
    std::vector<int> count(max_label + 1, 0);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[j]] += std::sqrt(d2[static_cast<std::size_t>(i) * n + j]);
      ++count[labels[j]];
    }
    if (count[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / count[labels[i]];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c <= max_label; ++c) {
      if (c != labels[i] && count[c] > 0) b = std::min(b, sum[c] / count[c]);
    }
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / n;
}

void export_scatter(const std::vector<double>& coords, const std::vector<int>& labels,
                    int num_labels, const std::filesystem::path& prefix, int image_size) {
  const std::size_t n = labels.size();
  if (coords.size() != 2 * n) throw ConfigError("export_scatter: coordinate count mismatch");
  const int palette_size = std::max(num_labels, 2);
  std::ostringstream csv;
  csv.precision(17);
  csv << "x,y,label\n";
  for (std::size_t i = 0; i < n; ++i) csv << coords[2 * i] << ',' << coords[2 * i + 1] << ',' << labels[i] << '\n';
  const std::string text = csv.str();
  std::filesystem::path csv_path = prefix;
  csv_path += ".csv";
  write_file(csv_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  RgbImage img(image_size, image_size);
  std::fill(img.data.begin(), img.data.end(), 1.0);
  if (n > 0) {
    double lo_x = coords[0], hi_x = coords[0], lo_y = coords[1], hi_y = coords[1];
    for (std::size_t i = 0; i < n; ++i) {
      lo_x = std::min(lo_x, coords[2 * i]);
      hi_x = std::max(hi_x, coords[2 * i]);
      lo_y = std::min(lo_y, coords[2 * i + 1]);
      hi_y = std::max(hi_y, coords[2 * i + 1]);
    }
    const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
    const int margin = 4;
    const double scale = (image_size - 1 - 2 * margin) / span;
    for (std::size_t i = 0; i < n; ++i) {
      const int px = margin + static_cast<int>(std::lround((coords[2 * i] - lo_x) * scale));
      const int py = image_size - 1 - margin - static_cast<int>(std::lround((coords[2 * i + 1] - lo_y) * scale));
      const auto color = palette_color(((labels[i] % palette_size) + palette_size) % palette_size, palette_size);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = px + dx, y = py + dy;
          if (x < 0 || y < 0 || x >= image_size || y >= image_size) continue;
          for (int c = 0; c < 3; ++c) img.data[(static_cast<std::size_t>(y) * image_size + x) * 3 + c] = color[c];
        }
      }
    }
  }
  std::filesystem::path ppm_path = prefix;
  ppm_path += ".ppm";
  save_ppm(img, ppm_path);
}

}  // namespace s3d
