#include "coreflect/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "coreflect/error.hpp"
#include "coreflect/util.hpp"

namespace coreflect {

Point normalized(Point p) {
  double norm = 0.0;
  for (double v : p) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : p) v /= norm;
  }
  return p;
}

double cosine_distance(const Point& a, const Point& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
  return 1.0 - std::clamp(cos, -1.0, 1.0);
}

namespace {

std::size_t distinct_count(const std::vector<Point>& points) {
  return std::set<Point>(points.begin(), points.end()).size();
}

int nearest(const Point& p, const std::vector<Point>& centroids, double* dist_out = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = cosine_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist_out != nullptr) *dist_out = best_d;
  return best;
}

std::vector<Point> seed_plus_plus(const std::vector<Point>& points, int k, Rng& rng) {
  std::vector<Point> centroids;
  centroids.push_back(points[rng.uniform_index(points.size())]);
  std::vector<double> d2(points.size());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double d = 0.0;
      nearest(points[i], centroids, &d);
      d2[i] = d * d;
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform01() * total;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (d2[i] <= 0.0) continue;
        if (target < d2[i]) {
          pick = i;
          break;
        }
        target -= d2[i];
      }
      while (d2[pick] <= 0.0) --pick;  // guards against rounding at the tail
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

KMeansResult lloyd(const std::vector<Point>& points, std::vector<Point> centroids, int max_iterations) {
  const auto k = centroids.size();
  const auto dim = points.front().size();
  std::vector<int> labels(points.size(), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = nearest(points[i], centroids);
      if (c != labels[i]) {
        labels[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Point> sums(k, Point(dim, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += points[i][d];
      ++sizes[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) {
        centroids[c] = normalized(std::move(sums[c]));
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = cosine_distance(points[i], centroids[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids[c] = points[far];
      labels[far] = static_cast<int>(c);
    }
  }
  KMeansResult r;
  r.labels = std::move(labels);
  r.centroids = std::move(centroids);
  for (std::size_t i = 0; i < points.size(); ++i) r.inertia += cosine_distance(points[i], r.centroids[r.labels[i]]);
  return r;
}

}  // namespace

KMeansResult spherical_kmeans(const std::vector<Point>& points, int k, std::uint64_t seed, int restarts,
                              int max_iterations) {
  if (points.empty()) throw InsufficientData("cannot cluster an empty set");
  if (k < 1 || static_cast<std::size_t>(k) > distinct_count(points)) {
    throw InsufficientData("k=" + std::to_string(k) + " exceeds the number of distinct points");
  }
  KMeansResult best;
  bool have = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, "kmeans/k" + std::to_string(k) + "/r" + std::to_string(r)));
    auto result = lloyd(points, seed_plus_plus(points, k, rng), max_iterations);
    if (!have || result.inertia < best.inertia - 1e-12) {
      best = std::move(result);
      have = true;
    }
  }
  return best;
}

double mean_silhouette(const std::vector<Point>& points, const std::vector<int>& labels, int k) {
  if (k < 2) throw InsufficientData("silhouette needs at least two clusters");
  const auto n = points.size();
  std::vector<std::size_t> sizes(k, 0);
  for (int l : labels) ++sizes[l];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] <= 1) continue;
    std::vector<double> sum(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += cosine_distance(points[i], points[j]);
    }
    const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != labels[i] && sizes[c] > 0) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0 && std::isfinite(b)) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

ClusterSelection select_clustering(const std::vector<Point>& points, int k_min, int k_max, std::uint64_t seed,
                                   int restarts) {
  if (points.empty()) throw InsufficientData("cannot cluster an empty set");
  if (k_min < 1 || k_max < k_min) {
    throw ConfigError("cluster bounds must satisfy 1 <= k_min <= k_max");
  }
  const int distinct = static_cast<int>(distinct_count(points));
  ClusterSelection sel;
  if (distinct == 1) {
    sel.k = 1;
    sel.degenerate = true;
    sel.clustering.labels.assign(points.size(), 0);
    sel.clustering.centroids = {normalized(points.front())};
    return sel;
  }
  const int lo = std::min(std::max(k_min, 2), distinct);
  const int hi = std::min(k_max, distinct);
  if (k_max < 2) {
    sel.k = 1;
    sel.clustering = spherical_kmeans(points, 1, seed, restarts);
    return sel;
  }
  bool have = false;
  for (int k = lo; k <= std::max(lo, hi); ++k) {
    auto km = spherical_kmeans(points, k, seed, restarts);
    const double s = mean_silhouette(points, km.labels, k);
    if (!have || s > sel.silhouette + 1e-12) {
      sel.k = k;
      sel.silhouette = s;
      sel.clustering = std::move(km);
      have = true;
    }
  }
  return sel;
}

}  // namespace coreflect
