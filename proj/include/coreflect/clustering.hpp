#pragma once

#include <cstdint>
#include <vector>

namespace coreflect {

using Point = std::vector<double>;

struct KMeansResult {
  std::vector<int> labels;
  std::vector<Point> centroids;  // unit length
  double inertia = 0.0;          // sum of cosine distances to assigned centroid
};

/// Spherical k-means (cosine distance) with k-means++ seeding. Points must be
/// unit length. The best of `restarts` seeded runs by inertia is returned.
/// Requires 1 <= k <= number of distinct points.
KMeansResult spherical_kmeans(const std::vector<Point>& points, int k, std::uint64_t seed, int restarts = 8,
                              int max_iterations = 100);

/// Mean silhouette under cosine distance. Members of singleton clusters score
/// 0. Requires at least two clusters.
double mean_silhouette(const std::vector<Point>& points, const std::vector<int>& labels, int k);

struct ClusterSelection {
  int k = 1;
  KMeansResult clustering;
  double silhouette = 0.0;
  /// All points coincide; a single cluster is returned.
  bool degenerate = false;
};

/// Clusters for every feasible k in [k_min, k_max] and keeps the one with the
/// highest mean silhouette (ties go to the smaller k). k = 1 is chosen only
/// when no k >= 2 is feasible.
ClusterSelection select_clustering(const std::vector<Point>& points, int k_min, int k_max, std::uint64_t seed,
                                   int restarts = 8);

double cosine_distance(const Point& a, const Point& b);
Point normalized(Point p);

}  // namespace coreflect
