#pragma once

// Quantile-epsilon DBSCAN over representation vectors.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajmine/embed_extract.hpp"

namespace trajmine {

inline constexpr std::int32_t kNoise = -1;

enum class KnnMode {
  all_k,  // every point contributes its k nearest-neighbour distances
  kth     // every point contributes only its k-th nearest distance
};

/// Euclidean distances from each point to its k nearest other points, flat
/// and grouped by point (ascending within a point). `kth` keeps one value per point.
/// Throws InputError unless there are more than k points.
std::vector<double> knn_distances(const Matrix<float>& points, std::int32_t k = 4, KnnMode mode = KnnMode::all_k);

/// Linear-interpolation quantile: sorted v, h = (n - 1) q, v[floor h] + frac(h) (v[ceil h] - v[floor h]).
double select_epsilon(std::span<const double> distances, double q);

struct ClusterAssignment {
  double q = 0;
  double epsilon = 0;
  std::int32_t min_samples = 4;
  std::vector<PointKey> keys;      // sorted, same order as the representation table
  std::vector<std::int32_t> labels;  // kNoise or 0..n_clusters-1

  std::int32_t cluster_count() const;
  /// Member keys per cluster id, each ascending.
  std::vector<std::vector<PointKey>> clusters() const;
  std::vector<PointKey> noise() const;
  std::int32_t label_of(const PointKey& key) const;

  /// {q, epsilon, min_samples, clusters: [{id, members}], noise: [...]}.
  std::string to_json() const;
  static ClusterAssignment from_json(std::string_view text);

  bool operator==(const ClusterAssignment&) const = default;
};

/// Density clustering with the self-inclusive core rule (a point is core when
/// at least min_samples points, itself included, lie within distance <= epsilon).
/// Cores connected through core-core links form clusters, numbered by their
/// smallest core member key. A border point joins the lowest-numbered cluster
/// among its core neighbours. Result does not depend on input order.
ClusterAssignment dbscan(std::span<const PointKey> keys, const Matrix<float>& points, double epsilon,
                         std::int32_t min_samples = 4);

struct ClusterOptions {
  std::int32_t k = 4;
  std::int32_t min_samples = 4;
  KnnMode mode = KnnMode::all_k;
};

/// knn_distances -> select_epsilon(q) -> dbscan.
ClusterAssignment cluster_representations(const RepresentationTable& reps, double q, const ClusterOptions& opts = {});

/// Number of points with a non-noise label.
std::int64_t detecting_count(const ClusterAssignment& assignment);

}  // namespace trajmine
