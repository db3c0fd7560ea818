#pragma once

// Evaluation metrics: time-aware Jaccard co-movement similarity between
// player-days and access-information homogeneity of clusters.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajmine/clusterer.hpp"
#include "trajmine/dataset.hpp"
#include "trajmine/rng.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

inline constexpr int kJaccardWindow = 30;
inline constexpr int kJaccardStride = 15;
inline constexpr int kJaccardWindows = 95;  // starts 1, 16, ..., 1411

using KeyPair = std::pair<PointKey, PointKey>;

struct PairSet {
  std::vector<KeyPair> pos;
  std::vector<KeyPair> neg;
  std::vector<std::string> warnings;
};

/// For every clustered point: the Euclidean-nearest other member of its
/// cluster (ties: smallest key) as the positive partner, and a uniform draw
/// from the clustered points of other clusters as the negative partner.
/// With a single cluster negatives are skipped and a warning is recorded.
/// Throws InputError when every point is noise.
PairSet select_pairs(const ClusterAssignment& assignment, const RepresentationTable& reps, Rng& rng);

/// Mean over the 95 windows [t, t+29] of |S_a & S_b| / |S_a | S_b| where S is
/// the set of cells visited in the window. Windows empty on both sides count 0.
/// Throws InputError unless both inputs have 1440 entries.
double time_jaccard(const MinuteCells& a, const MinuteCells& b);

struct Similarity {
  double pos_mean = 0;
  std::optional<double> neg_mean;  // absent when there are no negative pairs
};

/// Trajectories are looked up by key; throws InputError for missing keys.
Similarity contextual_similarity(const PairSet& pairs, const std::map<PointKey, const DownstreamTrajectory*>& trajs);

/// Connected components of the access graph restricted to a cluster's players.
std::int32_t cluster_access_components(std::span<const PointKey> members, const AccessInfo& access);

/// Mean component count over non-noise clusters. Throws InputError when there
/// is no cluster or a member has no access node.
double access_homogeneity(const ClusterAssignment& assignment, const AccessInfo& access);

struct ClusterSummary {
  std::int32_t id = 0;
  std::int32_t size = 0;
  std::int32_t access_components = 0;
  std::optional<double> pos_jaccard_mean;
  std::vector<PointKey> members;
};

struct MetricsReport {
  double q = 0;
  double epsilon = 0;
  std::int64_t detecting_count = 0;
  std::int32_t cluster_count = 0;
  std::optional<double> pos_mean;
  std::optional<double> neg_mean;
  std::optional<double> access_homogeneity;
  std::vector<ClusterSummary> per_cluster;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

/// Full report; clusters-free assignments yield a report without means.
MetricsReport evaluate_assignment(const ClusterAssignment& assignment, const RepresentationTable& reps,
                                  std::span<const DownstreamTrajectory> trajs, const AccessInfo& access,
                                  std::uint64_t seed);

}  // namespace trajmine
