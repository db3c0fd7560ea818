#include "trajmine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "trajmine/error.hpp"

namespace trajmine {

using json = nlohmann::json;

namespace {

enum : std::uint64_t { kTagNegatives = 21 };

double sq_distance(const Matrix<float>& v, std::size_t a, std::size_t b) {
  double s = 0;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double d = static_cast<double>(v(static_cast<Eigen::Index>(a), j)) - v(static_cast<Eigen::Index>(b), j);
    s += d * d;
  }
  return s;
}

json key_json(const PointKey& k) { return json{{"player_id", k.player_id}, {"day", k.day}}; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

PairSet select_pairs(const ClusterAssignment& assignment, const RepresentationTable& reps, Rng& rng) {
  auto clusters = assignment.clusters();
  if (clusters.empty()) throw InputError("select_pairs: every point is noise");
  PairSet out;
  std::vector<std::vector<std::size_t>> rows(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& k : clusters[c]) rows[c].push_back(reps.index_of(k));
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (std::size_t i = 0; i < clusters[c].size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = i;
      for (std::size_t j = 0; j < clusters[c].size(); ++j) {
        if (j == i) continue;
        const double d = sq_distance(reps.vectors, rows[c][i], rows[c][j]);
        if (d < best) {  // members are key-sorted, so ties keep the smallest key
          best = d;
          arg = j;
        }
      }
      if (arg == i) throw InputError("select_pairs: cluster " + std::to_string(c) + " has a single member");
      out.pos.emplace_back(clusters[c][i], clusters[c][arg]);
    }
  }
  if (clusters.size() < 2) {
    out.warnings.push_back("only one cluster: negative pairs skipped");
    return out;
  }
  std::vector<PointKey> clustered;
  std::vector<std::size_t> label_of;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& k : clusters[c]) {
      clustered.push_back(k);
      label_of.push_back(c);
    }
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const int others = static_cast<int>(clustered.size() - clusters[c].size());
    for (const auto& k : clusters[c]) {
      int pick = uniform_int(rng, 0, others - 1);
      for (std::size_t j = 0; j < clustered.size(); ++j) {
        if (label_of[j] == c) continue;
        if (pick-- == 0) {
          out.neg.emplace_back(k, clustered[j]);
          break;
        }
      }
    }
  }
  return out;
}

double time_jaccard(const MinuteCells& a, const MinuteCells& b) {
  if (a.size() != kMinutesPerDay || b.size() != kMinutesPerDay) {
    throw InputError("time_jaccard: trajectories must have 1440 minute slots");
  }
  double total = 0;
  std::vector<std::uint64_t> sa, sb;
  for (int t = 1; t <= kMinutesPerDay - kJaccardWindow + 1; t += kJaccardStride) {
    sa.clear();
    sb.clear();
    for (int m = t; m < t + kJaccardWindow; ++m) {
      if (a[m - 1]) sa.push_back(a[m - 1]->packed());
      if (b[m - 1]) sb.push_back(b[m - 1]->packed());
    }
    std::sort(sa.begin(), sa.end());
    sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
    std::size_t inter = 0;
    for (std::size_t i = 0, j = 0; i < sa.size() && j < sb.size();) {
      if (sa[i] < sb[j]) {
        ++i;
      } else if (sb[j] < sa[i]) {
        ++j;
      } else {
        ++inter;
        ++i;
        ++j;
      }
    }
    const std::size_t uni = sa.size() + sb.size() - inter;
    if (uni > 0) total += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / kJaccardWindows;
}

Similarity contextual_similarity(const PairSet& pairs, const std::map<PointKey, const DownstreamTrajectory*>& trajs) {
  if (pairs.pos.empty() && pairs.neg.empty()) throw InputError("contextual_similarity: no pairs");
  auto lookup = [&](const PointKey& k) -> const DownstreamTrajectory& {
    auto it = trajs.find(k);
    if (it == trajs.end() || !it->second) throw InputError("no trajectory for player-day " + to_string(k));
    return *it->second;
  };
  auto mean = [&](const std::vector<KeyPair>& list) {
    double s = 0;
    for (const auto& [a, b] : list) s += time_jaccard(lookup(a).cells_by_minute, lookup(b).cells_by_minute);
    return s / static_cast<double>(list.size());
  };
  Similarity out;
  if (!pairs.pos.empty()) out.pos_mean = mean(pairs.pos);
  if (!pairs.neg.empty()) out.neg_mean = mean(pairs.neg);
  return out;
}

std::int32_t cluster_access_components(std::span<const PointKey> members, const AccessInfo& access) {
  std::vector<std::int32_t> nodes;
  for (const auto& k : members) {
    auto node = access.node_of(k.player_id);
    if (!node) throw InputError("player " + std::to_string(k.player_id) + " has no access-information node");
    nodes.push_back(*node);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return access.graph.induced_components(nodes);
}

double access_homogeneity(const ClusterAssignment& assignment, const AccessInfo& access) {
  auto clusters = assignment.clusters();
  if (clusters.empty()) throw InputError("access_homogeneity: no non-noise cluster");
  double total = 0;
  for (const auto& c : clusters) total += cluster_access_components(c, access);
  return total / static_cast<double>(clusters.size());
}

MetricsReport evaluate_assignment(const ClusterAssignment& assignment, const RepresentationTable& reps,
                                  std::span<const DownstreamTrajectory> trajs, const AccessInfo& access,
                                  std::uint64_t seed) {
  MetricsReport r;
  r.q = assignment.q;
  r.epsilon = assignment.epsilon;
  r.detecting_count = detecting_count(assignment);
  r.cluster_count = assignment.cluster_count();
  auto clusters = assignment.clusters();
  if (clusters.empty()) {
    r.warnings.push_back("no clusters at this q: similarity and homogeneity are undefined");
    return r;
  }
  std::map<PointKey, const DownstreamTrajectory*> by_key;
  for (const auto& t : trajs) by_key[{t.player_id, t.day}] = &t;

  Rng rng(derive_seed({seed, kTagNegatives}));
  auto pairs = select_pairs(assignment, reps, rng);
  auto sim = contextual_similarity(pairs, by_key);
  r.pos_mean = sim.pos_mean;
  r.neg_mean = sim.neg_mean;
  r.warnings = pairs.warnings;
  r.access_homogeneity = access_homogeneity(assignment, access);

  std::size_t p = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    ClusterSummary s;
    s.id = static_cast<std::int32_t>(c);
    s.size = static_cast<std::int32_t>(clusters[c].size());
    s.access_components = cluster_access_components(clusters[c], access);
    s.members = clusters[c];
    double sum = 0;
    for (std::size_t i = 0; i < clusters[c].size(); ++i, ++p) {
      const auto& [a, b] = pairs.pos[p];
      sum += time_jaccard(by_key.at(a)->cells_by_minute, by_key.at(b)->cells_by_minute);
    }
    s.pos_jaccard_mean = sum / static_cast<double>(clusters[c].size());
    r.per_cluster.push_back(std::move(s));
  }
  return r;
}

std::string MetricsReport::to_json() const {
  json clusters_json = json::array();
  for (const auto& c : per_cluster) {
    json members = json::array();
    for (const auto& k : c.members) members.push_back(key_json(k));
    clusters_json.push_back({{"id", c.id},
                             {"size", c.size},
                             {"access_components", c.access_components},
                             {"pos_jaccard_mean", optional_json(c.pos_jaccard_mean)},
                             {"members", members}});
  }
  return json{{"version", 1},
              {"q", q},
              {"epsilon", epsilon},
              {"detecting_count", detecting_count},
              {"cluster_count", cluster_count},
              {"pos_mean", optional_json(pos_mean)},
              {"neg_mean", optional_json(neg_mean)},
              {"access_homogeneity", optional_json(access_homogeneity)},
              {"per_cluster", clusters_json},
              {"warnings", warnings}}
      .dump(1);
}

}  // namespace trajmine
