#include "trajmine/clusterer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "trajmine/error.hpp"

namespace trajmine {

using json = nlohmann::json;

namespace {

double distance(const Matrix<float>& points, Eigen::Index a, Eigen::Index b) {
  double s = 0;
  const float* pa = points.row(a).data();
  const float* pb = points.row(b).data();
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double d = static_cast<double>(pa[j]) - static_cast<double>(pb[j]);
    s += d * d;
  }
  return std::sqrt(s);
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

json key_json(const PointKey& k) { return json{{"player_id", k.player_id}, {"day", k.day}}; }

PointKey key_from(const json& j) { return {j.at("player_id").get<std::int64_t>(), j.at("day").get<std::int32_t>()}; }

}  // namespace

std::vector<double> knn_distances(const Matrix<float>& points, std::int32_t k, KnnMode mode) {
  const auto n = points.rows();
  if (k < 1) throw InputError("knn_distances: k must be >= 1");
  if (n <= k) {
    throw InputError("knn_distances: need more than " + std::to_string(k) + " points, got " + std::to_string(n));
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(mode == KnnMode::all_k ? n * k : n));
  std::vector<double> row(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) row[c++] = distance(points, i, j);
    }
    std::partial_sort(row.begin(), row.begin() + k, row.end());
    if (mode == KnnMode::all_k) {
      out.insert(out.end(), row.begin(), row.begin() + k);
    } else {
      out.push_back(row[static_cast<std::size_t>(k - 1)]);
    }
  }
  return out;
}

double select_epsilon(std::span<const double> distances, double q) {
  if (!(q > 0 && q < 1)) throw InputError("quantile q must lie in (0,1)");
  if (distances.empty()) throw InputError("select_epsilon: no distances");
  std::vector<double> v(distances.begin(), distances.end());
  for (double d : v) {
    if (!std::isfinite(d) || d < 0) throw InputError("select_epsilon: distances must be finite and non-negative");
  }
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ClusterAssignment dbscan(std::span<const PointKey> keys, const Matrix<float>& points, double epsilon,
                         std::int32_t min_samples) {
  if (!(epsilon > 0) || !std::isfinite(epsilon)) throw InputError("dbscan: epsilon must be positive and finite");
  if (min_samples < 1) throw InputError("dbscan: min_samples must be >= 1");
  if (static_cast<Eigen::Index>(keys.size()) != points.rows()) throw InputError("dbscan: keys and points differ in count");

  const std::size_t n = keys.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  for (std::size_t i = 1; i < n; ++i) {
    if (keys[order[i - 1]] == keys[order[i]]) throw InputError("dbscan: duplicate key " + to_string(keys[order[i]]));
  }

  // Work in key order; neighbour lists include the point itself.
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t a = 0; a < n; ++a) {
    neighbors[a].push_back(a);
    for (std::size_t b = a + 1; b < n; ++b) {
      if (distance(points, static_cast<Eigen::Index>(order[a]), static_cast<Eigen::Index>(order[b])) <= epsilon) {
        neighbors[a].push_back(b);
        neighbors[b].push_back(a);
      }
    }
  }
  std::vector<bool> core(n);
  for (std::size_t a = 0; a < n; ++a) core[a] = static_cast<std::int32_t>(neighbors[a].size()) >= min_samples;

  UnionFind uf(n);
  for (std::size_t a = 0; a < n; ++a) {
    if (!core[a]) continue;
    for (auto b : neighbors[a]) {
      if (core[b]) uf.unite(a, b);
    }
  }
  // Union-find roots are the smallest index, i.e. the smallest key, of each component.
  std::vector<std::int32_t> root_label(n, kNoise);
  std::vector<std::int32_t> label(n, kNoise);
  std::int32_t next = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (!core[a]) continue;
    auto r = uf.find(a);
    if (root_label[r] == kNoise) root_label[r] = next++;
    label[a] = root_label[r];
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (core[a]) continue;
    for (auto b : neighbors[a]) {
      if (core[b] && (label[a] == kNoise || label[b] < label[a])) label[a] = label[b];
    }
  }

  ClusterAssignment out;
  out.epsilon = epsilon;
  out.min_samples = min_samples;
  out.keys.reserve(n);
  for (auto i : order) out.keys.push_back(keys[i]);
  out.labels = std::move(label);
  return out;
}

ClusterAssignment cluster_representations(const RepresentationTable& reps, double q, const ClusterOptions& opts) {
  if (!(q > 0 && q < 1)) throw InputError("quantile q must lie in (0,1)");
  auto d = knn_distances(reps.vectors, opts.k, opts.mode);
  const double eps = select_epsilon(d, q);
  if (!(eps > 0)) {
    throw InputError("the selected epsilon is zero; the representations contain too many duplicates for q = " +
                     std::to_string(q));
  }
  auto a = dbscan(reps.keys, reps.vectors, eps, opts.min_samples);
  a.q = q;
  return a;
}

std::int64_t detecting_count(const ClusterAssignment& assignment) {
  return std::count_if(assignment.labels.begin(), assignment.labels.end(), [](std::int32_t l) { return l != kNoise; });
}

std::int32_t ClusterAssignment::cluster_count() const {
  std::int32_t mx = kNoise;
  for (auto l : labels) mx = std::max(mx, l);
  return mx + 1;
}

std::vector<std::vector<PointKey>> ClusterAssignment::clusters() const {
  std::vector<std::vector<PointKey>> out(static_cast<std::size_t>(cluster_count()));
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (labels[i] != kNoise) out[static_cast<std::size_t>(labels[i])].push_back(keys[i]);
  }
  return out;
}

std::vector<PointKey> ClusterAssignment::noise() const {
  std::vector<PointKey> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (labels[i] == kNoise) out.push_back(keys[i]);
  }
  return out;
}

std::int32_t ClusterAssignment::label_of(const PointKey& key) const {
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) throw InputError("player-day " + to_string(key) + " is not in the assignment");
  return labels[static_cast<std::size_t>(it - keys.begin())];
}

std::string ClusterAssignment::to_json() const {
  json clusters_json = json::array();
  auto groups = clusters();
  for (std::size_t c = 0; c < groups.size(); ++c) {
    json members = json::array();
    for (const auto& k : groups[c]) members.push_back(key_json(k));
    clusters_json.push_back({{"id", c}, {"members", members}});
  }
  json noise_json = json::array();
  for (const auto& k : noise()) noise_json.push_back(key_json(k));
  return json{{"version", 1},
              {"q", q},
              {"epsilon", epsilon},
              {"min_samples", min_samples},
              {"clusters", clusters_json},
              {"noise", noise_json}}
      .dump(1);
}

ClusterAssignment ClusterAssignment::from_json(std::string_view text) {
  ClusterAssignment a;
  std::vector<std::pair<PointKey, std::int32_t>> entries;
  try {
    auto doc = json::parse(text);
    a.q = doc.at("q").get<double>();
    a.epsilon = doc.at("epsilon").get<double>();
    a.min_samples = doc.at("min_samples").get<std::int32_t>();
    for (const auto& c : doc.at("clusters")) {
      const auto id = c.at("id").get<std::int32_t>();
      for (const auto& m : c.at("members")) entries.emplace_back(key_from(m), id);
    }
    for (const auto& m : doc.at("noise")) entries.emplace_back(key_from(m), kNoise);
  } catch (const json::exception& e) {
    throw FormatError(std::string("cluster assignment: ") + e.what());
  }
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && entries[i - 1].first == entries[i].first) {
      throw FormatError("cluster assignment lists player-day " + to_string(entries[i].first) + " twice");
    }
    a.keys.push_back(entries[i].first);
    a.labels.push_back(entries[i].second);
  }
  return a;
}

}  // namespace trajmine
