#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. Written independently of the library code paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

/// Floor division through doubles.
inline std::int32_t floor_div(std::int32_t v, std::int32_t size) {
  return static_cast<std::int32_t>(std::floor(static_cast<double>(v) / static_cast<double>(size)));
}

/// Indices (into the input) that a cell-change filter keeps.
inline std::vector<std::size_t> dedup_indices(const std::vector<std::optional<int>>& cells) {
  std::vector<std::size_t> kept;
  std::optional<int> last;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i]) continue;
    if (!last || *last != *cells[i]) kept.push_back(i);
    last = cells[i];
  }
  return kept;
}

/// 1-based chunk positions feeding (anchor, positive) for each split mode.
inline std::pair<std::vector<int>, std::vector<int>> split_positions(bool odd_even) {
  std::vector<int> a, p;
  if (odd_even) {
    for (int i = 1; i <= 32; ++i) (i % 2 == 1 ? a : p).push_back(i);
  } else {
    for (int i = 1; i <= 16; ++i) a.push_back(i);
    for (int i = 17; i <= 32; ++i) p.push_back(i);
  }
  return {a, p};
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// For every point, the sorted distances to all other points; first k kept.
inline std::vector<double> knn_flat(const std::vector<std::vector<double>>& pts, std::size_t k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d.push_back(std::sqrt(sq_dist(pts[i], pts[j])));
    }
    std::sort(d.begin(), d.end());
    out.insert(out.end(), d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

/// Sort-then-interpolate quantile with h = (n - 1) q.
inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Textbook queue-based DBSCAN. Returns -1 for noise; cluster ids in
/// discovery order. Border points keep the first cluster that reaches them.
inline std::vector<int> dbscan(const std::vector<std::vector<double>>& pts, double eps, int min_samples) {
  const std::size_t n = pts.size();
  std::vector<int> label(n, -2);  // -2 unvisited
  auto region = [&](std::size_t i) {
    std::vector<std::size_t> r;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::sqrt(sq_dist(pts[i], pts[j])) <= eps) r.push_back(j);
    }
    return r;
  };
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    auto nb = region(i);
    if (static_cast<int>(nb.size()) < min_samples) {
      label[i] = -1;
      continue;
    }
    const int c = next++;
    label[i] = c;
    std::queue<std::size_t> work;
    for (auto j : nb) work.push(j);
    while (!work.empty()) {
      auto j = work.front();
      work.pop();
      if (label[j] == -1) label[j] = c;
      if (label[j] != -2) continue;
      label[j] = c;
      auto nb2 = region(j);
      if (static_cast<int>(nb2.size()) >= min_samples) {
        for (auto m : nb2) work.push(m);
      }
    }
  }
  return label;
}

/// Core flags under the self-inclusive neighbour count.
inline std::vector<bool> core_points(const std::vector<std::vector<double>>& pts, double eps, int min_samples) {
  std::vector<bool> core(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    int c = 0;
    for (std::size_t j = 0; j < pts.size(); ++j) c += std::sqrt(sq_dist(pts[i], pts[j])) <= eps;
    core[i] = c >= min_samples;
  }
  return core;
}

/// Window-by-window time-aware Jaccard over 1440 optional cell keys.
inline double time_jaccard(const std::vector<std::optional<std::int64_t>>& a,
                           const std::vector<std::optional<std::int64_t>>& b) {
  double total = 0;
  int windows = 0;
  for (int t = 1; t <= 1411; t += 15) {
    std::set<std::int64_t> sa, sb;
    for (int m = t; m <= t + 29; ++m) {
      if (a[m - 1]) sa.insert(*a[m - 1]);
      if (b[m - 1]) sb.insert(*b[m - 1]);
    }
    std::set<std::int64_t> uni = sa;
    uni.insert(sb.begin(), sb.end());
    std::size_t inter = 0;
    for (auto x : sa) inter += sb.count(x);
    total += uni.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni.size());
    ++windows;
  }
  return total / windows;
}

/// Connected components of an undirected graph restricted to `nodes` (DFS).
inline int induced_components(const std::set<std::pair<int, int>>& edges, const std::vector<int>& nodes) {
  std::set<int> todo(nodes.begin(), nodes.end());
  int comps = 0;
  while (!todo.empty()) {
    ++comps;
    std::vector<int> stack{*todo.begin()};
    todo.erase(todo.begin());
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto it = todo.begin(); it != todo.end();) {
        if (edges.count({std::min(u, *it), std::max(u, *it)})) {
          stack.push_back(*it);
          it = todo.erase(it);
        } else {
          ++it;
        }
      }
    }
  }
  return comps;
}

}  // namespace oracle
