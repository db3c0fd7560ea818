#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "../support/oracles.hpp"
#include "trajmine/error.hpp"
#include "trajmine/metrics.hpp"

using namespace trajmine;

namespace {

MinuteCells constant_cells(int cell, int from = 1, int to = kMinutesPerDay) {
  MinuteCells m(kMinutesPerDay);
  for (int t = from; t <= to; ++t) m[t - 1] = CellId{cell, 0, 0};
  return m;
}

std::vector<std::optional<std::int64_t>> as_keys(const MinuteCells& m) {
  std::vector<std::optional<std::int64_t>> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) out[i] = static_cast<std::int64_t>(m[i]->packed());
  }
  return out;
}

MinuteCells random_cells(std::mt19937_64& rng) {
  MinuteCells m(kMinutesPerDay);
  const int alphabet = 1 + static_cast<int>(rng() % 6);
  const double offline = (rng() % 5) * 0.2;
  std::uniform_real_distribution<double> u(0, 1);
  const int run = 1 + static_cast<int>(rng() % 40);
  int cell = 0;
  for (int t = 0; t < kMinutesPerDay; ++t) {
    if (t % run == 0) cell = static_cast<int>(rng() % alphabet);
    if (u(rng) >= offline) m[t] = CellId{cell, static_cast<int>(rng() % 2), 0};
  }
  return m;
}

/// Assignment with explicit labels over keys (1..n, day 1).
ClusterAssignment labeled(const std::vector<std::int32_t>& labels) {
  ClusterAssignment a;
  for (std::size_t i = 0; i < labels.size(); ++i) a.keys.push_back({static_cast<std::int64_t>(i + 1), 1});
  a.labels = labels;
  return a;
}

RepresentationTable line_reps(const std::vector<double>& xs) {
  RepresentationTable t;
  t.vectors.resize(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    t.keys.push_back({static_cast<std::int64_t>(i + 1), 1});
    t.vectors(static_cast<Eigen::Index>(i), 0) = static_cast<float>(xs[i]);
  }
  return t;
}

/// Players 1..n each on their own node, with the given edges between players.
AccessInfo access_with(int n, const std::vector<std::pair<int, int>>& player_edges) {
  AccessInfo a;
  a.graph = AccessInfoGraph(n);
  for (int p = 1; p <= n; ++p) a.player_nodes.emplace_back(p, p - 1);
  for (auto [x, y] : player_edges) a.graph.add_edge(x - 1, y - 1);
  return a;
}

}  // namespace

TEST_CASE("time_jaccard simple cases") {
  auto a = constant_cells(3);
  CHECK(time_jaccard(a, a) == 1.0);
  MinuteCells other(kMinutesPerDay);
  for (auto& c : other) c = CellId{3, 0, 1};
  CHECK(time_jaccard(a, other) == 0.0);
  CHECK(time_jaccard(MinuteCells(kMinutesPerDay), MinuteCells(kMinutesPerDay)) == 0.0);
  CHECK_THROWS_AS(time_jaccard(MinuteCells(10), a), InputError);
}

TEST_CASE("time_jaccard half-day switch matches window arithmetic") {
  auto a = constant_cells(0);
  auto b = constant_cells(0, 1, 720);
  for (int t = 721; t <= kMinutesPerDay; ++t) b[t - 1] = CellId{1, 0, 0};
  // Windows start at 1 + 15k. Those ending by 720 score 1, those starting after 720 score 0,
  // and the straddling window starting at 706 sees {A} vs {A, B}: 1/2.
  int full = 0, straddle = 0;
  for (int t = 1; t <= 1411; t += 15) {
    if (t + 29 <= 720) {
      ++full;
    } else if (t <= 720) {
      ++straddle;
    }
  }
  const double expected = (full + 0.5 * straddle) / 95.0;
  CHECK(time_jaccard(a, b) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(time_jaccard(a, b) == oracle::time_jaccard(as_keys(a), as_keys(b)));
}

TEST_CASE("time_jaccard equals the brute-force oracle on 1000 random pairs") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_cells(rng);
    auto b = random_cells(rng);
    const double got = time_jaccard(a, b);
    CHECK(got == oracle::time_jaccard(as_keys(a), as_keys(b)));
    CHECK(got == time_jaccard(b, a));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("access homogeneity worked examples") {
  SUBCASE("four connected members give 1") {
    auto acc = access_with(4, {{1, 2}, {2, 3}, {3, 4}});
    CHECK(access_homogeneity(labeled({0, 0, 0, 0}), acc) == 1.0);
  }
  SUBCASE("three connected plus one isolated give 2") {
    auto acc = access_with(4, {{1, 2}, {2, 3}});
    CHECK(access_homogeneity(labeled({0, 0, 0, 0}), acc) == 2.0);
  }
  SUBCASE("clusters with 1 and 3 components average to 2") {
    auto acc = access_with(8, {{1, 2}, {2, 3}, {3, 4}, {5, 6}});
    CHECK(access_homogeneity(labeled({0, 0, 0, 0, 1, 1, 1, 1}), acc) == 2.0);
  }
  SUBCASE("shared devices count once and noise is ignored") {
    AccessInfo acc;
    acc.graph = AccessInfoGraph(2);
    acc.player_nodes = {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 1}};
    CHECK(access_homogeneity(labeled({0, 0, 0, 0, kNoise}), acc) == 1.0);
  }
  SUBCASE("errors") {
    auto acc = access_with(3, {});
    CHECK_THROWS_AS(access_homogeneity(labeled({0, 0, 0, 0}), acc), InputError);
    CHECK_THROWS_AS(access_homogeneity(labeled({kNoise, kNoise}), acc), InputError);
  }
}

TEST_CASE("access homogeneity matches the component oracle on random graphs") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 30);
    std::set<std::pair<int, int>> edges;
    std::vector<std::pair<int, int>> player_edges;
    const int m = static_cast<int>(rng() % (2 * n));
    for (int e = 0; e < m; ++e) {
      int x = static_cast<int>(rng() % n), y = static_cast<int>(rng() % n);
      if (x == y) continue;
      edges.insert({std::min(x, y), std::max(x, y)});
      player_edges.emplace_back(x + 1, y + 1);
    }
    auto acc = access_with(n, player_edges);
    const int k = 1 + static_cast<int>(rng() % 3);
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng() % (k + 1)) - 1;
    for (int c = 0; c < k; ++c) labels[c] = c;  // every cluster non-empty
    auto a = labeled(labels);
    double sum = 0;
    for (int c = 0; c < k; ++c) {
      std::vector<int> nodes;
      for (int i = 0; i < n; ++i) {
        if (labels[i] == c) nodes.push_back(i);
      }
      sum += oracle::induced_components(edges, nodes);
    }
    const double got = access_homogeneity(a, acc);
    CHECK(got == doctest::Approx(sum / k).epsilon(1e-15));
    CHECK(got >= 1.0);
  }
}

TEST_CASE("select_pairs uses nearest cluster member and other-cluster negatives") {
  // Cluster 0 = players 1..4, cluster 1 = players 5..9, player 10 is noise.
  auto reps = line_reps({0.0, 1.0, 3.0, 3.5, 100.0, 101.0, 103.0, 106.0, 110.0, 50.0});
  auto a = labeled({0, 0, 0, 0, 1, 1, 1, 1, 1, kNoise});
  Rng rng(derive_seed({4}));
  auto p = select_pairs(a, reps, rng);
  REQUIRE(p.pos.size() == 9);
  REQUIRE(p.neg.size() == 9);
  CHECK(p.warnings.empty());
  std::map<std::int64_t, std::int64_t> xi;
  for (auto& [x, y] : p.pos) xi[x.player_id] = y.player_id;
  CHECK(xi[1] == 2);
  CHECK(xi[2] == 1);
  CHECK(xi[3] == 4);
  CHECK(xi[4] == 3);
  CHECK(xi[7] == 6);  // 103 is nearer 101 than 106
  CHECK(xi[8] == 7);
  CHECK(xi[9] == 8);
  for (auto& [x, y] : p.neg) {
    CHECK(x != y);
    CHECK(a.label_of(x) != a.label_of(y));
    CHECK(a.label_of(y) != kNoise);
  }
}

TEST_CASE("select_pairs breaks ties toward the smallest key") {
  auto reps = line_reps({1.0, 0.0, 2.0, 5.0});
  auto p = [&] {
    Rng rng(1);
    return select_pairs(labeled({0, 0, 0, 0}), reps, rng);
  }();
  CHECK(p.pos[0].second.player_id == 2);  // players 2 and 3 are both at distance 1
}

TEST_CASE("select_pairs degenerate topologies") {
  auto reps = line_reps({0, 1, 2, 3, 4});
  Rng rng(1);
  auto p = select_pairs(labeled({0, 0, 0, 0, kNoise}), reps, rng);
  CHECK(p.pos.size() == 4);
  CHECK(p.neg.empty());
  CHECK(p.warnings.size() == 1);
  CHECK_THROWS_AS(select_pairs(labeled({kNoise, kNoise, kNoise, kNoise, kNoise}), reps, rng), InputError);
}

TEST_CASE("negative draws are uniform over other-cluster points") {
  auto reps = line_reps({0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 22, 23});
  auto a = labeled({0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
  Rng rng(derive_seed({99}));
  std::map<std::int64_t, int> hits;
  const int rounds = 3000;
  for (int r = 0; r < rounds; ++r) {
    auto p = select_pairs(a, reps, rng);
    for (auto& [x, y] : p.neg) {
      if (x.player_id == 1) ++hits[y.player_id];
    }
  }
  REQUIRE(hits.size() == 8);
  double chi2 = 0;
  const double expect = rounds / 8.0;
  for (auto& [k, v] : hits) {
    CHECK(k >= 5);
    chi2 += (v - expect) * (v - expect) / expect;
  }
  CHECK(chi2 < 24.32);  // 7 dof, p = 0.001
}

TEST_CASE("contextual similarity averages pair scores") {
  std::vector<DownstreamTrajectory> trajs(4);
  for (int i = 0; i < 4; ++i) {
    trajs[i].player_id = i + 1;
    trajs[i].cells_by_minute = constant_cells(i < 2 ? 0 : 5);
  }
  std::map<PointKey, const DownstreamTrajectory*> by_key;
  for (auto& t : trajs) by_key[{t.player_id, 1}] = &t;
  PairSet p;
  p.pos = {{{1, 1}, {2, 1}}, {{3, 1}, {4, 1}}};
  p.neg = {{{1, 1}, {3, 1}}};
  auto s = contextual_similarity(p, by_key);
  CHECK(s.pos_mean == 1.0);
  CHECK(s.neg_mean.value() == 0.0);
  p.pos.push_back({{1, 1}, {7, 1}});
  CHECK_THROWS_AS(contextual_similarity(p, by_key), InputError);
  CHECK_THROWS_AS(contextual_similarity(PairSet{}, by_key), InputError);
}

TEST_CASE("planted groups meet the scenario jaccard floor and benign pairs stay under the ceiling") {
  auto world = WorldConfig::default_world();
  ScenarioConfig sc;
  sc.n_days = 1;
  auto sim = simulate(world, sc, 2024);
  std::map<std::int64_t, const DayLog*> log_of;
  for (const auto& l : sim.logs) log_of[l.player_id] = &l;
  auto cells = [&](std::int64_t p) {
    MinuteCells m(kMinutesPerDay);
    const auto& slots = log_of.at(p)->slots;
    for (int t = 0; t < kMinutesPerDay; ++t) {
      if (slots[t]) m[t] = bin_cell(*slots[t], world);
    }
    return m;
  };
  std::map<std::int32_t, std::vector<std::int64_t>> groups;
  std::vector<std::int64_t> benign;
  for (const auto& p : sim.profiles) {
    if (!log_of.count(p.player_id)) continue;
    if (p.group_id) {
      groups[*p.group_id].push_back(p.player_id);
    } else {
      benign.push_back(p.player_id);
    }
  }
  REQUIRE(groups.size() == static_cast<std::size_t>(sc.n_groups));
  for (const auto& [g, members] : groups) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        CHECK(time_jaccard(cells(members[i]), cells(members[j])) >= sc.bot_jaccard_floor);
      }
    }
  }
  std::mt19937_64 rng(3);
  double sum = 0;
  const int draws = 400;
  for (int d = 0; d < draws; ++d) {
    auto a = benign[rng() % benign.size()], b = benign[rng() % benign.size()];
    if (a == b) {
      --d;
      continue;
    }
    sum += time_jaccard(cells(a), cells(b));
  }
  CHECK(sum / draws < sc.benign_jaccard_ceiling);
}

TEST_CASE("metrics report shape") {
  auto reps = line_reps({0, 1, 2, 3, 10, 11, 12, 13, 50});
  auto a = labeled({0, 0, 0, 0, 1, 1, 1, 1, kNoise});
  std::vector<DownstreamTrajectory> trajs(9);
  for (int i = 0; i < 9; ++i) {
    trajs[i].player_id = i + 1;
    trajs[i].cells_by_minute = constant_cells(i / 4);
  }
  auto acc = access_with(9, {{1, 2}, {2, 3}, {3, 4}, {5, 6}, {7, 8}});
  auto r = evaluate_assignment(a, reps, trajs, acc, 11);
  CHECK(r.detecting_count == 8);
  CHECK(r.cluster_count == 2);
  CHECK(r.pos_mean.value() == 1.0);
  CHECK(r.neg_mean.value() == 0.0);
  CHECK(r.access_homogeneity.value() == 1.5);
  REQUIRE(r.per_cluster.size() == 2);
  CHECK(r.per_cluster[1].access_components == 2);
  auto doc = r.to_json();
  for (const char* field : {"\"pos_mean\"", "\"neg_mean\"", "\"access_homogeneity\"", "\"detecting_count\"", "\"per_cluster\""}) {
    CHECK(doc.find(field) != std::string::npos);
  }
  CHECK(evaluate_assignment(a, reps, trajs, acc, 11).to_json() == doc);

  auto empty = evaluate_assignment(labeled(std::vector<std::int32_t>(9, kNoise)), reps, trajs, acc, 11);
  CHECK(!empty.pos_mean);
  CHECK(empty.detecting_count == 0);
}
