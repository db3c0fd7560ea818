#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "../support/oracles.hpp"
#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/synthetic_world.hpp"

using namespace trajmine;

namespace {

ScenarioConfig one_group() {
  ScenarioConfig s;
  s.n_benign = 0;
  s.n_groups = 1;
  s.group_size_min = 4;
  s.group_size_max = 4;
  s.n_days = 1;
  return s;
}

ScenarioConfig small_mixed() {
  ScenarioConfig s;
  s.n_benign = 30;
  s.n_groups = 3;
  s.n_days = 2;
  return s;
}

}  // namespace

TEST_CASE("a single planted group agrees on cells most of the time") {
  auto world = WorldConfig::default_world();
  auto sim = simulate(world, one_group(), 1);
  REQUIRE(sim.logs.size() == 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      int co = 0, same = 0;
      for (int m = 0; m < kMinutesPerDay; ++m) {
        const auto& la = sim.logs[a].slots[m];
        const auto& lb = sim.logs[b].slots[m];
        if (!la || !lb) continue;
        ++co;
        same += bin_cell(*la, world) == bin_cell(*lb, world);
      }
      REQUIRE(co > 0);
      CHECK(static_cast<double>(same) / co > one_group().bot_agreement_floor);
    }
  }
}

TEST_CASE("simulation is deterministic in the seed") {
  auto world = WorldConfig::default_world();
  auto a = simulate(world, small_mixed(), 42);
  auto b = simulate(world, small_mixed(), 42);
  CHECK(a.profiles == b.profiles);
  CHECK(a.logs == b.logs);
  CHECK(a.graph == b.graph);
  auto c = simulate(world, small_mixed(), 43);
  CHECK(!(a.logs == c.logs));
}

TEST_CASE("profiles and access graph follow the planted structure") {
  auto world = WorldConfig::default_world();
  auto sc = small_mixed();
  auto sim = simulate(world, sc, 7);
  std::map<int, std::vector<std::int32_t>> groups;
  std::set<std::int64_t> ids;
  for (const auto& p : sim.profiles) {
    ids.insert(p.player_id);
    if (p.archetype == Archetype::bot) {
      REQUIRE(p.group_id.has_value());
      groups[*p.group_id].push_back(p.access_node);
    } else {
      CHECK(!p.group_id.has_value());
    }
  }
  CHECK(ids.size() == sim.profiles.size());
  CHECK(*ids.begin() == 1);
  CHECK(*ids.rbegin() == static_cast<std::int64_t>(sim.profiles.size()));
  REQUIRE(groups.size() == 3);
  for (auto& [g, nodes] : groups) {
    CHECK(nodes.size() >= 4);
    CHECK(nodes.size() <= 8);
    CHECK(sim.graph.induced_components(nodes) == 1);
  }
  // Two groups together are exactly two components.
  std::vector<std::int32_t> both = groups[0];
  both.insert(both.end(), groups[1].begin(), groups[1].end());
  CHECK(sim.graph.induced_components(both) == 2);
  for (auto [a, b] : sim.graph.edges()) {
    CHECK(a < b);
    CHECK(sim.graph.has_edge(b, a));
  }
  CHECK(sim.logs.size() == sim.profiles.size() * 2);
}

TEST_CASE("movement respects the speed limit outside teleports") {
  auto world = WorldConfig::default_world();
  auto sc = small_mixed();
  auto sim = simulate(world, sc, 11);
  for (const auto& log : sim.logs) {
    std::set<int> tele(log.teleports.begin(), log.teleports.end());
    for (int m = 2; m <= kMinutesPerDay; ++m) {
      const auto& prev = log.slots[m - 2];
      const auto& cur = log.slots[m - 1];
      if (!prev || !cur) continue;
      validate_location(*cur, world);
      if (tele.count(m)) continue;
      REQUIRE(prev->continent == cur->continent);
      const double d = std::hypot(cur->x - prev->x, cur->y - prev->y);
      REQUIRE(d <= sc.max_speed);
    }
  }
}

TEST_CASE("scenario validation") {
  auto sc = small_mixed();
  sc.group_size_min = 3;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  CHECK_THROWS_AS(simulate(WorldConfig::default_world(), sc, 1), ConfigError);
  sc = small_mixed();
  sc.group_size_max = 2;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = small_mixed();
  CHECK(ScenarioConfig::parse(sc.to_text()).to_text() == sc.to_text());
  CHECK_THROWS_AS(ScenarioConfig::parse("n_groups = x"), ConfigError);
  CHECK_THROWS_AS(ScenarioConfig::parse("unknown_key = 1"), ConfigError);
}

TEST_CASE("log export and import round trip") {
  auto world = WorldConfig::default_world();
  auto sim = simulate(world, small_mixed(), 5);
  std::vector<DayLog> day1(sim.logs.begin(), sim.logs.begin() + static_cast<std::ptrdiff_t>(sim.profiles.size()));
  auto dir = std::filesystem::temp_directory_path() / "trajmine_logs_test";
  export_logs(day1, dir / "day1.csv");
  auto back = import_logs(dir / "day1.csv", 1);
  // Fully offline players have no records, so they do not come back.
  std::vector<DayLog> online;
  for (const auto& l : day1) {
    if (l.online_minutes() > 0) online.push_back(l);
  }
  CHECK(back == online);

  DayLog one;
  one.player_id = 9;
  for (int m = 100; m < 160; ++m) one.slots[m] = GridLocation{1, 2, 0};
  std::vector<DayLog> single{one};
  export_logs(single, dir / "one.csv");
  auto text = read_file(dir / "one.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 60);
  CHECK(text.substr(0, text.find('\n')) == "9,101,1,2,0");

  std::vector<DayLog> none;
  CHECK_THROWS_AS(export_logs(none, dir / "none.csv"), InputError);
  write_file(dir / "bad.csv", "1,2,3\n");
  CHECK_THROWS_AS(import_logs(dir / "bad.csv", 1), FormatError);
  write_file(dir / "bad.csv", "1,0,3,4,0\n");
  CHECK_THROWS_AS(import_logs(dir / "bad.csv", 1), FormatError);
  CHECK_THROWS_AS(import_logs(dir / "missing.csv", 1), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sidecars round trip") {
  auto sim = simulate(WorldConfig::default_world(), small_mixed(), 3);
  CHECK(profiles_from_json(profiles_to_json(sim.profiles)) == sim.profiles);
  auto info = access_from_json(access_to_json(sim.graph, sim.profiles));
  CHECK(info.graph == sim.graph);
  for (const auto& p : sim.profiles) CHECK(info.node_of(p.player_id) == p.access_node);
  CHECK(!info.node_of(100000).has_value());
  CHECK_THROWS_AS(profiles_from_json("{"), FormatError);
}

TEST_CASE("access graph rejects self loops and matches the DFS oracle") {
  AccessInfoGraph g(6);
  CHECK_THROWS_AS(g.add_edge(2, 2), InputError);
  CHECK_THROWS_AS(g.add_edge(0, 6), InputError);
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  g.add_edge(1, 0);
  g.add_edge(4, 5);
  std::set<std::pair<int, int>> edges{{0, 1}, {1, 2}, {4, 5}};
  for (auto nodes : {std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 2}, std::vector<int>{3, 4, 5},
                     std::vector<int>{0, 1, 2, 3, 4, 5}}) {
    CHECK(g.induced_components(nodes) == oracle::induced_components(edges, nodes));
  }
  CHECK(g.edges().size() == 3);
}
