#include "trajmine/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/kv_config.hpp"
#include "trajmine/rng.hpp"

namespace trajmine {

using nlohmann::json;

std::size_t DayLog::online_minutes() const {
  return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.has_value(); }));
}

std::vector<GridLocation> DayLog::online_locations() const {
  std::vector<GridLocation> out;
  for (const auto& s : slots) {
    if (s) out.push_back(*s);
  }
  return out;
}

// ---------------------------------------------------------------- access graph

void AccessInfoGraph::check(std::int32_t node) const {
  if (node < 0 || node >= node_count()) throw InputError("access node " + std::to_string(node) + " does not exist");
}

std::int32_t AccessInfoGraph::add_node() {
  adjacency_.emplace_back();
  return node_count() - 1;
}

void AccessInfoGraph::add_edge(std::int32_t a, std::int32_t b) {
  check(a);
  check(b);
  if (a == b) throw InputError("access graph does not allow self loops");
  if (has_edge(a, b)) return;
  auto insert_sorted = [](std::vector<std::int32_t>& v, std::int32_t x) { v.insert(std::lower_bound(v.begin(), v.end(), x), x); };
  insert_sorted(adjacency_[a], b);
  insert_sorted(adjacency_[b], a);
}

bool AccessInfoGraph::has_edge(std::int32_t a, std::int32_t b) const {
  check(a);
  check(b);
  return std::binary_search(adjacency_[a].begin(), adjacency_[a].end(), b);
}

const std::vector<std::int32_t>& AccessInfoGraph::neighbors(std::int32_t node) const {
  check(node);
  return adjacency_[node];
}

std::vector<std::pair<std::int32_t, std::int32_t>> AccessInfoGraph::edges() const {
  std::vector<std::pair<std::int32_t, std::int32_t>> out;
  for (std::int32_t a = 0; a < node_count(); ++a) {
    for (auto b : adjacency_[a]) {
      if (a < b) out.emplace_back(a, b);
    }
  }
  return out;
}

std::int32_t AccessInfoGraph::induced_components(std::span<const std::int32_t> nodes) const {
  std::vector<std::int32_t> members(nodes.begin(), nodes.end());
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  for (auto n : members) check(n);
  std::vector<std::int32_t> parent(members.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::int32_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::int32_t components = static_cast<std::int32_t>(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (auto nb : adjacency_[members[i]]) {
      auto it = std::lower_bound(members.begin(), members.end(), nb);
      if (it == members.end() || *it != nb) continue;
      auto a = find(static_cast<std::int32_t>(i));
      auto b = find(static_cast<std::int32_t>(it - members.begin()));
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
  }
  return components;
}

// ---------------------------------------------------------------- scenario

void ScenarioConfig::validate() const {
  if (n_benign < 0 || n_groups < 0) throw ConfigError("n_benign and n_groups must be >= 0");
  if (n_benign + n_groups == 0) throw ConfigError("scenario has no players");
  if (group_size_min < 4) throw ConfigError("group_size_min must be >= 4 (a bot group has at least 4 members)");
  if (group_size_max < group_size_min) throw ConfigError("group_size_max must be >= group_size_min");
  if (n_days < 1) throw ConfigError("n_days must be >= 1");
  if (max_speed < 32) throw ConfigError("max_speed must be >= 32");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
  };
  prob(bot_jitter_prob, "bot_jitter_prob");
  prob(potion_rate, "potion_rate");
  prob(death_rate, "death_rate");
  prob(household_share_prob, "household_share_prob");
  prob(benign_online_prob, "benign_online_prob");
  prob(bot_agreement_floor, "bot_agreement_floor");
  prob(bot_jaccard_floor, "bot_jaccard_floor");
  prob(benign_jaccard_ceiling, "benign_jaccard_ceiling");
  // Two members agree on a minute at least when neither is jittered or on an errand.
  double errand = 5.0 * (potion_rate + death_rate);
  double agree = std::pow(1.0 - bot_jitter_prob - errand, 2.0);
  if (agree < bot_agreement_floor + 0.05) {
    throw ConfigError("bot_jitter_prob/potion_rate/death_rate too high to meet bot_agreement_floor");
  }
}

ScenarioConfig ScenarioConfig::parse(std::string_view text) {
  ScenarioConfig s;
  for (const auto& [key, value] : KeyValueFile::parse(text).entries) {
    auto as_int = [&] { return static_cast<std::int32_t>(parse_int(key, value)); };
    auto as_real = [&] { return parse_double(key, value); };
    if (key == "n_benign") s.n_benign = as_int();
    else if (key == "n_groups") s.n_groups = as_int();
    else if (key == "group_size_min") s.group_size_min = as_int();
    else if (key == "group_size_max") s.group_size_max = as_int();
    else if (key == "n_days") s.n_days = as_int();
    else if (key == "max_speed") s.max_speed = as_int();
    else if (key == "bot_jitter_prob") s.bot_jitter_prob = as_real();
    else if (key == "potion_rate") s.potion_rate = as_real();
    else if (key == "death_rate") s.death_rate = as_real();
    else if (key == "household_share_prob") s.household_share_prob = as_real();
    else if (key == "benign_online_prob") s.benign_online_prob = as_real();
    else if (key == "bot_agreement_floor") s.bot_agreement_floor = as_real();
    else if (key == "bot_jaccard_floor") s.bot_jaccard_floor = as_real();
    else if (key == "benign_jaccard_ceiling") s.benign_jaccard_ceiling = as_real();
    else throw ConfigError("unknown scenario key '" + key + "'");
  }
  s.validate();
  return s;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string ScenarioConfig::to_text() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "n_benign = " << n_benign << "\n"
     << "n_groups = " << n_groups << "\n"
     << "group_size_min = " << group_size_min << "\n"
     << "group_size_max = " << group_size_max << "\n"
     << "n_days = " << n_days << "\n"
     << "max_speed = " << max_speed << "\n"
     << "bot_jitter_prob = " << bot_jitter_prob << "\n"
     << "potion_rate = " << potion_rate << "\n"
     << "death_rate = " << death_rate << "\n"
     << "household_share_prob = " << household_share_prob << "\n"
     << "benign_online_prob = " << benign_online_prob << "\n"
     << "bot_agreement_floor = " << bot_agreement_floor << "\n"
     << "bot_jaccard_floor = " << bot_jaccard_floor << "\n"
     << "benign_jaccard_ceiling = " << benign_jaccard_ceiling << "\n";
  return ss.str();
}

// ---------------------------------------------------------------- movement

namespace {

constexpr int kVillageRadius = 12;
constexpr int kHuntRadius = 48;

enum : std::uint64_t { kTagRoles = 1, kTagGroup = 2, kTagMember = 3, kTagBenign = 4, kTagBenignDay = 5, kTagAccess = 6 };

GridLocation clamp_to(const Continent& c, int x, int y) {
  return {std::clamp(x, 0, c.width - 1), std::clamp(y, 0, c.height - 1), c.id};
}

/// Moves `from` toward `to` by at most `speed` per axis-scaled step.
GridLocation step_toward(const GridLocation& from, const GridLocation& to, int speed) {
  double dx = to.x - from.x, dy = to.y - from.y;
  double dist = std::sqrt(dx * dx + dy * dy);
  if (dist <= speed) return to;
  double f = speed / dist;
  return {from.x + static_cast<int>(std::lround(dx * f)), from.y + static_cast<int>(std::lround(dy * f)), from.continent};
}

GridLocation random_point_near(Rng& rng, const Continent& c, int cx, int cy, int radius) {
  return clamp_to(c, cx + uniform_int(rng, -radius, radius), cy + uniform_int(rng, -radius, radius));
}

GridLocation random_village_spot(Rng& rng, const WorldConfig& world, const GridLocation& village) {
  return random_point_near(rng, world.continent(village.continent), village.x, village.y, kVillageRadius);
}

/// Per-minute online mask for [start, end] (1-based, inclusive).
void mark_online(std::array<bool, kMinutesPerDay>& mask, int start, int end) {
  start = std::max(start, 1);
  end = std::min(end, kMinutesPerDay);
  for (int m = start; m <= end; ++m) mask[m - 1] = true;
}

struct GroupScript {
  std::array<bool, kMinutesPerDay> online{};
  std::array<GridLocation, kMinutesPerDay> leader{};
  std::vector<int> leg_starts;  // minutes at which the whole group teleports
};

GroupScript script_group_day(Rng& rng, const WorldConfig& world) {
  GroupScript s;
  int start = uniform_int(rng, 1, 300);
  int length = uniform_int(rng, 900, 1140);
  int end = std::min(kMinutesPerDay, start + length - 1);
  mark_online(s.online, start, end);
  if (bernoulli(rng, 0.5)) {
    int brk = uniform_int(rng, start + 200, std::max(start + 200, end - 300));
    int brk_len = uniform_int(rng, 20, 60);
    for (int m = brk; m < std::min(end, brk + brk_len); ++m) s.online[m - 1] = false;
  }

  int legs = uniform_int(rng, 2, 4);
  int span = end - start + 1;
  std::vector<int> cuts;
  for (int i = 1; i < legs; ++i) cuts.push_back(start + span * i / legs + uniform_int(rng, -30, 30));
  cuts.insert(cuts.begin(), start);

  const Continent* cont = nullptr;
  int cx = 0, cy = 0, speed = 8;
  GridLocation pos{}, waypoint{};
  std::size_t next_cut = 0;
  bool have_pos = false;
  for (int m = start; m <= end; ++m) {
    if (next_cut < cuts.size() && m == cuts[next_cut]) {
      ++next_cut;
      cont = &world.continents[uniform_int(rng, 0, static_cast<int>(world.continents.size()) - 1)];
      int margin = kHuntRadius + 16;
      cx = uniform_int(rng, margin, cont->width - margin - 1);
      cy = uniform_int(rng, margin, cont->height - margin - 1);
      speed = uniform_int(rng, 8, 24);
      pos = random_point_near(rng, *cont, cx, cy, kHuntRadius);
      waypoint = random_point_near(rng, *cont, cx, cy, kHuntRadius);
      if (have_pos) s.leg_starts.push_back(m);
      have_pos = true;
    } else {
      if (pos == waypoint) waypoint = random_point_near(rng, *cont, cx, cy, kHuntRadius);
      pos = step_toward(pos, waypoint, speed);
    }
    s.leader[m - 1] = pos;
  }
  return s;
}

GridLocation nearest_village(const std::vector<GridLocation>& villages, const GridLocation& loc) {
  const GridLocation* best = &villages.front();
  long long best_d = -1;
  for (const auto& v : villages) {
    if (v.continent != loc.continent) continue;
    long long dx = v.x - loc.x, dy = v.y - loc.y;
    long long d = dx * dx + dy * dy;
    if (best_d < 0 || d < best_d) {
      best_d = d;
      best = &v;
    }
  }
  return *best;
}

DayLog bot_member_day(Rng& rng, const WorldConfig& world, const ScenarioConfig& sc, const GroupScript& script,
                      const std::vector<GridLocation>& villages, std::int64_t player_id, std::int32_t day) {
  DayLog log;
  log.player_id = player_id;
  log.day = day;
  std::vector<bool> teleport(kMinutesPerDay, false);
  for (int m : script.leg_starts) teleport[m - 1] = true;

  int errand_left = 0;  // minutes remaining in a village errand
  GridLocation errand_spot{};
  bool was_on_errand = false;
  for (int m = 1; m <= kMinutesPerDay; ++m) {
    if (!script.online[m - 1]) {
      errand_left = 0;
      was_on_errand = false;
      continue;
    }
    const auto& lead = script.leader[m - 1];
    if (errand_left == 0) {
      bool potion = bernoulli(rng, sc.potion_rate);
      bool death = !potion && bernoulli(rng, sc.death_rate);
      if (potion || death) {
        errand_left = potion ? uniform_int(rng, 3, 6) : uniform_int(rng, 2, 5);
        auto village = potion ? nearest_village(villages, lead) : villages[uniform_int(rng, 0, static_cast<int>(villages.size()) - 1)];
        errand_spot = random_village_spot(rng, world, village);
        teleport[m - 1] = true;
      }
    }
    if (errand_left > 0) {
      --errand_left;
      // Shuffle between shop counters inside the village.
      if (bernoulli(rng, 0.5)) errand_spot = step_toward(errand_spot, random_village_spot(rng, world, nearest_village(villages, errand_spot)), 8);
      log.slots[m - 1] = errand_spot;
      was_on_errand = true;
      continue;
    }
    if (was_on_errand) {
      teleport[m - 1] = true;  // return to the group
      was_on_errand = false;
    }
    int ox = 0, oy = 0;
    if (bernoulli(rng, sc.bot_jitter_prob)) {
      do {
        ox = uniform_int(rng, -1, 1);
        oy = uniform_int(rng, -1, 1);
      } while (ox == 0 && oy == 0);
    }
    const auto& cont = world.continent(lead.continent);
    log.slots[m - 1] = clamp_to(cont, lead.x + ox * world.cell_size, lead.y + oy * world.cell_size);
  }
  for (int m = 1; m <= kMinutesPerDay; ++m) {
    if (teleport[m - 1] && log.slots[m - 1]) log.teleports.push_back(m);
  }
  return log;
}

struct BenignTraits {
  std::int32_t home = 0;
  int cx = 0, cy = 0, radius = 64, speed = 32, preferred_minute = 720;
};

BenignTraits benign_traits(Rng& rng, const WorldConfig& world) {
  BenignTraits t;
  const auto& cont = bernoulli(rng, 0.5) ? world.continents.front()
                                         : world.continents[uniform_int(rng, 0, static_cast<int>(world.continents.size()) - 1)];
  t.home = cont.id;
  t.radius = std::min(uniform_int(rng, 64, 256), std::min(cont.width, cont.height) / 2 - 1);
  t.cx = uniform_int(rng, t.radius, cont.width - t.radius - 1);
  t.cy = uniform_int(rng, t.radius, cont.height - t.radius - 1);
  t.speed = uniform_int(rng, 16, 96);
  t.preferred_minute = uniform_int(rng, 1, kMinutesPerDay);
  return t;
}

DayLog benign_day(Rng& rng, const WorldConfig& world, const ScenarioConfig& sc, const BenignTraits& traits,
                  const std::vector<GridLocation>& villages, std::int64_t player_id, std::int32_t day) {
  DayLog log;
  log.player_id = player_id;
  log.day = day;
  if (!bernoulli(rng, sc.benign_online_prob)) return log;

  std::array<bool, kMinutesPerDay> online{};
  int sessions = uniform_int(rng, 1, 3);
  for (int s = 0; s < sessions; ++s) {
    int start = s == 0 ? traits.preferred_minute + uniform_int(rng, -180, 180) : uniform_int(rng, 1, kMinutesPerDay);
    start = std::clamp(start, 1, kMinutesPerDay);
    mark_online(online, start, start + uniform_int(rng, 30, 240) - 1);
  }

  const auto& cont = world.continent(traits.home);
  int cx = traits.cx, cy = traits.cy;
  if (bernoulli(rng, 0.3)) {
    cx = uniform_int(rng, traits.radius, cont.width - traits.radius - 1);
    cy = uniform_int(rng, traits.radius, cont.height - traits.radius - 1);
  }
  GridLocation pos = random_point_near(rng, cont, cx, cy, traits.radius);
  GridLocation waypoint = random_point_near(rng, cont, cx, cy, traits.radius);
  int idle = 0, errand_left = 0;
  GridLocation errand_spot{}, resume{};
  bool prev_online = false;
  for (int m = 1; m <= kMinutesPerDay; ++m) {
    if (!online[m - 1]) {
      prev_online = false;
      if (errand_left > 0) {
        errand_left = 0;
        pos = resume;
      }
      continue;
    }
    if (errand_left == 0 && prev_online && bernoulli(rng, 1.0 / 150.0)) {
      errand_left = uniform_int(rng, 2, 10);
      resume = pos;
      errand_spot = random_village_spot(rng, world, villages[uniform_int(rng, 0, static_cast<int>(villages.size()) - 1)]);
      log.teleports.push_back(m);
    }
    if (errand_left > 0) {
      log.slots[m - 1] = errand_spot;
      if (--errand_left == 0) {
        pos = resume;
        // next online minute teleports back
        if (m < kMinutesPerDay && online[m]) log.teleports.push_back(m + 1);
      }
      prev_online = true;
      continue;
    }
    if (idle > 0) {
      --idle;
    } else if (pos == waypoint) {
      idle = uniform_int(rng, 0, 15);
      waypoint = random_point_near(rng, cont, cx, cy, traits.radius);
    } else {
      pos = step_toward(pos, waypoint, traits.speed);
    }
    log.slots[m - 1] = pos;
    prev_online = true;
  }
  return log;
}

}  // namespace

std::vector<GridLocation> village_points(const WorldConfig& world) {
  const auto& main = world.continents.front();
  int w = main.width, h = main.height;
  return {{w / 8, h / 8, main.id}, {7 * w / 8, h / 8, main.id}, {w / 8, 7 * h / 8, main.id}, {7 * w / 8, 7 * h / 8, main.id}};
}

SimulationResult simulate(const WorldConfig& world, const ScenarioConfig& scenario, std::uint64_t seed) {
  world.validate();
  scenario.validate();
  for (const auto& c : world.continents) {
    if (std::min(c.width, c.height) < 2 * (kHuntRadius + 16) + 1) {
      throw ConfigError("continent " + std::to_string(c.id) + " is too small to host a hunting ground");
    }
  }
  const auto villages = village_points(world);

  Rng role_rng(derive_seed({seed, kTagRoles}));
  std::vector<std::int32_t> group_sizes(scenario.n_groups);
  for (auto& g : group_sizes) g = uniform_int(role_rng, scenario.group_size_min, scenario.group_size_max);
  const std::int32_t n_bots = std::accumulate(group_sizes.begin(), group_sizes.end(), 0);
  const std::int32_t n_players = scenario.n_benign + n_bots;

  // Player ids 1..N are shuffled over roles so that id order carries no label.
  std::vector<std::int64_t> ids(n_players);
  std::iota(ids.begin(), ids.end(), 1);
  std::shuffle(ids.begin(), ids.end(), role_rng);

  SimulationResult out;
  out.graph = AccessInfoGraph(n_players);
  std::size_t next = 0;
  std::vector<std::vector<std::size_t>> group_members(scenario.n_groups);
  for (std::int32_t g = 0; g < scenario.n_groups; ++g) {
    for (std::int32_t k = 0; k < group_sizes[g]; ++k) {
      PlayerProfile p;
      p.player_id = ids[next];
      p.archetype = Archetype::bot;
      p.group_id = g;
      p.access_node = static_cast<std::int32_t>(next);
      p.level = 30.0 + 5.0 * g;
      group_members[g].push_back(out.profiles.size());
      out.profiles.push_back(p);
      ++next;
    }
    const auto& members = group_members[g];
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        out.graph.add_edge(out.profiles[members[a]].access_node, out.profiles[members[b]].access_node);
      }
    }
  }
  std::vector<std::size_t> benign_idx;
  for (std::int32_t k = 0; k < scenario.n_benign; ++k) {
    PlayerProfile p;
    p.player_id = ids[next];
    p.archetype = Archetype::benign;
    p.access_node = static_cast<std::int32_t>(next);
    p.level = 1.0 + static_cast<double>(splitmix64(derive_seed({seed, kTagBenign, static_cast<std::uint64_t>(p.player_id)})) % 80);
    benign_idx.push_back(out.profiles.size());
    out.profiles.push_back(p);
    ++next;
  }
  Rng access_rng(derive_seed({seed, kTagAccess}));
  if (benign_idx.size() >= 2) {
    for (auto i : benign_idx) {
      if (!bernoulli(access_rng, scenario.household_share_prob)) continue;
      auto j = benign_idx[uniform_int(access_rng, 0, static_cast<int>(benign_idx.size()) - 2)];
      if (j == i) j = benign_idx.back();
      out.graph.add_edge(out.profiles[i].access_node, out.profiles[j].access_node);
    }
  }

  std::vector<BenignTraits> traits;
  for (auto i : benign_idx) {
    Rng r(derive_seed({seed, kTagBenign, static_cast<std::uint64_t>(out.profiles[i].player_id)}));
    traits.push_back(benign_traits(r, world));
  }

  for (std::int32_t day = 1; day <= scenario.n_days; ++day) {
    std::vector<DayLog> logs;
    for (std::int32_t g = 0; g < scenario.n_groups; ++g) {
      Rng grng(derive_seed({seed, kTagGroup, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(day)}));
      auto script = script_group_day(grng, world);
      for (auto idx : group_members[g]) {
        auto pid = out.profiles[idx].player_id;
        Rng mrng(derive_seed({seed, kTagMember, static_cast<std::uint64_t>(pid), static_cast<std::uint64_t>(day)}));
        logs.push_back(bot_member_day(mrng, world, scenario, script, villages, pid, day));
      }
    }
    for (std::size_t k = 0; k < benign_idx.size(); ++k) {
      auto pid = out.profiles[benign_idx[k]].player_id;
      Rng drng(derive_seed({seed, kTagBenignDay, static_cast<std::uint64_t>(pid), static_cast<std::uint64_t>(day)}));
      logs.push_back(benign_day(drng, world, scenario, traits[k], villages, pid, day));
    }
    std::sort(logs.begin(), logs.end(), [](const DayLog& a, const DayLog& b) { return a.player_id < b.player_id; });
    for (auto& l : logs) out.logs.push_back(std::move(l));
  }
  std::sort(out.profiles.begin(), out.profiles.end(),
            [](const PlayerProfile& a, const PlayerProfile& b) { return a.player_id < b.player_id; });
  return out;
}

// ---------------------------------------------------------------- log files

void export_logs(std::span<const DayLog> logs, const std::filesystem::path& path) {
  if (logs.empty()) throw InputError("export_logs: no logs to write to '" + path.string() + "'");
  std::string text;
  text.reserve(logs.size() * 4096);
  char line[96];
  for (const auto& log : logs) {
    for (int m = 1; m <= kMinutesPerDay; ++m) {
      const auto& s = log.slots[m - 1];
      if (!s) continue;
      int n = std::snprintf(line, sizeof line, "%lld,%d,%d,%d,%d\n", static_cast<long long>(log.player_id), m, s->x, s->y,
                            s->continent);
      text.append(line, static_cast<std::size_t>(n));
    }
  }
  write_file(path, text);
}

std::vector<DayLog> import_logs(const std::filesystem::path& path, std::int32_t day) {
  std::string text = read_file(path);
  std::vector<DayLog> out;
  std::unordered_map<std::int64_t, std::size_t> index;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    auto nl = text.find('\n', pos);
    std::string_view line(text.data() + pos, (nl == std::string::npos ? text.size() : nl) - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    long long f[5];
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= line.size() && field < 5; ++i) {
      if (i == line.size() || line[i] == ',') {
        try {
          f[field++] = parse_int("log", line.substr(start, i - start));
        } catch (const ConfigError&) {
          throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
        }
        start = i + 1;
      }
    }
    if (field != 5 || start <= line.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 comma-separated integers");
    }
    if (f[1] < 1 || f[1] > kMinutesPerDay) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": minute_index outside [1,1440]");
    }
    auto [it, inserted] = index.try_emplace(f[0], out.size());
    if (inserted) {
      DayLog log;
      log.player_id = f[0];
      log.day = day;
      out.push_back(std::move(log));
    }
    out[it->second].slots[f[1] - 1] =
        GridLocation{static_cast<std::int32_t>(f[2]), static_cast<std::int32_t>(f[3]), static_cast<std::int32_t>(f[4])};
  }
  return out;
}

// ---------------------------------------------------------------- sidecars

std::string profiles_to_json(std::span<const PlayerProfile> profiles) {
  json arr = json::array();
  for (const auto& p : profiles) {
    json j{{"player_id", p.player_id},
           {"archetype", p.archetype == Archetype::bot ? "bot" : "benign"},
           {"access_node", p.access_node},
           {"level", p.level}};
    j["group_id"] = p.group_id ? json(*p.group_id) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return json{{"version", 1}, {"players", arr}}.dump(1);
}

std::vector<PlayerProfile> profiles_from_json(std::string_view text) {
  std::vector<PlayerProfile> out;
  try {
    auto doc = json::parse(text);
    for (const auto& j : doc.at("players")) {
      PlayerProfile p;
      p.player_id = j.at("player_id").get<std::int64_t>();
      auto arch = j.at("archetype").get<std::string>();
      if (arch != "bot" && arch != "benign") throw FormatError("unknown archetype '" + arch + "'");
      p.archetype = arch == "bot" ? Archetype::bot : Archetype::benign;
      p.access_node = j.at("access_node").get<std::int32_t>();
      p.level = j.at("level").get<double>();
      if (!j.at("group_id").is_null()) p.group_id = j.at("group_id").get<std::int32_t>();
      out.push_back(p);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("profiles sidecar: ") + e.what());
  }
  return out;
}

std::optional<std::int32_t> AccessInfo::node_of(std::int64_t player_id) const {
  auto it = std::lower_bound(player_nodes.begin(), player_nodes.end(), player_id,
                             [](const auto& entry, std::int64_t id) { return entry.first < id; });
  if (it == player_nodes.end() || it->first != player_id) return std::nullopt;
  return it->second;
}

std::string access_to_json(const AccessInfoGraph& graph, std::span<const PlayerProfile> profiles) {
  json edges = json::array();
  for (auto [a, b] : graph.edges()) edges.push_back({a, b});
  json players = json::array();
  for (const auto& p : profiles) players.push_back({p.player_id, p.access_node});
  return json{{"version", 1}, {"node_count", graph.node_count()}, {"edges", edges}, {"players", players}}.dump(1);
}

AccessInfo access_from_json(std::string_view text) {
  AccessInfo info;
  try {
    auto doc = json::parse(text);
    info.graph = AccessInfoGraph(doc.at("node_count").get<std::int32_t>());
    for (const auto& e : doc.at("edges")) info.graph.add_edge(e.at(0).get<std::int32_t>(), e.at(1).get<std::int32_t>());
    for (const auto& p : doc.at("players")) {
      info.player_nodes.emplace_back(p.at(0).get<std::int64_t>(), p.at(1).get<std::int32_t>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("access sidecar: ") + e.what());
  }
  std::sort(info.player_nodes.begin(), info.player_nodes.end());
  return info;
}

}  // namespace trajmine
