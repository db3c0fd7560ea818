#pragma once

// Ground-truthed synthetic game logs: benign players plus planted groups of
// collectively-behaving bots that share access information.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajmine/geo.hpp"

namespace trajmine {

inline constexpr int kMinutesPerDay = 1440;

enum class Archetype { benign, bot };

struct PlayerProfile {
  std::int64_t player_id = 0;
  Archetype archetype = Archetype::benign;
  std::optional<std::int32_t> group_id;  // bots only
  std::int32_t access_node = 0;
  double level = 0.0;

  bool operator==(const PlayerProfile&) const = default;
};

/// One player's day. `slots[m - 1]` holds the location logged at minute m.
struct DayLog {
  std::int64_t player_id = 0;
  std::int32_t day = 1;
  std::vector<std::optional<GridLocation>> slots = std::vector<std::optional<GridLocation>>(kMinutesPerDay);
  /// Minutes whose location was reached by a scripted teleport (not exported).
  std::vector<std::int32_t> teleports;

  std::size_t online_minutes() const;
  /// Online locations in minute order.
  std::vector<GridLocation> online_locations() const;

  bool operator==(const DayLog& o) const { return player_id == o.player_id && day == o.day && slots == o.slots; }
};

/// Undirected device/IP sharing graph; one node per device, no self loops.
class AccessInfoGraph {
 public:
  explicit AccessInfoGraph(std::int32_t n_nodes = 0) : adjacency_(static_cast<std::size_t>(n_nodes)) {}

  std::int32_t node_count() const { return static_cast<std::int32_t>(adjacency_.size()); }
  std::int32_t add_node();
  /// Idempotent. Throws InputError for self loops or unknown nodes.
  void add_edge(std::int32_t a, std::int32_t b);
  bool has_edge(std::int32_t a, std::int32_t b) const;
  const std::vector<std::int32_t>& neighbors(std::int32_t node) const;
  /// Sorted (a < b) edge list.
  std::vector<std::pair<std::int32_t, std::int32_t>> edges() const;
  /// Number of connected components of the subgraph induced by `nodes`.
  std::int32_t induced_components(std::span<const std::int32_t> nodes) const;

  bool operator==(const AccessInfoGraph&) const = default;

 private:
  void check(std::int32_t node) const;
  std::vector<std::vector<std::int32_t>> adjacency_;
};

/// Generator knobs. The file form uses the same field names as keys.
struct ScenarioConfig {
  std::int32_t n_benign = 140;
  std::int32_t n_groups = 10;
  std::int32_t group_size_min = 4;
  std::int32_t group_size_max = 8;
  std::int32_t n_days = 2;
  std::int32_t max_speed = 256;
  /// Per-minute chance that a bot stands one cell off the group script.
  double bot_jitter_prob = 0.15;
  double potion_rate = 1.0 / 180.0;
  double death_rate = 1.0 / 400.0;
  double household_share_prob = 0.02;
  double benign_online_prob = 0.9;
  /// Targets the generator is built to satisfy (checked by the test-suite).
  double bot_agreement_floor = 0.5;
  double bot_jaccard_floor = 0.3;
  double benign_jaccard_ceiling = 0.05;

  /// Throws ConfigError.
  void validate() const;
  std::int32_t player_count_upper_bound() const { return n_benign + n_groups * group_size_max; }

  static ScenarioConfig parse(std::string_view text);
  static ScenarioConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct SimulationResult {
  std::vector<PlayerProfile> profiles;
  /// Ordered by day, then player id.
  std::vector<DayLog> logs;
  AccessInfoGraph graph;
};

/// Pure function of its arguments.
SimulationResult simulate(const WorldConfig& world, const ScenarioConfig& scenario, std::uint64_t seed);

/// Village anchor points on the first (main) continent.
std::vector<GridLocation> village_points(const WorldConfig& world);

/// Writes `player_id,minute_index,x,y,continent_id` lines, offline minutes omitted.
void export_logs(std::span<const DayLog> logs, const std::filesystem::path& path);
/// Inverse of export_logs; players appear in first-appearance order.
std::vector<DayLog> import_logs(const std::filesystem::path& path, std::int32_t day);

std::string profiles_to_json(std::span<const PlayerProfile> profiles);
std::vector<PlayerProfile> profiles_from_json(std::string_view text);

/// Access sidecar: graph edges plus the player -> node map.
struct AccessInfo {
  AccessInfoGraph graph;
  std::vector<std::pair<std::int64_t, std::int32_t>> player_nodes;  // sorted by player id

  std::optional<std::int32_t> node_of(std::int64_t player_id) const;
};
std::string access_to_json(const AccessInfoGraph& graph, std::span<const PlayerProfile> profiles);
AccessInfo access_from_json(std::string_view text);

}  // namespace trajmine
