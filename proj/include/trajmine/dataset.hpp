#pragma once

// Training triplets and downstream trajectories built from day logs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajmine/geo.hpp"
#include "trajmine/rng.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

inline constexpr int kChunkLength = 32;
inline constexpr int kHalfLength = kChunkLength / 2;

using PrepSequence = std::array<TokenPair, kChunkLength>;
using HalfSequence = std::array<TokenPair, kHalfLength>;

enum class SplitMode : std::uint8_t { odd_even = 0, half = 1 };

struct TripletSample {
  HalfSequence anchor{};        // masked
  HalfSequence anchor_clean{};  // same positions before masking
  HalfSequence positive{};
  HalfSequence negative{};
  /// 0-based anchor position -> original cell token. Keys are the masked set.
  std::map<std::int32_t, std::int32_t> masked_truth;
  SplitMode mode = SplitMode::odd_even;
  std::int32_t source_chunk = 0;
  std::int32_t negative_chunk = 0;

  std::vector<std::int32_t> mask_positions() const;
  bool operator==(const TripletSample&) const = default;
};

/// Cell-change filter: keeps the first online minute and every online minute
/// whose cell token differs from the previous online minute's.
std::vector<TokenPair> dedup_filter(const DayLog& log, const WorldConfig& cfg, const Vocabulary& vocab);

/// Non-overlapping windows of 32; a remainder shorter than 32 is dropped.
std::vector<PrepSequence> chunk32(std::span<const TokenPair> tokens);

/// (anchor, positive) halves of a chunk under the given split mode.
std::pair<HalfSequence, HalfSequence> split_chunk(const PrepSequence& chunk, SplitMode mode);

/// Replaces each position with MASK (both tables) with probability `rate`.
HalfSequence mask_anchor(const HalfSequence& clean, double rate, Rng& rng, std::map<std::int32_t, std::int32_t>& truth);

/// The first floor(M/2) chunks use odd-even mode, the rest half mode.
/// Throws InputError when fewer than two chunks are given.
std::vector<TripletSample> make_triplets(std::span<const PrepSequence> chunks, double mask_rate, Rng& rng);

/// Per-player, per-day chunks in log order.
std::vector<PrepSequence> prepare_chunks(std::span<const DayLog> logs, const WorldConfig& cfg, const Vocabulary& vocab);

struct TrajectoryPoint {
  std::int32_t minute = 1;  // 1..1440
  GridLocation location;
  TokenPair token;

  bool operator==(const TrajectoryPoint&) const = default;
};

using MinuteCells = std::vector<std::optional<CellId>>;

/// Unfiltered full-day trajectory used for extraction, metrics and rendering.
struct DownstreamTrajectory {
  std::int64_t player_id = 0;
  std::int32_t day = 1;
  std::vector<TrajectoryPoint> points;  // strictly increasing minutes
  MinuteCells cells_by_minute = MinuteCells(kMinutesPerDay);

  bool empty() const { return points.empty(); }
  bool operator==(const DownstreamTrajectory&) const = default;
};

DownstreamTrajectory build_downstream(const DayLog& log, const WorldConfig& cfg, const Vocabulary& vocab);

/// Versioned binary containers (layouts in docs/formats.md).
std::string serialize_triplets(std::span<const TripletSample> samples);
std::vector<TripletSample> deserialize_triplets(std::string_view bytes);
void save_triplets(std::span<const TripletSample> samples, const std::filesystem::path& path);
std::vector<TripletSample> load_triplets(const std::filesystem::path& path);

std::string serialize_trajectories(std::span<const DownstreamTrajectory> trajs);
/// Rebuilds cells_by_minute from the stored locations with `cfg`.
std::vector<DownstreamTrajectory> deserialize_trajectories(std::string_view bytes, const WorldConfig& cfg);
void save_trajectories(std::span<const DownstreamTrajectory> trajs, const std::filesystem::path& path);
std::vector<DownstreamTrajectory> load_trajectories(const std::filesystem::path& path, const WorldConfig& cfg);

}  // namespace trajmine
