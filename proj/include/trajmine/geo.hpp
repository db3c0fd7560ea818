#pragma once

// World geometry: continents, zone/cell binning and the token vocabularies
// consumed by the encoder.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trajmine {

/// One per-minute position sample. Coordinates are local to the continent.
struct GridLocation {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t continent = 0;

  auto operator<=>(const GridLocation&) const = default;
};

struct Continent {
  std::int32_t id = 0;
  std::int32_t width = 0;
  std::int32_t height = 0;
  double avg_level = 0.0;

  bool operator==(const Continent&) const = default;
};

/// Continents plus the two bin sizes. Coordinates are half-open: x in [0, width).
struct WorldConfig {
  std::vector<Continent> continents;
  std::int32_t zone_size = 256;
  std::int32_t cell_size = 8;

  /// Throws ConfigError when any invariant is violated.
  void validate() const;
  /// Throws InputError for unknown ids.
  const Continent& continent(std::int32_t id) const;
  bool has_continent(std::int32_t id) const;
  double max_level() const;

  static WorldConfig parse(std::string_view text);
  static WorldConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  /// Built-in world used by the synthetic scenarios.
  static WorldConfig default_world();

  bool operator==(const WorldConfig&) const = default;
};

template <class Tag>
struct BinCoord {
  std::int32_t bx = 0;
  std::int32_t by = 0;
  std::int32_t continent = 0;

  auto operator<=>(const BinCoord&) const = default;

  /// Injective 64-bit key; valid while bx, by < 2^21.
  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(continent)) << 42) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(bx)) << 21) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(by));
  }
};

using ZoneId = BinCoord<struct ZoneTag>;
using CellId = BinCoord<struct CellTag>;

/// Throws InputError naming the offending field (x, y or continent_id).
void validate_location(const GridLocation& loc, const WorldConfig& cfg);

ZoneId bin_zone(const GridLocation& loc, const WorldConfig& cfg);
CellId bin_cell(const GridLocation& loc, const WorldConfig& cfg);

/// Model input element: one zone token and one cell token.
struct TokenPair {
  std::int32_t zone = 0;
  std::int32_t cell = 0;

  bool operator==(const TokenPair&) const = default;
};

/// Dense token ids for zones and cells. Ids 0..2 are reserved in both tables;
/// real entries follow in first-appearance order. Lookups never fail.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::int32_t kReserved = 3;

  Vocabulary() = default;
  Vocabulary(std::int32_t zone_size, std::int32_t cell_size) : zone_size_(zone_size), cell_size_(cell_size) {}

  std::int32_t zone_token(const ZoneId& zone) const;
  std::int32_t cell_token(const CellId& cell) const;
  TokenPair tokenize(const GridLocation& loc, const WorldConfig& cfg) const;

  /// Registers the entry if unseen; returns its token.
  std::int32_t add_zone(const ZoneId& zone);
  std::int32_t add_cell(const CellId& cell);

  std::int32_t zone_vocab_size() const { return kReserved + static_cast<std::int32_t>(zones_.size()); }
  std::int32_t cell_vocab_size() const { return kReserved + static_cast<std::int32_t>(cells_.size()); }
  const std::vector<ZoneId>& zones() const { return zones_; }
  const std::vector<CellId>& cells() const { return cells_; }
  std::int32_t zone_size() const { return zone_size_; }
  std::int32_t cell_size() const { return cell_size_; }

  /// Versioned binary encoding; `deserialize(serialize())` is bit-exact.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  /// Fingerprint of the serialized form, stored in model checkpoints.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const {
    return zone_size_ == other.zone_size_ && cell_size_ == other.cell_size_ && zones_ == other.zones_ &&
           cells_ == other.cells_;
  }

 private:
  std::int32_t zone_size_ = 256;
  std::int32_t cell_size_ = 8;
  std::vector<ZoneId> zones_;
  std::vector<CellId> cells_;
  std::unordered_map<std::uint64_t, std::int32_t> zone_index_;
  std::unordered_map<std::uint64_t, std::int32_t> cell_index_;
};

/// Builds a vocabulary from location sequences in iteration order.
/// Throws InputError when no trajectory contains a location.
Vocabulary build_vocabulary(std::span<const std::vector<GridLocation>> trajectories, const WorldConfig& cfg);

}  // namespace trajmine
