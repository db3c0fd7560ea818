#pragma once

// Trajectory heatmaps: one row per player-day, one column per minute.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajmine/clusterer.hpp"
#include "trajmine/dataset.hpp"

namespace trajmine {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kOfflineColor{255, 255, 255};
inline constexpr Rgb kSeparatorColor{255, 0, 0};
inline constexpr int kSeparatorRows = 2;

/// R = continent level min-max normalized over the world, G = x / width,
/// B = y / height, each scaled to 0..255 and rounded. nullopt is offline.
/// Throws InputError for undeclared continents.
Rgb color_of(const std::optional<GridLocation>& loc, const WorldConfig& world);

struct Image {
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Rgb pixel(std::int32_t x, std::int32_t y) const;
  bool operator==(const Image&) const = default;
};

struct HeatmapOptions {
  std::int32_t x_scale = 1;
  std::int32_t y_scale = 1;
  /// Noise rows go to their own image; otherwise they follow the last cluster.
  bool separate_noise = true;

  void validate() const;
};

/// First unscaled image row of a player-day and its cluster (kNoise for noise).
struct HeatmapRow {
  std::int32_t row = 0;
  PointKey key;
  std::int32_t cluster = kNoise;
};

struct Heatmap {
  Image image;
  std::vector<HeatmapRow> rows;

  /// {"x_scale", "y_scale", "rows": [{row, player_id, day, cluster}]}.
  std::string sidecar_json(const HeatmapOptions& opts) const;
};

struct HeatmapSet {
  std::optional<Heatmap> clusters;  // absent when every point is noise
  std::optional<Heatmap> noise;     // present only with separate_noise and noise points
};

/// Rows ordered by cluster id then key; a red band of kSeparatorRows rows sits
/// between consecutive groups. Height = (rows + 2 (groups - 1)) * y_scale and
/// width = 1440 * x_scale. Only `members` are drawn when given.
/// Throws InputError when a listed key has no trajectory or nothing is drawn.
HeatmapSet rasterize(const ClusterAssignment& assignment, std::span<const DownstreamTrajectory> trajs,
                     const WorldConfig& world, const HeatmapOptions& opts = {});

/// Single group image, used for one cluster's members.
Heatmap rasterize_rows(std::span<const PointKey> keys, std::int32_t cluster, std::span<const DownstreamTrajectory> trajs,
                       const WorldConfig& world, const HeatmapOptions& opts = {});

/// Deterministic lossless encodings.
std::string encode_png(const Image& image);
std::string encode_ppm(const Image& image);
Image decode_png(std::string_view bytes);

/// Writes PNG or binary PPM by extension (.png / .ppm) plus a `<path>.rows.json`
/// sidecar. Throws IoError with path context.
void write_heatmap(const Heatmap& heatmap, const HeatmapOptions& opts, const std::filesystem::path& path);

/// Writes `path` for clusters and `<stem>_noise<ext>` for the noise image.
/// Returns the written image paths.
std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const HeatmapOptions& opts,
                                                  const std::filesystem::path& path);

}  // namespace trajmine
