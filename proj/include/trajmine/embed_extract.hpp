#pragma once

// Whole-day inference: one representation per (player, day) trajectory.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajmine/dataset.hpp"
#include "trajmine/encoder.hpp"

namespace trajmine {

struct PointKey {
  std::int64_t player_id = 0;
  std::int32_t day = 1;

  auto operator<=>(const PointKey&) const = default;
};

std::string to_string(const PointKey& key);

/// Row i of `vectors` belongs to keys[i]; keys are strictly increasing.
struct RepresentationTable {
  std::vector<PointKey> keys;
  Matrix<float> vectors;

  std::size_t size() const { return keys.size(); }
  std::int32_t dim() const { return static_cast<std::int32_t>(vectors.cols()); }
  /// Row index of `key`; throws InputError when absent.
  std::size_t index_of(const PointKey& key) const;

  std::string serialize() const;
  static RepresentationTable deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static RepresentationTable load(const std::filesystem::path& path);
  /// `player_id,day,v0,...` with shortest round-trip float formatting.
  std::string to_csv() const;

  bool operator==(const RepresentationTable& o) const { return keys == o.keys && vectors == o.vectors; }
};

struct SkipRecord {
  PointKey key;
  std::string code;
  std::string reason;

  bool operator==(const SkipRecord&) const = default;
};

struct ExtractResult {
  RepresentationTable table;
  std::vector<SkipRecord> skipped;  // sorted by key

  std::string skipped_json() const;
};

/// Read-only model wrapper. Construction verifies the vocabulary fingerprint.
class Extractor {
 public:
  Extractor(const Checkpoint& checkpoint, const Vocabulary& vocab);

  /// Encodes the trajectory at its observed minutes. No masking is applied.
  /// Throws EmptyTrajectoryError for trajectories without online minutes.
  RowVector<float> extract(const DownstreamTrajectory& traj) const;

  /// Keyed, order-independent batch extraction. Per-item failures become
  /// skip records. Output is bitwise identical for any worker count.
  ExtractResult extract_all(std::span<const DownstreamTrajectory> trajs, std::int32_t workers = 1) const;

  const ModelConfig& config() const { return checkpoint_->config; }

 private:
  const Checkpoint* checkpoint_;
};

}  // namespace trajmine
