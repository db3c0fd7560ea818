#pragma once

// Pipeline stages over on-disk artifacts. Every stage writes a
// `<primary output>.meta.json` record holding the hashes of its inputs, its
// parameters and its outputs; a stage whose record still matches is skipped.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajmine/clusterer.hpp"
#include "trajmine/encoder.hpp"
#include "trajmine/heatmap.hpp"
#include "trajmine/trainer.hpp"

namespace trajmine {

namespace fs = std::filesystem;

/// File names inside a run directory.
namespace layout {
inline constexpr const char* kWorld = "world.cfg";
inline constexpr const char* kScenario = "scenario.cfg";
inline constexpr const char* kLogs = "logs";
inline constexpr const char* kProfiles = "profiles.json";
inline constexpr const char* kAccess = "access.json";
inline constexpr const char* kVocab = "vocab.bin";
inline constexpr const char* kTriplets = "triplets.bin";
inline constexpr const char* kTrajectories = "trajectories.bin";
inline constexpr const char* kPrepSummary = "prep.json";
inline constexpr const char* kModel = "model.ckpt";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kReps = "reps.bin";
inline constexpr const char* kClusters = "clusters";
inline constexpr const char* kAssignment = "assignment.json";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kVerdicts = "verdicts.jsonl";

/// `logs/day_<d>.csv`.
fs::path day_log(const fs::path& logs_dir, std::int32_t day);
/// Canonical text of q, shortest round-trip form ("0.05").
std::string q_key(double q);
/// `<run>/clusters/q<key>`.
fs::path cluster_dir(const fs::path& run, double q);
}  // namespace layout

/// Parses q and checks q in (0,1). Throws InputError.
double parse_q(std::string_view text);

/// Input/parameter signature of one stage invocation.
class StageRecord {
 public:
  explicit StageRecord(std::string stage);

  void input_file(const std::string& name, const fs::path& path);
  void param(const std::string& name, const std::string& value);
  void param(const std::string& name, double value);
  void param(const std::string& name, std::int64_t value);

  /// True when `meta` matches this signature and every recorded output still
  /// has the recorded hash.
  bool up_to_date(const fs::path& meta) const;
  /// Hashes `outputs` (paths relative to the meta file's directory are stored)
  /// and writes the record.
  void commit(const fs::path& meta, const std::vector<fs::path>& outputs) const;

 private:
  std::string stage_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> params_;
};

fs::path meta_path(const fs::path& primary_output);

struct StageOutcome {
  bool skipped = false;
  std::vector<fs::path> outputs;
};

struct SimulateOptions {
  std::optional<fs::path> scenario;  // default scenario when absent
  std::optional<fs::path> world;     // built-in world when absent
  std::uint64_t seed = 2024;
  fs::path out;
};
StageOutcome run_simulate(const SimulateOptions& opts, std::ostream& log);

struct PrepOptions {
  fs::path logs;
  fs::path world;
  double mask_rate = 0.2;
  std::uint64_t seed = 1;
  fs::path out;
};
StageOutcome run_prep(const PrepOptions& opts, std::ostream& log);

/// `d_model`, `d_hid`, `n_layers`, `n_heads`, `margin`, `mask_rate` keys over the dagger defaults.
ModelConfig load_model_config(const fs::path& path);

struct TrainOptions {
  fs::path data;
  std::string preset = "dagger";           // dagger | custom
  std::optional<fs::path> model_config;    // required for custom
  TrainConfig train;
  std::optional<fs::path> resume;
  fs::path out;
};
StageOutcome run_train(const TrainOptions& opts, std::ostream& log);

struct EmbedOptions {
  fs::path model;
  fs::path trajs;  // prep directory
  fs::path out;    // representation table file; a .csv path writes the CSV export
  std::int32_t workers = 1;
};
StageOutcome run_embed(const EmbedOptions& opts, std::ostream& log);

struct ClusterStageOptions {
  fs::path reps;
  double q = 0.05;
  ClusterOptions cluster;
  fs::path out;  // assignment JSON
};
StageOutcome run_cluster(const ClusterStageOptions& opts, std::ostream& log);

struct EvaluateOptions {
  fs::path assignment;
  fs::path trajs;
  fs::path access;
  fs::path reps;
  std::uint64_t seed = 0;
  fs::path out;  // metrics report JSON
};
StageOutcome run_evaluate(const EvaluateOptions& opts, std::ostream& log);

struct HeatmapStageOptions {
  fs::path assignment;
  fs::path trajs;
  fs::path out;  // .png or .ppm
  HeatmapOptions heatmap;
};
StageOutcome run_heatmap(const HeatmapStageOptions& opts, std::ostream& log);

/// Trajectories of a prep directory, decoded with its world config.
std::vector<DownstreamTrajectory> load_prepared_trajectories(const fs::path& prep_dir);

}  // namespace trajmine
