#pragma once

// Joint contrastive + masked-cell training.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajmine/dataset.hpp"
#include "trajmine/encoder.hpp"
#include "trajmine/rng.hpp"

namespace trajmine {

inline constexpr std::int32_t kLastStartMinute = 1424;

struct TrainConfig {
  std::int32_t max_epochs = 70;
  /// Early stopping is not considered before this many epochs.
  std::int32_t min_epochs = 70;
  std::int32_t patience = 8;
  /// Triplets per optimizer step.
  std::int32_t batch_size = 32;
  /// Triplets per forward/backward pass; bounds tape memory.
  std::int32_t micro_batch = 8;
  /// Triplets drawn per epoch; 0 means the whole training split.
  std::int32_t samples_per_epoch = 0;
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
  /// Gradient workers. Results depend on this count, not on scheduling.
  std::int32_t workers = 1;

  /// Throws ConfigError.
  void validate() const;
};

struct Timestamps {
  std::int32_t anchor = 1;
  std::int32_t positive = 1;
  std::int32_t negative = 1;
};

/// Start minutes for one triplet. Anchor and negative are uniform on [1,1424];
/// positive is the anchor shifted by U[-16,16], clamped to [1,1424].
Timestamps sample_timestamps(Rng& rng);

/// Batch mean of max(0, |a-p|^2 - |a-n|^2 + margin) over rows.
double triplet_loss(const Matrix<double>& anchors, const Matrix<double>& positives, const Matrix<double>& negatives,
                    double margin);
double triplet_loss(std::span<const double> anchor, std::span<const double> positive, std::span<const double> negative,
                    double margin);

/// Mean cross entropy over masked positions. Key sets must match.
double mcp_loss(const std::map<std::int32_t, std::vector<double>>& logits,
                const std::map<std::int32_t, std::int32_t>& truth);

struct EpochStats {
  std::int32_t epoch = 0;  // 1-based
  double loss = 0;
  double triplet = 0;
  double mcp = 0;
  double mcp_accuracy = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::int32_t best_epoch = 0;
  bool diverged = false;
  std::string message;

  std::string to_json() const;
};

/// Joint loss and its parts for one batch, with gradients accumulated into
/// `grads` (already scaled by the batch normalizers).
struct BatchLoss {
  double loss = 0;
  double triplet = 0;
  double mcp = 0;
  std::int64_t mcp_correct = 0;
  std::int64_t mcp_count = 0;
};

/// One training unit: two anchor variants against one positive and one negative.
struct TripletView {
  const TripletSample* sample = nullptr;
  HalfSequence second_anchor{};
  std::map<std::int32_t, std::int32_t> second_truth;
  Timestamps times;
};

/// Builds the per-epoch views: fresh timestamps and a fresh second mask.
std::vector<TripletView> make_views(std::span<const TripletSample* const> samples, double mask_rate, Rng& rng);

/// L = L1 + L2 over `views`, gradients added into `grads` (which may be null).
template <class S>
BatchLoss batch_loss(const EncoderParams<S>& params, const ModelConfig& cfg, std::span<const TripletView> views,
                     EncoderParams<S>* grads, std::int32_t micro_batch = 8, std::int32_t workers = 1);

struct HeldOutMetrics {
  double cos_anchor_positive = 0;
  double cos_anchor_negative = 0;
  double mcp_accuracy = 0;
  double majority_accuracy = 0;
  std::int64_t masked_positions = 0;
};

/// Deterministic (train, held-out) split of the corpus.
std::pair<std::vector<TripletSample>, std::vector<TripletSample>> split_holdout(std::span<const TripletSample> corpus,
                                                                               double fraction, std::uint64_t seed);

/// Representations use the stored masked anchor and seeded timestamps.
/// `majority_cell` is the most frequent masked cell in the training split.
HeldOutMetrics evaluate_held_out(const EncoderParams<float>& params, const ModelConfig& cfg,
                                 std::span<const TripletSample> held_out, std::int32_t majority_cell,
                                 std::uint64_t seed);

/// Most frequent masked-truth cell token (ties: smallest token).
std::int32_t majority_masked_cell(std::span<const TripletSample> samples);

struct TrainResult {
  EncoderParams<float> params;  // best epoch snapshot
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam on the joint loss with global-norm clipping. When `initial` is given
/// training resumes from those parameters (optimizer moments restart).
TrainResult train(std::span<const TripletSample> samples, const ModelConfig& model, const TrainConfig& cfg,
                  const EncoderParams<float>* initial = nullptr, const EpochCallback& on_epoch = {});

extern template BatchLoss batch_loss<float>(const EncoderParams<float>&, const ModelConfig&,
                                            std::span<const TripletView>, EncoderParams<float>*, std::int32_t,
                                            std::int32_t);
extern template BatchLoss batch_loss<double>(const EncoderParams<double>&, const ModelConfig&,
                                             std::span<const TripletView>, EncoderParams<double>*, std::int32_t,
                                             std::int32_t);

}  // namespace trajmine
