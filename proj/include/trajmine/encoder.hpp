#pragma once

// Transformer trajectory encoder: zone + cell embeddings with a sinusoidal
// minute-of-day encoding, a pre-norm self-attention stack, mean pooling with
// a representation head, and a separate masked-cell-prediction head.
//
// Everything is templated on the scalar type. Production code runs in float;
// the double instantiation exists for finite-difference gradient checks.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trajmine/geo.hpp"

namespace trajmine {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
  std::int32_t d_model = 256;
  std::int32_t d_hid = 1024;
  std::int32_t n_layers = 8;
  std::int32_t n_heads = 8;
  double margin = 0.5;     // triplet hinge margin
  double mask_rate = 0.2;  // fraction of anchor tokens replaced by MASK
  std::int32_t cell_vocab_size = 0;
  std::int32_t zone_vocab_size = 0;

  /// Throws ConfigError.
  void validate() const;
  /// d_model 256, d_hid 1024, margin 0.5, mask rate 0.2.
  static ModelConfig dagger_preset();

  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct LayerParams {
  Matrix<S> ln1_gain, ln1_bias;
  Matrix<S> qkv_weight, qkv_bias;  // d x 3d, packed [Q | K | V]
  Matrix<S> out_weight, out_bias;
  Matrix<S> ln2_gain, ln2_bias;
  Matrix<S> ff1_weight, ff1_bias;
  Matrix<S> ff2_weight, ff2_bias;
};

/// All trainable tensors. Biases and gains are stored as 1 x n matrices.
template <class S>
struct EncoderParams {
  Matrix<S> zone_embedding, cell_embedding;
  std::vector<LayerParams<S>> layers;
  Matrix<S> final_ln_gain, final_ln_bias;
  Matrix<S> rep_weight, rep_bias;  // d x d
  Matrix<S> mcp_weight, mcp_bias;  // d x C

  static EncoderParams zeros(const ModelConfig& cfg);
  static EncoderParams initialize(const ModelConfig& cfg, std::uint64_t seed);

  /// Visits every tensor in a fixed order as f(name, tensor).
  template <class F>
  void for_each(F&& f) {
    visit_all(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit_all(*this, f);
  }

  template <class T>
  EncoderParams<T> cast() const {
    auto out = EncoderParams<T>::zeros_shaped_like(*this);
    std::vector<const Matrix<S>*> src;
    for_each([&](const std::string&, const Matrix<S>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Matrix<T>& m) { m = src[i++]->template cast<T>(); });
    return out;
  }

  template <class U>
  static EncoderParams zeros_shaped_like(const EncoderParams<U>& other) {
    EncoderParams out;
    out.layers.resize(other.layers.size());
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    other.for_each([&](const std::string&, const Matrix<U>& m) { shapes.emplace_back(m.rows(), m.cols()); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Matrix<S>& m) {
      m = Matrix<S>::Zero(shapes[i].first, shapes[i].second);
      ++i;
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix<S>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

 private:
  template <class Self, class F>
  static void visit_all(Self& self, F& f) {
    f("zone_embedding", self.zone_embedding);
    f("cell_embedding", self.cell_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "qkv_weight", L.qkv_weight);
      f(p + "qkv_bias", L.qkv_bias);
      f(p + "out_weight", L.out_weight);
      f(p + "out_bias", L.out_bias);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "ff1_weight", L.ff1_weight);
      f(p + "ff1_bias", L.ff1_bias);
      f(p + "ff2_weight", L.ff2_weight);
      f(p + "ff2_bias", L.ff2_bias);
    }
    f("final_ln_gain", self.final_ln_gain);
    f("final_ln_bias", self.final_ln_bias);
    f("rep_weight", self.rep_weight);
    f("rep_bias", self.rep_bias);
    f("mcp_weight", self.mcp_weight);
    f("mcp_bias", self.mcp_bias);
  }
};

/// Unchecked sinusoid at an arbitrary (possibly zero) argument.
template <class S>
RowVector<S> sinusoid(double j, std::int32_t d_model);

/// Minute-of-day encoding; throws InputError unless 1 <= minute <= 1440.
template <class S>
RowVector<S> timestamp_encoding(std::int32_t minute, std::int32_t d_model);

/// One input sequence: tokens with the minute each token is stamped with.
struct SequenceInput {
  std::span<const TokenPair> tokens;
  std::span<const std::int32_t> minutes;
};

/// Consecutive minutes start_minute, start_minute + 1, ... for `length` tokens.
std::vector<std::int32_t> consecutive_minutes(std::int32_t start_minute, std::size_t length);

struct ForwardOptions {
  bool time_encoding = true;  // disabled only by test harnesses
  bool check_finite = true;
};

/// Row j = zone_embedding[zone_j] + cell_embedding[cell_j] + te(minute_j).
template <class S>
Matrix<S> embed_sequence(const EncoderParams<S>& params, const ModelConfig& cfg, const SequenceInput& seq,
                         const ForwardOptions& opts = {});

/// Runs the encoder stack (no tape). Output has the same number of rows.
template <class S>
Matrix<S> encode(const EncoderParams<S>& params, const ModelConfig& cfg, const Matrix<S>& embedded,
                 const ForwardOptions& opts = {});

/// Linear(mean of rows). Throws InputError for an empty input.
template <class S>
RowVector<S> represent(const EncoderParams<S>& params, const Matrix<S>& token_outputs);

/// Cell-vocabulary logits at the given row positions.
template <class S>
std::map<std::int32_t, RowVector<S>> mcp_logits(const EncoderParams<S>& params, const Matrix<S>& token_outputs,
                                                std::span<const std::int32_t> positions);

/// Batched forward pass that records what backward() needs.
template <class S>
class BatchForward {
 public:
  /// `mcp_rows` index rows of the concatenated batch (sequence offsets + position).
  BatchForward(const EncoderParams<S>& params, const ModelConfig& cfg, std::span<const SequenceInput> sequences,
               std::span<const std::int32_t> mcp_rows, const ForwardOptions& opts = {});
  ~BatchForward();
  BatchForward(BatchForward&&) noexcept;
  BatchForward& operator=(BatchForward&&) noexcept;

  /// One representation per sequence (n_sequences x d_model).
  const Matrix<S>& representations() const;
  /// One row of logits per requested MCP row (n x cell_vocab_size).
  const Matrix<S>& logits() const;
  const Matrix<S>& token_outputs() const;
  /// Row offset of sequence i inside the concatenated batch.
  std::int32_t offset(std::size_t sequence) const;

  /// Accumulates parameter gradients for upstream gradients on the outputs.
  void backward(const Matrix<S>& d_representations, const Matrix<S>& d_logits, EncoderParams<S>& grads) const;

 private:
  struct Tape;
  const EncoderParams<S>* params_;
  ModelConfig cfg_;
  std::unique_ptr<Tape> tape_;
};

/// Serialized model: config + named tensors + vocabulary fingerprint.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t vocab_fingerprint = 0;
  EncoderParams<float> params;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  /// Throws InputError when the checkpoint was trained with another vocabulary.
  void require_vocabulary(const Vocabulary& vocab) const;
};

extern template struct EncoderParams<float>;
extern template struct EncoderParams<double>;
extern template class BatchForward<float>;
extern template class BatchForward<double>;

}  // namespace trajmine
