#include "trajmine/encoder.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::string_view kCheckpointMagic = "TMCKPT01";
constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct Segment {
  Eigen::Index offset;
  Eigen::Index length;
};

template <class S>
struct NormCache {
  Matrix<S> xhat;
  ColVector<S> rstd;
};

template <class S>
void layer_norm(const Matrix<S>& x, const Matrix<S>& gain, const Matrix<S>& bias, Matrix<S>& y, NormCache<S>* cache) {
  const auto n = x.rows(), d = x.cols();
  y.resize(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    const S rstd = S(1) / std::sqrt(var + S(kLayerNormEps));
    RowVector<S> xhat = ((x.row(i).array() - mean) * rstd).matrix();
    y.row(i) = (xhat.array() * gain.row(0).array() + bias.row(0).array()).matrix();
    if (cache) {
      cache->xhat.row(i) = xhat;
      cache->rstd(i) = rstd;
    }
  }
}

/// Returns dx; accumulates gain/bias gradients.
template <class S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const NormCache<S>& cache, const Matrix<S>& gain, Matrix<S>& d_gain,
                              Matrix<S>& d_bias) {
  d_gain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  Matrix<S> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  Matrix<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S mean_d = dxhat.row(i).mean();
    const S mean_dx = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = (cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx)).matrix();
  }
  return dx;
}

template <class S>
S gelu(S u) {
  return S(0.5) * u * (S(1) + std::erf(u * S(M_SQRT1_2)));
}

template <class S>
S gelu_grad(S u) {
  const S cdf = S(0.5) * (S(1) + std::erf(u * S(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * u * u) * S(0.3989422804014327);
  return cdf + u * pdf;
}

template <class S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const S mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

template <class S>
struct LayerTape {
  NormCache<S> ln1, ln2;
  Matrix<S> h1, qkv, attn, h2, ff_pre, ff_act;
  std::vector<Matrix<S>> probs;  // [segment * n_heads + head]
};

template <class S>
void attention_forward(const ModelConfig& cfg, const Matrix<S>& qkv, std::span<const Segment> segments, Matrix<S>& attn,
                       std::vector<Matrix<S>>* probs) {
  const Eigen::Index d = cfg.d_model, dh = d / cfg.n_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  attn.resize(qkv.rows(), d);
  if (probs) probs->clear();
  Matrix<S> scores;
  for (const auto& seg : segments) {
    for (Eigen::Index h = 0; h < cfg.n_heads; ++h) {
      auto q = qkv.block(seg.offset, h * dh, seg.length, dh);
      auto k = qkv.block(seg.offset, d + h * dh, seg.length, dh);
      auto v = qkv.block(seg.offset, 2 * d + h * dh, seg.length, dh);
      scores.noalias() = q * k.transpose();
      scores *= scale;
      softmax_rows(scores);
      attn.block(seg.offset, h * dh, seg.length, dh).noalias() = scores * v;
      if (probs) probs->push_back(scores);
    }
  }
}

template <class S>
Matrix<S> attention_backward(const ModelConfig& cfg, const Matrix<S>& qkv, std::span<const Segment> segments,
                             const std::vector<Matrix<S>>& probs, const Matrix<S>& d_attn) {
  const Eigen::Index d = cfg.d_model, dh = d / cfg.n_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Matrix<S> d_qkv = Matrix<S>::Zero(qkv.rows(), 3 * d);
  Matrix<S> dp, ds;
  std::size_t idx = 0;
  for (const auto& seg : segments) {
    for (Eigen::Index h = 0; h < cfg.n_heads; ++h, ++idx) {
      const auto& p = probs[idx];
      auto q = qkv.block(seg.offset, h * dh, seg.length, dh);
      auto k = qkv.block(seg.offset, d + h * dh, seg.length, dh);
      auto v = qkv.block(seg.offset, 2 * d + h * dh, seg.length, dh);
      auto d_out = d_attn.block(seg.offset, h * dh, seg.length, dh);
      dp.noalias() = d_out * v.transpose();
      d_qkv.block(seg.offset, 2 * d + h * dh, seg.length, dh).noalias() = p.transpose() * d_out;
      ColVector<S> row_dot = (dp.array() * p.array()).rowwise().sum();
      ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix();
      ds *= scale;
      d_qkv.block(seg.offset, h * dh, seg.length, dh).noalias() = ds * k;
      d_qkv.block(seg.offset, d + h * dh, seg.length, dh).noalias() = ds.transpose() * q;
    }
  }
  return d_qkv;
}

/// x <- layer(x). Fills `tape` when non-null.
template <class S>
void layer_forward(const LayerParams<S>& L, const ModelConfig& cfg, Matrix<S>& x, std::span<const Segment> segments,
                   LayerTape<S>* tape) {
  LayerTape<S> local;
  LayerTape<S>& t = tape ? *tape : local;
  layer_norm(x, L.ln1_gain, L.ln1_bias, t.h1, tape ? &t.ln1 : nullptr);
  t.qkv.noalias() = t.h1 * L.qkv_weight;
  t.qkv.rowwise() += L.qkv_bias.row(0);
  attention_forward(cfg, t.qkv, segments, t.attn, tape ? &t.probs : nullptr);
  x.noalias() += t.attn * L.out_weight;
  x.rowwise() += L.out_bias.row(0);
  layer_norm(x, L.ln2_gain, L.ln2_bias, t.h2, tape ? &t.ln2 : nullptr);
  t.ff_pre.noalias() = t.h2 * L.ff1_weight;
  t.ff_pre.rowwise() += L.ff1_bias.row(0);
  t.ff_act = t.ff_pre.unaryExpr([](S u) { return gelu(u); });
  x.noalias() += t.ff_act * L.ff2_weight;
  x.rowwise() += L.ff2_bias.row(0);
}

/// Returns d(input) for d(output).
template <class S>
Matrix<S> layer_backward(const LayerParams<S>& L, LayerParams<S>& G, const ModelConfig& cfg, const LayerTape<S>& t,
                         std::span<const Segment> segments, const Matrix<S>& d_out) {
  G.ff2_weight.noalias() += t.ff_act.transpose() * d_out;
  G.ff2_bias += d_out.colwise().sum();
  Matrix<S> d_ff = d_out * L.ff2_weight.transpose();
  d_ff.array() *= t.ff_pre.unaryExpr([](S u) { return gelu_grad(u); }).array();
  G.ff1_weight.noalias() += t.h2.transpose() * d_ff;
  G.ff1_bias += d_ff.colwise().sum();
  Matrix<S> d_h2 = d_ff * L.ff1_weight.transpose();
  Matrix<S> d_mid = d_out + layer_norm_backward(d_h2, t.ln2, L.ln2_gain, G.ln2_gain, G.ln2_bias);

  G.out_weight.noalias() += t.attn.transpose() * d_mid;
  G.out_bias += d_mid.colwise().sum();
  Matrix<S> d_attn = d_mid * L.out_weight.transpose();
  Matrix<S> d_qkv = attention_backward(cfg, t.qkv, segments, t.probs, d_attn);
  G.qkv_weight.noalias() += t.h1.transpose() * d_qkv;
  G.qkv_bias += d_qkv.colwise().sum();
  Matrix<S> d_h1 = d_qkv * L.qkv_weight.transpose();
  return d_mid + layer_norm_backward(d_h1, t.ln1, L.ln1_gain, G.ln1_gain, G.ln1_bias);
}

template <class S>
void check_tokens(const ModelConfig& cfg, std::span<const TokenPair> tokens) {
  for (const auto& t : tokens) {
    if (t.zone < 0 || t.zone >= cfg.zone_vocab_size) {
      throw InputError("zone token " + std::to_string(t.zone) + " outside vocabulary of size " +
                       std::to_string(cfg.zone_vocab_size));
    }
    if (t.cell < 0 || t.cell >= cfg.cell_vocab_size) {
      throw InputError("cell token " + std::to_string(t.cell) + " outside vocabulary of size " +
                       std::to_string(cfg.cell_vocab_size));
    }
  }
}

template <class S>
void fill_embedding(const EncoderParams<S>& params, const ModelConfig& cfg, const SequenceInput& seq,
                    const ForwardOptions& opts, Matrix<S>& out, Eigen::Index offset) {
  if (seq.tokens.size() != seq.minutes.size()) throw InputError("tokens and minutes differ in length");
  check_tokens<S>(cfg, seq.tokens);
  for (std::size_t j = 0; j < seq.tokens.size(); ++j) {
    auto row = out.row(offset + static_cast<Eigen::Index>(j));
    row = params.zone_embedding.row(seq.tokens[j].zone) + params.cell_embedding.row(seq.tokens[j].cell);
    if (opts.time_encoding) row += timestamp_encoding<S>(seq.minutes[j], cfg.d_model);
  }
}

template <class S>
void check_finite(const Matrix<S>& x, const ForwardOptions& opts, const std::string& where) {
  if (opts.check_finite && !x.allFinite()) throw NumericError("non-finite activation in " + where);
}

template <class S>
void run_stack(const EncoderParams<S>& params, const ModelConfig& cfg, Matrix<S>& x, std::span<const Segment> segments,
               const ForwardOptions& opts, std::vector<LayerTape<S>>* tapes, NormCache<S>* final_cache, Matrix<S>& out) {
  if (tapes) tapes->resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    layer_forward(params.layers[l], cfg, x, segments, tapes ? &(*tapes)[l] : nullptr);
    check_finite(x, opts, "encoder layer " + std::to_string(l));
  }
  layer_norm(x, params.final_ln_gain, params.final_ln_bias, out, final_cache);
}

}  // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  if (d_model <= 0 || d_hid <= 0 || n_layers <= 0 || n_heads <= 0) throw ConfigError("model sizes must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for the sinusoidal time encoding");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0,1]");
  if (cell_vocab_size <= Vocabulary::kMask || zone_vocab_size <= Vocabulary::kMask) {
    throw ConfigError("vocabulary sizes must include the reserved tokens");
  }
}

ModelConfig ModelConfig::dagger_preset() {
  ModelConfig c;
  c.d_model = 256;
  c.d_hid = 1024;
  c.n_layers = 8;
  c.n_heads = 8;
  c.margin = 0.5;
  c.mask_rate = 0.2;
  return c;
}

// ---------------------------------------------------------------- parameters

template <class S>
EncoderParams<S> EncoderParams<S>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = cfg.d_model, h = cfg.d_hid;
  EncoderParams p;
  p.zone_embedding = Matrix<S>::Zero(cfg.zone_vocab_size, d);
  p.cell_embedding = Matrix<S>::Zero(cfg.cell_vocab_size, d);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& L : p.layers) {
    L.ln1_gain = Matrix<S>::Zero(1, d);
    L.ln1_bias = Matrix<S>::Zero(1, d);
    L.qkv_weight = Matrix<S>::Zero(d, 3 * d);
    L.qkv_bias = Matrix<S>::Zero(1, 3 * d);
    L.out_weight = Matrix<S>::Zero(d, d);
    L.out_bias = Matrix<S>::Zero(1, d);
    L.ln2_gain = Matrix<S>::Zero(1, d);
    L.ln2_bias = Matrix<S>::Zero(1, d);
    L.ff1_weight = Matrix<S>::Zero(d, h);
    L.ff1_bias = Matrix<S>::Zero(1, h);
    L.ff2_weight = Matrix<S>::Zero(h, d);
    L.ff2_bias = Matrix<S>::Zero(1, d);
  }
  p.final_ln_gain = Matrix<S>::Zero(1, d);
  p.final_ln_bias = Matrix<S>::Zero(1, d);
  p.rep_weight = Matrix<S>::Zero(d, d);
  p.rep_bias = Matrix<S>::Zero(1, d);
  p.mcp_weight = Matrix<S>::Zero(d, cfg.cell_vocab_size);
  p.mcp_bias = Matrix<S>::Zero(1, cfg.cell_vocab_size);
  return p;
}

template <class S>
EncoderParams<S> EncoderParams<S>::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_normal = [&](Matrix<S>& m) { m = m.unaryExpr([&](S) { return static_cast<S>(normal(rng)); }); };
  auto fill_linear = [&](Matrix<S>& w, Matrix<S>& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    std::uniform_real_distribution<double> u(-bound, bound);
    w = w.unaryExpr([&](S) { return static_cast<S>(u(rng)); });
    b = b.unaryExpr([&](S) { return static_cast<S>(u(rng)); });
  };
  fill_normal(p.zone_embedding);
  fill_normal(p.cell_embedding);
  for (auto& L : p.layers) {
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
    fill_linear(L.qkv_weight, L.qkv_bias);
    fill_linear(L.out_weight, L.out_bias);
    fill_linear(L.ff1_weight, L.ff1_bias);
    fill_linear(L.ff2_weight, L.ff2_bias);
  }
  p.final_ln_gain.setOnes();
  fill_linear(p.rep_weight, p.rep_bias);
  fill_linear(p.mcp_weight, p.mcp_bias);
  return p;
}

// ---------------------------------------------------------------- inference

template <class S>
RowVector<S> sinusoid(double j, std::int32_t d_model) {
  RowVector<S> out(d_model);
  for (std::int32_t m = 0; 2 * m < d_model; ++m) {
    const double angle = j / std::pow(10000.0, 2.0 * m / d_model);
    out(2 * m) = static_cast<S>(std::sin(angle));
    if (2 * m + 1 < d_model) out(2 * m + 1) = static_cast<S>(std::cos(angle));
  }
  return out;
}

template <class S>
RowVector<S> timestamp_encoding(std::int32_t minute, std::int32_t d_model) {
  if (minute < 1 || minute > kMinutesPerDay) {
    throw InputError("timestamp " + std::to_string(minute) + " outside [1,1440]");
  }
  // Cached per (d_model); the table is immutable once built.
  thread_local std::int32_t cached_d = -1;
  thread_local Matrix<S> table;
  if (cached_d != d_model) {
    table.resize(kMinutesPerDay, d_model);
    for (std::int32_t t = 1; t <= kMinutesPerDay; ++t) table.row(t - 1) = sinusoid<S>(t, d_model);
    cached_d = d_model;
  }
  return table.row(minute - 1);
}

std::vector<std::int32_t> consecutive_minutes(std::int32_t start_minute, std::size_t length) {
  std::vector<std::int32_t> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = start_minute + static_cast<std::int32_t>(i);
  return out;
}

template <class S>
Matrix<S> embed_sequence(const EncoderParams<S>& params, const ModelConfig& cfg, const SequenceInput& seq,
                         const ForwardOptions& opts) {
  Matrix<S> out(static_cast<Eigen::Index>(seq.tokens.size()), cfg.d_model);
  fill_embedding(params, cfg, seq, opts, out, 0);
  return out;
}

template <class S>
Matrix<S> encode(const EncoderParams<S>& params, const ModelConfig& cfg, const Matrix<S>& embedded,
                 const ForwardOptions& opts) {
  Matrix<S> x = embedded, out;
  const Segment seg{0, x.rows()};
  run_stack<S>(params, cfg, x, std::span<const Segment>(&seg, 1), opts, nullptr, nullptr, out);
  check_finite(out, opts, "final layer norm");
  return out;
}

template <class S>
RowVector<S> represent(const EncoderParams<S>& params, const Matrix<S>& token_outputs) {
  if (token_outputs.rows() == 0) throw InputError("cannot pool an empty token sequence");
  RowVector<S> pooled = token_outputs.colwise().mean();
  return pooled * params.rep_weight + params.rep_bias;
}

template <class S>
std::map<std::int32_t, RowVector<S>> mcp_logits(const EncoderParams<S>& params, const Matrix<S>& token_outputs,
                                                std::span<const std::int32_t> positions) {
  std::map<std::int32_t, RowVector<S>> out;
  for (auto pos : positions) {
    if (pos < 0 || pos >= token_outputs.rows()) {
      throw InputError("masked position " + std::to_string(pos) + " outside sequence of length " +
                       std::to_string(token_outputs.rows()));
    }
    out[pos] = token_outputs.row(pos) * params.mcp_weight + params.mcp_bias;
  }
  return out;
}

// ---------------------------------------------------------------- batched

template <class S>
struct BatchForward<S>::Tape {
  std::vector<Segment> segments;
  std::vector<TokenPair> tokens;
  std::vector<std::int32_t> mcp_rows;
  std::vector<LayerTape<S>> layers;
  NormCache<S> final_norm;
  Matrix<S> outputs, pooled, reps, gathered, logits;
};

template <class S>
BatchForward<S>::BatchForward(const EncoderParams<S>& params, const ModelConfig& cfg,
                              std::span<const SequenceInput> sequences, std::span<const std::int32_t> mcp_rows,
                              const ForwardOptions& opts)
    : params_(&params), cfg_(cfg), tape_(std::make_unique<Tape>()) {
  auto& t = *tape_;
  Eigen::Index total = 0;
  for (const auto& s : sequences) {
    if (s.tokens.empty()) throw InputError("batch contains an empty sequence");
    t.segments.push_back({total, static_cast<Eigen::Index>(s.tokens.size())});
    total += static_cast<Eigen::Index>(s.tokens.size());
    t.tokens.insert(t.tokens.end(), s.tokens.begin(), s.tokens.end());
  }
  Matrix<S> x(total, cfg.d_model);
  for (std::size_t i = 0; i < sequences.size(); ++i) fill_embedding(params, cfg, sequences[i], opts, x, t.segments[i].offset);
  run_stack<S>(params, cfg, x, t.segments, opts, &t.layers, &t.final_norm, t.outputs);

  t.pooled.resize(static_cast<Eigen::Index>(t.segments.size()), cfg.d_model);
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    t.pooled.row(static_cast<Eigen::Index>(i)) = t.outputs.middleRows(t.segments[i].offset, t.segments[i].length).colwise().mean();
  }
  t.reps.noalias() = t.pooled * params.rep_weight;
  t.reps.rowwise() += params.rep_bias.row(0);

  t.mcp_rows.assign(mcp_rows.begin(), mcp_rows.end());
  t.gathered.resize(static_cast<Eigen::Index>(mcp_rows.size()), cfg.d_model);
  for (std::size_t i = 0; i < mcp_rows.size(); ++i) {
    if (mcp_rows[i] < 0 || mcp_rows[i] >= total) throw InputError("masked row outside the batch");
    t.gathered.row(static_cast<Eigen::Index>(i)) = t.outputs.row(mcp_rows[i]);
  }
  t.logits.noalias() = t.gathered * params.mcp_weight;
  t.logits.rowwise() += params.mcp_bias.row(0);
  check_finite(t.logits, opts, "masked-cell head");
}

template <class S>
BatchForward<S>::~BatchForward() = default;
template <class S>
BatchForward<S>::BatchForward(BatchForward&&) noexcept = default;
template <class S>
BatchForward<S>& BatchForward<S>::operator=(BatchForward&&) noexcept = default;

template <class S>
const Matrix<S>& BatchForward<S>::representations() const {
  return tape_->reps;
}
template <class S>
const Matrix<S>& BatchForward<S>::logits() const {
  return tape_->logits;
}
template <class S>
const Matrix<S>& BatchForward<S>::token_outputs() const {
  return tape_->outputs;
}
template <class S>
std::int32_t BatchForward<S>::offset(std::size_t sequence) const {
  return static_cast<std::int32_t>(tape_->segments.at(sequence).offset);
}

template <class S>
void BatchForward<S>::backward(const Matrix<S>& d_reps, const Matrix<S>& d_logits, EncoderParams<S>& grads) const {
  const auto& t = *tape_;
  const auto& P = *params_;
  if (d_reps.rows() != t.reps.rows() || d_reps.cols() != t.reps.cols()) throw InputError("d_representations shape mismatch");
  if (d_logits.rows() != t.logits.rows() || d_logits.cols() != t.logits.cols()) throw InputError("d_logits shape mismatch");

  grads.rep_weight.noalias() += t.pooled.transpose() * d_reps;
  grads.rep_bias += d_reps.colwise().sum();
  Matrix<S> d_pooled = d_reps * P.rep_weight.transpose();
  Matrix<S> d_out = Matrix<S>::Zero(t.outputs.rows(), t.outputs.cols());
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    const auto& seg = t.segments[i];
    RowVector<S> share = d_pooled.row(static_cast<Eigen::Index>(i)) / static_cast<S>(seg.length);
    d_out.middleRows(seg.offset, seg.length).rowwise() += share;
  }
  if (d_logits.rows() > 0) {
    grads.mcp_weight.noalias() += t.gathered.transpose() * d_logits;
    grads.mcp_bias += d_logits.colwise().sum();
    Matrix<S> d_gathered = d_logits * P.mcp_weight.transpose();
    for (std::size_t i = 0; i < t.mcp_rows.size(); ++i) d_out.row(t.mcp_rows[i]) += d_gathered.row(static_cast<Eigen::Index>(i));
  }

  Matrix<S> dx = layer_norm_backward(d_out, t.final_norm, P.final_ln_gain, grads.final_ln_gain, grads.final_ln_bias);
  for (std::size_t l = P.layers.size(); l-- > 0;) {
    dx = layer_backward(P.layers[l], grads.layers[l], cfg_, t.layers[l], t.segments, dx);
  }
  for (std::size_t r = 0; r < t.tokens.size(); ++r) {
    grads.zone_embedding.row(t.tokens[r].zone) += dx.row(static_cast<Eigen::Index>(r));
    grads.cell_embedding.row(t.tokens[r].cell) += dx.row(static_cast<Eigen::Index>(r));
  }
}

// ---------------------------------------------------------------- checkpoint

std::string Checkpoint::serialize() const {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(config.d_model);
  w.put<std::int32_t>(config.d_hid);
  w.put<std::int32_t>(config.n_layers);
  w.put<std::int32_t>(config.n_heads);
  w.put<double>(config.margin);
  w.put<double>(config.mask_rate);
  w.put<std::int32_t>(config.cell_vocab_size);
  w.put<std::int32_t>(config.zone_vocab_size);
  w.put<std::uint64_t>(vocab_fingerprint);
  std::uint32_t n = 0;
  params.for_each([&](const std::string&, const Matrix<float>&) { ++n; });
  w.put<std::uint32_t>(n);
  params.for_each([&](const std::string& name, const Matrix<float>& m) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float)));
  });
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kCheckpointMagic);
  if (auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.config.d_model = r.get<std::int32_t>();
  ck.config.d_hid = r.get<std::int32_t>();
  ck.config.n_layers = r.get<std::int32_t>();
  ck.config.n_heads = r.get<std::int32_t>();
  ck.config.margin = r.get<double>();
  ck.config.mask_rate = r.get<double>();
  ck.config.cell_vocab_size = r.get<std::int32_t>();
  ck.config.zone_vocab_size = r.get<std::int32_t>();
  ck.vocab_fingerprint = r.get<std::uint64_t>();
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  ck.params = EncoderParams<float>::zeros(ck.config);
  auto n = r.get<std::uint32_t>();
  std::uint32_t seen = 0;
  ck.params.for_each([&](const std::string& name, Matrix<float>& m) {
    ++seen;
    if (seen > n) throw FormatError("checkpoint is missing tensor '" + name + "'");
    auto stored = r.get_string();
    if (stored != name) throw FormatError("checkpoint tensor '" + stored + "' where '" + name + "' was expected");
    auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
    if (rows != m.rows() || cols != m.cols()) throw FormatError("checkpoint tensor '" + name + "' has the wrong shape");
    auto raw = r.get_bytes(static_cast<std::size_t>(m.size()) * sizeof(float));
    std::memcpy(m.data(), raw.data(), raw.size());
  });
  if (seen != n || !r.done()) throw FormatError("checkpoint tensor count mismatch");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void Checkpoint::require_vocabulary(const Vocabulary& vocab) const {
  if (vocab.fingerprint() != vocab_fingerprint) {
    throw InputError("checkpoint vocabulary fingerprint " + hex64(vocab_fingerprint) +
                     " does not match the tokenizer vocabulary " + hex64(vocab.fingerprint()));
  }
}

// ---------------------------------------------------------------- instantiation

#define TRAJMINE_INSTANTIATE(S)                                                                                       \
  template struct EncoderParams<S>;                                                                                   \
  template class BatchForward<S>;                                                                                     \
  template RowVector<S> sinusoid<S>(double, std::int32_t);                                                            \
  template RowVector<S> timestamp_encoding<S>(std::int32_t, std::int32_t);                                            \
  template Matrix<S> embed_sequence<S>(const EncoderParams<S>&, const ModelConfig&, const SequenceInput&,             \
                                       const ForwardOptions&);                                                        \
  template Matrix<S> encode<S>(const EncoderParams<S>&, const ModelConfig&, const Matrix<S>&, const ForwardOptions&); \
  template RowVector<S> represent<S>(const EncoderParams<S>&, const Matrix<S>&);                                      \
  template std::map<std::int32_t, RowVector<S>> mcp_logits<S>(const EncoderParams<S>&, const Matrix<S>&,              \
                                                              std::span<const std::int32_t>);

TRAJMINE_INSTANTIATE(float)
TRAJMINE_INSTANTIATE(double)

#undef TRAJMINE_INSTANTIATE

}  // namespace trajmine
