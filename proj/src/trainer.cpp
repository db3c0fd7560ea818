#include "trajmine/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "trajmine/error.hpp"

namespace trajmine {

using json = nlohmann::json;

namespace {

constexpr std::int32_t kMaxShift = 16;
enum : std::uint64_t { kTagInit = 11, kTagEpoch = 12, kTagSplit = 13, kTagEval = 14 };

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (min_epochs < 0) throw ConfigError("min_epochs must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  if (samples_per_epoch < 0) throw ConfigError("samples_per_epoch must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) throw ConfigError("holdout_fraction must lie in [0,1)");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

Timestamps sample_timestamps(Rng& rng) {
  Timestamps t;
  t.anchor = uniform_int(rng, 1, kLastStartMinute);
  t.positive = std::clamp(t.anchor + uniform_int(rng, -kMaxShift, kMaxShift), 1, kLastStartMinute);
  t.negative = uniform_int(rng, 1, kLastStartMinute);
  return t;
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive, std::span<const double> negative,
                    double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw InputError("triplet_loss: representation dimensions differ");
  }
  double dp = 0, dn = 0;
  for (std::size_t i = 0; i < anchor.size(); ++i) {
    dp += (anchor[i] - positive[i]) * (anchor[i] - positive[i]);
    dn += (anchor[i] - negative[i]) * (anchor[i] - negative[i]);
  }
  return std::max(0.0, dp - dn + margin);
}

double triplet_loss(const Matrix<double>& anchors, const Matrix<double>& positives, const Matrix<double>& negatives,
                    double margin) {
  if (anchors.rows() != positives.rows() || anchors.rows() != negatives.rows() || anchors.cols() != positives.cols() ||
      anchors.cols() != negatives.cols()) {
    throw InputError("triplet_loss: representation shapes differ");
  }
  if (anchors.rows() == 0) throw InputError("triplet_loss: empty batch");
  double total = 0;
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    total += triplet_loss(std::span(anchors.row(i).data(), static_cast<std::size_t>(anchors.cols())),
                          std::span(positives.row(i).data(), static_cast<std::size_t>(anchors.cols())),
                          std::span(negatives.row(i).data(), static_cast<std::size_t>(anchors.cols())), margin);
  }
  return total / static_cast<double>(anchors.rows());
}

namespace {

/// -log softmax(logits)[truth]; also reports the argmax.
template <class Vec>
double cross_entropy(const Vec& logits, std::int32_t truth, std::int32_t* argmax = nullptr) {
  const auto n = static_cast<std::int32_t>(logits.size());
  if (truth < 0 || truth >= n) throw InputError("masked truth " + std::to_string(truth) + " outside the logit width");
  double mx = logits[0];
  std::int32_t best = 0;
  for (std::int32_t i = 1; i < n; ++i) {
    if (logits[i] > mx) {
      mx = logits[i];
      best = i;
    }
  }
  double sum = 0;
  for (std::int32_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  if (argmax) *argmax = best;
  return std::log(sum) + mx - static_cast<double>(logits[truth]);
}

}  // namespace

double mcp_loss(const std::map<std::int32_t, std::vector<double>>& logits,
                const std::map<std::int32_t, std::int32_t>& truth) {
  if (logits.size() != truth.size()) throw InputError("mcp_loss: logits and truths cover different positions");
  if (logits.empty()) return 0.0;
  double total = 0;
  for (const auto& [pos, row] : logits) {
    auto it = truth.find(pos);
    if (it == truth.end()) throw InputError("mcp_loss: no truth for masked position " + std::to_string(pos));
    if (row.empty()) throw InputError("mcp_loss: empty logit vector");
    total += cross_entropy(row, it->second);
  }
  return total / static_cast<double>(logits.size());
}

std::string TrainReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"loss", e.loss},
                           {"triplet_loss", e.triplet},
                           {"mcp_loss", e.mcp},
                           {"mcp_accuracy", e.mcp_accuracy}});
  }
  json j{{"version", 1}, {"best_epoch", best_epoch}, {"diverged", diverged}, {"epochs", epochs_json}};
  if (!message.empty()) j["message"] = message;
  return j.dump(1);
}

std::vector<TripletView> make_views(std::span<const TripletSample* const> samples, double mask_rate, Rng& rng) {
  std::vector<TripletView> views(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& v = views[i];
    v.sample = samples[i];
    v.times = sample_timestamps(rng);
    v.second_anchor = mask_anchor(samples[i]->anchor_clean, mask_rate, rng, v.second_truth);
  }
  return views;
}

namespace {

template <class S>
struct Partial {
  BatchLoss loss;
  EncoderParams<S>* grads = nullptr;
};

/// Sequence order per view: anchor, second anchor, positive, negative.
constexpr int kSeqPerView = 4;

template <class S>
void micro_batch_loss(const EncoderParams<S>& params, const ModelConfig& cfg, std::span<const TripletView> views,
                      double hinge_norm, double mask_norm, Partial<S>& out) {
  const auto n = views.size();
  std::vector<std::vector<std::int32_t>> minutes;
  minutes.reserve(n * 3);
  std::vector<SequenceInput> seqs;
  seqs.reserve(n * kSeqPerView);
  std::vector<std::int32_t> rows;
  std::vector<std::int32_t> truths;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = views[i];
    minutes.push_back(consecutive_minutes(v.times.anchor, kHalfLength));
    minutes.push_back(consecutive_minutes(v.times.positive, kHalfLength));
    minutes.push_back(consecutive_minutes(v.times.negative, kHalfLength));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = views[i];
    const auto& a = minutes[3 * i];
    seqs.push_back({v.sample->anchor, a});
    seqs.push_back({v.second_anchor, a});
    seqs.push_back({v.sample->positive, minutes[3 * i + 1]});
    seqs.push_back({v.sample->negative, minutes[3 * i + 2]});
    const auto base = static_cast<std::int32_t>(i * kSeqPerView * kHalfLength);
    for (const auto& [pos, cell] : v.sample->masked_truth) {
      rows.push_back(base + pos);
      truths.push_back(cell);
    }
    for (const auto& [pos, cell] : v.second_truth) {
      rows.push_back(base + kHalfLength + pos);
      truths.push_back(cell);
    }
  }

  BatchForward<S> fwd(params, cfg, seqs, rows);
  const auto& reps = fwd.representations();
  const auto& logits = fwd.logits();
  Matrix<S> d_reps = Matrix<S>::Zero(reps.rows(), reps.cols());
  Matrix<S> d_logits(logits.rows(), logits.cols());

  for (std::size_t i = 0; i < n; ++i) {
    const auto ip = static_cast<Eigen::Index>(kSeqPerView * i + 2), in = ip + 1;
    for (Eigen::Index ia : {ip - 2, ip - 1}) {
      const double dp = (reps.row(ia) - reps.row(ip)).squaredNorm();
      const double dn = (reps.row(ia) - reps.row(in)).squaredNorm();
      const double term = dp - dn + cfg.margin;
      if (term <= 0) continue;
      out.loss.triplet += term * hinge_norm;
      const S w = static_cast<S>(2.0 * hinge_norm);
      d_reps.row(ia) += w * (reps.row(in) - reps.row(ip));
      d_reps.row(ip) -= w * (reps.row(ia) - reps.row(ip));
      d_reps.row(in) += w * (reps.row(ia) - reps.row(in));
    }
  }

  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    std::int32_t argmax = 0;
    const auto row = logits.row(r);
    out.loss.mcp += cross_entropy(row, truths[static_cast<std::size_t>(r)], &argmax) * mask_norm;
    out.loss.mcp_correct += argmax == truths[static_cast<std::size_t>(r)];
    ++out.loss.mcp_count;
    const S mx = row.maxCoeff();
    d_logits.row(r) = (row.array() - mx).exp().matrix();
    d_logits.row(r) /= d_logits.row(r).sum();
    d_logits(r, truths[static_cast<std::size_t>(r)]) -= S(1);
    d_logits.row(r) *= static_cast<S>(mask_norm);
  }
  if (out.grads) fwd.backward(d_reps, d_logits, *out.grads);
}

template <class S>
void add_into(EncoderParams<S>& dst, EncoderParams<S>& src) {
  std::vector<Matrix<S>*> s;
  src.for_each([&](const std::string&, Matrix<S>& m) { s.push_back(&m); });
  std::size_t i = 0;
  dst.for_each([&](const std::string&, Matrix<S>& m) { m += *s[i++]; });
}

}  // namespace

template <class S>
BatchLoss batch_loss(const EncoderParams<S>& params, const ModelConfig& cfg, std::span<const TripletView> views,
                     EncoderParams<S>* grads, std::int32_t micro_batch, std::int32_t workers) {
  if (views.empty()) throw InputError("batch_loss: empty batch");
  if (micro_batch < 1 || workers < 1) throw InputError("batch_loss: micro_batch and workers must be >= 1");
  const double hinge_norm = 1.0 / (2.0 * static_cast<double>(views.size()));
  std::size_t masked = 0;
  for (const auto& v : views) masked += v.sample->masked_truth.size() + v.second_truth.size();
  const double mask_norm = masked ? 1.0 / static_cast<double>(masked) : 0.0;

  const std::size_t mb = static_cast<std::size_t>(micro_batch);
  const std::size_t chunks = (views.size() + mb - 1) / mb;
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), chunks);

  // Worker w owns chunks w, w + nw, ...; partials are reduced in worker order.
  std::vector<Partial<S>> partials(nw);
  std::vector<EncoderParams<S>> buffers;
  if (grads && nw > 1) {
    buffers.reserve(nw - 1);
    for (std::size_t w = 1; w < nw; ++w) buffers.push_back(EncoderParams<S>::zeros_shaped_like(params));
  }
  for (std::size_t w = 0; w < nw; ++w) partials[w].grads = grads ? (w == 0 ? grads : &buffers[w - 1]) : nullptr;

  auto run = [&](std::size_t w) {
    for (std::size_t c = w; c < chunks; c += nw) {
      const auto begin = c * mb;
      const auto len = std::min(mb, views.size() - begin);
      micro_batch_loss(params, cfg, views.subspan(begin, len), hinge_norm, mask_norm, partials[w]);
    }
  };
  if (nw == 1) {
    run(0);
  } else {
    std::vector<std::exception_ptr> errors(nw);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < nw; ++w) {
      threads.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BatchLoss total;
  for (std::size_t w = 0; w < nw; ++w) {
    total.triplet += partials[w].loss.triplet;
    total.mcp += partials[w].loss.mcp;
    total.mcp_correct += partials[w].loss.mcp_correct;
    total.mcp_count += partials[w].loss.mcp_count;
    if (grads && w > 0) add_into(*grads, buffers[w - 1]);
  }
  total.loss = total.triplet + total.mcp;
  return total;
}

template BatchLoss batch_loss<float>(const EncoderParams<float>&, const ModelConfig&, std::span<const TripletView>,
                                     EncoderParams<float>*, std::int32_t, std::int32_t);
template BatchLoss batch_loss<double>(const EncoderParams<double>&, const ModelConfig&, std::span<const TripletView>,
                                      EncoderParams<double>*, std::int32_t, std::int32_t);

// ---------------------------------------------------------------- held-out split

std::pair<std::vector<TripletSample>, std::vector<TripletSample>> split_holdout(std::span<const TripletSample> corpus,
                                                                               double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) throw InputError("held-out fraction must lie in [0,1)");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed({seed, kTagSplit}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(corpus.size())));
  std::vector<bool> held(corpus.size(), false);
  for (std::size_t i = 0; i < n_held; ++i) held[order[i]] = true;
  std::pair<std::vector<TripletSample>, std::vector<TripletSample>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (held[i] ? out.second : out.first).push_back(corpus[i]);
  return out;
}

std::int32_t majority_masked_cell(std::span<const TripletSample> samples) {
  std::map<std::int32_t, std::int64_t> counts;
  for (const auto& s : samples) {
    for (const auto& [pos, cell] : s.masked_truth) ++counts[cell];
  }
  std::int32_t best = Vocabulary::kUnk;
  std::int64_t best_n = -1;
  for (const auto& [cell, n] : counts) {
    if (n > best_n) {
      best = cell;
      best_n = n;
    }
  }
  return best;
}

HeldOutMetrics evaluate_held_out(const EncoderParams<float>& params, const ModelConfig& cfg,
                                 std::span<const TripletSample> held_out, std::int32_t majority_cell,
                                 std::uint64_t seed) {
  HeldOutMetrics m;
  if (held_out.empty()) return m;
  Rng rng(derive_seed({seed, kTagEval}));
  constexpr std::size_t kChunk = 16;
  std::int64_t correct = 0, majority = 0;
  for (std::size_t begin = 0; begin < held_out.size(); begin += kChunk) {
    const auto len = std::min(kChunk, held_out.size() - begin);
    std::vector<std::vector<std::int32_t>> minutes;
    std::vector<SequenceInput> seqs;
    std::vector<std::int32_t> rows, truths;
    for (std::size_t i = 0; i < len; ++i) {
      auto t = sample_timestamps(rng);
      minutes.push_back(consecutive_minutes(t.anchor, kHalfLength));
      minutes.push_back(consecutive_minutes(t.positive, kHalfLength));
      minutes.push_back(consecutive_minutes(t.negative, kHalfLength));
    }
    for (std::size_t i = 0; i < len; ++i) {
      const auto& s = held_out[begin + i];
      seqs.push_back({s.anchor, minutes[3 * i]});
      seqs.push_back({s.positive, minutes[3 * i + 1]});
      seqs.push_back({s.negative, minutes[3 * i + 2]});
      for (const auto& [pos, cell] : s.masked_truth) {
        rows.push_back(static_cast<std::int32_t>(3 * i * kHalfLength) + pos);
        truths.push_back(cell);
      }
    }
    BatchForward<float> fwd(params, cfg, seqs, rows);
    const auto& reps = fwd.representations();
    auto cosine = [](const RowVector<float>& a, const RowVector<float>& b) {
      const double na = a.norm(), nb = b.norm();
      return na > 0 && nb > 0 ? static_cast<double>(a.dot(b)) / (na * nb) : 0.0;
    };
    for (std::size_t i = 0; i < len; ++i) {
      const auto r = static_cast<Eigen::Index>(3 * i);
      m.cos_anchor_positive += cosine(reps.row(r), reps.row(r + 1));
      m.cos_anchor_negative += cosine(reps.row(r), reps.row(r + 2));
    }
    const auto& logits = fwd.logits();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      correct += arg == truths[static_cast<std::size_t>(r)];
      majority += majority_cell == truths[static_cast<std::size_t>(r)];
    }
    m.masked_positions += logits.rows();
  }
  m.cos_anchor_positive /= static_cast<double>(held_out.size());
  m.cos_anchor_negative /= static_cast<double>(held_out.size());
  if (m.masked_positions > 0) {
    m.mcp_accuracy = static_cast<double>(correct) / static_cast<double>(m.masked_positions);
    m.majority_accuracy = static_cast<double>(majority) / static_cast<double>(m.masked_positions);
  }
  return m;
}

// ---------------------------------------------------------------- training loop

namespace {

class Adam {
 public:
  Adam(const EncoderParams<float>& shape, double lr) : lr_(lr) {
    m_ = EncoderParams<float>::zeros_shaped_like(shape);
    v_ = EncoderParams<float>::zeros_shaped_like(shape);
  }

  void step(EncoderParams<float>& params, EncoderParams<float>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_), bc2 = 1.0 - std::pow(kBeta2, t_);
    const float step = static_cast<float>(lr_ / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    std::vector<Matrix<float>*> g, m, v;
    grads.for_each([&](const std::string&, Matrix<float>& x) { g.push_back(&x); });
    m_.for_each([&](const std::string&, Matrix<float>& x) { m.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix<float>& x) { v.push_back(&x); });
    std::size_t i = 0;
    params.for_each([&](const std::string&, Matrix<float>& p) {
      auto gi = g[i]->array();
      m[i]->array() = kBeta1 * m[i]->array() + (1.0f - kBeta1) * gi;
      v[i]->array() = kBeta2 * v[i]->array() + (1.0f - kBeta2) * gi.square();
      p.array() -= step * m[i]->array() / ((v[i]->array() * inv_bc2).sqrt() + kEps);
      ++i;
    });
  }

 private:
  static constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kEps = 1e-8f;
  double lr_;
  int t_ = 0;
  EncoderParams<float> m_, v_;
};

double global_norm(EncoderParams<float>& grads) {
  double sq = 0;
  grads.for_each([&](const std::string&, Matrix<float>& g) { sq += g.cast<double>().squaredNorm(); });
  return std::sqrt(sq);
}

void zero(EncoderParams<float>& grads) {
  grads.for_each([](const std::string&, Matrix<float>& g) { g.setZero(); });
}

}  // namespace

TrainResult train(std::span<const TripletSample> samples, const ModelConfig& model, const TrainConfig& cfg,
                  const EncoderParams<float>* initial, const EpochCallback& on_epoch) {
  model.validate();
  cfg.validate();
  if (samples.empty()) throw InputError("train: the triplet corpus is empty");

  TrainResult result;
  EncoderParams<float> params =
      initial ? *initial : EncoderParams<float>::initialize(model, derive_seed({cfg.seed, kTagInit}));
  {
    auto expected = EncoderParams<float>::zeros(model);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    expected.for_each([&](const std::string&, const Matrix<float>& m) { shapes.emplace_back(m.rows(), m.cols()); });
    std::size_t i = 0;
    bool ok = params.layers.size() == expected.layers.size();
    if (ok) {
      params.for_each([&](const std::string&, const Matrix<float>& m) {
        ok = ok && m.rows() == shapes[i].first && m.cols() == shapes[i].second;
        ++i;
      });
    }
    if (!ok) throw InputError("train: initial parameters do not match the model configuration");
  }
  result.params = params;

  auto grads = EncoderParams<float>::zeros_shaped_like(params);
  Adam adam(params, cfg.learning_rate);
  double best = std::numeric_limits<double>::infinity();
  const std::size_t per_epoch = cfg.samples_per_epoch > 0
                                    ? std::min(samples.size(), static_cast<std::size_t>(cfg.samples_per_epoch))
                                    : samples.size();

  for (std::int32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng rng(derive_seed({cfg.seed, kTagEpoch, static_cast<std::uint64_t>(epoch)}));
    std::vector<const TripletSample*> order(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) order[i] = &samples[i];
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(per_epoch);
    auto views = make_views(order, model.mask_rate, rng);

    EpochStats stats;
    stats.epoch = epoch;
    std::int64_t correct = 0, counted = 0;
    bool finite = true;
    for (std::size_t begin = 0; begin < views.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto len = std::min(static_cast<std::size_t>(cfg.batch_size), views.size() - begin);
      zero(grads);
      auto bl = batch_loss<float>(params, model, std::span<const TripletView>(views).subspan(begin, len), &grads,
                                  cfg.micro_batch, cfg.workers);
      const double weight = static_cast<double>(len) / static_cast<double>(views.size());
      stats.triplet += bl.triplet * weight;
      stats.mcp += bl.mcp * weight;
      correct += bl.mcp_correct;
      counted += bl.mcp_count;
      const double norm = global_norm(grads);
      if (!std::isfinite(bl.loss) || !std::isfinite(norm)) {
        finite = false;
        break;
      }
      if (norm > cfg.clip_norm) {
        const float s = static_cast<float>(cfg.clip_norm / norm);
        grads.for_each([&](const std::string&, Matrix<float>& g) { g *= s; });
      }
      adam.step(params, grads);
    }
    stats.loss = stats.triplet + stats.mcp;
    stats.mcp_accuracy = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (!finite || !std::isfinite(stats.loss)) {
      result.report.diverged = true;
      result.report.message = "non-finite loss in epoch " + std::to_string(epoch);
      break;
    }
    result.report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stats.loss < best) {
      best = stats.loss;
      result.report.best_epoch = epoch;
      result.params = params;
    }
    if (epoch >= cfg.min_epochs && epoch - result.report.best_epoch >= cfg.patience) break;
  }
  return result;
}

}  // namespace trajmine
