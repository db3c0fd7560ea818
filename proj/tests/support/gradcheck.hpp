#pragma once

// Finite-difference check of the joint training loss on a tiny model.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "trajmine/trainer.hpp"

namespace gradcheck {

struct TensorError {
  std::string name;
  double relative = 0;
};

struct Result {
  std::vector<TensorError> tensors;
  double worst = 0;
  double loss = 0;
};

inline trajmine::ModelConfig tiny_model() {
  trajmine::ModelConfig c;
  c.d_model = 8;
  c.d_hid = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.cell_vocab_size = 5;
  c.zone_vocab_size = 5;
  c.margin = 0.5;
  c.mask_rate = 0.3;
  return c;
}

/// Random triplets over the tiny vocabulary with MASK-aware truths.
inline std::vector<trajmine::TripletSample> random_triplets(std::size_t n, std::uint64_t seed,
                                                            const trajmine::ModelConfig& cfg) {
  using namespace trajmine;
  std::mt19937_64 rng(seed);
  std::vector<PrepSequence> chunks(n + 1);
  for (auto& c : chunks) {
    for (auto& t : c) {
      t.zone = Vocabulary::kReserved + static_cast<int>(rng() % (cfg.zone_vocab_size - Vocabulary::kReserved));
      t.cell = Vocabulary::kReserved + static_cast<int>(rng() % (cfg.cell_vocab_size - Vocabulary::kReserved));
    }
  }
  Rng r(seed + 1);
  auto out = make_triplets(chunks, cfg.mask_rate, r);
  out.resize(n);
  return out;
}

/// Relative error |analytic - numeric| / max(|analytic|, |numeric|) per tensor (Frobenius norms).
inline Result run(std::size_t n_triplets, std::uint64_t seed, double h = 1e-6) {
  using namespace trajmine;
  const auto cfg = tiny_model();
  auto samples = random_triplets(n_triplets, seed, cfg);
  std::vector<const TripletSample*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);
  Rng rng(seed + 2);
  auto views = make_views(ptrs, cfg.mask_rate, rng);
  auto params = EncoderParams<double>::initialize(cfg, seed + 3);

  auto grads = EncoderParams<double>::zeros(cfg);
  Result result;
  result.loss = batch_loss<double>(params, cfg, views, &grads, 5).loss;
  std::vector<Matrix<double>*> analytic;
  grads.for_each([&](const std::string&, Matrix<double>& m) { analytic.push_back(&m); });

  std::size_t idx = 0;
  params.for_each([&](const std::string& name, Matrix<double>& m) {
    const Matrix<double>& a = *analytic[idx++];
    Matrix<double> numeric(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = batch_loss<double>(params, cfg, views, nullptr, 5).loss;
      m.data()[i] = keep - h;
      const double down = batch_loss<double>(params, cfg, views, nullptr, 5).loss;
      m.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double scale = std::max({a.norm(), numeric.norm(), 1e-12});
    const double rel = (a - numeric).norm() / scale;
    result.tensors.push_back({name, rel});
    result.worst = std::max(result.worst, rel);
  });
  return result;
}

}  // namespace gradcheck
