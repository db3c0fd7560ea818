#include "trajmine/dataset.hpp"

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"

namespace trajmine {

namespace {
constexpr std::string_view kTripletMagic = "TMTRIP01";
constexpr std::string_view kTrajMagic = "TMTRAJ01";
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

std::vector<std::int32_t> TripletSample::mask_positions() const {
  std::vector<std::int32_t> out;
  out.reserve(masked_truth.size());
  for (const auto& [pos, _] : masked_truth) out.push_back(pos);
  return out;
}

std::vector<TokenPair> dedup_filter(const DayLog& log, const WorldConfig& cfg, const Vocabulary& vocab) {
  std::vector<TokenPair> out;
  for (const auto& slot : log.slots) {
    if (!slot) continue;
    auto token = vocab.tokenize(*slot, cfg);
    if (out.empty() || out.back().cell != token.cell) out.push_back(token);
  }
  return out;
}

std::vector<PrepSequence> chunk32(std::span<const TokenPair> tokens) {
  std::vector<PrepSequence> out(tokens.size() / kChunkLength);
  for (std::size_t j = 0; j < out.size(); ++j) {
    std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>(j * kChunkLength), kChunkLength, out[j].begin());
  }
  return out;
}

std::pair<HalfSequence, HalfSequence> split_chunk(const PrepSequence& chunk, SplitMode mode) {
  HalfSequence anchor{}, positive{};
  for (int i = 0; i < kHalfLength; ++i) {
    if (mode == SplitMode::odd_even) {
      anchor[i] = chunk[2 * i];  // 1-based odd positions
      positive[i] = chunk[2 * i + 1];
    } else {
      anchor[i] = chunk[i];
      positive[i] = chunk[kHalfLength + i];
    }
  }
  return {anchor, positive};
}

HalfSequence mask_anchor(const HalfSequence& clean, double rate, Rng& rng, std::map<std::int32_t, std::int32_t>& truth) {
  truth.clear();
  HalfSequence out = clean;
  for (int i = 0; i < kHalfLength; ++i) {
    if (bernoulli(rng, rate)) {
      truth.emplace(i, clean[i].cell);
      out[i] = {Vocabulary::kMask, Vocabulary::kMask};
    }
  }
  return out;
}

std::vector<TripletSample> make_triplets(std::span<const PrepSequence> chunks, double mask_rate, Rng& rng) {
  const auto m = static_cast<std::int32_t>(chunks.size());
  if (m < 2) throw InputError("make_triplets needs at least 2 chunks to draw negatives, got " + std::to_string(m));
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw InputError("mask rate must lie in [0,1]");
  std::vector<TripletSample> out(static_cast<std::size_t>(m));
  for (std::int32_t k = 0; k < m; ++k) {
    auto& s = out[k];
    s.mode = k < m / 2 ? SplitMode::odd_even : SplitMode::half;
    s.source_chunk = k;
    std::int32_t other = uniform_int(rng, 0, m - 2);
    s.negative_chunk = other >= k ? other + 1 : other;
    auto [anchor, positive] = split_chunk(chunks[k], s.mode);
    s.anchor_clean = anchor;
    s.positive = positive;
    s.negative = split_chunk(chunks[s.negative_chunk], s.mode).second;
    s.anchor = mask_anchor(anchor, mask_rate, rng, s.masked_truth);
  }
  return out;
}

std::vector<PrepSequence> prepare_chunks(std::span<const DayLog> logs, const WorldConfig& cfg, const Vocabulary& vocab) {
  std::vector<PrepSequence> out;
  for (const auto& log : logs) {
    auto tokens = dedup_filter(log, cfg, vocab);
    auto chunks = chunk32(tokens);
    out.insert(out.end(), chunks.begin(), chunks.end());
  }
  return out;
}

DownstreamTrajectory build_downstream(const DayLog& log, const WorldConfig& cfg, const Vocabulary& vocab) {
  DownstreamTrajectory t;
  t.player_id = log.player_id;
  t.day = log.day;
  for (int m = 1; m <= kMinutesPerDay; ++m) {
    const auto& slot = log.slots[m - 1];
    if (!slot) continue;
    t.points.push_back({m, *slot, vocab.tokenize(*slot, cfg)});
    t.cells_by_minute[m - 1] = bin_cell(*slot, cfg);
  }
  return t;
}

// ---------------------------------------------------------------- formats

namespace {

void put_half(ByteWriter& w, const HalfSequence& seq) {
  for (const auto& t : seq) {
    w.put<std::int32_t>(t.zone);
    w.put<std::int32_t>(t.cell);
  }
}

HalfSequence get_half(ByteReader& r) {
  HalfSequence seq{};
  for (auto& t : seq) {
    t.zone = r.get<std::int32_t>();
    t.cell = r.get<std::int32_t>();
  }
  return seq;
}

void check_version(ByteReader& r, std::string_view what) {
  if (auto v = r.get<std::uint32_t>(); v != kFormatVersion) {
    throw FormatError("unsupported " + std::string(what) + " version " + std::to_string(v));
  }
}

}  // namespace

std::string serialize_triplets(std::span<const TripletSample> samples) {
  ByteWriter w;
  w.put_bytes(kTripletMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(samples.size());
  for (const auto& s : samples) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.mode));
    w.put<std::int32_t>(s.source_chunk);
    w.put<std::int32_t>(s.negative_chunk);
    put_half(w, s.anchor);
    put_half(w, s.anchor_clean);
    put_half(w, s.positive);
    put_half(w, s.negative);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.masked_truth.size()));
    for (const auto& [pos, cell] : s.masked_truth) {
      w.put<std::uint8_t>(static_cast<std::uint8_t>(pos));
      w.put<std::int32_t>(cell);
    }
  }
  return w.take();
}

std::vector<TripletSample> deserialize_triplets(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kTripletMagic);
  check_version(r, "triplet corpus");
  auto n = r.get<std::uint64_t>();
  std::vector<TripletSample> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t i = 0; i < n; ++i) {
    TripletSample s;
    auto mode = r.get<std::uint8_t>();
    if (mode > 1) throw FormatError("invalid split mode");
    s.mode = static_cast<SplitMode>(mode);
    s.source_chunk = r.get<std::int32_t>();
    s.negative_chunk = r.get<std::int32_t>();
    s.anchor = get_half(r);
    s.anchor_clean = get_half(r);
    s.positive = get_half(r);
    s.negative = get_half(r);
    auto n_mask = r.get<std::uint8_t>();
    for (int k = 0; k < n_mask; ++k) {
      auto pos = r.get<std::uint8_t>();
      if (pos >= kHalfLength) throw FormatError("mask position out of range");
      s.masked_truth.emplace(pos, r.get<std::int32_t>());
    }
    out.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes after triplet corpus");
  return out;
}

void save_triplets(std::span<const TripletSample> samples, const std::filesystem::path& path) {
  write_file(path, serialize_triplets(samples));
}

std::vector<TripletSample> load_triplets(const std::filesystem::path& path) {
  try {
    return deserialize_triplets(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string serialize_trajectories(std::span<const DownstreamTrajectory> trajs) {
  ByteWriter w;
  w.put_bytes(kTrajMagic);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(trajs.size());
  for (const auto& t : trajs) {
    w.put<std::int64_t>(t.player_id);
    w.put<std::int32_t>(t.day);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.points.size()));
    for (const auto& p : t.points) {
      w.put<std::int16_t>(static_cast<std::int16_t>(p.minute));
      w.put<std::int32_t>(p.location.x);
      w.put<std::int32_t>(p.location.y);
      w.put<std::int32_t>(p.location.continent);
      w.put<std::int32_t>(p.token.zone);
      w.put<std::int32_t>(p.token.cell);
    }
  }
  return w.take();
}

std::vector<DownstreamTrajectory> deserialize_trajectories(std::string_view bytes, const WorldConfig& cfg) {
  ByteReader r(bytes);
  r.expect_magic(kTrajMagic);
  check_version(r, "trajectory set");
  auto n = r.get<std::uint64_t>();
  std::vector<DownstreamTrajectory> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    DownstreamTrajectory t;
    t.player_id = r.get<std::int64_t>();
    t.day = r.get<std::int32_t>();
    auto n_points = r.get<std::uint32_t>();
    if (n_points > static_cast<std::uint32_t>(kMinutesPerDay)) throw FormatError("trajectory longer than a day");
    std::int32_t prev = 0;
    for (std::uint32_t k = 0; k < n_points; ++k) {
      TrajectoryPoint p;
      p.minute = r.get<std::int16_t>();
      p.location.x = r.get<std::int32_t>();
      p.location.y = r.get<std::int32_t>();
      p.location.continent = r.get<std::int32_t>();
      p.token.zone = r.get<std::int32_t>();
      p.token.cell = r.get<std::int32_t>();
      if (p.minute <= prev || p.minute > kMinutesPerDay) throw FormatError("trajectory minutes not strictly increasing in [1,1440]");
      prev = p.minute;
      t.cells_by_minute[p.minute - 1] = bin_cell(p.location, cfg);
      t.points.push_back(p);
    }
    out.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after trajectory set");
  return out;
}

void save_trajectories(std::span<const DownstreamTrajectory> trajs, const std::filesystem::path& path) {
  write_file(path, serialize_trajectories(trajs));
}

std::vector<DownstreamTrajectory> load_trajectories(const std::filesystem::path& path, const WorldConfig& cfg) {
  try {
    return deserialize_trajectories(read_file(path), cfg);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace trajmine
