#include <doctest.h>

#include <filesystem>
#include <random>

#include "../support/oracles.hpp"
#include "trajmine/dataset.hpp"
#include "trajmine/error.hpp"

using namespace trajmine;

namespace {

WorldConfig line_world() {
  WorldConfig w;
  w.continents = {{0, 8 * 4096, 8, 1.0}};
  return w;
}

/// Location inside cell `c` of the single-row test world.
GridLocation in_cell(int c, int dx = 0) { return {c * 8 + dx, 0, 0}; }

Vocabulary cells_vocab(int n) {
  Vocabulary v(256, 8);
  for (int c = 0; c < n; ++c) {
    v.add_zone(ZoneId{c * 8 / 256, 0, 0});
    v.add_cell(CellId{c, 0, 0});
  }
  return v;
}

PrepSequence numbered_chunk(int base) {
  PrepSequence c{};
  for (int i = 0; i < kChunkLength; ++i) c[i] = {base, base * 100 + i + 1};
  return c;
}

}  // namespace

TEST_CASE("dedup_filter examples") {
  auto w = line_world();
  auto v = cells_vocab(8);
  DayLog log;
  const int cells[] = {0, 0, 0, 1, 1, 0};
  for (int m = 0; m < 6; ++m) log.slots[m] = in_cell(cells[m], m % 3);
  auto out = dedup_filter(log, w, v);
  REQUIRE(out.size() == 3);
  CHECK(out[0].cell == v.cell_token(CellId{0, 0, 0}));
  CHECK(out[1].cell == v.cell_token(CellId{1, 0, 0}));
  CHECK(out[2].cell == v.cell_token(CellId{0, 0, 0}));

  DayLog single;
  single.slots[500] = in_cell(3);
  CHECK(dedup_filter(single, w, v).size() == 1);
  CHECK(dedup_filter(DayLog{}, w, v).empty());
}

TEST_CASE("dedup_filter matches the oracle on randomized logs") {
  auto w = line_world();
  auto v = cells_vocab(6);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    DayLog log;
    std::vector<std::optional<int>> cells(kMinutesPerDay);
    const double offline = (rng() % 100) / 100.0;
    for (int m = 0; m < kMinutesPerDay; ++m) {
      if (std::uniform_real_distribution<>(0, 1)(rng) < offline) continue;
      int c = static_cast<int>(rng() % 6);
      cells[m] = c;
      log.slots[m] = in_cell(c, static_cast<int>(rng() % 8));
    }
    auto got = dedup_filter(log, w, v);
    auto kept = oracle::dedup_indices(cells);
    REQUIRE(got.size() == kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      REQUIRE(got[i].cell == v.cell_token(CellId{*cells[kept[i]], 0, 0}));
      if (i > 0) REQUIRE(got[i].cell != got[i - 1].cell);
    }
  }
}

TEST_CASE("chunk32 windows") {
  std::vector<TokenPair> t(70);
  for (int i = 0; i < 70; ++i) t[i] = {0, i};
  auto c = chunk32(t);
  REQUIRE(c.size() == 2);
  CHECK(c[0][0].cell == 0);
  CHECK(c[1][0].cell == 32);
  CHECK(c[1][31].cell == 63);
  CHECK(chunk32(std::span(t).first(31)).empty());
  auto c64 = chunk32(std::span(t).first(64));
  REQUIRE(c64.size() == 2);
  CHECK(c64[1][31].cell == 63);
}

TEST_CASE("make_triplets small-M trace") {
  std::vector<PrepSequence> chunks{numbered_chunk(1), numbered_chunk(2)};
  Rng rng(1);
  auto t = make_triplets(chunks, 0.2, rng);
  REQUIRE(t.size() == 2);
  CHECK(t[0].mode == SplitMode::odd_even);
  CHECK(t[1].mode == SplitMode::half);
  CHECK(t[0].negative_chunk == 1);
  CHECK(t[1].negative_chunk == 0);
  // Negative = the other chunk's positive under the sample's own mode.
  CHECK(t[0].negative == split_chunk(chunks[1], SplitMode::odd_even).second);
  CHECK(t[1].negative == split_chunk(chunks[0], SplitMode::half).second);

  std::vector<PrepSequence> one{numbered_chunk(1)};
  CHECK_THROWS_AS(make_triplets(one, 0.2, rng), InputError);
}

TEST_CASE("mask rate extremes") {
  std::vector<PrepSequence> chunks{numbered_chunk(1), numbered_chunk(2), numbered_chunk(3)};
  Rng rng(5);
  for (const auto& s : make_triplets(chunks, 0.0, rng)) {
    CHECK(s.masked_truth.empty());
    CHECK(s.anchor == s.anchor_clean);
  }
  for (const auto& s : make_triplets(chunks, 1.0, rng)) {
    CHECK(s.masked_truth.size() == kHalfLength);
    for (const auto& tok : s.anchor) CHECK(tok == TokenPair{Vocabulary::kMask, Vocabulary::kMask});
  }
}

TEST_CASE("triplets match the hand-traced split oracle") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 2 + static_cast<int>(gen() % 9);
    std::vector<PrepSequence> chunks;
    for (int k = 0; k < m; ++k) {
      PrepSequence c{};
      for (auto& tok : c) tok = {3 + static_cast<int>(gen() % 50), 3 + static_cast<int>(gen() % 500)};
      chunks.push_back(c);
    }
    Rng rng(gen());
    const double rate = (gen() % 2) ? 0.2 : 0.3;
    auto samples = make_triplets(chunks, rate, rng);
    REQUIRE(samples.size() == static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
      const auto& s = samples[k];
      const bool odd_even = k < m / 2;
      REQUIRE((s.mode == SplitMode::odd_even) == odd_even);
      auto [apos, ppos] = oracle::split_positions(odd_even);
      for (int i = 0; i < kHalfLength; ++i) {
        REQUIRE(s.anchor_clean[i] == chunks[k][apos[i] - 1]);
        REQUIRE(s.positive[i] == chunks[k][ppos[i] - 1]);
        REQUIRE(s.negative[i] == chunks[s.negative_chunk][ppos[i] - 1]);
      }
      REQUIRE(s.negative_chunk != k);
      // Masked positions carry MASK in both tables and their original cell in the truth map.
      int masked = 0;
      for (int i = 0; i < kHalfLength; ++i) {
        if (s.anchor[i] == TokenPair{Vocabulary::kMask, Vocabulary::kMask}) {
          ++masked;
          REQUIRE(s.masked_truth.at(i) == s.anchor_clean[i].cell);
        } else {
          REQUIRE(s.anchor[i] == s.anchor_clean[i]);
          REQUIRE(!s.masked_truth.count(i));
        }
      }
      REQUIRE(masked == static_cast<int>(s.masked_truth.size()));
      if (odd_even) {
        PrepSequence rebuilt{};
        for (int i = 0; i < kHalfLength; ++i) {
          rebuilt[2 * i] = s.anchor_clean[i];
          rebuilt[2 * i + 1] = s.positive[i];
        }
        REQUIRE(rebuilt == chunks[k]);
      }
    }
  }
}

TEST_CASE("negative sampling is uniform over the other chunks") {
  const int m = 6;
  std::vector<PrepSequence> chunks;
  for (int k = 0; k < m; ++k) chunks.push_back(numbered_chunk(k + 1));
  Rng rng(99);
  std::vector<int> counts(m, 0);
  const int rounds = 6000;
  for (int r = 0; r < rounds; ++r) {
    auto s = make_triplets(chunks, 0.0, rng);
    ++counts[s[2].negative_chunk];
  }
  CHECK(counts[2] == 0);
  const double expected = rounds / double(m - 1);
  double chi2 = 0;
  for (int k = 0; k < m; ++k) {
    if (k != 2) chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  CHECK(chi2 < 18.47);  // chi-square(4) at p = 0.001
}

TEST_CASE("build_downstream keeps every online minute") {
  auto w = line_world();
  auto v = cells_vocab(4);
  DayLog log;
  log.player_id = 42;
  log.day = 2;
  log.slots[0] = in_cell(0);
  log.slots[1] = in_cell(0, 3);
  log.slots[2] = in_cell(1);
  auto t = build_downstream(log, w, v);
  REQUIRE(t.points.size() == 3);
  CHECK(t.player_id == 42);
  CHECK(t.day == 2);
  CHECK(t.points[0].minute == 1);
  CHECK(t.points[1].minute == 2);
  CHECK(t.points[2].minute == 3);
  CHECK(t.points[0].token == t.points[1].token);
  CHECK(t.points[2].token.cell == v.cell_token(CellId{1, 0, 0}));
  CHECK(t.cells_by_minute[0] == CellId{0, 0, 0});
  CHECK(!t.cells_by_minute[3].has_value());

  DayLog full;
  for (auto& s : full.slots) s = in_cell(2);
  CHECK(build_downstream(full, w, v).points.size() == kMinutesPerDay);
  CHECK(build_downstream(DayLog{}, w, v).empty());
}

TEST_CASE("triplet and trajectory containers round trip") {
  std::vector<PrepSequence> chunks{numbered_chunk(1), numbered_chunk(2), numbered_chunk(3)};
  Rng rng(4);
  auto samples = make_triplets(chunks, 0.3, rng);
  auto bytes = serialize_triplets(samples);
  CHECK(deserialize_triplets(bytes) == samples);
  CHECK_THROWS_AS(deserialize_triplets(bytes.substr(0, 20)), FormatError);
  CHECK_THROWS_AS(deserialize_triplets("XXXXXXXX"), FormatError);

  auto w = line_world();
  auto v = cells_vocab(4);
  DayLog log;
  log.player_id = 7;
  log.slots[10] = in_cell(2, 5);
  log.slots[1439] = in_cell(3);
  std::vector<DownstreamTrajectory> trajs{build_downstream(log, w, v), build_downstream(DayLog{}, w, v)};
  auto tbytes = serialize_trajectories(trajs);
  CHECK(deserialize_trajectories(tbytes, w) == trajs);

  auto dir = std::filesystem::temp_directory_path() / "trajmine_dataset_test";
  save_triplets(samples, dir / "t.bin");
  CHECK(load_triplets(dir / "t.bin") == samples);
  save_trajectories(trajs, dir / "traj.bin");
  CHECK(load_trajectories(dir / "traj.bin", w) == trajs);
  std::filesystem::remove_all(dir);
}
