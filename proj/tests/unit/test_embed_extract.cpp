#include <doctest.h>

#include <filesystem>

#include "trajmine/embed_extract.hpp"
#include "trajmine/error.hpp"
#include "trajmine/synthetic_world.hpp"

using namespace trajmine;

namespace {

struct Fixture {
  WorldConfig world = WorldConfig::default_world();
  Vocabulary vocab;
  std::vector<DownstreamTrajectory> trajs;
  Checkpoint ckpt;

  Fixture() {
    ScenarioConfig sc;
    sc.n_benign = 6;
    sc.n_groups = 1;
    sc.n_days = 1;
    auto sim = simulate(world, sc, 7);
    std::vector<std::vector<GridLocation>> locs;
    for (const auto& l : sim.logs) locs.push_back(l.online_locations());
    vocab = build_vocabulary(locs, world);
    for (const auto& l : sim.logs) trajs.push_back(build_downstream(l, world, vocab));
    ckpt.config.d_model = 8;
    ckpt.config.d_hid = 16;
    ckpt.config.n_layers = 1;
    ckpt.config.n_heads = 2;
    ckpt.config.cell_vocab_size = vocab.cell_vocab_size();
    ckpt.config.zone_vocab_size = vocab.zone_vocab_size();
    ckpt.params = EncoderParams<float>::initialize(ckpt.config, 3);
    ckpt.vocab_fingerprint = vocab.fingerprint();
  }
};

}  // namespace

TEST_CASE("extract_all returns one sorted row per non-empty trajectory") {
  Fixture f;
  Extractor ex(f.ckpt, f.vocab);
  auto r = ex.extract_all(f.trajs);
  std::size_t non_empty = 0;
  for (const auto& t : f.trajs) non_empty += !t.empty();
  CHECK(r.table.size() == non_empty);
  CHECK(r.table.dim() == 8);
  CHECK(std::is_sorted(r.table.keys.begin(), r.table.keys.end()));
  CHECK(r.table.vectors.allFinite());
}

TEST_CASE("empty trajectories become skip records") {
  Fixture f;
  DownstreamTrajectory empty;
  empty.player_id = 999;
  f.trajs.push_back(empty);
  Extractor ex(f.ckpt, f.vocab);
  CHECK_THROWS_AS(ex.extract(empty), EmptyTrajectoryError);
  auto r = ex.extract_all(f.trajs);
  REQUIRE(r.skipped.size() >= 1);
  CHECK(r.skipped.back().key == PointKey{999, 1});
  CHECK(r.skipped.back().code == EmptyTrajectoryError("").code());
  CHECK_THROWS_AS(r.table.index_of({999, 1}), InputError);
  CHECK(r.skipped_json().find("999") != std::string::npos);
}

TEST_CASE("parallel extraction is bitwise identical to serial and input-order independent") {
  Fixture f;
  Extractor ex(f.ckpt, f.vocab);
  auto serial = ex.extract_all(f.trajs, 1);
  auto parallel = ex.extract_all(f.trajs, 4);
  CHECK(serial.table == parallel.table);
  std::vector<DownstreamTrajectory> reversed(f.trajs.rbegin(), f.trajs.rend());
  CHECK(ex.extract_all(reversed, 2).table == serial.table);
  CHECK(ex.extract_all(f.trajs, 1).table == serial.table);
}

TEST_CASE("single-minute trajectory yields a finite representation") {
  Fixture f;
  DownstreamTrajectory one = f.trajs.front();
  one.points.resize(1);
  Extractor ex(f.ckpt, f.vocab);
  CHECK(ex.extract(one).allFinite());
}

TEST_CASE("duplicate keys and foreign vocabularies are rejected") {
  Fixture f;
  Extractor ex(f.ckpt, f.vocab);
  auto dup = f.trajs;
  dup.push_back(f.trajs.front());
  CHECK_THROWS_AS(ex.extract_all(dup), InputError);
  Vocabulary other = f.vocab;
  other.add_cell(CellId{12345, 0, 0});
  CHECK_THROWS_AS(Extractor(f.ckpt, other), InputError);
}

TEST_CASE("representation table binary and csv round trips") {
  Fixture f;
  Extractor ex(f.ckpt, f.vocab);
  auto t = ex.extract_all(f.trajs).table;
  CHECK(RepresentationTable::deserialize(t.serialize()) == t);
  auto path = std::filesystem::temp_directory_path() / "trajmine_reps_test.bin";
  t.save(path);
  CHECK(RepresentationTable::load(path) == t);
  std::filesystem::remove(path);

  auto csv = t.to_csv();
  CHECK(csv.rfind("player_id,day,v0,", 0) == 0);
  // Each float must parse back to the identical value.
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < t.size(); ++i) {
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    CHECK(std::stoll(field) == t.keys[i].player_id);
    std::getline(row, field, ',');
    CHECK(std::stoi(field) == t.keys[i].day);
    for (int j = 0; j < t.dim(); ++j) {
      std::getline(row, field, ',');
      CHECK(std::strtof(field.c_str(), nullptr) == t.vectors(static_cast<Eigen::Index>(i), j));
    }
  }

  auto bytes = t.serialize();
  CHECK_THROWS_AS(RepresentationTable::deserialize(bytes.substr(0, bytes.size() - 1)), FormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(RepresentationTable::deserialize(bytes), FormatError);
}
