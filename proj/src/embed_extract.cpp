#include "trajmine/embed_extract.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"

namespace trajmine {

namespace {
constexpr std::string_view kRepsMagic = "TMREPS01";
constexpr std::uint32_t kRepsVersion = 1;
}  // namespace

std::string to_string(const PointKey& key) {
  return std::to_string(key.player_id) + "/" + std::to_string(key.day);
}

std::size_t RepresentationTable::index_of(const PointKey& key) const {
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) throw InputError("no representation for player-day " + to_string(key));
  return static_cast<std::size_t>(it - keys.begin());
}

std::string RepresentationTable::serialize() const {
  ByteWriter w;
  w.put_bytes(kRepsMagic);
  w.put<std::uint32_t>(kRepsVersion);
  w.put<std::uint64_t>(keys.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vectors.cols()));
  for (std::size_t i = 0; i < keys.size(); ++i) {
    w.put<std::int64_t>(keys[i].player_id);
    w.put<std::int32_t>(keys[i].day);
    const auto row = static_cast<Eigen::Index>(i);
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(vectors.row(row).data()),
                                 static_cast<std::size_t>(vectors.cols()) * sizeof(float)));
  }
  return w.take();
}

RepresentationTable RepresentationTable::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kRepsMagic);
  if (auto v = r.get<std::uint32_t>(); v != kRepsVersion) {
    throw FormatError("unsupported representation table version " + std::to_string(v));
  }
  const auto n = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint32_t>();
  const std::size_t row_bytes = 12 + static_cast<std::size_t>(dim) * sizeof(float);
  if (dim == 0 || n > r.remaining() / row_bytes) throw FormatError("representation table header is inconsistent");
  RepresentationTable t;
  t.keys.resize(n);
  t.vectors.resize(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    t.keys[i].player_id = r.get<std::int64_t>();
    t.keys[i].day = r.get<std::int32_t>();
    auto raw = r.get_bytes(static_cast<std::size_t>(dim) * sizeof(float));
    std::memcpy(t.vectors.row(static_cast<Eigen::Index>(i)).data(), raw.data(), raw.size());
    if (i > 0 && !(t.keys[i - 1] < t.keys[i])) throw FormatError("representation keys are not strictly increasing");
  }
  if (!r.done()) throw FormatError("trailing bytes after the representation table");
  return t;
}

void RepresentationTable::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

RepresentationTable RepresentationTable::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string RepresentationTable::to_csv() const {
  std::string out = "player_id,day";
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) out += ",v" + std::to_string(j);
  out += '\n';
  char buf[32];
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out += std::to_string(keys[i].player_id) + "," + std::to_string(keys[i].day);
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, vectors(static_cast<Eigen::Index>(i), j));
      out += ',';
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

std::string ExtractResult::skipped_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : skipped) {
    arr.push_back({{"player_id", s.key.player_id}, {"day", s.key.day}, {"code", s.code}, {"reason", s.reason}});
  }
  return nlohmann::json{{"version", 1}, {"skipped", arr}}.dump(1);
}

Extractor::Extractor(const Checkpoint& checkpoint, const Vocabulary& vocab) : checkpoint_(&checkpoint) {
  checkpoint.config.validate();
  checkpoint.require_vocabulary(vocab);
}

RowVector<float> Extractor::extract(const DownstreamTrajectory& traj) const {
  if (traj.points.empty()) {
    throw EmptyTrajectoryError("player " + std::to_string(traj.player_id) + " day " + std::to_string(traj.day) +
                               " has no online minutes");
  }
  std::vector<TokenPair> tokens;
  std::vector<std::int32_t> minutes;
  tokens.reserve(traj.points.size());
  minutes.reserve(traj.points.size());
  for (const auto& p : traj.points) {
    if (!minutes.empty() && p.minute <= minutes.back()) {
      throw InputError("trajectory minutes must be strictly increasing");
    }
    tokens.push_back(p.token);
    minutes.push_back(p.minute);
  }
  const auto& ck = *checkpoint_;
  auto out = encode(ck.params, ck.config, embed_sequence(ck.params, ck.config, {tokens, minutes}));
  auto rep = represent(ck.params, out);
  if (!rep.allFinite()) throw NumericError("non-finite representation for player " + std::to_string(traj.player_id));
  return rep;
}

ExtractResult Extractor::extract_all(std::span<const DownstreamTrajectory> trajs, std::int32_t workers) const {
  if (workers < 1) throw InputError("extract_all: workers must be >= 1");
  const std::size_t n = trajs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key_of = [&](std::size_t i) { return PointKey{trajs[i].player_id, trajs[i].day}; };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key_of(a) < key_of(b); });
  for (std::size_t i = 1; i < n; ++i) {
    if (key_of(order[i - 1]) == key_of(order[i])) {
      throw InputError("duplicate trajectory for player-day " + to_string(key_of(order[i])));
    }
  }

  const auto dim = checkpoint_->config.d_model;
  std::vector<RowVector<float>> reps(n);
  std::vector<std::optional<SkipRecord>> skips(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      const auto i = order[k];
      try {
        reps[k] = extract(trajs[i]);
      } catch (const Error& e) {
        skips[k] = SkipRecord{key_of(i), e.code(), e.what()};
      } catch (const std::exception& e) {
        skips[k] = SkipRecord{key_of(i), "internal", e.what()};
      }
    }
  };
  const auto nw = std::min<std::size_t>(static_cast<std::size_t>(workers), std::max<std::size_t>(n, 1));
  if (nw <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  ExtractResult result;
  std::size_t kept = 0;
  for (std::size_t k = 0; k < n; ++k) kept += !skips[k].has_value();
  result.table.vectors.resize(static_cast<Eigen::Index>(kept), dim);
  std::size_t row = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (skips[k]) {
      result.skipped.push_back(*skips[k]);
      continue;
    }
    result.table.keys.push_back(key_of(order[k]));
    result.table.vectors.row(static_cast<Eigen::Index>(row++)) = reps[k];
  }
  return result;
}

}  // namespace trajmine
