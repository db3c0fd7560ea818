#include "trajmine/geo.hpp"

#include <algorithm>
#include <sstream>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/kv_config.hpp"

namespace trajmine {

namespace {
constexpr std::string_view kVocabMagic = "TMVOCAB1";
constexpr std::uint32_t kVocabVersion = 1;
constexpr std::int32_t kMaxBins = 1 << 21;
}  // namespace

void WorldConfig::validate() const {
  if (continents.empty()) throw ConfigError("world has no continents");
  if (cell_size <= 0 || zone_size <= 0) throw ConfigError("zone_size and cell_size must be positive");
  if (zone_size % cell_size != 0) throw ConfigError("zone_size must be a multiple of cell_size");
  for (std::size_t i = 0; i < continents.size(); ++i) {
    const auto& c = continents[i];
    if (c.id < 0) throw ConfigError("continent id must be >= 0");
    if (c.width <= 0 || c.height <= 0) {
      throw ConfigError("continent " + std::to_string(c.id) + " must have positive width and height");
    }
    if (c.width / cell_size >= kMaxBins || c.height / cell_size >= kMaxBins) {
      throw ConfigError("continent " + std::to_string(c.id) + " is too large for the cell size");
    }
    if (!(c.avg_level >= 0.0)) throw ConfigError("continent " + std::to_string(c.id) + " has negative avg_level");
    for (std::size_t j = 0; j < i; ++j) {
      if (continents[j].id == c.id) throw ConfigError("duplicate continent id " + std::to_string(c.id));
    }
  }
}

bool WorldConfig::has_continent(std::int32_t id) const {
  return std::any_of(continents.begin(), continents.end(), [id](const Continent& c) { return c.id == id; });
}

const Continent& WorldConfig::continent(std::int32_t id) const {
  for (const auto& c : continents) {
    if (c.id == id) return c;
  }
  throw InputError("continent_id " + std::to_string(id) + " is not declared in the world config");
}

double WorldConfig::max_level() const {
  double m = 0.0;
  for (const auto& c : continents) m = std::max(m, c.avg_level);
  return m;
}

WorldConfig WorldConfig::parse(std::string_view text) {
  WorldConfig cfg;
  for (const auto& [key, value] : KeyValueFile::parse(text).entries) {
    if (key == "zone_size") {
      cfg.zone_size = static_cast<std::int32_t>(parse_int(key, value));
    } else if (key == "cell_size") {
      cfg.cell_size = static_cast<std::int32_t>(parse_int(key, value));
    } else if (key == "continent") {
      std::istringstream ss(value);
      Continent c;
      if (!(ss >> c.id >> c.width >> c.height >> c.avg_level) || !(ss >> std::ws).eof()) {
        throw ConfigError("continent entry must be 'id width height avg_level', got '" + value + "'");
      }
      cfg.continents.push_back(c);
    } else {
      throw ConfigError("unknown world config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

WorldConfig WorldConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string WorldConfig::to_text() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "zone_size = " << zone_size << "\n";
  ss << "cell_size = " << cell_size << "\n";
  for (const auto& c : continents) {
    ss << "continent = " << c.id << ' ' << c.width << ' ' << c.height << ' ' << c.avg_level << "\n";
  }
  return ss.str();
}

void WorldConfig::save(const std::filesystem::path& path) const { write_file(path, to_text()); }

WorldConfig WorldConfig::default_world() {
  WorldConfig w;
  w.continents = {
      {0, 2048, 2048, 20.0},  // main continent, hosts the villages
      {1, 512, 512, 35.0},  {2, 512, 512, 45.0}, {3, 512, 512, 55.0},
      {4, 512, 512, 65.0},  {5, 256, 256, 75.0}, {6, 256, 256, 85.0},
  };
  return w;
}

void validate_location(const GridLocation& loc, const WorldConfig& cfg) {
  if (loc.continent < 0 || !cfg.has_continent(loc.continent)) {
    throw InputError("continent_id " + std::to_string(loc.continent) + " is not declared in the world config");
  }
  const auto& c = cfg.continent(loc.continent);
  if (loc.x < 0 || loc.x >= c.width) {
    throw InputError("x=" + std::to_string(loc.x) + " outside [0," + std::to_string(c.width) + ") of continent " +
                     std::to_string(c.id));
  }
  if (loc.y < 0 || loc.y >= c.height) {
    throw InputError("y=" + std::to_string(loc.y) + " outside [0," + std::to_string(c.height) + ") of continent " +
                     std::to_string(c.id));
  }
}

ZoneId bin_zone(const GridLocation& loc, const WorldConfig& cfg) {
  validate_location(loc, cfg);
  return {loc.x / cfg.zone_size, loc.y / cfg.zone_size, loc.continent};
}

CellId bin_cell(const GridLocation& loc, const WorldConfig& cfg) {
  validate_location(loc, cfg);
  return {loc.x / cfg.cell_size, loc.y / cfg.cell_size, loc.continent};
}

std::int32_t Vocabulary::zone_token(const ZoneId& zone) const {
  auto it = zone_index_.find(zone.packed());
  return it == zone_index_.end() ? kUnk : it->second;
}

std::int32_t Vocabulary::cell_token(const CellId& cell) const {
  auto it = cell_index_.find(cell.packed());
  return it == cell_index_.end() ? kUnk : it->second;
}

TokenPair Vocabulary::tokenize(const GridLocation& loc, const WorldConfig& cfg) const {
  return {zone_token(bin_zone(loc, cfg)), cell_token(bin_cell(loc, cfg))};
}

std::int32_t Vocabulary::add_zone(const ZoneId& zone) {
  auto [it, inserted] = zone_index_.try_emplace(zone.packed(), zone_vocab_size());
  if (inserted) zones_.push_back(zone);
  return it->second;
}

std::int32_t Vocabulary::add_cell(const CellId& cell) {
  auto [it, inserted] = cell_index_.try_emplace(cell.packed(), cell_vocab_size());
  if (inserted) cells_.push_back(cell);
  return it->second;
}

std::string Vocabulary::serialize() const {
  ByteWriter w;
  w.put_bytes(kVocabMagic);
  w.put<std::uint32_t>(kVocabVersion);
  w.put<std::int32_t>(zone_size_);
  w.put<std::int32_t>(cell_size_);
  w.put<std::int32_t>(kReserved);
  auto put_table = [&w](const auto& table) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(table.size()));
    for (const auto& e : table) {
      w.put<std::int32_t>(e.bx);
      w.put<std::int32_t>(e.by);
      w.put<std::int32_t>(e.continent);
    }
  };
  put_table(zones_);
  put_table(cells_);
  return w.take();
}

Vocabulary Vocabulary::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic(kVocabMagic);
  if (auto v = r.get<std::uint32_t>(); v != kVocabVersion) {
    throw FormatError("unsupported vocabulary version " + std::to_string(v));
  }
  auto zone_size = r.get<std::int32_t>();
  auto cell_size = r.get<std::int32_t>();
  if (r.get<std::int32_t>() != kReserved) throw FormatError("vocabulary reserved-token count mismatch");
  Vocabulary vocab(zone_size, cell_size);
  auto n_zones = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_zones; ++i) {
    ZoneId z{r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>()};
    if (vocab.add_zone(z) != kReserved + static_cast<std::int32_t>(i)) throw FormatError("duplicate zone entry");
  }
  auto n_cells = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_cells; ++i) {
    CellId c{r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>()};
    if (vocab.add_cell(c) != kReserved + static_cast<std::int32_t>(i)) throw FormatError("duplicate cell entry");
  }
  if (!r.done()) throw FormatError("trailing bytes after vocabulary");
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a64(serialize()); }

Vocabulary build_vocabulary(std::span<const std::vector<GridLocation>> trajectories, const WorldConfig& cfg) {
  Vocabulary vocab(cfg.zone_size, cfg.cell_size);
  bool any = false;
  for (const auto& traj : trajectories) {
    for (const auto& loc : traj) {
      vocab.add_zone(bin_zone(loc, cfg));
      vocab.add_cell(bin_cell(loc, cfg));
      any = true;
    }
  }
  if (!any) throw InputError("cannot build a vocabulary from empty training trajectories");
  return vocab;
}

}  // namespace trajmine
