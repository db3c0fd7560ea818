#include "trajmine/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <png.h>

#include <json.hpp>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

namespace {

std::uint8_t channel(double fraction) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(fraction, 0.0, 1.0)));
}

/// Per-minute colors of one trajectory, computed once per row.
std::vector<Rgb> row_colors(const DownstreamTrajectory& traj, const WorldConfig& world) {
  std::vector<Rgb> out(kMinutesPerDay, kOfflineColor);
  for (const auto& p : traj.points) out[static_cast<std::size_t>(p.minute - 1)] = color_of(p.location, world);
  return out;
}

class Canvas {
 public:
  Canvas(std::int32_t logical_rows, const HeatmapOptions& opts) : opts_(opts) {
    image_.width = kMinutesPerDay * opts.x_scale;
    image_.height = logical_rows * opts.y_scale;
    image_.rgb.assign(static_cast<std::size_t>(image_.width) * image_.height * 3, 0);
  }

  void fill_row(std::int32_t row, std::span<const Rgb> minute_colors) {
    for (std::int32_t dy = 0; dy < opts_.y_scale; ++dy) {
      auto* px = &image_.rgb[static_cast<std::size_t>(row * opts_.y_scale + dy) * image_.width * 3];
      for (std::size_t m = 0; m < minute_colors.size(); ++m) {
        for (std::int32_t dx = 0; dx < opts_.x_scale; ++dx) {
          std::copy(minute_colors[m].begin(), minute_colors[m].end(), px);
          px += 3;
        }
      }
    }
  }

  void fill_separator(std::int32_t row) {
    const std::vector<Rgb> red(kMinutesPerDay, kSeparatorColor);
    for (int r = 0; r < kSeparatorRows; ++r) fill_row(row + r, red);
  }

  Image take() { return std::move(image_); }

 private:
  HeatmapOptions opts_;
  Image image_;
};

using Group = std::pair<std::int32_t, std::vector<PointKey>>;

Heatmap draw_groups(const std::vector<Group>& groups, const std::map<PointKey, const DownstreamTrajectory*>& by_key,
                    const WorldConfig& world, const HeatmapOptions& opts) {
  std::int32_t rows = 0;
  for (const auto& g : groups) rows += static_cast<std::int32_t>(g.second.size());
  if (rows == 0) throw InputError("heatmap: nothing to draw");
  rows += kSeparatorRows * static_cast<std::int32_t>(groups.size() - 1);

  Canvas canvas(rows, opts);
  Heatmap out;
  std::int32_t row = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (g > 0) {
      canvas.fill_separator(row);
      row += kSeparatorRows;
    }
    for (const auto& key : groups[g].second) {
      auto it = by_key.find(key);
      if (it == by_key.end()) throw InputError("heatmap: no trajectory for player-day " + to_string(key));
      canvas.fill_row(row, row_colors(*it->second, world));
      out.rows.push_back({row, key, groups[g].first});
      ++row;
    }
  }
  out.image = canvas.take();
  return out;
}

std::map<PointKey, const DownstreamTrajectory*> index_trajectories(std::span<const DownstreamTrajectory> trajs) {
  std::map<PointKey, const DownstreamTrajectory*> by_key;
  for (const auto& t : trajs) by_key[{t.player_id, t.day}] = &t;
  return by_key;
}

}  // namespace

Rgb color_of(const std::optional<GridLocation>& loc, const WorldConfig& world) {
  if (!loc) return kOfflineColor;
  const auto& c = world.continent(loc->continent);
  double lo = c.avg_level, hi = c.avg_level;
  for (const auto& other : world.continents) {
    lo = std::min(lo, other.avg_level);
    hi = std::max(hi, other.avg_level);
  }
  const double level = hi > lo ? (c.avg_level - lo) / (hi - lo) : 0.0;
  return {channel(level), channel(static_cast<double>(loc->x) / c.width), channel(static_cast<double>(loc->y) / c.height)};
}

Rgb Image::pixel(std::int32_t x, std::int32_t y) const {
  if (x < 0 || x >= width || y < 0 || y >= height) throw InputError("pixel out of range");
  const auto* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  return {p[0], p[1], p[2]};
}

void HeatmapOptions::validate() const {
  if (x_scale < 1 || x_scale > 16) throw ConfigError("x_scale must be in [1,16]");
  if (y_scale < 1 || y_scale > 64) throw ConfigError("y_scale must be in [1,64]");
}

std::string Heatmap::sidecar_json(const HeatmapOptions& opts) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"row", r.row}, {"player_id", r.key.player_id}, {"day", r.key.day}, {"cluster", r.cluster}});
  }
  return nlohmann::json{{"version", 1},
                        {"width", image.width},
                        {"height", image.height},
                        {"x_scale", opts.x_scale},
                        {"y_scale", opts.y_scale},
                        {"rows", arr}}
      .dump(1);
}

HeatmapSet rasterize(const ClusterAssignment& assignment, std::span<const DownstreamTrajectory> trajs,
                     const WorldConfig& world, const HeatmapOptions& opts) {
  opts.validate();
  if (assignment.keys.empty()) throw InputError("heatmap: the assignment has no players");
  const auto by_key = index_trajectories(trajs);
  std::vector<Group> groups;
  auto clusters = assignment.clusters();
  for (std::size_t c = 0; c < clusters.size(); ++c) groups.emplace_back(static_cast<std::int32_t>(c), clusters[c]);
  auto noise = assignment.noise();

  HeatmapSet out;
  if (!opts.separate_noise && !noise.empty()) groups.emplace_back(kNoise, noise);
  if (!groups.empty()) out.clusters = draw_groups(groups, by_key, world, opts);
  if (opts.separate_noise && !noise.empty()) out.noise = draw_groups({{kNoise, noise}}, by_key, world, opts);
  return out;
}

Heatmap rasterize_rows(std::span<const PointKey> keys, std::int32_t cluster, std::span<const DownstreamTrajectory> trajs,
                       const WorldConfig& world, const HeatmapOptions& opts) {
  opts.validate();
  std::vector<PointKey> sorted(keys.begin(), keys.end());
  std::sort(sorted.begin(), sorted.end());
  return draw_groups({{cluster, sorted}}, index_trajectories(trajs), world, opts);
}

std::string encode_png(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw InputError("encode_png: empty image");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("png encoding failed: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
    throw IoError(std::string("png encoding failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(std::string_view bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png decoding failed: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = static_cast<std::int32_t>(img.width);
  out.height = static_cast<std::int32_t>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(std::string("png decoding failed: ") + img.message);
  }
  return out;
}

std::string encode_ppm(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw InputError("encode_ppm: empty image");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_heatmap(const Heatmap& heatmap, const HeatmapOptions& opts, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    write_file(path, encode_png(heatmap.image));
  } else if (ext == ".ppm") {
    write_file(path, encode_ppm(heatmap.image));
  } else {
    throw InputError("heatmap output must end in .png or .ppm: " + path.string());
  }
  write_file(path.string() + ".rows.json", heatmap.sidecar_json(opts));
}

std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const HeatmapOptions& opts,
                                                  const std::filesystem::path& path) {
  std::vector<std::filesystem::path> written;
  if (set.clusters) {
    write_heatmap(*set.clusters, opts, path);
    written.push_back(path);
  }
  if (set.noise) {
    auto noise_path = path.parent_path() / (path.stem().string() + "_noise" + path.extension().string());
    write_heatmap(*set.noise, opts, noise_path);
    written.push_back(noise_path);
  }
  return written;
}

}  // namespace trajmine
