#pragma once

// A reduced end-to-end run built through the stage functions, shared by the
// pipeline and service tests.

#include <filesystem>
#include <sstream>

#include "trajmine/io.hpp"
#include "trajmine/pipeline.hpp"

namespace small_run {

namespace fs = std::filesystem;

inline void write_tiny_configs(const fs::path& dir) {
  trajmine::write_file(dir / "scenario.in.cfg",
                       "n_benign = 20\nn_groups = 3\ngroup_size_min = 4\ngroup_size_max = 5\nn_days = 1\n");
  trajmine::write_file(dir / "model.in.cfg", "d_model = 8\nd_hid = 16\nn_layers = 1\nn_heads = 2\n");
}

/// Runs simulate -> prep -> train -> embed into `dir`; returns the log text.
inline std::string build(const fs::path& dir, std::uint64_t seed = 11) {
  using namespace trajmine;
  std::ostringstream log;
  fs::create_directories(dir);
  write_tiny_configs(dir);
  run_simulate({dir / "scenario.in.cfg", std::nullopt, seed, dir}, log);
  run_prep({dir / layout::kLogs, dir / layout::kWorld, 0.2, 1, dir}, log);
  TrainOptions t;
  t.data = dir;
  t.preset = "custom";
  t.model_config = dir / "model.in.cfg";
  t.train.max_epochs = 2;
  t.train.min_epochs = 2;
  t.train.samples_per_epoch = 48;
  t.train.batch_size = 16;
  t.out = dir;
  run_train(t, log);
  run_embed({dir / layout::kModel, dir, dir / layout::kReps, 1}, log);
  return log.str();
}

/// Shared run under the temp directory, built on first use.
inline const fs::path& shared() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "trajmine_small_run";
    fs::remove_all(d);
    build(d);
    return d;
  }();
  return dir;
}

}  // namespace small_run
