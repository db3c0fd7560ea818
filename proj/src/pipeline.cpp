#include "trajmine/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>
#include <regex>

#include <json.hpp>

#include "trajmine/embed_extract.hpp"
#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/kv_config.hpp"
#include "trajmine/metrics.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

using json = nlohmann::json;

namespace {

enum : std::uint64_t { kTagTriplets = 31, kTagHoldout = 32 };

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

std::string shortest(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: '" + path.string() + "'");
}

void require_dir(const fs::path& path, const char* what) {
  if (!fs::is_directory(path)) throw IoError(std::string(what) + " is not a directory: '" + path.string() + "'");
}

/// Day logs of a directory, ordered by day.
std::vector<std::pair<std::int32_t, fs::path>> list_day_logs(const fs::path& dir) {
  require_dir(dir, "log directory");
  static const std::regex pattern(R"(day_(\d+)\.csv)");
  std::vector<std::pair<std::int32_t, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
      out.emplace_back(static_cast<std::int32_t>(std::stol(m[1].str())), entry.path());
    }
  }
  if (out.empty()) throw InputError("no day_<d>.csv log files in '" + dir.string() + "'");
  std::sort(out.begin(), out.end());
  return out;
}

void log_skip(std::ostream& log, const char* stage, const fs::path& primary) {
  log << stage << ": inputs unchanged, keeping " << primary.string() << "\n";
}

}  // namespace

namespace layout {

fs::path day_log(const fs::path& logs_dir, std::int32_t day) { return logs_dir / ("day_" + std::to_string(day) + ".csv"); }

std::string q_key(double q) { return shortest(q); }

fs::path cluster_dir(const fs::path& run, double q) { return run / kClusters / ("q" + q_key(q)); }

}  // namespace layout

double parse_q(std::string_view text) {
  double q = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), q);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw InputError("q must be a number, got '" + std::string(text) + "'");
  }
  if (!(q > 0 && q < 1)) throw InputError("quantile q must lie in (0,1), got " + std::string(text));
  return q;
}

// ---------------------------------------------------------------- records

StageRecord::StageRecord(std::string stage) : stage_(std::move(stage)) {}

void StageRecord::input_file(const std::string& name, const fs::path& path) { inputs_[name] = file_hash(path); }

void StageRecord::param(const std::string& name, const std::string& value) { params_[name] = value; }
void StageRecord::param(const std::string& name, double value) { params_[name] = shortest(value); }
void StageRecord::param(const std::string& name, std::int64_t value) { params_[name] = std::to_string(value); }

fs::path meta_path(const fs::path& primary_output) { return fs::path(primary_output.string() + ".meta.json"); }

bool StageRecord::up_to_date(const fs::path& meta) const {
  if (!fs::is_regular_file(meta)) return false;
  try {
    auto doc = json::parse(read_file(meta));
    if (doc.at("stage").get<std::string>() != stage_) return false;
    if (doc.at("inputs").get<std::map<std::string, std::string>>() != inputs_) return false;
    if (doc.at("params").get<std::map<std::string, std::string>>() != params_) return false;
    for (const auto& [rel, hash] : doc.at("outputs").get<std::map<std::string, std::string>>()) {
      const auto p = meta.parent_path() / rel;
      if (!fs::is_regular_file(p) || file_hash(p) != hash) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;  // unreadable record: rerun
  }
}

void StageRecord::commit(const fs::path& meta, const std::vector<fs::path>& outputs) const {
  json out_hashes = json::object();
  const auto base = meta.parent_path();
  for (const auto& p : outputs) out_hashes[fs::relative(p, base.empty() ? fs::path(".") : base).generic_string()] = file_hash(p);
  json doc{{"version", 1}, {"stage", stage_}, {"inputs", inputs_}, {"params", params_}, {"outputs", out_hashes}};
  write_file(meta, doc.dump(1));
}

// ---------------------------------------------------------------- stages

StageOutcome run_simulate(const SimulateOptions& opts, std::ostream& log) {
  StageRecord rec("simulate");
  if (opts.scenario) rec.input_file("scenario", *opts.scenario);
  if (opts.world) rec.input_file("world", *opts.world);
  rec.param("seed", static_cast<std::int64_t>(opts.seed));
  const auto primary = opts.out / layout::kProfiles;
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(primary))) {
    log_skip(log, "simulate", primary);
    outcome.skipped = true;
    return outcome;
  }
  const auto world = opts.world ? WorldConfig::load(*opts.world) : WorldConfig::default_world();
  const auto scenario = opts.scenario ? ScenarioConfig::load(*opts.scenario) : ScenarioConfig{};
  world.validate();
  scenario.validate();
  auto sim = simulate(world, scenario, opts.seed);

  auto& outs = outcome.outputs;
  outs.push_back(opts.out / layout::kWorld);
  write_file(outs.back(), world.to_text());
  outs.push_back(opts.out / layout::kScenario);
  write_file(outs.back(), scenario.to_text());
  const auto logs_dir = opts.out / layout::kLogs;
  fs::create_directories(logs_dir);
  for (std::int32_t day = 1; day <= scenario.n_days; ++day) {
    std::vector<DayLog> today;
    for (const auto& l : sim.logs) {
      if (l.day == day) today.push_back(l);
    }
    outs.push_back(layout::day_log(logs_dir, day));
    export_logs(today, outs.back());
  }
  outs.push_back(opts.out / layout::kAccess);
  write_file(outs.back(), access_to_json(sim.graph, sim.profiles));
  outs.push_back(primary);
  write_file(primary, profiles_to_json(sim.profiles));
  rec.commit(meta_path(primary), outs);

  std::int64_t bots = std::count_if(sim.profiles.begin(), sim.profiles.end(),
                                    [](const PlayerProfile& p) { return p.archetype == Archetype::bot; });
  log << "simulate: " << sim.profiles.size() << " players (" << bots << " bots), " << sim.logs.size()
      << " day logs -> " << opts.out.string() << "\n";
  return outcome;
}

StageOutcome run_prep(const PrepOptions& opts, std::ostream& log) {
  if (!(opts.mask_rate >= 0 && opts.mask_rate <= 1)) throw InputError("mask rate must lie in [0,1]");
  require_file(opts.world, "world config");
  const auto days = list_day_logs(opts.logs);
  StageRecord rec("prep");
  rec.input_file("world", opts.world);
  for (const auto& [day, path] : days) rec.input_file("day_" + std::to_string(day), path);
  rec.param("mask_rate", opts.mask_rate);
  rec.param("seed", static_cast<std::int64_t>(opts.seed));
  const auto primary = opts.out / layout::kPrepSummary;
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(primary))) {
    log_skip(log, "prep", primary);
    outcome.skipped = true;
    return outcome;
  }

  const auto world = WorldConfig::load(opts.world);
  std::vector<DayLog> logs;
  for (const auto& [day, path] : days) {
    auto d = import_logs(path, day);
    logs.insert(logs.end(), d.begin(), d.end());
  }
  std::vector<std::vector<GridLocation>> locations;
  for (const auto& l : logs) locations.push_back(l.online_locations());
  const auto vocab = build_vocabulary(locations, world);
  const auto chunks = prepare_chunks(logs, world, vocab);
  Rng rng(derive_seed({opts.seed, kTagTriplets}));
  const auto triplets = make_triplets(chunks, opts.mask_rate, rng);
  std::vector<DownstreamTrajectory> trajs;
  for (const auto& l : logs) trajs.push_back(build_downstream(l, world, vocab));

  auto& outs = outcome.outputs;
  outs.push_back(opts.out / layout::kWorld);
  if (fs::weakly_canonical(outs.back()) != fs::weakly_canonical(opts.world)) world.save(outs.back());
  outs.push_back(opts.out / layout::kVocab);
  vocab.save(outs.back());
  outs.push_back(opts.out / layout::kTriplets);
  save_triplets(triplets, outs.back());
  outs.push_back(opts.out / layout::kTrajectories);
  save_trajectories(trajs, outs.back());
  json summary{{"version", 1},
               {"mask_rate", opts.mask_rate},
               {"seed", opts.seed},
               {"days", days.size()},
               {"player_days", trajs.size()},
               {"chunks", chunks.size()},
               {"triplets", triplets.size()},
               {"zone_vocab_size", vocab.zone_vocab_size()},
               {"cell_vocab_size", vocab.cell_vocab_size()}};
  outs.push_back(primary);
  write_file(primary, summary.dump(1));
  rec.commit(meta_path(primary), outs);
  log << "prep: " << trajs.size() << " player-days, " << chunks.size() << " chunks, " << triplets.size()
      << " triplets, cell vocabulary " << vocab.cell_vocab_size() << "\n";
  return outcome;
}

ModelConfig load_model_config(const fs::path& path) {
  auto cfg = ModelConfig::dagger_preset();
  for (const auto& [k, v] : KeyValueFile::load(path).entries) {
    if (k == "d_model") {
      cfg.d_model = static_cast<std::int32_t>(parse_int(k, v));
    } else if (k == "d_hid") {
      cfg.d_hid = static_cast<std::int32_t>(parse_int(k, v));
    } else if (k == "n_layers") {
      cfg.n_layers = static_cast<std::int32_t>(parse_int(k, v));
    } else if (k == "n_heads") {
      cfg.n_heads = static_cast<std::int32_t>(parse_int(k, v));
    } else if (k == "margin") {
      cfg.margin = parse_double(k, v);
    } else if (k == "mask_rate") {
      cfg.mask_rate = parse_double(k, v);
    } else {
      throw ConfigError(path.string() + ": unknown model key '" + k + "'");
    }
  }
  return cfg;
}

StageOutcome run_train(const TrainOptions& opts, std::ostream& log) {
  const auto triplets_path = opts.data / layout::kTriplets;
  const auto vocab_path = opts.data / layout::kVocab;
  require_file(triplets_path, "triplet corpus");
  require_file(vocab_path, "vocabulary");
  ModelConfig model;
  if (opts.preset == "dagger") {
    if (opts.model_config) throw InputError("--model-config is only valid with --preset custom");
    model = ModelConfig::dagger_preset();
  } else if (opts.preset == "custom") {
    if (!opts.model_config) throw InputError("--preset custom requires --model-config");
    model = load_model_config(*opts.model_config);
  } else {
    throw InputError("unknown preset '" + opts.preset + "' (expected dagger or custom)");
  }
  opts.train.validate();

  const auto& t = opts.train;
  StageRecord rec("train");
  rec.input_file("triplets", triplets_path);
  rec.input_file("vocab", vocab_path);
  if (opts.model_config) rec.input_file("model_config", *opts.model_config);
  if (opts.resume) rec.input_file("resume", *opts.resume);
  rec.param("preset", opts.preset);
  rec.param("seed", static_cast<std::int64_t>(t.seed));
  rec.param("max_epochs", static_cast<std::int64_t>(t.max_epochs));
  rec.param("min_epochs", static_cast<std::int64_t>(t.min_epochs));
  rec.param("patience", static_cast<std::int64_t>(t.patience));
  rec.param("batch_size", static_cast<std::int64_t>(t.batch_size));
  rec.param("micro_batch", static_cast<std::int64_t>(t.micro_batch));
  rec.param("samples_per_epoch", static_cast<std::int64_t>(t.samples_per_epoch));
  rec.param("learning_rate", t.learning_rate);
  rec.param("clip_norm", t.clip_norm);
  rec.param("holdout_fraction", t.holdout_fraction);
  rec.param("workers", static_cast<std::int64_t>(t.workers));
  const auto primary = opts.out / layout::kModel;
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(primary))) {
    log_skip(log, "train", primary);
    outcome.skipped = true;
    return outcome;
  }

  const auto vocab = Vocabulary::load(vocab_path);
  const auto corpus = load_triplets(triplets_path);
  model.cell_vocab_size = vocab.cell_vocab_size();
  model.zone_vocab_size = vocab.zone_vocab_size();
  model.validate();
  auto [train_split, held_out] = split_holdout(corpus, t.holdout_fraction, derive_seed({t.seed, kTagHoldout}));
  log << "train: " << train_split.size() << " training / " << held_out.size() << " held-out triplets, preset "
      << opts.preset << "\n";

  std::optional<EncoderParams<float>> initial;
  if (opts.resume) {
    auto ck = Checkpoint::load(*opts.resume);
    ck.require_vocabulary(vocab);
    if (ck.config != model) throw InputError("resume checkpoint was trained with a different model config");
    initial = std::move(ck.params);
  }
  auto result = train(train_split, model, t, initial ? &*initial : nullptr, [&](const EpochStats& e) {
    log << "epoch " << e.epoch << " loss " << e.loss << " (triplet " << e.triplet << ", mcp " << e.mcp
        << ", mcp acc " << e.mcp_accuracy << ") " << e.seconds << "s\n";
    log.flush();
  });
  if (result.report.diverged) throw NumericError("training diverged: " + result.report.message);

  Checkpoint ck;
  ck.config = model;
  ck.vocab_fingerprint = vocab.fingerprint();
  ck.params = std::move(result.params);

  auto report = json::parse(result.report.to_json());
  if (!held_out.empty()) {
    const auto h = evaluate_held_out(ck.params, model, held_out, majority_masked_cell(train_split), t.seed);
    report["held_out"] = {{"triplets", held_out.size()},
                          {"cos_anchor_positive", h.cos_anchor_positive},
                          {"cos_anchor_negative", h.cos_anchor_negative},
                          {"mcp_accuracy", h.mcp_accuracy},
                          {"majority_accuracy", h.majority_accuracy},
                          {"masked_positions", h.masked_positions}};
    log << "held-out: cos(a,p) " << h.cos_anchor_positive << ", cos(a,n) " << h.cos_anchor_negative
        << ", mcp acc " << h.mcp_accuracy << " (majority " << h.majority_accuracy << ")\n";
  }
  report["model"] = {{"d_model", model.d_model}, {"d_hid", model.d_hid},   {"n_layers", model.n_layers},
                     {"n_heads", model.n_heads}, {"margin", model.margin}, {"mask_rate", model.mask_rate}};

  auto& outs = outcome.outputs;
  outs.push_back(opts.out / layout::kTrainReport);
  write_file(outs.back(), report.dump(1));
  outs.push_back(primary);
  ck.save(primary);
  rec.commit(meta_path(primary), outs);
  log << "train: best epoch " << result.report.best_epoch << " -> " << primary.string() << "\n";
  return outcome;
}

std::vector<DownstreamTrajectory> load_prepared_trajectories(const fs::path& prep_dir) {
  const auto world_path = prep_dir / layout::kWorld;
  const auto trajs_path = prep_dir / layout::kTrajectories;
  require_file(world_path, "world config");
  require_file(trajs_path, "trajectory file");
  return load_trajectories(trajs_path, WorldConfig::load(world_path));
}

StageOutcome run_embed(const EmbedOptions& opts, std::ostream& log) {
  const auto vocab_path = opts.trajs / layout::kVocab;
  require_file(opts.model, "model checkpoint");
  require_file(vocab_path, "vocabulary");
  StageRecord rec("embed");
  rec.input_file("model", opts.model);
  rec.input_file("vocab", vocab_path);
  rec.input_file("trajectories", opts.trajs / layout::kTrajectories);
  rec.input_file("world", opts.trajs / layout::kWorld);
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(opts.out))) {
    log_skip(log, "embed", opts.out);
    outcome.skipped = true;
    return outcome;
  }
  const auto ck = Checkpoint::load(opts.model);
  const auto vocab = Vocabulary::load(vocab_path);
  const auto trajs = load_prepared_trajectories(opts.trajs);
  Extractor extractor(ck, vocab);
  auto result = extractor.extract_all(trajs, opts.workers);
  if (result.table.size() == 0) throw InputError("no trajectory could be embedded");

  auto& outs = outcome.outputs;
  outs.push_back(opts.out.parent_path() / (opts.out.stem().string() + ".skipped.json"));
  write_file(outs.back(), result.skipped_json());
  outs.push_back(opts.out);
  // A .csv target gets the debugging export instead of the binary table.
  if (opts.out.extension() == ".csv") {
    write_file(opts.out, result.table.to_csv());
  } else {
    result.table.save(opts.out);
  }
  rec.commit(meta_path(opts.out), outs);
  log << "embed: " << result.table.size() << " representations, " << result.skipped.size() << " skipped -> "
      << opts.out.string() << "\n";
  return outcome;
}

StageOutcome run_cluster(const ClusterStageOptions& opts, std::ostream& log) {
  if (!(opts.q > 0 && opts.q < 1)) throw InputError("quantile q must lie in (0,1)");
  require_file(opts.reps, "representation table");
  StageRecord rec("cluster");
  rec.input_file("reps", opts.reps);
  rec.param("q", opts.q);
  rec.param("k", static_cast<std::int64_t>(opts.cluster.k));
  rec.param("min_samples", static_cast<std::int64_t>(opts.cluster.min_samples));
  rec.param("knn_mode", opts.cluster.mode == KnnMode::all_k ? "all_k" : "kth");
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(opts.out))) {
    log_skip(log, "cluster", opts.out);
    outcome.skipped = true;
    return outcome;
  }
  const auto reps = RepresentationTable::load(opts.reps);
  const auto assignment = cluster_representations(reps, opts.q, opts.cluster);
  write_file(opts.out, assignment.to_json());
  outcome.outputs.push_back(opts.out);
  rec.commit(meta_path(opts.out), outcome.outputs);
  log << "cluster: q " << opts.q << " eps " << assignment.epsilon << ", " << assignment.cluster_count()
      << " clusters, detecting count " << detecting_count(assignment) << "\n";
  return outcome;
}

StageOutcome run_evaluate(const EvaluateOptions& opts, std::ostream& log) {
  require_file(opts.assignment, "cluster assignment");
  require_file(opts.access, "access sidecar");
  require_file(opts.reps, "representation table");
  StageRecord rec("evaluate");
  rec.input_file("assignment", opts.assignment);
  rec.input_file("access", opts.access);
  rec.input_file("reps", opts.reps);
  rec.input_file("trajectories", opts.trajs / layout::kTrajectories);
  rec.input_file("world", opts.trajs / layout::kWorld);
  rec.param("seed", static_cast<std::int64_t>(opts.seed));
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(opts.out))) {
    log_skip(log, "evaluate", opts.out);
    outcome.skipped = true;
    return outcome;
  }
  const auto assignment = ClusterAssignment::from_json(read_file(opts.assignment));
  const auto reps = RepresentationTable::load(opts.reps);
  const auto trajs = load_prepared_trajectories(opts.trajs);
  const auto access = access_from_json(read_file(opts.access));
  const auto report = evaluate_assignment(assignment, reps, trajs, access, opts.seed);
  write_file(opts.out, report.to_json());
  outcome.outputs.push_back(opts.out);
  rec.commit(meta_path(opts.out), outcome.outputs);
  auto fmt = [](const std::optional<double>& v) { return v ? shortest(*v) : std::string("n/a"); };
  log << "evaluate: pos " << fmt(report.pos_mean) << ", neg " << fmt(report.neg_mean) << ", access homogeneity "
      << fmt(report.access_homogeneity) << ", detecting count " << report.detecting_count << "\n";
  return outcome;
}

StageOutcome run_heatmap(const HeatmapStageOptions& opts, std::ostream& log) {
  require_file(opts.assignment, "cluster assignment");
  opts.heatmap.validate();
  StageRecord rec("heatmap");
  rec.input_file("assignment", opts.assignment);
  rec.input_file("trajectories", opts.trajs / layout::kTrajectories);
  rec.input_file("world", opts.trajs / layout::kWorld);
  rec.param("x_scale", static_cast<std::int64_t>(opts.heatmap.x_scale));
  rec.param("y_scale", static_cast<std::int64_t>(opts.heatmap.y_scale));
  rec.param("separate_noise", static_cast<std::int64_t>(opts.heatmap.separate_noise));
  StageOutcome outcome;
  if (rec.up_to_date(meta_path(opts.out))) {
    log_skip(log, "heatmap", opts.out);
    outcome.skipped = true;
    return outcome;
  }
  const auto assignment = ClusterAssignment::from_json(read_file(opts.assignment));
  const auto trajs = load_prepared_trajectories(opts.trajs);
  const auto world = WorldConfig::load(opts.trajs / layout::kWorld);
  const auto set = rasterize(assignment, trajs, world, opts.heatmap);
  for (const auto& p : write_heatmaps(set, opts.heatmap, opts.out)) {
    outcome.outputs.push_back(p);
    outcome.outputs.push_back(p.string() + ".rows.json");
  }
  if (!set.clusters) log << "heatmap: every point is noise; only the noise image was written\n";
  rec.commit(meta_path(opts.out), outcome.outputs);
  log << "heatmap: " << outcome.outputs.size() / 2 << " image(s) -> " << opts.out.string() << "\n";
  return outcome;
}

}  // namespace trajmine
