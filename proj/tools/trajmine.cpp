// Command-line front end: one subcommand per pipeline stage plus `serve`.
// Failures print one JSON line {"error":{"code","message"}} on stderr and exit
// 2 for usage/input problems, 1 for everything else.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajmine/error.hpp"
#include "trajmine/io.hpp"
#include "trajmine/pipeline.hpp"
#include "trajmine/service.hpp"

namespace {

using namespace trajmine;

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
  return status;
}

std::pair<std::string, int> parse_listen(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw InputError("--listen must be HOST:PORT, got '" + addr + "'");
  int port = -1;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw InputError("invalid port in --listen '" + addr + "'");
  return {addr.substr(0, colon), port};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory representation pipeline for bot-group detection"};
  app.require_subcommand(1);
  std::ostream& log = std::cerr;

  SimulateOptions sim;
  std::string sim_scenario, sim_world;
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate a synthetic world with planted bot groups");
  simulate_cmd->add_option("--scenario", sim_scenario, "Scenario config file (default scenario when omitted)");
  simulate_cmd->add_option("--world", sim_world, "World config file (built-in world when omitted)");
  simulate_cmd->add_option("--seed", sim.seed, "Generator seed")->capture_default_str();
  simulate_cmd->add_option("--out", sim.out, "Output run directory")->required();

  PrepOptions prep;
  std::string prep_out;
  auto* prep_cmd = app.add_subcommand("prep", "Tokenize logs into the triplet corpus and day trajectories");
  prep_cmd->add_option("--logs", prep.logs, "Directory of day_<d>.csv logs")->required();
  prep_cmd->add_option("--world", prep.world, "World config file")->required();
  prep_cmd->add_option("--mask-rate", prep.mask_rate, "Anchor mask rate")->capture_default_str();
  prep_cmd->add_option("--seed", prep.seed, "Triplet sampling seed")->capture_default_str();
  prep_cmd->add_option("--out", prep_out, "Output directory (default: parent of --logs)");

  TrainOptions tr;
  std::string tr_model_config, tr_resume, tr_out;
  std::optional<std::int32_t> tr_min_epochs;
  auto* train_cmd = app.add_subcommand("train", "Train the trajectory encoder");
  train_cmd->add_option("--data", tr.data, "Prep directory")->required();
  train_cmd->add_option("--preset", tr.preset, "dagger | custom")->capture_default_str();
  train_cmd->add_option("--model-config", tr_model_config, "Model config file for --preset custom");
  train_cmd->add_option("--seed", tr.train.seed, "Training seed")->capture_default_str();
  train_cmd->add_option("--epochs", tr.train.max_epochs, "Maximum epochs")->capture_default_str();
  train_cmd->add_option("--min-epochs", tr_min_epochs, "Epochs before early stopping may trigger (default: --epochs)");
  train_cmd->add_option("--patience", tr.train.patience, "Early-stopping patience")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.train.batch_size, "Triplets per step")->capture_default_str();
  train_cmd->add_option("--micro-batch", tr.train.micro_batch, "Triplets per forward pass")->capture_default_str();
  train_cmd->add_option("--samples-per-epoch", tr.train.samples_per_epoch, "Triplets per epoch (0 = all)")
      ->capture_default_str();
  train_cmd->add_option("--lr", tr.train.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--clip", tr.train.clip_norm, "Global gradient-norm clip")->capture_default_str();
  train_cmd->add_option("--holdout", tr.train.holdout_fraction, "Held-out fraction")->capture_default_str();
  train_cmd->add_option("--workers", tr.train.workers, "Gradient workers")->capture_default_str();
  train_cmd->add_option("--resume", tr_resume, "Checkpoint to continue from");
  train_cmd->add_option("--out", tr_out, "Output directory (default: --data)");

  EmbedOptions emb;
  std::string emb_out;
  auto* embed_cmd = app.add_subcommand("embed", "Extract one representation per player-day");
  embed_cmd->add_option("--model", emb.model, "Model checkpoint")->required();
  embed_cmd->add_option("--trajs", emb.trajs, "Prep directory")->required();
  embed_cmd->add_option("--out", emb_out, "Representation table, or CSV export for a .csv path (default: <trajs>/reps.bin)");
  embed_cmd->add_option("--workers", emb.workers, "Extraction threads")->capture_default_str();

  ClusterStageOptions cl;
  std::string cl_q = "0.05", cl_out, cl_mode = "all_k";
  auto* cluster_cmd = app.add_subcommand("cluster", "Quantile-epsilon DBSCAN over representations");
  cluster_cmd->add_option("--reps", cl.reps, "Representation table")->required();
  cluster_cmd->add_option("--q", cl_q, "Quantile of the 4-NN distance distribution, in (0,1)")->capture_default_str();
  cluster_cmd->add_option("--k", cl.cluster.k, "Neighbour count for epsilon")->capture_default_str();
  cluster_cmd->add_option("--min-samples", cl.cluster.min_samples, "DBSCAN min_samples")->capture_default_str();
  cluster_cmd->add_option("--knn-mode", cl_mode, "all_k | kth")->capture_default_str();
  cluster_cmd->add_option("--out", cl_out, "Assignment JSON (default: <reps dir>/clusters/q<q>/assignment.json)");

  EvaluateOptions ev;
  std::string ev_access, ev_reps, ev_out;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Contextual similarity and access homogeneity");
  evaluate_cmd->add_option("--assignment", ev.assignment, "Assignment JSON")->required();
  evaluate_cmd->add_option("--trajs", ev.trajs, "Prep directory")->required();
  evaluate_cmd->add_option("--access", ev_access, "Access sidecar (default: <trajs>/access.json)");
  evaluate_cmd->add_option("--reps", ev_reps, "Representation table (default: <trajs>/reps.bin)");
  evaluate_cmd->add_option("--seed", ev.seed, "Negative-pair seed")->capture_default_str();
  evaluate_cmd->add_option("--out", ev_out, "Report JSON (default: metrics.json beside the assignment)");

  HeatmapStageOptions hm;
  bool hm_inline = false;
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Render cluster heatmaps");
  heatmap_cmd->add_option("--assignment", hm.assignment, "Assignment JSON")->required();
  heatmap_cmd->add_option("--trajs", hm.trajs, "Prep directory")->required();
  heatmap_cmd->add_option("--out", hm.out, "Image path (.png or .ppm)")->required();
  heatmap_cmd->add_option("--x-scale", hm.heatmap.x_scale, "Pixels per minute")->capture_default_str();
  heatmap_cmd->add_option("--y-scale", hm.heatmap.y_scale, "Pixels per player-day row")->capture_default_str();
  heatmap_cmd->add_flag("--noise-inline", hm_inline, "Append noise rows instead of writing a separate image");

  std::string srv_run, srv_listen = "127.0.0.1:8080", srv_static;
  ServiceOptions srv_opts;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP review API under /v1");
  serve_cmd->add_option("--run", srv_run, "Run directory or directory of runs")->required();
  serve_cmd->add_option("--listen", srv_listen, "HOST:PORT")->capture_default_str();
  serve_cmd->add_option("--static", srv_static, "Directory of console assets to serve at /");
  serve_cmd->add_option("--metrics-seed", srv_opts.metrics_seed, "Negative-pair seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*simulate_cmd) {
      if (!sim_scenario.empty()) sim.scenario = sim_scenario;
      if (!sim_world.empty()) sim.world = sim_world;
      run_simulate(sim, log);
    } else if (*prep_cmd) {
      prep.out = prep_out.empty() ? fs::absolute(prep.logs).parent_path() : fs::path(prep_out);
      run_prep(prep, log);
    } else if (*train_cmd) {
      if (!tr_model_config.empty()) tr.model_config = tr_model_config;
      if (!tr_resume.empty()) tr.resume = tr_resume;
      tr.train.min_epochs = tr_min_epochs.value_or(tr.train.max_epochs);
      tr.out = tr_out.empty() ? tr.data : fs::path(tr_out);
      run_train(tr, log);
    } else if (*embed_cmd) {
      emb.out = emb_out.empty() ? emb.trajs / layout::kReps : fs::path(emb_out);
      run_embed(emb, log);
    } else if (*cluster_cmd) {
      cl.q = parse_q(cl_q);
      if (cl_mode == "all_k") {
        cl.cluster.mode = KnnMode::all_k;
      } else if (cl_mode == "kth") {
        cl.cluster.mode = KnnMode::kth;
      } else {
        throw InputError("--knn-mode must be all_k or kth");
      }
      cl.out = cl_out.empty() ? layout::cluster_dir(fs::absolute(cl.reps).parent_path(), cl.q) / layout::kAssignment
                              : fs::path(cl_out);
      run_cluster(cl, log);
      std::cout << cl.out.string() << "\n";
    } else if (*evaluate_cmd) {
      ev.access = ev_access.empty() ? ev.trajs / layout::kAccess : fs::path(ev_access);
      ev.reps = ev_reps.empty() ? ev.trajs / layout::kReps : fs::path(ev_reps);
      ev.out = ev_out.empty() ? fs::absolute(ev.assignment).parent_path() / layout::kMetrics : fs::path(ev_out);
      run_evaluate(ev, log);
      std::cout << read_file(ev.out) << "\n";
    } else if (*heatmap_cmd) {
      hm.heatmap.separate_noise = !hm_inline;
      run_heatmap(hm, log);
    } else if (*serve_cmd) {
      auto [host, port] = parse_listen(srv_listen);
      ApiService api(RunStore(srv_run), srv_opts);
      std::optional<fs::path> static_dir;
      if (!srv_static.empty()) static_dir = srv_static;
      HttpServer server(api, static_dir);
      const int bound = server.bind(host, port);
      log << "serving " << srv_run << " on http://" << host << ":" << bound << "/v1/runs" << std::endl;
      server.listen();
    }
  } catch (const InputError& e) {
    return fail(e.code(), e.what(), 2);
  } catch (const ConfigError& e) {
    return fail(e.code(), e.what(), 2);
  } catch (const Error& e) {
    return fail(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
