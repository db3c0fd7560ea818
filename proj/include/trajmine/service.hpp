#pragma once

// Review API over a run store. ApiService maps requests to responses without
// any socket code; HttpServer exposes it under /v1.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "trajmine/clusterer.hpp"

namespace trajmine {

/// A run directory holds reps.bin, trajectories.bin, world.cfg and
/// access.json (the layout written by the CLI). The root is either one run or
/// a directory whose immediate subdirectories are runs.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  /// Rescans the root on every call, so new runs appear without a restart.
  std::vector<std::string> run_ids() const;
  /// Throws NotFoundError for unknown ids.
  std::filesystem::path run_dir(const std::string& id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

struct ApiRequest {
  std::string method;  // GET | POST
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  ClusterOptions cluster;
  /// Seed of the negative-pair draw; the CLI evaluate default.
  std::uint64_t metrics_seed = 0;
  /// q used when a request does not pass one.
  double default_q = 0.05;
};

class ApiService {
 public:
  explicit ApiService(RunStore store, ServiceOptions opts = {});
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  /// Never throws; failures become JSON error bodies {"error":{code,message}}.
  ApiResponse handle(const ApiRequest& request);

 private:
  struct Run;
  Run& open(const std::string& id);

  ApiResponse list_runs();
  ApiResponse clusters(Run& run, double q);
  ApiResponse members(Run& run, double q, std::int32_t cluster);
  ApiResponse heatmap(Run& run, double q, std::int32_t cluster, bool rows_only);
  ApiResponse post_verdict(Run& run, double q, std::int32_t cluster, const std::string& body);
  ApiResponse verdicts(Run& run, double q, std::int32_t cluster);
  ApiResponse projection(Run& run, std::optional<double> q);

  RunStore store_;
  ServiceOptions opts_;
  std::mutex runs_mutex_;
  std::map<std::string, std::unique_ptr<Run>> runs_;
};

/// Blocking HTTP front end. Port 0 picks a free port.
class HttpServer {
 public:
  HttpServer(ApiService& api, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and returns the bound port. Throws IoError.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trajmine
