#include "trajmine/service.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <httplib.h>
#include <json.hpp>

#include "trajmine/embed_extract.hpp"
#include "trajmine/error.hpp"
#include "trajmine/heatmap.hpp"
#include "trajmine/io.hpp"
#include "trajmine/kv_config.hpp"
#include "trajmine/metrics.hpp"
#include "trajmine/pipeline.hpp"
#include "trajmine/synthetic_world.hpp"

namespace trajmine {

using json = nlohmann::json;

namespace {

bool is_run_dir(const fs::path& dir) { return fs::is_regular_file(dir / layout::kReps); }

ApiResponse json_response(const json& body, int status = 200) { return {status, "application/json", body.dump(1)}; }

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response(json{{"error", {{"code", code}, {"message", message}}}}, status);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::int32_t parse_cluster_id(const std::string& text) {
  if (text == "noise" || text == "-1") return kNoise;
  std::int32_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || v < 0) {
    throw InputError("cluster id must be a non-negative integer or 'noise', got '" + text + "'");
  }
  return v;
}

std::string cluster_label(std::int32_t id) { return id == kNoise ? "noise" : std::to_string(id); }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json key_json(const PointKey& k) { return json{{"player_id", k.player_id}, {"day", k.day}}; }

}  // namespace

// ---------------------------------------------------------------- store

RunStore::RunStore(fs::path root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) throw IoError("run store root is not a directory: '" + root_.string() + "'");
}

std::vector<std::string> RunStore::run_ids() const {
  std::vector<std::string> ids;
  if (is_run_dir(root_)) {
    ids.push_back(fs::weakly_canonical(root_).filename().string());
    return ids;
  }
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory() && is_run_dir(entry.path())) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

fs::path RunStore::run_dir(const std::string& id) const {
  if (is_run_dir(root_)) {
    if (id == fs::weakly_canonical(root_).filename().string()) return root_;
  } else if (id.find('/') == std::string::npos && id != "." && id != ".." && is_run_dir(root_ / id)) {
    return root_ / id;
  }
  throw NotFoundError("unknown run '" + id + "'");
}

// ---------------------------------------------------------------- run state

/// Clustering results for one q, read back from the store.
struct QView {
  ClusterAssignment assignment;
  json metrics;
};

struct ApiService::Run {
  std::string id;
  fs::path dir;
  std::mutex compute;  // serializes artifact creation and lazy loading
  std::mutex verdict_log;
  bool loaded = false;
  RepresentationTable reps;
  std::vector<DownstreamTrajectory> trajs;
  WorldConfig world;
  std::map<std::string, std::shared_ptr<const QView>> by_q;

  void load() {
    if (loaded) return;
    reps = RepresentationTable::load(dir / layout::kReps);
    world = WorldConfig::load(dir / layout::kWorld);
    trajs = load_prepared_trajectories(dir);
    loaded = true;
  }

  std::shared_ptr<const QView> view(double q, const ServiceOptions& opts) {
    std::lock_guard lock(compute);
    const auto key = layout::q_key(q);
    if (auto it = by_q.find(key); it != by_q.end()) return it->second;
    // Same stage functions as the CLI, so cached and fresh artifacts are byte-equal.
    std::ostream quiet(nullptr);
    const auto qdir = layout::cluster_dir(dir, q);
    ClusterStageOptions c{dir / layout::kReps, q, opts.cluster, qdir / layout::kAssignment};
    run_cluster(c, quiet);
    EvaluateOptions e{c.out, dir, dir / layout::kAccess, dir / layout::kReps, opts.metrics_seed, qdir / layout::kMetrics};
    run_evaluate(e, quiet);
    auto v = std::make_shared<QView>();
    v->assignment = ClusterAssignment::from_json(read_file(c.out));
    v->metrics = json::parse(read_file(e.out));
    by_q[key] = v;
    return v;
  }

  std::vector<PointKey> members_of(const QView& v, std::int32_t cluster) const {
    if (cluster == kNoise) return v.assignment.noise();
    if (cluster >= v.assignment.cluster_count()) {
      throw NotFoundError("cluster " + std::to_string(cluster) + " does not exist at q " + layout::q_key(v.assignment.q));
    }
    return v.assignment.clusters()[static_cast<std::size_t>(cluster)];
  }

  /// Heatmap file for one cluster, rendered on first request.
  fs::path heatmap_file(const QView& v, std::int32_t cluster) {
    auto members = members_of(v, cluster);
    if (members.empty()) throw NotFoundError("cluster " + cluster_label(cluster) + " has no members");
    const auto path = layout::cluster_dir(dir, v.assignment.q) / ("heatmap_" + cluster_label(cluster) + ".png");
    std::lock_guard lock(compute);
    if (!fs::is_regular_file(path) || !fs::is_regular_file(path.string() + ".rows.json")) {
      load();
      HeatmapOptions opts;
      write_heatmap(rasterize_rows(members, cluster, trajs, world, opts), opts, path);
    }
    return path;
  }

  std::vector<json> verdict_history() {
    std::lock_guard lock(verdict_log);
    std::vector<json> out;
    const auto path = dir / layout::kVerdicts;
    if (!fs::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
  }

  json append_verdict(json record) {
    std::lock_guard lock(verdict_log);
    const auto path = dir / layout::kVerdicts;
    std::int64_t seq = 1;
    if (std::ifstream in(path); in) {
      std::string line;
      while (std::getline(in, line)) seq += !line.empty();
    }
    record["seq"] = seq;
    std::ofstream out(path, std::ios::app);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw IoError("cannot append to '" + path.string() + "'");
    return record;
  }
};

// ---------------------------------------------------------------- service

ApiService::ApiService(RunStore store, ServiceOptions opts) : store_(std::move(store)), opts_(opts) {}
ApiService::~ApiService() = default;

ApiService::Run& ApiService::open(const std::string& id) {
  auto dir = store_.run_dir(id);
  std::lock_guard lock(runs_mutex_);
  auto& slot = runs_[id];
  if (!slot) {
    slot = std::make_unique<Run>();
    slot->id = id;
    slot->dir = dir;
  }
  return *slot;
}

ApiResponse ApiService::handle(const ApiRequest& req) {
  try {
    const auto parts = split_path(req.path);
    if (parts.size() < 2 || parts[0] != "v1" || parts[1] != "runs") throw NotFoundError("no route for " + req.path);
    auto method_is = [&](const char* m) {
      if (req.method != m) throw std::invalid_argument(req.method + " is not allowed on " + req.path);
    };
    auto q_param = [&]() {
      auto it = req.query.find("q");
      return it == req.query.end() ? opts_.default_q : parse_q(it->second);
    };
    if (parts.size() == 2) {
      method_is("GET");
      return list_runs();
    }
    Run& run = open(parts[2]);
    if (parts.size() == 3) {
      method_is("GET");
      auto all = json::parse(list_runs().body);
      for (const auto& r : all.at("runs")) {
        if (r.at("id") == run.id) return json_response(r);
      }
      throw NotFoundError("unknown run '" + run.id + "'");
    }
    if (parts.size() == 4 && parts[3] == "projection") {
      method_is("GET");
      std::optional<double> q;
      if (req.query.count("q")) q = q_param();
      return projection(run, q);
    }
    if (parts[3] != "clusters") throw NotFoundError("no route for " + req.path);
    if (parts.size() == 4) {
      method_is("GET");
      return clusters(run, q_param());
    }
    const auto cid = parse_cluster_id(parts[4]);
    if (parts.size() == 6 && parts[5] == "members") {
      method_is("GET");
      return members(run, q_param(), cid);
    }
    if (parts.size() == 6 && parts[5] == "heatmap") {
      method_is("GET");
      return heatmap(run, q_param(), cid, false);
    }
    if (parts.size() == 7 && parts[5] == "heatmap" && parts[6] == "rows") {
      method_is("GET");
      return heatmap(run, q_param(), cid, true);
    }
    if (parts.size() == 6 && parts[5] == "verdict") {
      method_is("POST");
      return post_verdict(run, q_param(), cid, req.body);
    }
    if (parts.size() == 6 && parts[5] == "verdicts") {
      method_is("GET");
      return verdicts(run, q_param(), cid);
    }
    throw NotFoundError("no route for " + req.path);
  } catch (const NotFoundError& e) {
    return error_response(404, e.code(), e.what());
  } catch (const InputError& e) {
    return error_response(400, e.code(), e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(405, "method_not_allowed", e.what());
  } catch (const Error& e) {
    return error_response(500, e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

ApiResponse ApiService::list_runs() {
  json runs = json::array();
  for (const auto& id : store_.run_ids()) {
    const auto dir = store_.run_dir(id);
    json r{{"id", id}};
    const auto reps = RepresentationTable::load(dir / layout::kReps);
    r["player_days"] = reps.size();
    r["dim"] = reps.dim();
    if (fs::is_regular_file(dir / layout::kScenario)) {
      json scenario = json::object();
      for (const auto& [k, v] : KeyValueFile::load(dir / layout::kScenario).entries) scenario[k] = v;
      r["scenario"] = scenario;
    }
    if (fs::is_regular_file(dir / layout::kTrainReport)) {
      auto report = json::parse(read_file(dir / layout::kTrainReport));
      r["train"] = {{"best_epoch", report.value("best_epoch", 0)}, {"epochs", report.at("epochs").size()}};
      if (report.contains("model")) r["model"] = report["model"];
    }
    json cached = json::array();
    if (fs::is_directory(dir / layout::kClusters)) {
      std::vector<std::string> keys;
      for (const auto& e : fs::directory_iterator(dir / layout::kClusters)) {
        const auto name = e.path().filename().string();
        if (name.size() > 1 && name[0] == 'q' && fs::is_regular_file(e.path() / layout::kMetrics)) keys.push_back(name.substr(1));
      }
      std::sort(keys.begin(), keys.end());
      cached = keys;
    }
    r["cached_q"] = cached;
    runs.push_back(r);
  }
  return json_response(json{{"version", 1}, {"runs", runs}});
}

namespace {

/// Latest verdict per cluster among `history` for q.
std::map<std::int32_t, json> current_verdicts(const std::vector<json>& history, double q) {
  std::map<std::int32_t, json> out;
  const auto key = layout::q_key(q);
  for (const auto& v : history) {
    if (v.at("q_key") == key) out[v.at("cluster").get<std::int32_t>()] = v;
  }
  return out;
}

}  // namespace

ApiResponse ApiService::clusters(Run& run, double q) {
  auto v = run.view(q, opts_);
  auto current = current_verdicts(run.verdict_history(), q);
  const auto& m = v->metrics;
  json list = json::array();
  for (const auto& c : m.at("per_cluster")) {
    const auto id = c.at("id").get<std::int32_t>();
    list.push_back({{"id", id},
                    {"size", c.at("size")},
                    {"access_components", c.at("access_components")},
                    {"pos_jaccard_mean", c.at("pos_jaccard_mean")},
                    {"verdict", current.count(id) ? current[id] : json(nullptr)}});
  }
  json body{{"version", 1},
            {"run", run.id},
            {"q", q},
            {"epsilon", v->assignment.epsilon},
            {"min_samples", v->assignment.min_samples},
            {"detecting_count", m.at("detecting_count")},
            {"cluster_count", m.at("cluster_count")},
            {"noise_count", v->assignment.noise().size()},
            {"pos_mean", m.at("pos_mean")},
            {"neg_mean", m.at("neg_mean")},
            {"access_homogeneity", m.at("access_homogeneity")},
            {"clusters", list},
            {"warnings", m.at("warnings")}};
  return json_response(body);
}

ApiResponse ApiService::members(Run& run, double q, std::int32_t cluster) {
  auto v = run.view(q, opts_);
  const auto keys = run.members_of(*v, cluster);
  {
    std::lock_guard lock(run.compute);
    run.load();
  }
  std::map<PointKey, const DownstreamTrajectory*> by_key;
  for (const auto& t : run.trajs) by_key[{t.player_id, t.day}] = &t;
  auto cells = [&](const PointKey& k) -> const MinuteCells& {
    auto it = by_key.find(k);
    if (it == by_key.end()) throw NotFoundError("no trajectory for player-day " + to_string(k));
    return it->second->cells_by_minute;
  };

  // Nearest other member in representation space; ties keep the smallest key.
  std::vector<std::size_t> rows;
  for (const auto& k : keys) rows.push_back(run.reps.index_of(k));
  json list = json::array();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    json entry = key_json(keys[i]);
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> arg;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      if (j == i) continue;
      const double d = (run.reps.vectors.row(static_cast<Eigen::Index>(rows[i])).cast<double>() -
                        run.reps.vectors.row(static_cast<Eigen::Index>(rows[j])).cast<double>())
                           .squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    if (arg) {
      entry["nearest"] = key_json(keys[*arg]);
      entry["nearest_distance"] = std::sqrt(best);
      entry["pos_jaccard"] = time_jaccard(cells(keys[i]), cells(keys[*arg]));
    }
    list.push_back(entry);
  }
  json pairwise{{"pairs", 0}, {"mean", nullptr}, {"min", nullptr}, {"max", nullptr}};
  if (keys.size() >= 2) {
    double sum = 0, lo = 1, hi = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      for (std::size_t j = i + 1; j < keys.size(); ++j) {
        const double s = time_jaccard(cells(keys[i]), cells(keys[j]));
        sum += s;
        lo = std::min(lo, s);
        hi = std::max(hi, s);
        ++n;
      }
    }
    pairwise = {{"pairs", n}, {"mean", sum / static_cast<double>(n)}, {"min", lo}, {"max", hi}};
  }
  json body{{"version", 1},       {"run", run.id},        {"q", q},
            {"cluster", cluster_label(cluster)}, {"size", keys.size()}, {"members", list},
            {"pairwise_jaccard", pairwise}};
  if (cluster != kNoise) {
    for (const auto& c : v->metrics.at("per_cluster")) {
      if (c.at("id") == cluster) body["access_components"] = c.at("access_components");
    }
    auto current = current_verdicts(run.verdict_history(), q);
    body["verdict"] = current.count(cluster) ? current[cluster] : json(nullptr);
  }
  return json_response(body);
}

ApiResponse ApiService::heatmap(Run& run, double q, std::int32_t cluster, bool rows_only) {
  auto v = run.view(q, opts_);
  const auto path = run.heatmap_file(*v, cluster);
  if (rows_only) return {200, "application/json", read_file(path.string() + ".rows.json")};
  return {200, "image/png", read_file(path)};
}

ApiResponse ApiService::post_verdict(Run& run, double q, std::int32_t cluster, const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception&) {
    throw InputError("verdict body must be a JSON object");
  }
  if (!doc.is_object()) throw InputError("verdict body must be a JSON object");
  if (doc.contains("q")) {
    if (!doc["q"].is_number()) throw InputError("verdict q must be a number");
    q = parse_q(layout::q_key(doc["q"].get<double>()));
  }
  const auto decision = doc.value("decision", std::string());
  if (decision != "ban" && decision != "clear" && decision != "undecided") {
    throw InputError("decision must be one of ban, clear, undecided");
  }
  if (doc.contains("note") && !doc["note"].is_string()) throw InputError("note must be a string");
  if (cluster == kNoise) throw InputError("verdicts apply to clusters, not to the noise group");
  auto v = run.view(q, opts_);
  run.members_of(*v, cluster);  // existence check
  json record{{"q", q},
              {"q_key", layout::q_key(q)},
              {"cluster", cluster},
              {"decision", decision},
              {"note", doc.value("note", std::string())},
              {"timestamp", utc_now()}};
  return json_response(run.append_verdict(record), 201);
}

ApiResponse ApiService::verdicts(Run& run, double q, std::int32_t cluster) {
  json list = json::array();
  const auto key = layout::q_key(q);
  for (const auto& v : run.verdict_history()) {
    if (v.at("q_key") == key && v.at("cluster") == cluster) list.push_back(v);
  }
  return json_response(json{{"version", 1}, {"run", run.id}, {"q", q}, {"cluster", cluster_label(cluster)}, {"history", list}});
}

ApiResponse ApiService::projection(Run& run, std::optional<double> q) {
  std::shared_ptr<const QView> v;
  if (q) v = run.view(*q, opts_);
  {
    std::lock_guard lock(run.compute);
    run.load();
  }
  const auto& reps = run.reps;
  Eigen::MatrixXd x = reps.vectors.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("projection eigen-decomposition failed");
  const auto dim = cov.rows();
  const auto n_comp = std::min<Eigen::Index>(2, dim);
  Eigen::MatrixXd basis(dim, n_comp);
  json explained = json::array();
  const double total = std::max(eig.eigenvalues().sum(), 1e-300);
  for (Eigen::Index c = 0; c < n_comp; ++c) {
    Eigen::VectorXd vec = eig.eigenvectors().col(dim - 1 - c);  // eigenvalues ascend
    Eigen::Index arg = 0;
    vec.cwiseAbs().maxCoeff(&arg);
    if (vec(arg) < 0) vec = -vec;  // sign convention: largest-magnitude loading positive
    basis.col(c) = vec;
    explained.push_back(std::max(0.0, eig.eigenvalues()(dim - 1 - c)) / total);
  }
  const Eigen::MatrixXd proj = x * basis;
  json points = json::array();
  for (std::size_t i = 0; i < reps.size(); ++i) {
    json p = key_json(reps.keys[i]);
    p["x"] = proj(static_cast<Eigen::Index>(i), 0);
    p["y"] = n_comp > 1 ? proj(static_cast<Eigen::Index>(i), 1) : 0.0;
    if (v) {
      const auto label = v->assignment.label_of(reps.keys[i]);
      p["cluster"] = label == kNoise ? json("noise") : json(label);
    }
    points.push_back(p);
  }
  json body{{"version", 1}, {"run", run.id}, {"method", "pca"}, {"explained_variance_ratio", explained}, {"points", points}};
  if (q) body["q"] = *q;
  return json_response(body);
}

// ---------------------------------------------------------------- http

struct HttpServer::Impl {
  ApiService& api;
  httplib::Server server;
  explicit Impl(ApiService& a) : api(a) {}
};

HttpServer::HttpServer(ApiService& api, std::optional<fs::path> static_dir) : impl_(std::make_unique<Impl>(api)) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    auto out = impl_->api.handle(r);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(R"(/v1(/.*)?)", forward);
  impl_->server.Post(R"(/v1(/.*)?)", forward);
  impl_->server.Options(R"(/v1(/.*)?)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (static_dir) {
    if (!impl_->server.set_mount_point("/", static_dir->string())) {
      throw IoError("static directory not found: '" + static_dir->string() + "'");
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace trajmine
