#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <sys/wait.h>
#include <thread>

#include "../support/small_run.hpp"
#include "trajmine/heatmap.hpp"
#include "trajmine/io.hpp"
#include "trajmine/pipeline.hpp"
#include "trajmine/service.hpp"

// After Eigen: resolv.h defines a `_res` macro that breaks Eigen headers.
#include <httplib.h>

using namespace trajmine;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Fresh copy of the shared run so verdicts and cached q results start empty.
fs::path fresh_copy(const std::string& name) {
  const auto dst = fs::temp_directory_path() / "trajmine_service_runs" / name;
  fs::remove_all(dst);
  fs::create_directories(dst.parent_path());
  fs::copy(small_run::shared(), dst, fs::copy_options::recursive);
  fs::remove_all(dst / layout::kClusters);
  return dst;
}

ApiResponse get(ApiService& api, const std::string& path, std::map<std::string, std::string> query = {}) {
  return api.handle({"GET", path, std::move(query), ""});
}

json get_json(ApiService& api, const std::string& path, std::map<std::string, std::string> query = {}) {
  auto r = get(api, path, std::move(query));
  INFO(r.body);
  REQUIRE(r.status == 200);
  return json::parse(r.body);
}

/// First cluster id at the smallest q in the list that yields one.
std::pair<std::string, std::int32_t> find_cluster(ApiService& api, const std::string& base) {
  for (const char* q : {"0.3", "0.5", "0.8"}) {
    auto body = get_json(api, base + "/clusters", {{"q", q}});
    if (!body["clusters"].empty()) return {q, body["clusters"][0]["id"].get<std::int32_t>()};
  }
  FAIL("no clusters at any q");
  return {};
}

struct CliResult {
  int status;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TRAJMINE_CLI) + " " + args + " 2>&1";
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (auto n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

}  // namespace

TEST_CASE("run store discovers single runs and parents of runs") {
  const auto dir = fresh_copy("alpha");
  RunStore single(dir);
  CHECK(single.run_ids() == std::vector<std::string>{"alpha"});
  CHECK(single.run_dir("alpha") == dir);
  CHECK_THROWS_AS(single.run_dir("beta"), NotFoundError);

  RunStore parent(dir.parent_path());
  auto ids = parent.run_ids();
  CHECK(std::find(ids.begin(), ids.end(), "alpha") != ids.end());
}

TEST_CASE("runs listing and run detail") {
  const auto dir = fresh_copy("listing");
  ApiService api{RunStore(dir)};
  auto runs = get_json(api, "/v1/runs");
  REQUIRE(runs["runs"].size() == 1);
  const auto& r = runs["runs"][0];
  CHECK(r["id"] == "listing");
  CHECK(r["dim"] == 8);
  CHECK(r["player_days"].get<int>() > 30);
  CHECK(r["cached_q"].empty());
  CHECK(r["model"]["d_model"] == 8);
  CHECK(get_json(api, "/v1/runs/listing") == r);

  get_json(api, "/v1/runs/listing/clusters", {{"q", "0.2"}});
  CHECK(get_json(api, "/v1/runs/listing")["cached_q"] == json::array({"0.2"}));
}

TEST_CASE("cluster listing grows monotonically with q and matches the CLI artifacts") {
  const auto dir = fresh_copy("sweep");
  ApiService api{RunStore(dir)};
  auto low = get_json(api, "/v1/runs/sweep/clusters", {{"q", "0.05"}});
  auto high = get_json(api, "/v1/runs/sweep/clusters", {{"q", "0.20"}});
  CHECK(low["q"] == 0.05);
  CHECK(high["epsilon"].get<double>() >= low["epsilon"].get<double>());
  CHECK(high["detecting_count"].get<int>() >= low["detecting_count"].get<int>());
  CHECK(high["detecting_count"].get<int>() + high["noise_count"].get<int>() ==
        get_json(api, "/v1/runs")["runs"][0]["player_days"].get<int>());
  // Default q is 0.05.
  CHECK(get_json(api, "/v1/runs/sweep/clusters") == low);

  // The service writes the same bytes as the stage functions run directly.
  const auto other = fresh_copy("sweep_cli");
  std::ostringstream log;
  const auto qdir = layout::cluster_dir(other, 0.2);
  run_cluster({other / layout::kReps, 0.2, {}, qdir / layout::kAssignment}, log);
  run_evaluate({qdir / layout::kAssignment, other, other / layout::kAccess, other / layout::kReps, 0,
                qdir / layout::kMetrics},
               log);
  const auto served = layout::cluster_dir(dir, 0.2);
  CHECK(read_file(served / layout::kAssignment) == read_file(qdir / layout::kAssignment));
  CHECK(read_file(served / layout::kMetrics) == read_file(qdir / layout::kMetrics));

  // A second service instance answers from the cache with identical bodies.
  ApiService cached{RunStore(dir)};
  CHECK(get_json(cached, "/v1/runs/sweep/clusters", {{"q", "0.2"}}) == high);
}

TEST_CASE("members, heatmaps and projection") {
  const auto dir = fresh_copy("detail");
  ApiService api{RunStore(dir)};
  const std::string base = "/v1/runs/detail";
  auto [q, cid] = find_cluster(api, base);
  const auto cpath = base + "/clusters/" + std::to_string(cid);

  auto members = get_json(api, cpath + "/members", {{"q", q}});
  const auto n = members["members"].size();
  CHECK(n >= 2);
  CHECK(members["size"] == n);
  CHECK(members["pairwise_jaccard"]["pairs"] == n * (n - 1) / 2);
  for (const auto& m : members["members"]) {
    CHECK(m.contains("nearest"));
    CHECK(m["pos_jaccard"].get<double>() >= 0.0);
    CHECK(m["pos_jaccard"].get<double>() <= 1.0);
  }
  CHECK(members["verdict"].is_null());

  auto png = get(api, cpath + "/heatmap", {{"q", q}});
  REQUIRE(png.status == 200);
  CHECK(png.content_type == "image/png");
  auto img = decode_png(png.body);
  auto rows = get_json(api, cpath + "/heatmap/rows", {{"q", q}});
  CHECK(rows["rows"].size() == n);
  CHECK(img.width == 1440);
  CHECK(img.height == static_cast<std::int64_t>(n));

  auto noise = get(api, base + "/clusters/noise/heatmap", {{"q", q}});
  CHECK((noise.status == 200 || noise.status == 404));

  auto proj = get_json(api, base + "/projection", {{"q", q}});
  CHECK(proj["points"].size() == get_json(api, "/v1/runs")["runs"][0]["player_days"].get<std::size_t>());
  double ratio_sum = 0;
  for (const auto& r : proj["explained_variance_ratio"]) ratio_sum += r.get<double>();
  CHECK(ratio_sum <= 1.0 + 1e-9);
  CHECK(proj["explained_variance_ratio"][0] >= proj["explained_variance_ratio"][1]);
  std::size_t in_cluster = 0;
  for (const auto& p : proj["points"]) in_cluster += p["cluster"] == cid;
  CHECK(in_cluster == n);
  CHECK(!get_json(api, base + "/projection")["points"][0].contains("cluster"));
}

TEST_CASE("verdicts are append-only and read back immediately") {
  const auto dir = fresh_copy("verdicts");
  ApiService api{RunStore(dir)};
  const std::string base = "/v1/runs/verdicts";
  auto [q, cid] = find_cluster(api, base);
  const auto cpath = base + "/clusters/" + std::to_string(cid);

  auto post = [&](const json& body) { return api.handle({"POST", cpath + "/verdict", {{"q", q}}, body.dump()}); };
  auto first = post({{"decision", "ban"}, {"note", "same route every day"}});
  REQUIRE(first.status == 201);
  CHECK(json::parse(first.body)["decision"] == "ban");
  CHECK(get_json(api, base + "/clusters", {{"q", q}})["clusters"][0]["verdict"]["decision"] == "ban");

  REQUIRE(post({{"decision", "clear"}}).status == 201);
  auto history = get_json(api, cpath + "/verdicts", {{"q", q}})["history"];
  REQUIRE(history.size() == 2);
  CHECK(history[0]["decision"] == "ban");
  CHECK(history[1]["decision"] == "clear");
  CHECK(history[0]["seq"].get<int>() < history[1]["seq"].get<int>());
  CHECK(get_json(api, cpath + "/members", {{"q", q}})["verdict"]["decision"] == "clear");

  // Verdicts at another q do not leak.
  CHECK(get_json(api, cpath + "/verdicts", {{"q", "0.9"}})["history"].empty());

  // The log survives a service restart.
  ApiService restarted{RunStore(dir)};
  CHECK(get_json(restarted, cpath + "/verdicts", {{"q", q}})["history"].size() == 2);
  const auto log_lines = read_file(dir / layout::kVerdicts);
  CHECK(std::count(log_lines.begin(), log_lines.end(), '\n') == 2);

  CHECK(post({{"decision", "maybe"}}).status == 400);
  CHECK(api.handle({"POST", cpath + "/verdict", {{"q", q}}, "not json"}).status == 400);
  CHECK(api.handle({"POST", base + "/clusters/noise/verdict", {{"q", q}}, R"({"decision":"ban"})"}).status == 400);
  CHECK(api.handle({"POST", base + "/clusters/9999/verdict", {{"q", q}}, R"({"decision":"ban"})"}).status == 404);
  CHECK(get_json(api, cpath + "/verdicts", {{"q", q}})["history"].size() == 2);
}

TEST_CASE("error responses") {
  const auto dir = fresh_copy("errors");
  ApiService api{RunStore(dir)};
  auto check_error = [](const ApiResponse& r, int status, const std::string& code) {
    INFO(r.body);
    CHECK(r.status == status);
    auto body = json::parse(r.body);
    CHECK(body["error"]["code"] == code);
    CHECK(!body["error"]["message"].get<std::string>().empty());
  };
  check_error(get(api, "/v1/runs/nope"), 404, "not_found");
  check_error(get(api, "/v2/runs"), 404, "not_found");
  check_error(get(api, "/v1/runs/errors/elsewhere"), 404, "not_found");
  check_error(get(api, "/v1/runs/errors/clusters", {{"q", "1.5"}}), 400, "invalid_input");
  check_error(get(api, "/v1/runs/errors/clusters", {{"q", "zero"}}), 400, "invalid_input");
  check_error(get(api, "/v1/runs/errors/clusters/abc/members"), 400, "invalid_input");
  check_error(get(api, "/v1/runs/errors/clusters/4242/members", {{"q", "0.3"}}), 404, "not_found");
  check_error(api.handle({"POST", "/v1/runs", {}, ""}), 405, "method_not_allowed");
  check_error(get(api, "/v1/runs/errors/clusters/0/verdict"), 405, "method_not_allowed");
}

TEST_CASE("HTTP server round trip") {
  const auto dir = fresh_copy("http");
  const auto assets = fs::temp_directory_path() / "trajmine_service_assets";
  write_file(assets / "index.html", "<html>console</html>");
  ApiService api{RunStore(dir)};
  HttpServer server(api, assets);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread serving([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(120, 0);
  auto runs = client.Get("/v1/runs");
  REQUIRE(runs);
  CHECK(runs->status == 200);
  CHECK(runs->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(runs->body)["runs"][0]["id"] == "http");

  auto clusters = client.Get("/v1/runs/http/clusters?q=0.3");
  REQUIRE(clusters);
  CHECK(clusters->status == 200);
  CHECK(json::parse(clusters->body) == get_json(api, "/v1/runs/http/clusters", {{"q", "0.3"}}));

  auto missing = client.Get("/v1/runs/none");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  auto bad = client.Post("/v1/runs/http/clusters/0/verdict?q=0.3", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto page = client.Get("/index.html");
  REQUIRE(page);
  CHECK(page->body == "<html>console</html>");

  server.stop();
  serving.join();
}

TEST_CASE("CLI error lines and exit codes") {
  auto r = run_cli("cluster --reps /nonexistent/reps.bin --q 1.5");
  CHECK(r.status == 2);
  auto err = json::parse(r.output);
  CHECK(err["error"]["code"] == "invalid_input");

  r = run_cli("cluster --reps /nonexistent/reps.bin --q 0.1");
  CHECK(r.status == 1);
  CHECK(json::parse(r.output)["error"]["code"] == "io");

  r = run_cli("frobnicate");
  CHECK(r.status == 2);
  CHECK(json::parse(r.output)["error"]["code"] == "usage");

  r = run_cli("serve --run /tmp --listen nohost");
  CHECK(r.status == 2);

  const auto dir = fresh_copy("cli");
  r = run_cli("cluster --reps " + (dir / layout::kReps).string() + " --q 0.3");
  CHECK(r.status == 0);
  CHECK(r.output.find("assignment.json") != std::string::npos);
  r = run_cli("evaluate --assignment " + (layout::cluster_dir(dir, 0.3) / layout::kAssignment).string() + " --trajs " +
              dir.string());
  CHECK(r.status == 0);
  CHECK(r.output.find("\"detecting_count\"") != std::string::npos);
}
