// Python module trajmine._core: numeric kernels on numpy arrays, the pipeline
// stages, and an in-process client for the /v1 review API.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "trajmine/clusterer.hpp"
#include "trajmine/error.hpp"
#include "trajmine/geo.hpp"
#include "trajmine/metrics.hpp"
#include "trajmine/pipeline.hpp"
#include "trajmine/service.hpp"

namespace py = pybind11;
using namespace trajmine;

namespace {

using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Minute-indexed cell ids: entry t is the cell at minute t + 1, negative when offline.
MinuteCells minute_cells(py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> cells) {
  if (cells.ndim() != 1 || cells.shape(0) != kMinutesPerDay) {
    throw InputError("minute cells must be a 1-d array of length " + std::to_string(kMinutesPerDay));
  }
  MinuteCells out(kMinutesPerDay);
  auto view = cells.unchecked<1>();
  for (py::ssize_t t = 0; t < kMinutesPerDay; ++t) {
    if (view(t) >= 0) out[t] = CellId{static_cast<std::int32_t>(view(t) & 0x1FFFFF), static_cast<std::int32_t>(view(t) >> 21), 0};
  }
  return out;
}

std::vector<PointKey> sequential_keys(std::size_t n) {
  std::vector<PointKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = {static_cast<std::int64_t>(i), 1};
  return keys;
}

KnnMode knn_mode(const std::string& name) {
  if (name == "all_k") return KnnMode::all_k;
  if (name == "kth") return KnnMode::kth;
  throw InputError("knn mode must be all_k or kth");
}

std::vector<std::string> output_paths(const StageOutcome& out) {
  std::vector<std::string> paths;
  for (const auto& p : out.outputs) paths.push_back(p.string());
  return paths;
}

/// Runs a stage with its log routed to a Python string.
template <class Options, class Fn>
py::dict run_stage(Fn fn, const Options& opts) {
  std::ostringstream log;
  StageOutcome out;
  {
    py::gil_scoped_release release;
    out = fn(opts, log);
  }
  py::dict d;
  d["skipped"] = out.skipped;
  d["outputs"] = output_paths(out);
  d["log"] = log.str();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Trajectory representation pipeline for bot-group detection";

  // Later translators run first: specific codes map to builtins, the rest to trajmine.Error.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InputError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const NotFoundError& e) {
      PyErr_SetString(PyExc_KeyError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.attr("MINUTES_PER_DAY") = kMinutesPerDay;
  m.attr("NOISE") = kNoise;

  m.def(
      "bin_cell",
      [](std::int32_t x, std::int32_t y, std::int32_t continent, std::optional<std::string> world) {
        const auto w = world ? WorldConfig::load(*world) : WorldConfig::default_world();
        const auto c = bin_cell({x, y, continent}, w);
        return py::make_tuple(c.bx, c.by, c.continent);
      },
      py::arg("x"), py::arg("y"), py::arg("continent"), py::arg("world") = py::none(),
      "Cell (bx, by, continent) of a location under a world config file (built-in world by default).");

  m.def(
      "knn_distances",
      [](const FloatRows& points, std::int32_t k, const std::string& mode) {
        Matrix<float> p = points;
        return knn_distances(p, k, knn_mode(mode));
      },
      py::arg("points"), py::arg("k") = 4, py::arg("mode") = "all_k",
      "Flat list of nearest-neighbour distances (self excluded).");

  m.def(
      "select_epsilon", [](const std::vector<double>& d, double q) { return select_epsilon(d, q); },
      py::arg("distances"), py::arg("q"), "Linear-interpolation q-quantile of the distances.");

  m.def(
      "dbscan",
      [](const FloatRows& points, double epsilon, std::int32_t min_samples) {
        Matrix<float> p = points;
        const auto keys = sequential_keys(static_cast<std::size_t>(p.rows()));
        return dbscan(keys, p, epsilon, min_samples).labels;
      },
      py::arg("points"), py::arg("epsilon"), py::arg("min_samples") = 4,
      "Cluster labels per row; NOISE for unclustered rows.");

  m.def(
      "cluster",
      [](const FloatRows& points, double q, std::int32_t k, std::int32_t min_samples, const std::string& mode) {
        RepresentationTable reps;
        reps.keys = sequential_keys(static_cast<std::size_t>(points.rows()));
        reps.vectors = points;
        auto a = cluster_representations(reps, q, {k, min_samples, knn_mode(mode)});
        return py::make_tuple(a.labels, a.epsilon);
      },
      py::arg("points"), py::arg("q"), py::arg("k") = 4, py::arg("min_samples") = 4, py::arg("mode") = "all_k",
      "Quantile-epsilon DBSCAN; returns (labels, epsilon).");

  m.def(
      "time_jaccard",
      [](py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> a,
         py::array_t<std::int64_t, py::array::c_style | py::array::forcecast> b) {
        return time_jaccard(minute_cells(a), minute_cells(b));
      },
      py::arg("a"), py::arg("b"),
      "Time-aware Jaccard of two 1440-minute cell-id arrays (negative = offline).");

  m.def(
      "load_representations",
      [](const std::string& path) {
        auto reps = RepresentationTable::load(path);
        std::vector<std::pair<std::int64_t, std::int32_t>> keys;
        for (const auto& k : reps.keys) keys.emplace_back(k.player_id, k.day);
        FloatRows v = reps.vectors;
        return py::make_tuple(keys, v);
      },
      py::arg("path"), "Returns ([(player_id, day)], float32 matrix).");

  m.def("q_key", &layout::q_key, py::arg("q"), "Directory key of a quantile, e.g. 0.05 -> '0.05'.");

  m.def(
      "simulate",
      [](const std::string& out, std::optional<std::string> scenario, std::optional<std::string> world,
         std::uint64_t seed) {
        SimulateOptions o;
        o.out = out;
        if (scenario) o.scenario = *scenario;
        if (world) o.world = *world;
        o.seed = seed;
        return run_stage(run_simulate, o);
      },
      py::arg("out"), py::arg("scenario") = py::none(), py::arg("world") = py::none(), py::arg("seed") = 2024);

  m.def(
      "prep",
      [](const std::string& logs, const std::string& world, const std::string& out, double mask_rate,
         std::uint64_t seed) { return run_stage(run_prep, PrepOptions{logs, world, mask_rate, seed, out}); },
      py::arg("logs"), py::arg("world"), py::arg("out"), py::arg("mask_rate") = 0.2, py::arg("seed") = 1);

  m.def(
      "train",
      [](const std::string& data, const std::string& out, const std::string& preset,
         std::optional<std::string> model_config, std::int32_t epochs, std::optional<std::int32_t> min_epochs,
         std::int32_t samples_per_epoch, std::int32_t batch_size, double learning_rate, std::uint64_t seed,
         std::int32_t workers) {
        TrainOptions o;
        o.data = data;
        o.out = out;
        o.preset = preset;
        if (model_config) o.model_config = *model_config;
        o.train.max_epochs = epochs;
        o.train.min_epochs = min_epochs.value_or(epochs);
        o.train.samples_per_epoch = samples_per_epoch;
        o.train.batch_size = batch_size;
        o.train.learning_rate = learning_rate;
        o.train.seed = seed;
        o.train.workers = workers;
        return run_stage(run_train, o);
      },
      py::arg("data"), py::arg("out"), py::arg("preset") = "dagger", py::arg("model_config") = py::none(),
      py::arg("epochs") = 70, py::arg("min_epochs") = py::none(), py::arg("samples_per_epoch") = 0,
      py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-4, py::arg("seed") = 1, py::arg("workers") = 1);

  m.def(
      "embed",
      [](const std::string& model, const std::string& trajs, const std::string& out, std::int32_t workers) {
        return run_stage(run_embed, EmbedOptions{model, trajs, out, workers});
      },
      py::arg("model"), py::arg("trajs"), py::arg("out"), py::arg("workers") = 1);

  m.def(
      "cluster_stage",
      [](const std::string& reps, double q, const std::string& out) {
        return run_stage(run_cluster, ClusterStageOptions{reps, q, {}, out});
      },
      py::arg("reps"), py::arg("q"), py::arg("out"));

  m.def(
      "evaluate",
      [](const std::string& assignment, const std::string& trajs, const std::string& access, const std::string& reps,
         const std::string& out, std::uint64_t seed) {
        return run_stage(run_evaluate, EvaluateOptions{assignment, trajs, access, reps, seed, out});
      },
      py::arg("assignment"), py::arg("trajs"), py::arg("access"), py::arg("reps"), py::arg("out"),
      py::arg("seed") = 0);

  py::class_<ApiService>(m, "ApiClient", "In-process client for the /v1 review API over a run store.")
      .def(py::init([](const std::string& root, std::uint64_t metrics_seed) {
             ServiceOptions o;
             o.metrics_seed = metrics_seed;
             return std::make_unique<ApiService>(RunStore(root), o);
           }),
           py::arg("root"), py::arg("metrics_seed") = 0)
      .def(
          "request",
          [](ApiService& api, const std::string& method, const std::string& path,
             std::map<std::string, std::string> query, const std::string& body) {
            ApiResponse r;
            {
              py::gil_scoped_release release;
              r = api.handle({method, path, std::move(query), body});
            }
            return py::make_tuple(r.status, r.content_type, py::bytes(r.body));
          },
          py::arg("method"), py::arg("path"), py::arg("query") = std::map<std::string, std::string>{},
          py::arg("body") = "", "Returns (status, content_type, body bytes).");
}
