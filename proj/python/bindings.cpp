#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fedclust/datagen.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/experiment.hpp"
#include "fedclust/kmeans.hpp"
#include "fedclust/metrics.hpp"

namespace py = pybind11;
using namespace fedclust;

namespace {

using FloatArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return DenseMatrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

FloatArray to_array(const DenseMatrix& m) {
  FloatArray out({m.rows(), m.cols()});
  if (m.size() > 0) std::memcpy(out.mutable_data(), m.values().data(), m.size() * sizeof(double));
  return out;
}

std::vector<std::size_t> to_labels(const LabelArray& a) {
  if (a.ndim() != 1) throw ShapeError("labels must be a 1-D array");
  std::vector<std::size_t> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] < 0) throw ContractError("labels must be non-negative");
    out[i] = static_cast<std::size_t>(a.data()[i]);
  }
  return out;
}

template <typename T>
py::array_t<std::int64_t> to_label_array(const std::vector<T>& labels) {
  py::array_t<std::int64_t> out(static_cast<py::ssize_t>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) out.mutable_data()[i] = static_cast<std::int64_t>(labels[i]);
  return out;
}

LabeledDataset to_dataset(const FloatArray& features, const LabelArray& labels) {
  LabeledDataset ds;
  ds.features = to_matrix(features);
  for (std::size_t l : to_labels(labels)) ds.labels.push_back(static_cast<std::uint32_t>(l));
  ds.validate();
  return ds;
}

nlohmann::json to_json_value(const py::object& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json_value(const nlohmann::json& value) {
  return py::module_::import("json").attr("loads")(value.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cluster-contrastive federated clustering core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "gaussian_mixture",
      [](std::size_t k, std::size_t n_per, std::size_t dim, double separation, std::uint64_t seed) {
        const auto ds = gaussian_mixture(k, n_per, dim, separation, seed);
        return py::make_tuple(to_array(ds.features), to_label_array(ds.labels));
      },
      py::arg("k"), py::arg("n_per"), py::arg("dim"), py::arg("separation"), py::arg("seed") = 0,
      "Isotropic unit-variance mixture; returns (features, labels).");

  m.def(
      "partition",
      [](const LabelArray& labels, std::size_t num_clients, double heterogeneity, std::size_t samples_per_client,
         std::uint64_t seed) {
        LabeledDataset ds;
        const auto l = to_labels(labels);
        ds.features = DenseMatrix(l.size(), 1);
        for (std::size_t v : l) ds.labels.push_back(static_cast<std::uint32_t>(v));
        ds.validate();
        const auto split = partition(ds, {num_clients, heterogeneity, samples_per_client, seed});
        py::list out;
        for (const auto& idx : split.client_indices) out.append(to_label_array(idx));
        return out;
      },
      py::arg("labels"), py::arg("num_clients"), py::arg("heterogeneity"), py::arg("samples_per_client"),
      py::arg("seed") = 0, "Per-client index arrays of a label-skewed split.");

  m.def(
      "lloyd",
      [](const FloatArray& points, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t max_iters,
         double tol) {
        const auto r = lloyd(to_matrix(points), k, seed, {max_iters, tol, restarts});
        py::dict out;
        out["labels"] = to_label_array(r.assignment.labels);
        out["centroids"] = to_array(r.centroids.centroids);
        out["inertia"] = r.assignment.inertia;
        out["inertia_trace"] = r.inertia_trace;
        out["iterations"] = r.iterations;
        return out;
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("restarts") = 10, py::arg("max_iters") = 100,
      py::arg("tol") = 1e-6, "k-means++ seeded Lloyd iterations, best of `restarts`.");

  m.def(
      "nmi", [](const LabelArray& p, const LabelArray& t) { return nmi(to_labels(p), to_labels(t)); },
      py::arg("predicted"), py::arg("truth"));
  m.def(
      "kappa", [](const LabelArray& p, const LabelArray& t) { return kappa(to_labels(p), to_labels(t)); },
      py::arg("predicted"), py::arg("truth"));
  m.def(
      "calinski_harabasz",
      [](const FloatArray& x, const LabelArray& l) { return calinski_harabasz(to_matrix(x), to_labels(l)); },
      py::arg("points"), py::arg("labels"));
  m.def(
      "knn_probe",
      [](const FloatArray& train, const LabelArray& train_labels, const FloatArray& test,
         const LabelArray& test_labels, const std::vector<std::size_t>& ks) {
        return knn_probe(to_matrix(train), to_labels(train_labels), to_matrix(test), to_labels(test_labels), ks);
      },
      py::arg("train"), py::arg("train_labels"), py::arg("test"), py::arg("test_labels"),
      py::arg("ks") = std::vector<std::size_t>{1, 5, 10});

  m.def(
      "run_experiment",
      [](const py::object& config, std::size_t threads) {
        const auto cfg = parse_config(to_json_value(config));
        ExecutionOptions exec;
        exec.threads = threads;
        std::vector<ResultRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_experiment(cfg, exec);
        }
        return from_json_value(rows_to_json(rows));
      },
      py::arg("config"), py::arg("threads") = 1,
      "Runs a config dict (same schema as the CLI) and returns the result rows.");

  m.def(
      "run_on_arrays",
      [](const FloatArray& features, const LabelArray& labels, const py::object& run_config,
         double heterogeneity, std::size_t num_clients, std::size_t samples_per_client) {
        const auto ds = to_dataset(features, labels);
        nlohmann::json doc{{"run", to_json_value(run_config)}};
        const auto cfg = parse_config(doc);
        RunConfig rc = cfg.run;
        rc.k = cfg.k.value_or(ds.num_classes());
        const auto split = partition(ds, {num_clients, heterogeneity, samples_per_client, rc.seed});
        RunResult result;
        {
          py::gil_scoped_release release;
          result = run_algorithm(rc, ds, split);
        }
        py::dict out;
        out["labels"] = to_label_array(result.final_assignment.labels);
        out["nmi"] = result.final_record.nmi;
        out["kappa"] = result.final_record.kappa;
        out["ch_score"] = result.final_record.ch_score;
        py::list per_round;
        for (const auto& r : result.rounds) {
          py::dict row;
          row["round"] = r.round;
          row["loss_total"] = r.loss ? py::object(py::float_(r.loss->total)) : py::object(py::none());
          row["nmi"] = r.nmi;
          row["kappa"] = r.kappa;
          per_round.append(row);
        }
        out["rounds"] = per_round;
        out["disconnected"] = result.disconnected;
        return out;
      },
      py::arg("features"), py::arg("labels"), py::arg("run") = py::dict(), py::arg("heterogeneity") = 0.0,
      py::arg("num_clients") = 10, py::arg("samples_per_client") = 100,
      "Partitions (features, labels) and runs one algorithm; `run` uses the config's run section keys.");

  m.def(
      "summarize_csv",
      [](const std::string& path) {
        py::list out;
        for (const auto& s : summarize_csv(path)) {
          py::dict row;
          row["algorithm"] = s.algorithm;
          row["p"] = s.p;
          row["lambda"] = s.lambda;
          row["disconnection_rate"] = s.disconnection_rate;
          row["runs"] = s.runs;
          row["nmi_mean"] = s.nmi_mean;
          row["nmi_std"] = s.nmi_std;
          row["kappa_mean"] = s.kappa_mean;
          row["kappa_std"] = s.kappa_std;
          out.append(row);
        }
        return out;
      },
      py::arg("csv_path"));
}
