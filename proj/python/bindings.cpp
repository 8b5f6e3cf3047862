// Python bindings for the lpd core: numerics, losses, model, ranking metrics, data and training.

#include "lpd/feature_store.hpp"
#include "lpd/losses.hpp"
#include "lpd/model.hpp"
#include "lpd/numerics.hpp"
#include "lpd/retrieval_eval.hpp"
#include "lpd/synthetic.hpp"
#include "lpd/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

namespace py = pybind11;
using namespace lpd;

namespace {

ModelDims dims_of(const std::vector<std::size_t>& text_dims, const std::vector<std::size_t>& video_dims,
                  std::size_t common_dim) {
  return {text_dims, video_dims, common_dim};
}

py::dict itrl_dict(const Matrix& sims, double margin) {
  const auto r = itrl(sims, margin);
  py::dict d;
  d["mean"] = r.mean;
  d["row_losses"] = r.row_losses;
  d["hardest_negatives"] = r.hardest_negatives;
  d["grad"] = r.grad;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["map"] = r.mean_average_precision;
  d["precision"] = r.mean_precision;
  py::dict per_query;
  for (const auto& q : r.queries) per_query[py::str(q.query_id)] = q.average_precision;
  d["average_precision"] = per_query;
  d["iou"] = r.iou.values;
  d["mean_iou"] = r.iou.mean_off_diagonal;
  d["warnings"] = r.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-space text-to-video retrieval with partial de-correlation (C++ core)";

  py::register_exception<FeatureStoreError>(m, "FeatureStoreError", PyExc_ValueError);
  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  // numerics
  m.def("cosine", [](const std::vector<double>& u, const std::vector<double>& v) { return cosine(u, v); });
  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); });
  m.def("softmax", [](const std::vector<double>& x) { return softmax(x); });
  m.def(
      "histogram_entropy",
      [](const std::vector<double>& values, std::size_t bins, double eps) { return histogram_entropy(values, bins, eps); },
      py::arg("values"), py::arg("bins") = kDefaultEntropyBins, py::arg("eps") = kDefaultEntropyEps);

  // losses
  m.def("itrl", &itrl_dict, py::arg("sims"), py::arg("margin") = 0.2);
  m.def(
      "dcl_pair",
      [](const Matrix& a, const Matrix& b, const std::string& mode) {
        const auto r = dcl_pair(a, b, parse_dcl_mode(mode));
        return py::make_tuple(r.value, r.grad_m, r.grad_n);
      },
      py::arg("m"), py::arg("n"), py::arg("mode") = "partial");
  m.def(
      "dcl_all",
      [](const std::vector<Matrix>& spaces, const std::string& mode) {
        return dcl_all(spaces, parse_dcl_mode(mode)).value;
      },
      py::arg("spaces"), py::arg("mode") = "partial");
  m.def(
      "embedding_entropy",
      [](const Matrix& e, std::size_t bins, double eps) { return embedding_entropy(e, bins, eps); }, py::arg("embeddings"),
      py::arg("bins") = kDefaultEntropyBins, py::arg("eps") = kDefaultEntropyEps);
  m.def(
      "entropy_weights",
      [](const std::vector<double>& entropies, const std::string& gate) {
        LossConfig cfg;
        cfg.gate_comparison = parse_gate_comparison(gate);
        const auto r = weights_from_entropies(entropies, cfg);
        return py::make_tuple(r.weights, std::vector<bool>(r.gates.begin(), r.gates.end()));
      },
      py::arg("entropies"), py::arg("gate") = ">=");

  // retrieval metrics
  m.def(
      "rank",
      [](const std::vector<double>& scores, const std::vector<std::string>& ids, std::size_t depth) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& item : rank(scores, ids, depth).items) out.emplace_back(item.id, item.score);
        return out;
      },
      py::arg("scores"), py::arg("ids"), py::arg("depth"));
  m.def(
      "average_precision",
      [](const std::vector<std::string>& ranked, const std::set<std::string>& relevant) {
        RankedList r;
        for (const auto& id : ranked) r.items.push_back({id, 0.0});
        return average_precision(r, relevant);
      },
      py::arg("ranked_ids"), py::arg("relevant"));

  // data
  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("queries", &SyntheticConfig::queries)
      .def_readwrite("clusters", &SyntheticConfig::clusters)
      .def_readwrite("relevant_per_cluster", &SyntheticConfig::relevant_per_cluster)
      .def_readwrite("distractors", &SyntheticConfig::distractors)
      .def_readwrite("val_queries", &SyntheticConfig::val_queries)
      .def_readwrite("val_distractors", &SyntheticConfig::val_distractors)
      .def_readwrite("train_topics", &SyntheticConfig::train_concepts)
      .def_readwrite("train_videos_per_cluster", &SyntheticConfig::train_videos_per_cluster)
      .def_readwrite("captions_per_video", &SyntheticConfig::captions_per_video)
      .def_readwrite("text_dims", &SyntheticConfig::text_dims)
      .def_readwrite("video_dims", &SyntheticConfig::video_dims)
      .def_readwrite("latent_dim", &SyntheticConfig::latent_dim)
      .def_readwrite("noise", &SyntheticConfig::noise)
      .def_readwrite("cluster_spread", &SyntheticConfig::cluster_spread)
      .def_readwrite("unseen_signal", &SyntheticConfig::unseen_signal);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("text_dims", &Dataset::text_dims)
      .def_property_readonly("video_dims", &Dataset::video_dims)
      .def_property_readonly("train_pairs",
                             [](const Dataset& d) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& p : d.train.pairs) out.emplace_back(p.text_id, p.video_id);
                               return out;
                             })
      .def_property_readonly("test_relevance", [](const Dataset& d) { return d.test.relevance; })
      .def_property_readonly("test_collection", [](const Dataset& d) { return d.test.collection; })
      .def("features",
           [](const Dataset& d, const std::string& modality, std::size_t index, const std::vector<std::string>& ids) {
             const auto& tables = parse_modality(modality) == Modality::kText ? d.text : d.video;
             if (index >= tables.size()) throw py::index_error("feature index out of range");
             return tables[index].gather_ids(ids);
           },
           py::arg("modality"), py::arg("index"), py::arg("ids"));

  m.def("generate_synthetic", &generate_synthetic, py::arg("config") = SyntheticConfig{}, py::arg("seed") = 0);
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));

  // model
  py::class_<ModelParams>(m, "ModelParams")
      .def_static(
          "initialize",
          [](const std::vector<std::size_t>& text_dims, const std::vector<std::size_t>& video_dims,
             std::size_t common_dim, const std::string& topology, std::uint64_t seed) {
            return ModelParams::initialize(dims_of(text_dims, video_dims, common_dim), parse_topology(topology), seed);
          },
          py::arg("text_dims"), py::arg("video_dims"), py::arg("common_dim") = 512, py::arg("topology") = "lpd",
          py::arg("seed") = 0)
      .def_property_readonly("topology", [](const ModelParams& p) { return to_string(p.topology); })
      .def_property_readonly("spaces", [](const ModelParams& p) { return p.dims.spaces(); })
      .def("parameter_count", &ModelParams::parameter_count)
      .def("flatten", &ModelParams::flatten)
      .def("assign", [](ModelParams& p, const std::vector<double>& flat) { p.assign(flat); })
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); })
      .def_static("load", &load_checkpoint);

  m.def(
      "forward",
      [](const ModelParams& p, const std::vector<Matrix>& text, const std::vector<Matrix>& video) {
        auto sims = forward(p, text, video).similarities;
        return py::make_tuple(sims.spaces, sims.aggregate);
      },
      py::arg("params"), py::arg("text_features"), py::arg("video_features"));

  // training
  py::class_<TrainingConfig>(m, "TrainingConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &TrainingConfig::batch_size)
      .def_readwrite("initial_lr", &TrainingConfig::initial_lr)
      .def_readwrite("lr_decay", &TrainingConfig::lr_decay)
      .def_readwrite("patience", &TrainingConfig::patience)
      .def_readwrite("max_epochs", &TrainingConfig::max_epochs)
      .def_readwrite("seed", &TrainingConfig::seed)
      .def_readwrite("common_dim", &TrainingConfig::common_dim)
      .def_readwrite("eval_depth", &TrainingConfig::eval_depth)
      .def_property(
          "topology", [](const TrainingConfig& c) { return to_string(c.topology); },
          [](TrainingConfig& c, const std::string& s) { c.topology = parse_topology(s); })
      .def_property(
          "dcl", [](const TrainingConfig& c) { return to_string(c.loss.dcl_mode); },
          [](TrainingConfig& c, const std::string& s) { c.loss.dcl_mode = parse_dcl_mode(s); })
      .def_property(
          "mtrl", [](const TrainingConfig& c) { return to_string(c.loss.mtrl_mode); },
          [](TrainingConfig& c, const std::string& s) { c.loss.mtrl_mode = parse_mtrl_mode(s); })
      .def_property(
          "dcl_weight", [](const TrainingConfig& c) { return c.loss.dcl_weight; },
          [](TrainingConfig& c, double w) { c.loss.dcl_weight = w; })
      .def_property(
          "margin", [](const TrainingConfig& c) { return c.loss.margin; },
          [](TrainingConfig& c, double v) { c.loss.margin = v; });

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("best_params", &TrainResult::best_params)
      .def_readonly("best_val_map", &TrainResult::best_val_map)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("early_stopped", &TrainResult::early_stopped)
      .def_property_readonly("epochs", [](const TrainResult& r) { return r.state.epoch; })
      .def_property_readonly("val_map_history", [](const TrainResult& r) {
        std::vector<double> out;
        for (const auto& row : r.state.telemetry) {
          if (row.val_map) out.push_back(*row.val_map);
        }
        return out;
      });

  m.def(
      "train",
      [](const Dataset& ds, const TrainingConfig& cfg, std::optional<std::filesystem::path> out_dir) {
        TrainOptions opt;
        opt.out_dir = std::move(out_dir);
        py::gil_scoped_release release;
        return train(ds, cfg, opt);
      },
      py::arg("dataset"), py::arg("config"), py::arg("out_dir") = py::none());

  m.def(
      "evaluate",
      [](const ModelParams& p, const Dataset& ds, const std::string& split, std::size_t depth, std::size_t k) {
        if (split != "val" && split != "test") throw py::value_error("split must be 'val' or 'test'");
        const auto report = evaluate_split(p, ds, split == "val" ? Split::kVal : Split::kTest,
                                           EvalOptions{depth, {k}, k});
        return report_dict(report);
      },
      py::arg("params"), py::arg("dataset"), py::arg("split") = "test", py::arg("depth") = 1000, py::arg("k") = 20);

  m.def(
      "gradcheck",
      [](const std::string& topology, const std::string& dcl, const std::string& mtrl, std::uint64_t seed) {
        GradCheckConfig cfg;
        cfg.topology = parse_topology(topology);
        cfg.loss.dcl_mode = parse_dcl_mode(dcl);
        cfg.loss.mtrl_mode = parse_mtrl_mode(mtrl);
        cfg.seed = seed;
        const auto r = gradcheck(cfg);
        py::dict d;
        d["max_rel_error"] = r.max_rel_error;
        d["restarts"] = r.restarts;
        d["passed"] = r.passed();
        return d;
      },
      py::arg("topology") = "lpd", py::arg("dcl") = "partial", py::arg("mtrl") = "ef", py::arg("seed") = 0);
}
