#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cloudattn/checkpoint.h"
#include "cloudattn/cloud_io.h"
#include "cloudattn/dataset.h"
#include "cloudattn/harness.h"
#include "cloudattn/network.h"
#include "cloudattn/spatial.h"
#include "cloudattn/tokenizer.h"

namespace py = pybind11;
using namespace cloudattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Tensor to_points(const Array& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != 3)
    throw std::invalid_argument(std::string(what) + " must have shape (N, 3)");
  return to_tensor(a);
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

PointCloud make_cloud(const Array& coords, const std::optional<Array>& feats,
                      const std::optional<std::vector<std::int32_t>>& labels) {
  PointCloud c;
  c.coords = to_points(coords, "coords");
  if (feats) c.feats = to_tensor(*feats);
  if (labels) c.labels = *labels;
  c.validate();
  return c;
}

py::dict cloud_dict(const PointCloud& c) {
  py::dict d;
  d["coords"] = to_array(c.coords);
  d["feats"] = c.feats ? py::object(to_array(*c.feats)) : py::none();
  d["labels"] = c.labels;
  return d;
}

py::tuple neighbors(const NeighborIndex& nb) { return py::make_tuple(nb.neighbor_ids, nb.distances); }

KeyValues to_kv(const py::dict& d) {
  KeyValues kv;
  for (auto item : d) {
    const py::handle v = item.second;
    std::string text;
    if (py::isinstance<py::bool_>(v)) {
      text = v.cast<bool>() ? "1" : "0";
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (auto e : v) text += (text.empty() ? "" : ",") + std::string(py::str(e));
    } else {
      text = py::str(v);
    }
    kv.set(py::str(item.first), text);
  }
  return kv;
}

py::dict from_kv(const KeyValues& kv) {
  py::dict d;
  for (const auto& [k, v] : kv.entries()) d[py::str(k)] = v;
  return d;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["oa"] = r.oa;
  d["macc"] = r.macc;
  d["ins_miou"] = r.ins_miou;
  d["cat_miou"] = r.cat_miou;
  d["class_acc"] = r.class_acc;
  d["class_iou"] = r.class_iou;
  return d;
}

struct Model {
  ModelConfig config;
  ParamStore params;

  Array forward(const Array& coords, const std::optional<Array>& feats) const {
    const PointCloud c = make_cloud(coords, feats, std::nullopt);
    ad::NoGradGuard guard;
    const Binding bind(params, false);
    return to_array(config.task == Task::Segmentation ? segment(c, config, bind).probs->value
                                                      : classify(c, config, bind).probs->value);
  }
};

}  // namespace

PYBIND11_MODULE(_cloudattn, m) {
  m.doc() = "Hierarchical point cloud attention: spatial ops, tokenizer, network and training.";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("fps", [](const Array& coords, std::size_t count, std::uint64_t seed) {
    return fps(to_points(coords, "coords"), count, seed);
  }, py::arg("coords"), py::arg("count"), py::arg("seed") = 1);
  m.def("ball_query_sorted", [](const Array& source, const Array& centroids, double radius, std::size_t cap) {
    return neighbors(ball_query_sorted(to_points(source, "source"), to_points(centroids, "centroids"), radius, cap));
  }, py::arg("source"), py::arg("centroids"), py::arg("radius"), py::arg("cap"),
        "Returns (neighbor_ids, distances), one sorted list per centroid.");
  m.def("knn", [](const Array& queries, const Array& source, std::size_t k) {
    return neighbors(knn(to_points(queries, "queries"), to_points(source, "source"), k));
  }, py::arg("queries"), py::arg("source"), py::arg("k"));
  m.def("idw_weights", [](const std::vector<double>& d) { return idw_weights(d); }, py::arg("distances"));

  m.def("tokenize", [](const Array& coords, const std::optional<Array>& feats, const std::vector<std::size_t>& ks,
                       double radius, std::size_t count, const Array& weight, const Array& bias, std::uint64_t seed) {
    ScaleConfig cfg;
    cfg.ks = ks;
    cfg.radius = radius;
    cfg.centroid_count = count;
    cfg.out_dim_per_scale = weight.ndim() == 2 ? weight.shape(1) : 0;
    const Linear delta{ad::constant(to_tensor(weight)), ad::constant(to_tensor(bias))};
    TokenizeTrace trace;
    const TokenSet t = tokenize_points(to_points(coords, "coords"), feats ? ad::constant(to_tensor(*feats)) : nullptr,
                                       cfg, delta, seed, &trace);
    return py::make_tuple(to_array(t.feats->value), trace.centroid_ids);
  }, py::arg("coords"), py::arg("feats"), py::arg("ks"), py::arg("radius"), py::arg("count"),
        py::arg("weight"), py::arg("bias"), py::arg("seed") = 1,
        "Multi-scale tokens (M, len(ks) * out) and the centroid indices.");

  m.def("load_cloud", [](const std::string& path) { return cloud_dict(load_cloud(path)); }, py::arg("path"));
  m.def("save_cloud", [](const std::string& path, const Array& coords, const std::optional<Array>& feats,
                         const std::optional<std::vector<std::int32_t>>& labels) {
    save_cloud(path, make_cloud(coords, feats, labels));
  }, py::arg("path"), py::arg("coords"), py::arg("feats") = py::none(), py::arg("labels") = py::none());

  m.def("gen_dataset", [](const std::string& dir, const std::string& kind, std::size_t n, std::size_t points,
                          std::uint64_t seed, double test_fraction) {
    save_dataset(dir, gen_synthetic(parse_synthetic_kind(kind), n, points, seed, test_fraction));
  }, py::arg("dir"), py::arg("kind"), py::arg("n") = 300, py::arg("points") = 1024, py::arg("seed") = 1,
        py::arg("test_fraction") = 0.2);

  m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("base_lr"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::dict& config) {
             const ModelConfig cfg = ModelConfig::from_kv(to_kv(config));
             return Model{cfg, init_params(cfg)};
           }),
           py::arg("config") = py::dict())
      .def_static("load", [](const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        return Model{ck.config, std::move(ck.params)};
      }, py::arg("path"))
      .def("save", [](const Model& self, const std::string& path) { save_checkpoint(path, self.config, self.params); },
           py::arg("path"))
      .def_property_readonly("config", [](const Model& self) { return from_kv(self.config.to_kv()); })
      .def_property_readonly("param_names", [](const Model& self) { return self.params.names(); })
      .def("param", [](const Model& self, const std::string& name) { return to_array(self.params.get(name)); },
           py::arg("name"))
      .def("forward", &Model::forward, py::arg("coords"), py::arg("feats") = py::none(),
           "Class probabilities (1, C) or per-point probabilities (N, C).");

  m.def("train", [](const std::string& data_dir, const py::dict& model_config, const py::dict& train_config) {
    const Dataset ds = load_dataset(data_dir);
    KeyValues mkv = to_kv(model_config);
    if (!mkv.has("task")) mkv.set("task", task_name(ds.task));
    if (!mkv.has("num_classes")) mkv.set("num_classes", std::to_string(ds.num_classes()));
    if (!mkv.has("point_feat_dim") && !ds.samples.empty())
      mkv.set("point_feat_dim", std::to_string(ds.samples[0].feat_dim()));
    const ModelConfig cfg = ModelConfig::from_kv(mkv);
    const TrainConfig tc = TrainConfig::from_kv(to_kv(train_config));
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(ds, cfg, tc);
    }
    py::list history;
    for (const auto& e : r.history) {
      py::dict d;
      d["epoch"] = e.epoch;
      d["lr"] = e.lr;
      d["loss"] = e.loss;
      d["oa"] = e.oa;
      d["macc"] = e.macc;
      history.append(d);
    }
    return py::make_tuple(Model{cfg, std::move(r.best)}, history);
  }, py::arg("data_dir"), py::arg("model_config") = py::dict(), py::arg("train_config") = py::dict(),
        "Trains on the dataset directory; returns (best model, per-epoch history).");

  m.def("evaluate", [](const std::string& data_dir, const Model& model, const std::string& split) {
    const Dataset ds = load_dataset(data_dir);
    std::vector<std::size_t> idx = split == "train" ? ds.train : ds.test;
    if (split == "all") {
      idx = ds.train;
      idx.insert(idx.end(), ds.test.begin(), ds.test.end());
    } else if (split != "train" && split != "test") {
      throw std::invalid_argument("split must be train, test or all");
    }
    return report_dict(evaluate(ds, idx, model.config, model.params).report);
  }, py::arg("data_dir"), py::arg("model"), py::arg("split") = "test");

  m.def("bench_scaling", [](const py::dict& config, const std::vector<std::size_t>& points, std::size_t repeats) {
    const BenchResult b = bench_scaling(ModelConfig::from_kv(to_kv(config)), points, repeats);
    std::vector<double> ms;
    for (const auto& r : b.rows) ms.push_back(r.median_ms);
    return py::make_tuple(ms, b.slope);
  }, py::arg("config") = py::dict(), py::arg("points") = std::vector<std::size_t>{1024, 2048, 4096, 8192},
        py::arg("repeats") = 5, "Median encoder milliseconds per point count and the log-log slope.");
}
