#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "auxseg/cli.hpp"
#include "auxseg/data.hpp"
#include "auxseg/models.hpp"
#include "auxseg/tasks.hpp"
#include "auxseg/trainer.hpp"
#include "auxseg/weighting.hpp"

namespace py = pybind11;
using namespace auxseg;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data().data(), t.numel() * sizeof(double));
    return out;
}

template <typename T>
py::array_t<T> plane(const std::vector<T>& values, std::vector<py::ssize_t> shape) {
    py::array_t<T> out(shape);
    std::memcpy(out.mutable_data(), values.data(), values.size() * sizeof(T));
    return out;
}

py::dict scene_dict(const Scene& s) {
    const auto h = static_cast<py::ssize_t>(s.height);
    const auto w = static_cast<py::ssize_t>(s.width);
    py::dict d;
    d["image"] = plane(s.image, {static_cast<py::ssize_t>(kSceneImageChannels), h, w});
    d["labels"] = plane(s.labels, {h, w});
    d["depth"] = plane(s.depth, {h, w});
    return d;
}

py::dict combine_dict(const CombineResult& r) {
    py::dict d;
    d["lambda_seg"] = r.lambda_seg;
    d["lambda_depth"] = r.lambda_depth;
    d["total"] = r.total.item();
    d["loss_seg"] = r.loss_seg;
    d["loss_depth"] = r.loss_depth;
    return d;
}

py::dict combine(const std::string& kind, double loss_seg, double loss_depth, double lambda_seg,
                 double lambda_depth) {
    const Tensor ls = Tensor::scalar(loss_seg);
    const Tensor ld = Tensor::scalar(loss_depth);
    if (kind == "fixed") return combine_dict(combine_fixed(ls, ld, lambda_seg, lambda_depth));
    if (kind == "twb") return combine_dict(combine_twb(ls, ld));
    if (kind == "ftwb") return combine_dict(combine_ftwb(ls, ld));
    throw py::value_error("unknown weighting '" + kind + "'");
}

py::dict iou_dict(const IouReport& r) {
    py::list per_class;
    for (const auto& v : r.per_class) {
        if (v) {
            per_class.append(*v);
        } else {
            per_class.append(py::none());
        }
    }
    py::dict d;
    d["per_class"] = per_class;
    d["mean_iou"] = r.mean_iou;
    return d;
}

py::dict iou_from_matrix(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& m) {
    if (m.ndim() != 2 || m.shape(0) != m.shape(1)) throw py::value_error("confusion matrix must be square");
    const auto k = static_cast<std::size_t>(m.shape(0));
    ConfusionMatrix cm(k);
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t p = 0; p < k; ++p) cm.add(t, p, m.at(t, p));
    }
    return iou_dict(iou_metrics(cm));
}

py::array_t<std::uint64_t> confusion_array(const ConfusionMatrix& cm) {
    const auto k = static_cast<py::ssize_t>(cm.num_classes());
    py::array_t<std::uint64_t> out({k, k});
    auto view = out.mutable_unchecked<2>();
    for (py::ssize_t t = 0; t < k; ++t) {
        for (py::ssize_t p = 0; p < k; ++p) view(t, p) = cm.at(t, p);
    }
    return out;
}

py::dict forward(const ModelGraph& model, const F64Array& input) {
    if (input.ndim() != 4) throw py::value_error("input must have shape [N, C, H, W]");
    Shape shape;
    for (py::ssize_t i = 0; i < input.ndim(); ++i) shape.push_back(static_cast<std::size_t>(input.shape(i)));
    std::vector<double> values(input.data(), input.data() + input.size());
    py::dict d;
    ForwardOutputs out;
    {
        py::gil_scoped_release release;
        NoGradGuard no_grad;
        out = model.forward(Tensor::from_data(shape, std::move(values)));
    }
    d["seg_logits"] = to_numpy(out.seg_logits);
    d["depth"] = out.depth ? py::object(to_numpy(*out.depth)) : py::object(py::none());
    return d;
}

py::dict eval_dict(const EvalResult& r) {
    py::dict d = iou_dict(r.iou);
    d["loss_seg"] = r.loss_seg;
    d["confusion"] = confusion_array(r.confusion);
    return d;
}

struct PyTrainResult {
    ModelGraph model;
    TrainReport report;
};

PyTrainResult run_training(const std::string& variant, const Dataset& train_set, const Dataset& val_set,
                           std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed,
                           std::optional<double> ema_beta, bool detach) {
    TrainConfig config;
    config.variant = parse_variant(variant);
    config.epochs = epochs;
    config.batch_size = batch_size;
    config.adam.lr = lr;
    config.seed = seed;
    config.ema_beta = ema_beta;
    config.weight_gradient = detach ? WeightGradient::detached : WeightGradient::through;
    config.height = train_set.height;
    config.width = train_set.width;
    config.num_classes = train_set.num_classes;
    py::gil_scoped_release release;
    TrainResult r = train(config, train_set, val_set);
    return {std::move(r.best_model), std::move(r.report)};
}

py::tuple cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"auxseg"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Segmentation with an auxiliary depth task and adaptive loss weighting";

    m.attr("CLASS_NAMES") = py::cast(std::vector<std::string>(kSceneClassNames.begin(), kSceneClassNames.end()));

    m.def("gen_scene", [](std::uint64_t seed, std::size_t height, std::size_t width) {
        return scene_dict(gen_scene(seed, height, width));
    }, py::arg("seed"), py::arg("height") = 32, py::arg("width") = 48);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("height", &Dataset::height)
        .def_readonly("width", &Dataset::width)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def("__len__", &Dataset::size)
        .def("__getitem__", [](const Dataset& d, std::size_t i) {
            if (i >= d.size()) throw py::index_error();
            return scene_dict(d.samples[i]);
        })
        .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; })
        .def("save", [](const Dataset& d, const std::filesystem::path& p) { write_dataset(d, p); });

    m.def("make_splits", [](std::uint64_t seed, std::size_t n_train, std::size_t n_val, std::size_t height,
                            std::size_t width) { return make_splits(seed, n_train, n_val, height, width); },
          py::arg("seed"), py::arg("n_train"), py::arg("n_val"), py::arg("height") = 32, py::arg("width") = 48);
    m.def("load_dataset", &read_dataset, py::arg("path"));

    m.def("combine", &combine, py::arg("kind"), py::arg("loss_seg"), py::arg("loss_depth"),
          py::arg("lambda_seg") = 1.0, py::arg("lambda_depth") = 1.0,
          "Combine two scalar losses with fixed, twb or ftwb weighting.");

    m.def("iou_metrics", &iou_from_matrix, py::arg("confusion"),
          "Per-class IoU (None for absent classes) and mean IoU from a [K, K] truth-by-prediction matrix.");

    py::class_<ModelGraph>(m, "Model")
        .def_property_readonly("kind", [](const ModelGraph& g) { return std::string(to_string(g.kind())); })
        .def_property_readonly("num_classes", &ModelGraph::num_classes)
        .def_property_readonly("has_depth_head", &ModelGraph::has_depth_head)
        .def("param_count", [](const ModelGraph& g, const std::string& mode) {
            if (mode == "training") return g.param_count(CountMode::training);
            if (mode == "inference") return g.param_count(CountMode::inference);
            throw py::value_error("mode must be 'training' or 'inference'");
        }, py::arg("mode") = "training")
        .def("depth_decoder_param_count", &ModelGraph::depth_decoder_param_count)
        .def("without_depth_decoder", &ModelGraph::without_depth_decoder)
        .def("parameters", [](const ModelGraph& g) {
            py::dict d;
            for (const auto& [name, t] : g.parameters()) d[py::str(name)] = to_numpy(t);
            return d;
        })
        .def("forward", &forward, py::arg("input"))
        .def("evaluate", [](const ModelGraph& g, const Dataset& d, std::size_t batch_size) {
            EvalResult r;
            {
                py::gil_scoped_release release;
                r = evaluate(g, d, batch_size);
            }
            return eval_dict(r);
        }, py::arg("dataset"), py::arg("batch_size") = 16)
        .def("save", [](const ModelGraph& g, const std::filesystem::path& p) { save_checkpoint(g, p); });

    m.def("build_model", [](const std::string& kind, std::uint64_t seed, std::size_t height, std::size_t width,
                            std::size_t num_classes) {
        return build_model(parse_model_kind(kind), kSceneImageChannels, num_classes, height, width, seed);
    }, py::arg("kind"), py::arg("seed") = 1, py::arg("height") = 32, py::arg("width") = 48,
          py::arg("num_classes") = kSceneClasses);
    m.def("load_checkpoint", py::overload_cast<const std::filesystem::path&>(&load_checkpoint), py::arg("path"));

    py::class_<PyTrainResult>(m, "TrainResult")
        .def_readonly("model", &PyTrainResult::model)
        .def_property_readonly("best_epoch", [](const PyTrainResult& r) { return r.report.best().epoch; })
        .def_property_readonly("best_val_miou", [](const PyTrainResult& r) { return r.report.best().val_miou; })
        .def_property_readonly("best_val_loss_seg",
                               [](const PyTrainResult& r) { return r.report.best().val_loss_seg; })
        .def_property_readonly("optimizer_steps", [](const PyTrainResult& r) { return r.report.optimizer_steps; })
        .def("report_csv", [](const PyTrainResult& r) { return report_csv(r.report); })
        .def("batch_log_csv", [](const PyTrainResult& r) { return batch_log_csv(r.report); });

    m.def("variants", [] {
        std::vector<std::string> out;
        for (Variant v : all_variants()) out.emplace_back(to_string(v));
        return out;
    });
    m.def("train", &run_training, py::arg("variant"), py::arg("train_set"), py::arg("val_set"),
          py::arg("epochs") = 30, py::arg("batch_size") = 16, py::arg("lr") = 1e-3, py::arg("seed") = 1,
          py::arg("ema_beta") = py::none(), py::arg("detach") = true);

    m.def("run_cli", &cli, py::arg("args"), "Run the command-line tool in process; returns (code, stdout, stderr).");

    py::register_exception<std::invalid_argument>(m, "InvalidArgument", PyExc_ValueError);
}
