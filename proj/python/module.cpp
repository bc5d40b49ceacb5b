// Python bindings: tensors cross the boundary as numpy arrays (C x H x W
// float64); losses return floats, gradients come back as arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "dealkit/config.hpp"
#include "dealkit/eval.hpp"
#include "dealkit/image_ops.hpp"
#include "dealkit/io.hpp"
#include "dealkit/losses.hpp"
#include "dealkit/model.hpp"
#include "dealkit/synth.hpp"
#include "dealkit/trainer.hpp"

namespace py = pybind11;
using namespace dealkit;

namespace {

Tensor tensor_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape;
    for (py::ssize_t d = 0; d < a.ndim(); ++d)
        shape.push_back(static_cast<int>(a.shape(d)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return tensor_from(std::move(data), shape);
}

py::array_t<double> array_of(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

LossConfig config_of(const py::kwargs& kw) {
    LossConfig cfg;
    for (auto item : kw) {
        const std::string key = py::str(item.first);
        if (key == "mu") cfg.mu = item.second.cast<double>();
        else if (key == "sigma") cfg.sigma = item.second.cast<double>();
        else if (key == "n_is") cfg.n_is = item.second.cast<int>();
        else if (key == "w_edge") cfg.w_edge = item.second.cast<double>();
        else if (key == "w_is") cfg.w_is = item.second.cast<double>();
        else if (key == "w_fs") cfg.w_fs = item.second.cast<double>();
        else if (key == "aux_scale") cfg.aux_scale = item.second.cast<double>();
        else if (key == "warmup_fraction") cfg.warmup_fraction = item.second.cast<double>();
        else if (key == "align_h") cfg.align_h = item.second.cast<int>();
        else if (key == "align_w") cfg.align_w = item.second.cast<int>();
        else if (key == "eps") cfg.eps = item.second.cast<double>();
        else if (key == "fsl_radius") cfg.fsl_radius = item.second.cast<int>();
        else throw std::invalid_argument("unknown loss option '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// evaluates loss(tape-tracked cam) and returns (value, d loss / d cam)
template <typename F>
py::tuple value_and_grad(const Tensor& cam, F&& build) {
    Tape tape;
    Tensor leaf = tape.tensor_from(cam.values(), cam.shape, true);
    Tensor loss = build(leaf);
    auto grads = tape.backward(loss);
    return py::make_tuple(loss.scalar(), array_of(grads.at(leaf.node)));
}

}  // namespace

PYBIND11_MODULE(_dealkit, m) {
    m.doc() = "weak-supervision loss kit (C++ core bindings)";

    m.def(
        "deal_loss",
        [](const Array& cam, const std::vector<int>& labels, const Array& depth,
           const py::kwargs& kw) {
            const LossConfig cfg = config_of(kw);
            return deal_loss(LabeledCam(tensor_of(cam), labels), tensor_of(depth), cfg)
                .scalar();
        },
        py::arg("cam"), py::arg("labels"), py::arg("depth"),
        "Depth edge alignment loss of a K x H x W cam against a 1 x H x W depth map.");

    m.def(
        "deal_loss_grad",
        [](const Array& cam, const std::vector<int>& labels, const Array& depth,
           const py::kwargs& kw) {
            const LossConfig cfg = config_of(kw);
            Tensor d = tensor_of(depth);
            return value_and_grad(tensor_of(cam), [&](const Tensor& leaf) {
                return deal_loss(LabeledCam(clamp(leaf, 0.0, 1.0), labels), d, cfg);
            });
        },
        py::arg("cam"), py::arg("labels"), py::arg("depth"),
        "(loss, gradient) of deal_loss with respect to the cam.");

    m.def(
        "fsl_loss",
        [](const Array& image, const Array& cam, const py::kwargs& kw) {
            return fsl_loss(tensor_of(image), tensor_of(cam), config_of(kw)).scalar();
        },
        py::arg("image"), py::arg("cam"), "Feature similarity loss.");

    m.def(
        "fsl_loss_grad",
        [](const Array& image, const Array& cam, const py::kwargs& kw) {
            const LossConfig cfg = config_of(kw);
            Tensor img = tensor_of(image);
            return value_and_grad(tensor_of(cam), [&](const Tensor& leaf) {
                return fsl_loss(img, leaf, cfg);
            });
        },
        py::arg("image"), py::arg("cam"),
        "(loss, gradient) of fsl_loss with respect to the cam.");

    m.def(
        "isl_loss",
        [](const Array& cam, const std::vector<int>& labels, std::uint64_t seed,
           const py::kwargs& kw) {
            Rng rng(seed);
            return isl_loss(LabeledCam(tensor_of(cam), labels), config_of(kw), rng)
                .scalar();
        },
        py::arg("cam"), py::arg("labels"), py::arg("seed"),
        "Importance sampling loss (deterministic in the seed).");

    m.def(
        "mlsm_loss",
        [](const Array& logits, const std::vector<int>& labels) {
            return mlsm_loss(tensor_of(logits), labels).scalar();
        },
        py::arg("logits"), py::arg("labels"), "Multi-label soft margin loss.");

    m.def("eta",
          [](double v, double mu) {
              return eta(tensor_from({v}, {1}), mu).values()[0];
          },
          py::arg("v"), py::arg("mu") = 2.5);

    m.def("gaussian_weight", &gaussian_weight, py::arg("di"), py::arg("dj"),
          py::arg("sigma"));

    m.def(
        "bicubic_resize",
        [](const Array& t, int out_h, int out_w) {
            return array_of(bicubic_resize(tensor_of(t), out_h, out_w));
        },
        py::arg("t"), py::arg("out_h"), py::arg("out_w"),
        "Catmull-Rom bicubic resize of a C x H x W array.");

    m.def(
        "sobel_magnitude",
        [](const Array& t) { return array_of(sobel_magnitude(tensor_of(t))); },
        py::arg("t"), "Per-channel Sobel gradient magnitude, replicate padding.");

    m.def(
        "minmax_normalize",
        [](const Array& t, bool per_channel) {
            return array_of(minmax_normalize(tensor_of(t), per_channel));
        },
        py::arg("t"), py::arg("per_channel") = false);

    m.def(
        "generate_scene",
        [](int image_size, int num_classes, double depth_noise_std,
           std::uint64_t seed) {
            SynthConfig cfg;
            cfg.image_size = image_size;
            cfg.num_classes = num_classes;
            cfg.depth_noise_std = depth_noise_std;
            Rng rng(seed);
            Scene s = generate_scene(cfg, rng);
            py::dict out;
            out["rgb"] = array_of(s.rgb);
            out["depth"] = array_of(s.depth);
            out["gt_mask"] = py::cast(s.gt_mask);
            out["labels"] = py::cast(s.labels);
            return out;
        },
        py::arg("image_size") = 64, py::arg("num_classes") = 4,
        py::arg("depth_noise_std") = 0.0, py::arg("seed") = 0,
        "One synthetic RGB-D scene as a dict of arrays.");

    m.def(
        "generate_dataset",
        [](const std::filesystem::path& out_dir, int n_train, int n_val,
           int image_size, int num_classes, double depth_noise_std,
           std::uint64_t seed) {
            SynthConfig cfg;
            cfg.image_size = image_size;
            cfg.num_classes = num_classes;
            cfg.depth_noise_std = depth_noise_std;
            cfg.seed = seed;
            return generate_dataset(cfg, n_train, n_val, out_dir);
        },
        py::arg("out_dir"), py::arg("n_train"), py::arg("n_val"),
        py::arg("image_size") = 64, py::arg("num_classes") = 4,
        py::arg("depth_noise_std") = 0.0, py::arg("seed") = 0);

    m.def(
        "threshold_cam",
        [](const Array& cam, double tau) { return threshold_cam(tensor_of(cam), tau); },
        py::arg("cam"), py::arg("tau"));

    m.def(
        "miou",
        [](const std::vector<std::vector<int>>& preds,
           const std::vector<std::vector<int>>& gts, int num_classes) {
            ConfusionMatrix conf(num_classes);
            if (preds.size() != gts.size())
                throw std::invalid_argument("miou: preds/gts length mismatch");
            for (std::size_t i = 0; i < preds.size(); ++i)
                accumulate(conf, preds[i], gts[i]);
            EvalReport rep = miou(conf);
            py::dict out;
            out["per_class_iou"] = py::cast(rep.per_class_iou);
            out["miou"] = rep.miou;
            return out;
        },
        py::arg("preds"), py::arg("gts"), py::arg("num_classes"));

    m.def(
        "threshold_sweep",
        [](const std::vector<Array>& cams, const std::vector<std::vector<int>>& gts) {
            if (cams.size() != gts.size())
                throw std::invalid_argument("threshold_sweep: length mismatch");
            std::vector<Tensor> tensors;
            tensors.reserve(cams.size());
            for (const auto& c : cams) tensors.push_back(tensor_of(c));
            std::vector<EvalSample> samples;
            for (std::size_t i = 0; i < tensors.size(); ++i)
                samples.push_back({&tensors[i], &gts[i]});
            EvalReport rep = threshold_sweep(samples, default_tau_grid());
            py::dict out;
            out["miou"] = rep.miou;
            out["threshold"] = rep.threshold;
            out["per_class_iou"] = py::cast(rep.per_class_iou);
            return out;
        },
        py::arg("cams"), py::arg("gts"),
        "Best-threshold mIoU over the default 0..1 grid.");

    m.def(
        "read_pfm",
        [](const std::filesystem::path& p) { return array_of(read_pfm(p)); },
        py::arg("path"));
    m.def(
        "write_pfm",
        [](const std::filesystem::path& p, const Array& t) {
            write_pfm(p, tensor_of(t));
        },
        py::arg("path"), py::arg("t"));
    m.def(
        "read_ppm",
        [](const std::filesystem::path& p) { return array_of(read_ppm(p)); },
        py::arg("path"));
    m.def(
        "write_ppm",
        [](const std::filesystem::path& p, const Array& t) {
            write_ppm(p, tensor_of(t));
        },
        py::arg("path"), py::arg("t"));

    m.def(
        "train_run",
        [](const std::filesystem::path& dataset_dir, int num_classes, int epochs,
           int batch_size, bool use_deal, bool use_isl, bool use_fsl,
           std::uint64_t seed) {
            auto train_set = read_split(dataset_dir / "train", num_classes);
            auto val_set = read_split(dataset_dir / "val", num_classes);
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.use_deal = use_deal;
            cfg.use_isl = use_isl;
            cfg.use_fsl = use_fsl;
            cfg.seed = seed;
            RunResult r = train_run(train_set, val_set, cfg);
            py::dict out;
            out["train_miou"] = r.train_report.miou;
            out["val_miou"] = r.val_report.miou;
            out["best_epoch"] = r.best_epoch;
            out["collapsed"] = r.collapsed;
            out["epoch_losses"] = py::cast(r.epoch_losses);
            return out;
        },
        py::arg("dataset_dir"), py::arg("num_classes") = 4, py::arg("epochs") = 30,
        py::arg("batch_size") = 8, py::arg("use_deal") = false,
        py::arg("use_isl") = false, py::arg("use_fsl") = false, py::arg("seed") = 0,
        "Train the toy classifier on a generated dataset and report mIoU.");

    py::register_exception<std::ios_base::failure>(m, "IoError", PyExc_IOError);
}
