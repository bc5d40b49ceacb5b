// dealkit command line: dataset synthesis, loss evaluation, gradient
// auditing, training experiments, and mIoU evaluation.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage/format, 3 I/O,
// 4 numerical abort.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dealkit/config.hpp"
#include "dealkit/eval.hpp"
#include "dealkit/image_ops.hpp"
#include "dealkit/io.hpp"
#include "dealkit/losses.hpp"
#include "dealkit/model.hpp"
#include "dealkit/synth.hpp"
#include "dealkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace dealkit;

namespace {

constexpr int kExitVerification = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

// Stacked-plane CAM files: a K-channel CAM is stored as a grayscale PFM
// of height K*H; --classes recovers the split.
Tensor read_cam(const fs::path& path, int num_classes) {
    Tensor flat = read_pfm(path);
    if (flat.shape[0] != 1)
        throw std::invalid_argument(path.string() + ": CAM file must be grayscale PFM");
    const int kh = flat.shape[1], w = flat.shape[2];
    if (kh % num_classes != 0)
        throw std::invalid_argument(path.string() + ": height not divisible by --classes");
    return tensor_from(flat.values(), {num_classes, kh / num_classes, w});
}

void write_stacked(const fs::path& path, const Tensor& t) {
    const int k = t.shape[0], h = t.shape[1], w = t.shape[2];
    write_pfm(path, tensor_from(t.values(), {1, k * h, w}));
}

std::vector<int> labels_from_list(const std::string& list, int num_classes) {
    std::vector<int> labels(num_classes, 0);
    for (int c : parse_int_list(list)) {
        if (c < 0 || c >= num_classes)
            throw std::invalid_argument("label index " + std::to_string(c) +
                                        " out of range");
        labels[c] = 1;
    }
    return labels;
}

struct LossCmdArgs {
    std::string loss;
    std::string cam_path, depth_path, image_path, dump_dir, labels;
    int classes = 4;
    std::uint64_t seed = 0;
    bool seed_set = false;
    LossConfig cfg;
};

int cmd_loss(const LossCmdArgs& a) {
    Tensor cam = read_cam(a.cam_path, a.classes);
    const std::vector<int> labels = labels_from_list(a.labels, a.classes);
    Tensor loss;
    if (a.loss == "deal") {
        if (a.depth_path.empty())
            throw std::invalid_argument("deal requires --depth");
        LabeledCam lc(cam, labels);
        loss = deal_loss(lc, read_pfm(a.depth_path), a.cfg);
        if (!a.dump_dir.empty()) {
            fs::create_directories(a.dump_dir);
            // recompute the pipeline intermediates for inspection
            Tensor d_small = bicubic_resize(minmax_normalize(read_pfm(a.depth_path), false),
                                            a.cfg.align_h, a.cfg.align_w);
            Tensor d_act = eta(clamp(affine(sobel_magnitude(d_small),
                                            1.0 / kSobelMagnitudeMax, 0.0),
                                     a.cfg.eps, 1.0 - a.cfg.eps),
                               a.cfg.mu);
            Tensor s_small = clamp(bicubic_resize(cam, a.cfg.align_h, a.cfg.align_w), 0.0, 1.0);
            Tensor a_act = eta(clamp(affine(sobel_magnitude(s_small),
                                            1.0 / kSobelMagnitudeMax, 0.0),
                                     a.cfg.eps, 1.0 - a.cfg.eps),
                               a.cfg.mu);
            write_pfm(fs::path(a.dump_dir) / "d_act.pfm", d_act);
            write_stacked(fs::path(a.dump_dir) / "a_act.pfm", a_act);
            write_stacked(fs::path(a.dump_dir) / "alignment.pfm",
                          ew_binary(a_act, d_act, Binary::Mul));
        }
    } else if (a.loss == "fsl") {
        if (a.image_path.empty())
            throw std::invalid_argument("fsl requires --image");
        loss = fsl_loss(read_ppm(a.image_path), cam, a.cfg);
    } else if (a.loss == "isl") {
        if (!a.seed_set)
            throw std::invalid_argument("isl requires --seed (stochastic path)");
        Rng rng(a.seed);
        LabeledCam lc(cam, labels);
        loss = isl_loss(lc, a.cfg, rng);
    } else if (a.loss == "mlsm") {
        // logits = GAP over the CAM planes
        loss = mlsm_loss(spatial_mean_per_channel(cam), labels);
    } else {
        throw std::invalid_argument("unknown loss '" + a.loss + "'");
    }
    std::printf("loss = %.12g\n", loss.scalar());
    return 0;
}

struct GradcheckArgs {
    std::string loss;
    int trials = 20;
    double tolerance = 1e-5;
    std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    Rng root(a.seed);
    LossConfig cfg;
    cfg.align_h = 8;
    cfg.align_w = 8;
    double worst = 0.0;
    int failures = 0;

    for (int trial = 0; trial < a.trials; ++trial) {
        Rng rng = root.fork(trial);
        const int k = rng.uniform_int(1, 3);
        const int h = 8, w = 8;
        auto rand_tensor = [&](int c, double lo, double hi) {
            std::vector<double> v(static_cast<std::size_t>(c) * h * w);
            for (double& x : v) x = rng.uniform(lo, hi);
            return tensor_from(std::move(v), {c, h, w});
        };
        std::vector<int> labels(k, 0);
        labels[rng.uniform_int(0, k - 1)] = 1;
        for (int c = 0; c < k; ++c)
            if (rng.uniform() < 0.5) labels[c] = 1;

        Tensor x0 = rand_tensor(k, 0.05, 0.95);
        FdReport rep;
        if (a.loss == "deal") {
            Tensor depth = rand_tensor(1, 0.5, 3.0);
            rep = finite_diff_check(
                [&](const Tensor& t) {
                    return deal_loss(LabeledCam(clamp(t, 0.0, 1.0), labels), depth, cfg);
                },
                x0, 1e-5, a.tolerance);
        } else if (a.loss == "fsl") {
            Tensor image = rand_tensor(3, 0.0, 1.0);
            rep = finite_diff_check(
                [&](const Tensor& t) { return fsl_loss(image, t, cfg); }, x0, 1e-5,
                a.tolerance);
        } else if (a.loss == "mlsm") {
            std::vector<double> z(k);
            for (double& v : z) v = rng.uniform(-3.0, 3.0);
            rep = finite_diff_check(
                [&](const Tensor& t) { return mlsm_loss(t, labels); },
                tensor_from(std::move(z), {k}), 1e-5, a.tolerance);
        } else if (a.loss == "total") {
            // full toy model on an 8x8 scene, gradient w.r.t. first conv weight
            SynthConfig sc;
            sc.image_size = 16;
            sc.num_classes = k;
            Rng srng = rng.fork(7);
            Scene scene = generate_scene(sc, srng);
            Rng mrng = rng.fork(8);
            ToyModel model = ToyModel::init(k, mrng);
            TrainConfig tc;
            tc.loss = cfg;
            tc.use_deal = true;
            tc.use_fsl = true;
            const Shape wshape = model.params[0].shape;
            auto eval_total = [&](const Tensor& wt) {
                ToyModel m = model;
                m.params[0].value = wt.values();
                Tape local;
                std::vector<Tensor> leaves;
                if (wt.tracked()) {
                    // place only the checked weight on the caller's tape
                    leaves.push_back(wt);
                    for (std::size_t i = 1; i < m.params.size(); ++i)
                        leaves.push_back(tensor_from(m.params[i].value, m.params[i].shape));
                } else {
                    for (const auto& p : m.params)
                        leaves.push_back(tensor_from(p.value, p.shape));
                }
                ForwardResult fwd = forward_cam_with(leaves, k, scene.rgb);
                Tensor base = mlsm_loss(fwd.logits, scene.labels);
                LabeledCam lc(fwd.cam, scene.labels);
                std::optional<Tensor> edge = deal_loss(lc, scene.depth, cfg);
                std::optional<Tensor> fs = fsl_loss(scene.rgb, fwd.cam, cfg);
                return combine_losses(base, edge, std::nullopt, fs, cfg, 1, 2);
            };
            rep = finite_diff_check(eval_total,
                                    tensor_from(model.params[0].value, wshape), 1e-5,
                                    a.tolerance);
        } else {
            throw std::invalid_argument("unknown loss '" + a.loss + "'");
        }
        worst = std::max(worst, rep.max_rel_error);
        if (!rep.pass) ++failures;
    }

    std::printf("gradcheck %s: trials = %d, failures = %d, worst_rel_error = %.3e\n",
                a.loss.c_str(), a.trials, failures, worst);
    return failures == 0 ? 0 : kExitVerification;
}

TrainConfig variant_config(const TrainConfig& base, const std::string& name) {
    TrainConfig cfg = base;
    if (name == "baseline") {
        cfg.use_deal = cfg.use_isl = cfg.use_fsl = false;
    } else if (name == "deal") {
        cfg.use_deal = true;
        cfg.use_isl = cfg.use_fsl = false;
    } else if (name == "isl-fsl") {
        cfg.use_deal = false;
        cfg.use_isl = cfg.use_fsl = true;
    } else if (name == "deal-isl-fsl") {
        cfg.use_deal = cfg.use_isl = cfg.use_fsl = true;
    } else {
        throw std::invalid_argument("unknown variant '" + name + "'");
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weak-supervision loss kit"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D dataset");
    std::string synth_out, synth_config;
    int n_train = 200, n_val = 50;
    SynthConfig synth_cfg;
    bool synth_seed_set = false;
    synth->add_option("--config", synth_config, "flat-key config file");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n-train", n_train);
    synth->add_option("--n-val", n_val);
    synth->add_option("--image-size", synth_cfg.image_size);
    synth->add_option("--classes", synth_cfg.num_classes);
    synth->add_option("--objects-min", synth_cfg.objects_min);
    synth->add_option("--objects-max", synth_cfg.objects_max);
    synth->add_option("--depth-noise", synth_cfg.depth_noise_std);
    synth->add_option("--color-jitter", synth_cfg.color_jitter);
    synth->add_option("--seed", synth_cfg.seed)
        ->each([&](const std::string&) { synth_seed_set = true; });

    // ---- loss ----
    auto* loss_cmd = app.add_subcommand("loss", "evaluate one loss on files");
    LossCmdArgs largs;
    loss_cmd->add_option("--loss", largs.loss, "deal|isl|fsl|mlsm")->required();
    loss_cmd->add_option("--cam", largs.cam_path, "stacked-plane CAM PFM")->required();
    loss_cmd->add_option("--depth", largs.depth_path);
    loss_cmd->add_option("--image", largs.image_path);
    loss_cmd->add_option("--labels", largs.labels, "present class list, e.g. 0,3");
    loss_cmd->add_option("--classes", largs.classes);
    loss_cmd->add_option("--dump", largs.dump_dir, "write pipeline intermediates");
    loss_cmd->add_option("--seed", largs.seed)
        ->each([&](const std::string&) { largs.seed_set = true; });
    loss_cmd->add_option("--mu", largs.cfg.mu);
    loss_cmd->add_option("--sigma", largs.cfg.sigma);
    loss_cmd->add_option("--n-is", largs.cfg.n_is);
    loss_cmd->add_option("--eps", largs.cfg.eps);
    loss_cmd->add_option("--align-h", largs.cfg.align_h);
    loss_cmd->add_option("--align-w", largs.cfg.align_w);
    loss_cmd->add_option("--fsl-radius", largs.cfg.fsl_radius);

    // ---- gradcheck ----
    auto* grad = app.add_subcommand("gradcheck", "autodiff vs finite differences");
    GradcheckArgs gargs;
    grad->add_option("--loss", gargs.loss, "deal|fsl|mlsm|total")->required();
    grad->add_option("--trials", gargs.trials);
    grad->add_option("--tolerance", gargs.tolerance);
    grad->add_option("--seed", gargs.seed);

    // ---- train ----
    auto* train = app.add_subcommand("train", "run the comparison experiment");
    std::string train_config, train_variants = "baseline", train_seeds = "0",
                train_out, train_data;
    train->add_option("--config", train_config, "flat-key config file");
    train->add_option("--variant", train_variants,
                      "comma list of baseline|deal|isl-fsl|deal-isl-fsl");
    train->add_option("--seeds", train_seeds, "comma list of seeds")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--data", train_data, "dataset directory (overrides config)");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "mIoU of CAM files against ground truth");
    std::string eval_pred, eval_gt;
    double eval_tau = -1.0;
    bool eval_sweep = false;
    int eval_classes = 4;
    eval->add_option("--pred", eval_pred, "directory of <id>.pfm CAM files")->required();
    eval->add_option("--gt", eval_gt, "dataset split dir or directory of <id>.pgm")
        ->required();
    eval->add_option("--tau", eval_tau, "fixed threshold");
    eval->add_flag("--sweep", eval_sweep, "select the best threshold");
    eval->add_option("--classes", eval_classes);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            if (!synth_config.empty()) {
                RunConfig rc = RunConfig::from_file(synth_config);
                synth_cfg = rc.synth;
            }
            if (!synth_seed_set && synth_config.empty())
                throw std::invalid_argument("synth: --seed is required");
            if (n_train + n_val <= 0)
                throw std::invalid_argument("synth: empty dataset rejected");
            const auto manifest = generate_dataset(synth_cfg, n_train, n_val, synth_out);
            std::printf("manifest = %s\ntrain = %d\nval = %d\n",
                        manifest.string().c_str(), n_train, n_val);
        } else if (loss_cmd->parsed()) {
            return cmd_loss(largs);
        } else if (grad->parsed()) {
            return cmd_gradcheck(gargs);
        } else if (train->parsed()) {
            RunConfig rc;
            if (!train_config.empty()) rc = RunConfig::from_file(train_config);
            if (!train_data.empty()) rc.dataset_dir = train_data;
            if (rc.dataset_dir.empty())
                throw std::invalid_argument("train: no dataset directory given");

            const int k = rc.synth.num_classes;
            auto train_set = read_split(fs::path(rc.dataset_dir) / "train", k);
            auto val_set = read_split(fs::path(rc.dataset_dir) / "val", k);

            std::vector<VariantSpec> specs;
            {
                std::istringstream vs(train_variants);
                std::string name;
                while (std::getline(vs, name, ','))
                    if (!name.empty())
                        specs.push_back({name, variant_config(rc.train, name)});
            }
            std::vector<std::uint64_t> seeds;
            for (int s : parse_int_list(train_seeds))
                seeds.push_back(static_cast<std::uint64_t>(s));

            fs::create_directories(train_out);
            ExperimentResult res =
                run_experiment(train_set, val_set, specs, seeds, fs::path(train_out));
            const std::string table = format_table(res);
            std::ofstream(fs::path(train_out) / "table.txt") << table;
            std::ofstream(fs::path(train_out) / "table.kv") << format_machine(res);
            std::cout << table;
        } else if (eval->parsed()) {
            if (eval_sweep == (eval_tau >= 0.0))
                throw std::invalid_argument("eval: give exactly one of --sweep, --tau");
            std::vector<std::string> ids;
            for (const auto& entry : fs::directory_iterator(eval_pred))
                if (entry.path().extension() == ".pfm")
                    ids.push_back(entry.path().stem().string());
            std::sort(ids.begin(), ids.end());
            if (ids.empty()) throw std::invalid_argument("eval: no CAM files in --pred");

            std::vector<Tensor> cams;
            std::vector<std::vector<int>> gts;
            for (const auto& id : ids) {
                cams.push_back(read_cam(fs::path(eval_pred) / (id + ".pfm"), eval_classes));
                fs::path gt_path = fs::path(eval_gt) / (id + ".pgm");
                if (!fs::exists(gt_path)) gt_path = fs::path(eval_gt) / id / "gt_mask.pgm";
                if (!fs::exists(gt_path))
                    throw std::invalid_argument("eval: no ground truth for id '" + id +
                                                "'");
                gts.push_back(read_pgm(gt_path).first);
            }
            std::vector<EvalSample> samples;
            for (std::size_t i = 0; i < cams.size(); ++i)
                samples.push_back({&cams[i], &gts[i]});

            EvalReport rep;
            if (eval_sweep) {
                rep = threshold_sweep(samples, default_tau_grid());
            } else {
                ConfusionMatrix conf(eval_classes);
                for (std::size_t i = 0; i < cams.size(); ++i)
                    accumulate(conf, threshold_cam(cams[i], eval_tau), gts[i]);
                rep = miou(conf);
                rep.threshold = eval_tau;
            }
            for (std::size_t c = 0; c < rep.per_class_iou.size(); ++c)
                std::printf("iou_class%zu = %.6f\n", c, rep.per_class_iou[c]);
            std::printf("miou = %.6f\nthreshold = %.2f\n", rep.miou, rep.threshold);
        }
    } catch (const std::ios_base::failure& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        std::cerr << "abort: " << e.what() << "\n";
        return std::string(e.what()).find("NaN") != std::string::npos ? kExitNumerical
                                                                      : kExitIo;
    }
    return 0;
}
