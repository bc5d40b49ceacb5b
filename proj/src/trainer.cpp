#include "dealkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dealkit {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    loss.validate();
}

StepReport train_step(ToyModel& model, AdamState& adam,
                      const std::vector<const Scene*>& batch, const TrainConfig& cfg,
                      int epoch, Rng& rng) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

    Tape tape;
    auto leaves = param_leaves(model, tape);

    StepReport report;
    report.deal_weight = in_warmup(cfg.loss, epoch, cfg.epochs) ? 0.0 : cfg.loss.w_edge;

    Tensor batch_sum;
    bool first = true;
    for (const Scene* scene : batch) {
        ForwardResult fwd = forward_cam_with(leaves, model.num_classes, scene->rgb);
        Tensor base = mlsm_loss(fwd.logits, scene->labels);
        report.base += base.scalar();

        std::optional<Tensor> edge, is_term, fs_term;
        if (cfg.use_deal) {
            LabeledCam lc(fwd.cam, scene->labels);
            edge = deal_loss(lc, scene->depth, cfg.loss);
            report.deal += edge->scalar();
        }
        if (cfg.use_isl) {
            LabeledCam lc(fwd.cam, scene->labels);
            is_term = isl_loss(lc, cfg.loss, rng);
            report.isl += is_term->scalar();
        }
        if (cfg.use_fsl) {
            fs_term = fsl_loss(scene->rgb, fwd.cam, cfg.loss);
            report.fsl += fs_term->scalar();
        }
        Tensor combined =
            combine_losses(base, edge, is_term, fs_term, cfg.loss, epoch, cfg.epochs);
        batch_sum = first ? combined : ew_binary(batch_sum, combined, Binary::Add);
        first = false;
    }

    const double n = static_cast<double>(batch.size());
    Tensor loss = affine(batch_sum, 1.0 / n, 0.0);
    report.total = loss.scalar();
    report.base /= n;
    report.deal /= n;
    report.isl /= n;
    report.fsl /= n;

    if (!std::isfinite(report.total)) {
        std::ostringstream os;
        os << "train_step: NaN in loss (base=" << report.base << " deal=" << report.deal
           << " isl=" << report.isl << " fsl=" << report.fsl << ")";
        throw std::runtime_error(os.str());
    }

    auto grads = tape.backward(loss);

    if (adam.m.empty()) {
        adam.m.resize(model.params.size());
        adam.v.resize(model.params.size());
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            adam.m[i].assign(model.params[i].value.size(), 0.0);
            adam.v[i].assign(model.params[i].value.size(), 0.0);
        }
    }
    ++adam.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const auto& g = grads.at(leaves[i].node).values();
        auto& p = model.params[i].value;
        for (std::size_t j = 0; j < p.size(); ++j) {
            adam.m[i][j] = cfg.beta1 * adam.m[i][j] + (1.0 - cfg.beta1) * g[j];
            adam.v[i][j] = cfg.beta2 * adam.v[i][j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mh = adam.m[i][j] / bc1;
            const double vh = adam.v[i][j] / bc2;
            p[j] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    }
    return report;
}

namespace {

EvalReport sweep_split(const ToyModel& model, const std::vector<Scene>& scenes) {
    std::vector<Tensor> cams;
    cams.reserve(scenes.size());
    for (const auto& s : scenes) cams.push_back(forward_cam(model, s.rgb).cam);
    std::vector<EvalSample> samples;
    samples.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i)
        samples.push_back({&cams[i], &scenes[i].gt_mask});
    return threshold_sweep(samples, default_tau_grid());
}

double all_background_miou(const std::vector<Scene>& scenes, int k) {
    ConfusionMatrix conf(k);
    for (const auto& s : scenes) {
        const std::vector<int> pred(s.gt_mask.size(), 0);
        accumulate(conf, pred, s.gt_mask);
    }
    return miou(conf).miou;
}

}  // namespace

RunResult train_run(const std::vector<Scene>& train_set,
                    const std::vector<Scene>& val_set, const TrainConfig& cfg,
                    const EpochLogger& log) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train_run: empty split");
    const int k = static_cast<int>(train_set.front().labels.size());

    Rng root(cfg.seed);
    Rng init_rng = root.fork(0);
    Rng step_rng = root.fork(1);
    Rng shuffle_rng = root.fork(2);

    ToyModel model = ToyModel::init(k, init_rng);
    AdamState adam;

    RunResult result;
    double best_train = -1.0;
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

        double epoch_loss = 0.0;
        int steps = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            std::vector<const Scene*> batch;
            for (std::size_t i = off; i < std::min(order.size(), off + cfg.batch_size); ++i)
                batch.push_back(&train_set[order[i]]);
            StepReport rep = train_step(model, adam, batch, cfg, epoch, step_rng);
            epoch_loss += rep.total;
            ++steps;
        }
        epoch_loss /= steps;
        result.epoch_losses.push_back(epoch_loss);

        EvalReport train_rep = sweep_split(model, train_set);
        EvalReport val_rep = sweep_split(model, val_set);
        if (log) {
            std::ostringstream os;
            os << "epoch = " << epoch << "\nloss = " << epoch_loss
               << "\ntrain_miou = " << train_rep.miou << "\nval_miou = " << val_rep.miou
               << "\ntrain_tau = " << train_rep.threshold;
            log(os.str());
        }
        // checkpoint selection by train-split mIoU; val reported untouched
        if (train_rep.miou > best_train) {
            best_train = train_rep.miou;
            result.train_report = train_rep;
            result.val_report = val_rep;
            result.best_epoch = epoch;
        }
    }

    result.collapsed =
        best_train <= all_background_miou(train_set, k) + 0.02;
    return result;
}

ExperimentResult run_experiment(const std::vector<Scene>& train_set,
                                const std::vector<Scene>& val_set,
                                const std::vector<VariantSpec>& variants,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& log_dir) {
    if (variants.empty() || seeds.empty())
        throw std::invalid_argument("run_experiment: need at least one variant and seed");
    if (log_dir) std::filesystem::create_directories(*log_dir);

    ExperimentResult result;
    result.seeds = seeds;
    for (const auto& spec : variants) {
        VariantResult vr;
        vr.name = spec.name;
        std::vector<EvalReport> train_reports, val_reports;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = spec.config;
            cfg.seed = seed;
            std::ofstream log_file;
            EpochLogger logger;
            if (log_dir) {
                log_file.open(*log_dir /
                              (spec.name + "_seed" + std::to_string(seed) + ".log"));
                logger = [&log_file](const std::string& line) { log_file << line << "\n"; };
            }
            RunResult run = train_run(train_set, val_set, cfg, logger);
            vr.any_collapsed = vr.any_collapsed || run.collapsed;
            train_reports.push_back(run.train_report);
            val_reports.push_back(run.val_report);
            vr.runs.push_back(std::move(run));
        }
        vr.train_summary = aggregate_seeds(train_reports);
        vr.val_summary = aggregate_seeds(val_reports);
        result.variants.push_back(std::move(vr));
    }
    return result;
}

std::string format_table(const ExperimentResult& result) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %11s %11s %11s %11s %9s\n", "variant",
                  "train_mIoU", "val_mIoU", "d_train", "d_val", "collapsed");
    os << line;
    const double base_train =
        result.variants.front().train_summary.mean_miou;
    const double base_val = result.variants.front().val_summary.mean_miou;
    for (const auto& v : result.variants) {
        std::snprintf(line, sizeof line, "%-18s %11.4f %11.4f %+11.4f %+11.4f %9s\n",
                      v.name.c_str(), v.train_summary.mean_miou, v.val_summary.mean_miou,
                      v.train_summary.mean_miou - base_train,
                      v.val_summary.mean_miou - base_val,
                      v.any_collapsed ? "yes" : "no");
        os << line;
    }
    return os.str();
}

std::string format_machine(const ExperimentResult& result) {
    std::ostringstream os;
    for (const auto& v : result.variants) {
        os << v.name << ".train_miou_mean = " << v.train_summary.mean_miou << "\n";
        os << v.name << ".val_miou_mean = " << v.val_summary.mean_miou << "\n";
        os << v.name << ".train_miou_best = " << v.train_summary.best_miou << "\n";
        os << v.name << ".val_miou_best = " << v.val_summary.best_miou << "\n";
        os << v.name << ".collapsed = " << (v.any_collapsed ? 1 : 0) << "\n";
        for (std::size_t i = 0; i < v.runs.size(); ++i) {
            os << v.name << ".seed" << result.seeds[i]
               << ".train_miou = " << v.runs[i].train_report.miou << "\n";
            os << v.name << ".seed" << result.seeds[i]
               << ".val_miou = " << v.runs[i].val_report.miou << "\n";
            os << v.name << ".seed" << result.seeds[i]
               << ".best_epoch = " << v.runs[i].best_epoch << "\n";
        }
    }
    return os.str();
}

}  // namespace dealkit
