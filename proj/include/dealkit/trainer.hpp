// Training loop and the variant x seed comparison experiment.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dealkit/eval.hpp"
#include "dealkit/losses.hpp"
#include "dealkit/model.hpp"
#include "dealkit/synth.hpp"

namespace dealkit {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool use_deal = false;
    bool use_isl = false;
    bool use_fsl = false;
    LossConfig loss;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;
};

struct StepReport {
    double total = 0.0;
    double base = 0.0;
    double deal = 0.0;
    double isl = 0.0;
    double fsl = 0.0;
    double deal_weight = 0.0;  // effective w_edge this epoch (0 in warmup)
};

// One optimizer step over a batch: forward, combined loss per sample,
// batch mean, backward, Adam update. Throws on NaN with a component dump.
StepReport train_step(ToyModel& model, AdamState& adam,
                      const std::vector<const Scene*>& batch, const TrainConfig& cfg,
                      int epoch, Rng& rng);

struct RunResult {
    EvalReport train_report;  // at the best-train-mIoU checkpoint
    EvalReport val_report;    // same checkpoint
    int best_epoch = 0;
    bool collapsed = false;   // CAM quality no better than all-background
    std::vector<double> epoch_losses;
};

using EpochLogger = std::function<void(const std::string& line)>;

RunResult train_run(const std::vector<Scene>& train_set,
                    const std::vector<Scene>& val_set, const TrainConfig& cfg,
                    const EpochLogger& log = nullptr);

struct VariantSpec {
    std::string name;
    TrainConfig config;
};

struct VariantResult {
    std::string name;
    std::vector<RunResult> runs;  // one per seed
    SeedSummary train_summary, val_summary;
    bool any_collapsed = false;
};

struct ExperimentResult {
    std::vector<VariantResult> variants;
    std::vector<std::uint64_t> seeds;
};

// Trains every (variant, seed) cell; per-run epoch logs go to
// log_dir/<variant>_seed<seed>.log when log_dir is given.
ExperimentResult run_experiment(const std::vector<Scene>& train_set,
                                const std::vector<Scene>& val_set,
                                const std::vector<VariantSpec>& variants,
                                const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& log_dir = {});

// Aligned plain-text comparison table (variant x split).
std::string format_table(const ExperimentResult& result);
// Machine-readable key=value lines.
std::string format_machine(const ExperimentResult& result);

}  // namespace dealkit
