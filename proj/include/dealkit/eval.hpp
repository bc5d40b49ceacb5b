// CAM thresholding and mIoU evaluation with best-threshold selection.

#pragma once

#include <cstdint>
#include <vector>

#include "dealkit/tensor.hpp"

namespace dealkit {

// (K+1) x (K+1) pixel counts; row = ground truth (0 = background),
// column = prediction. Merging across samples is elementwise addition.
struct ConfusionMatrix {
    int num_classes = 0;  // K, without background
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(int k)
        : num_classes(k),
          counts(static_cast<std::size_t>(k + 1) * (k + 1), 0) {}

    std::int64_t& at(int gt, int pred) {
        return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
    }
    std::int64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
    }
    void merge(const ConfusionMatrix& other);
};

struct EvalReport {
    std::vector<double> per_class_iou;  // K+1, NaN for zero-union classes
    double miou = 0.0;
    double threshold = 0.0;
    int n_samples = 0;
};

// argmax channel + 1 where the max activation reaches tau, else
// background 0; ties break toward the smaller class index.
std::vector<int> threshold_cam(const Tensor& cam, double tau);

void accumulate(ConfusionMatrix& conf, const std::vector<int>& pred,
                const std::vector<int>& gt);

// IoU_c = TP / (TP + FP + FN); zero-union classes are excluded from the
// mean; background counts as a class.
EvalReport miou(const ConfusionMatrix& conf);

struct EvalSample {
    const Tensor* cam;          // K x H x W in [0,1]
    const std::vector<int>* gt; // H*W, values in {0..K}
};

// Evaluates every tau over the whole set, returns the argmax report;
// ties break toward the smaller tau.
EvalReport threshold_sweep(const std::vector<EvalSample>& samples,
                           const std::vector<double>& taus);

std::vector<double> default_tau_grid();  // 0.00 .. 1.00 step 0.01

struct SeedSummary {
    double mean_miou = 0.0;
    double best_miou = 0.0;
    int best_seed_index = 0;           // smallest index on ties
    std::vector<double> per_seed_miou;
};

SeedSummary aggregate_seeds(const std::vector<EvalReport>& reports);

}  // namespace dealkit
