// Depth edge alignment, importance sampling and feature similarity
// losses, the shared eta activation, multi-label soft margin
// classification, and the weighted combiner with warmup schedule.

#pragma once

#include <optional>
#include <vector>

#include "dealkit/rng.hpp"
#include "dealkit/tensor.hpp"

namespace dealkit {

struct LossConfig {
    double mu = 2.5;
    double sigma = 5.0;
    int n_is = 10;
    double w_edge = 0.04;
    double w_is = 0.2;
    double w_fs = 1.0;
    double aux_scale = 0.1;
    double warmup_fraction = 1.0 / 3.0;
    int align_h = 16;   // alignment resolution H' x W'
    int align_w = 16;
    double eps = 1e-4;  // eta-domain clamp
    int fsl_radius = 15;  // Chebyshev truncation radius, ceil(3*sigma)

    void validate() const;
};

// Per-class activation map in [0,1] with class-presence labels.
struct LabeledCam {
    Tensor cam;               // K x Hc x Wc
    std::vector<int> labels;  // 0/1, length K

    LabeledCam(Tensor cam_in, std::vector<int> labels_in);
};

// tanh(mu + log(t / (1 - t))); input must already be clamped into (0,1).
Tensor eta(const Tensor& t, double mu);

// Depth edge alignment loss. Runs the full pipeline (normalize/resize/
// Sobel/eta on both strands, per-class product weighted by present
// labels) and returns the negated spatial mean, a scalar in [-1, 1].
// With no positive class returns exact 0 and sets *no_positive_class.
Tensor deal_loss(const LabeledCam& cam, const Tensor& depth, const LossConfig& cfg,
                 bool* no_positive_class = nullptr);

// Multi-label soft margin loss over K logits, stable log-sigmoid form.
Tensor mlsm_loss(const Tensor& logits, const std::vector<int>& labels);

// Importance-sampling aggregation: one pixel per class drawn with the
// normalized channel as distribution; returns the K picked values.
// Sampled indices are constants on the tape.
Tensor is_aggregate(const LabeledCam& cam, Rng& rng);

// (1/N) sum of mlsm_loss over N importance-sampled aggregations.
Tensor isl_loss(const LabeledCam& cam, const LossConfig& cfg, Rng& rng);

// (1 / 2 pi sigma^2) exp(-(di^2 + dj^2) / (2 sigma^2))
double gaussian_weight(int di, int dj, double sigma);

// Feature similarity loss over pixel pairs within the truncation
// radius: Gaussian spatial weight times half squared prediction
// distance times eta of the mean-scaled color L2 distance.
Tensor fsl_loss(const Tensor& image, const Tensor& cam, const LossConfig& cfg);

// total = base' + w_edge_eff * edge + w_is * aux_scale * is
//              + w_fs * aux_scale * fs
// where w_edge_eff is 0 during warmup and base' = (1 - w_is) * base
// when the IS term is present.
Tensor combine_losses(const Tensor& base, const std::optional<Tensor>& edge,
                      const std::optional<Tensor>& is_term,
                      const std::optional<Tensor>& fs_term, const LossConfig& cfg,
                      int epoch, int total_epochs);

// true while the edge weight is held at zero
bool in_warmup(const LossConfig& cfg, int epoch, int total_epochs);

}  // namespace dealkit
