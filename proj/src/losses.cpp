#include "dealkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dealkit/image_ops.hpp"

namespace dealkit {

void LossConfig::validate() const {
    if (mu < 0.0) throw std::invalid_argument("LossConfig: mu must be >= 0");
    if (sigma <= 0.0) throw std::invalid_argument("LossConfig: sigma must be > 0");
    if (n_is < 1) throw std::invalid_argument("LossConfig: n_is must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw std::invalid_argument("LossConfig: warmup_fraction must be in [0,1)");
    if (eps <= 0.0 || eps >= 0.5)
        throw std::invalid_argument("LossConfig: eps must be in (0, 0.5)");
    if (fsl_radius < 1) throw std::invalid_argument("LossConfig: fsl_radius must be >= 1");
    if (align_h < 3 || align_w < 3)
        throw std::invalid_argument("LossConfig: alignment resolution must be >= 3");
}

LabeledCam::LabeledCam(Tensor cam_in, std::vector<int> labels_in)
    : cam(std::move(cam_in)), labels(std::move(labels_in)) {
    if (cam.shape.size() != 3)
        throw std::invalid_argument("LabeledCam: cam must be K x H x W");
    if (static_cast<int>(labels.size()) != cam.shape[0])
        throw std::invalid_argument("LabeledCam: labels length must equal K");
    for (int y : labels)
        if (y != 0 && y != 1)
            throw std::invalid_argument("LabeledCam: labels must be 0/1");
    for (double v : cam.values())
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("LabeledCam: cam values outside [0,1]");
}

Tensor eta(const Tensor& t, double mu) {
    for (double v : t.values())
        if (!(v > 0.0 && v < 1.0))
            throw std::domain_error("eta: input outside (0,1); clamp upstream");
    // tanh(mu + log(t) - log(1-t))
    Tensor logit = ew_binary(ew_unary(t, Unary::Log),
                             ew_unary(affine(t, -1.0, 1.0), Unary::Log), Binary::Sub);
    return ew_unary(affine(logit, 1.0, mu), Unary::Tanh);
}

namespace {

// shared tail of the DEAL pipeline: magnitude -> (0,1) domain -> eta
Tensor edge_activation(const Tensor& t, const LossConfig& cfg) {
    Tensor mag = sobel_magnitude(t);
    Tensor unit = affine(mag, 1.0 / kSobelMagnitudeMax, 0.0);
    return eta(clamp(unit, cfg.eps, 1.0 - cfg.eps), cfg.mu);
}

}  // namespace

Tensor deal_loss(const LabeledCam& cam, const Tensor& depth, const LossConfig& cfg,
                 bool* no_positive_class) {
    cfg.validate();
    if (depth.shape.size() != 3 || depth.shape[0] != 1)
        throw std::invalid_argument("deal_loss: depth must be 1 x H x W");
    for (double v : depth.values())
        if (!std::isfinite(v)) throw std::invalid_argument("deal_loss: non-finite depth");

    const int k = cam.cam.shape[0];
    const int n_pos = std::accumulate(cam.labels.begin(), cam.labels.end(), 0);
    if (no_positive_class) *no_positive_class = n_pos == 0;
    if (n_pos == 0) return tensor_from({0.0}, {1});

    // depth strand
    Tensor d_norm = minmax_normalize(depth, false);
    Tensor d_small = bicubic_resize(d_norm, cfg.align_h, cfg.align_w);
    Tensor d_act = edge_activation(d_small, cfg);  // 1 x H' x W'

    // cam strand
    Tensor s_small = clamp(bicubic_resize(cam.cam, cfg.align_h, cfg.align_w), 0.0, 1.0);
    Tensor a_act = edge_activation(s_small, cfg);  // K x H' x W'

    Tensor prod = ew_binary(a_act, d_act, Binary::Mul);

    // per-channel constant y_k / sum(y); absent classes contribute nothing
    const std::size_t plane = static_cast<std::size_t>(cfg.align_h) * cfg.align_w;
    std::vector<double> wmask(static_cast<std::size_t>(k) * plane);
    for (int c = 0; c < k; ++c)
        std::fill(wmask.begin() + c * plane, wmask.begin() + (c + 1) * plane,
                  cam.labels[c] ? 1.0 / n_pos : 0.0);
    Tensor weighted =
        ew_binary(prod, tensor_from(std::move(wmask), prod.shape), Binary::Mul);

    Tensor total = reduce(weighted, Reduction::Sum);
    return affine(total, -1.0 / static_cast<double>(plane), 0.0);
}

Tensor mlsm_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 1)
        throw std::invalid_argument("mlsm_loss: logits must be rank 1");
    const int k = logits.shape[0];
    if (static_cast<int>(labels.size()) != k)
        throw std::invalid_argument("mlsm_loss: labels length mismatch");
    const auto& z = logits.values();
    for (double v : z)
        if (!std::isfinite(v)) throw std::invalid_argument("mlsm_loss: non-finite logits");

    auto softplus = [](double x) {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    };
    double loss = 0.0;
    for (int c = 0; c < k; ++c)
        loss += labels[c] ? softplus(-z[c]) : softplus(z[c]);
    loss /= static_cast<double>(k);

    Tensor out;
    out.shape = Shape{1};
    out.data = std::make_shared<std::vector<double>>(1, loss);
    if (logits.tracked()) {
        auto zd = logits.data;
        auto y = labels;
        out.tape = logits.tape;
        out.node = logits.tape->record(
            out.shape, {logits.node},
            [zd, y, k](std::span<const double> g,
                       const std::vector<std::span<double>>& gin) {
                const auto& z = *zd;
                for (int c = 0; c < k; ++c) {
                    const double sig = z[c] >= 0.0
                                           ? 1.0 / (1.0 + std::exp(-z[c]))
                                           : std::exp(z[c]) / (1.0 + std::exp(z[c]));
                    gin[0][c] += g[0] * (sig - y[c]) / k;
                }
            });
    }
    return out;
}

Tensor is_aggregate(const LabeledCam& cam, Rng& rng) {
    const int k = cam.cam.shape[0], h = cam.cam.shape[1], w = cam.cam.shape[2];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto& s = cam.cam.values();

    std::vector<std::pair<int, int>> picks(k);
    for (int c = 0; c < k; ++c) {
        const double* p = s.data() + c * plane;
        double total = 0.0;
        for (std::size_t i = 0; i < plane; ++i) total += p[i];
        const double u = rng.uniform();
        std::size_t pick;
        if (total < 1e-12) {
            pick = std::min(static_cast<std::size_t>(u * plane), plane - 1);
        } else {
            // inverse CDF walk over p / total
            const double target = u * total;
            double acc = 0.0;
            pick = plane - 1;
            for (std::size_t i = 0; i < plane; ++i) {
                acc += p[i];
                if (acc > target) { pick = i; break; }
            }
        }
        picks[c] = {static_cast<int>(pick / w), static_cast<int>(pick % w)};
    }
    return gather_pixels(cam.cam, picks);
}

Tensor isl_loss(const LabeledCam& cam, const LossConfig& cfg, Rng& rng) {
    cfg.validate();
    Tensor acc;
    for (int n = 0; n < cfg.n_is; ++n) {
        Tensor term = mlsm_loss(is_aggregate(cam, rng), cam.labels);
        acc = n == 0 ? term : ew_binary(acc, term, Binary::Add);
    }
    return affine(acc, 1.0 / cfg.n_is, 0.0);
}

double gaussian_weight(int di, int dj, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_weight: sigma must be > 0");
    const double two_pi = 6.283185307179586476925286766559;
    const double s2 = sigma * sigma;
    return std::exp(-(static_cast<double>(di) * di + static_cast<double>(dj) * dj) /
                    (2.0 * s2)) /
           (two_pi * s2);
}

Tensor fsl_loss(const Tensor& image, const Tensor& cam, const LossConfig& cfg) {
    cfg.validate();
    if (image.shape.size() != 3 || image.shape[0] != 3)
        throw std::invalid_argument("fsl_loss: image must be 3 x H x W");
    if (cam.shape.size() != 3)
        throw std::invalid_argument("fsl_loss: cam must be K x H x W");
    if (image.shape[1] != cam.shape[1] || image.shape[2] != cam.shape[2])
        throw std::invalid_argument("fsl_loss: image/cam spatial mismatch");

    const int k = cam.shape[0], h = cam.shape[1], w = cam.shape[2];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto& xv = image.values();
    const auto& sv = cam.values();
    const int r = cfg.fsl_radius;
    const double lo = cfg.eps, hi = 1.0 - cfg.eps;
    // eta(d) = tanh(mu + log(d/(1-d))) = (E d^2 - (1-d)^2) / (E d^2 + (1-d)^2)
    const double big_e = std::exp(2.0 * cfg.mu);

    // sum over unordered pairs once; the ordered Eq. double-counts them
    double half_sum = 0.0;
    auto grad = std::make_shared<std::vector<double>>(sv.size(), 0.0);
    for (int di = 0; di <= r; ++di) {
        const int dj_start = di == 0 ? 1 : -r;
        for (int dj = dj_start; dj <= r; ++dj) {
            const double wgt = gaussian_weight(di, dj, cfg.sigma);
            const int i0 = 0, i1 = h - di;
            const int j0 = std::max(0, -dj), j1 = w - std::max(0, dj);
            if (i1 <= i0 || j1 <= j0) continue;
            const std::size_t off = static_cast<std::size_t>(di) * w + dj;
            for (int i = i0; i < i1; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * w;
                for (int j = j0; j < j1; ++j) {
                    const std::size_t p = base + j;
                    const std::size_t q = p + off;
                    const double r0 = xv[p] - xv[q];
                    const double r1 = xv[p + plane] - xv[q + plane];
                    const double r2 = xv[p + 2 * plane] - xv[q + 2 * plane];
                    const double delta =
                        std::sqrt(r0 * r0 + r1 * r1 + r2 * r2) / 3.0;
                    const double d = std::clamp(delta, lo, hi);
                    const double ed2 = big_e * d * d;
                    const double om = (1.0 - d) * (1.0 - d);
                    const double c = wgt * (ed2 - om) / (ed2 + om);
                    double gsum = 0.0;
                    for (int ch = 0; ch < k; ++ch) {
                        const double ds = sv[p + ch * plane] - sv[q + ch * plane];
                        gsum += ds * ds;
                        (*grad)[p + ch * plane] += c * ds;
                        (*grad)[q + ch * plane] -= c * ds;
                    }
                    half_sum += 0.5 * c * gsum;
                }
            }
        }
    }

    const double norm = -2.0 / static_cast<double>(plane);
    Tensor out;
    out.shape = Shape{1};
    out.data = std::make_shared<std::vector<double>>(1, norm * half_sum);
    if (cam.tracked()) {
        out.tape = cam.tape;
        out.node = cam.tape->record(
            out.shape, {cam.node},
            [grad, norm](std::span<const double> g,
                         const std::vector<std::span<double>>& gin) {
                const double gv = g[0] * norm;
                for (std::size_t i = 0; i < grad->size(); ++i)
                    gin[0][i] += gv * (*grad)[i];
            });
    }
    return out;
}

bool in_warmup(const LossConfig& cfg, int epoch, int total_epochs) {
    return epoch < static_cast<int>(std::floor(cfg.warmup_fraction * total_epochs));
}

Tensor combine_losses(const Tensor& base, const std::optional<Tensor>& edge,
                      const std::optional<Tensor>& is_term,
                      const std::optional<Tensor>& fs_term, const LossConfig& cfg,
                      int epoch, int total_epochs) {
    cfg.validate();
    if (epoch < 0 || epoch >= total_epochs)
        throw std::invalid_argument("combine_losses: epoch outside [0, total_epochs)");

    Tensor total = is_term ? affine(base, 1.0 - cfg.w_is, 0.0) : base;
    if (edge) {
        const double w = in_warmup(cfg, epoch, total_epochs) ? 0.0 : cfg.w_edge;
        total = ew_binary(total, affine(*edge, w, 0.0), Binary::Add);
    }
    if (is_term)
        total = ew_binary(total, affine(*is_term, cfg.w_is * cfg.aux_scale, 0.0),
                          Binary::Add);
    if (fs_term)
        total = ew_binary(total, affine(*fs_term, cfg.w_fs * cfg.aux_scale, 0.0),
                          Binary::Add);
    return total;
}

}  // namespace dealkit
