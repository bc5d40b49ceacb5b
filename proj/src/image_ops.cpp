#include "dealkit/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dealkit {

namespace {

struct AxisTap {
    int idx[4];
    double w[4];
};

// Catmull-Rom weights for fractional offset t in [0,1)
void catmull_rom(double t, double w[4]) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = -0.5 * t + t2 - 0.5 * t3;
    w[1] = 1.0 - 2.5 * t2 + 1.5 * t3;
    w[2] = 0.5 * t + 2.0 * t2 - 1.5 * t3;
    w[3] = -0.5 * t2 + 0.5 * t3;
}

std::vector<AxisTap> build_taps(int in_n, int out_n) {
    std::vector<AxisTap> taps(out_n);
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        const double src = (o + 0.5) * scale - 0.5;
        const double fl = std::floor(src);
        const int base = static_cast<int>(fl);
        catmull_rom(src - fl, taps[o].w);
        for (int k = 0; k < 4; ++k)
            taps[o].idx[k] = std::clamp(base - 1 + k, 0, in_n - 1);
    }
    return taps;
}

}  // namespace

Tensor bicubic_resize(const Tensor& t, int out_h, int out_w) {
    if (t.shape.size() != 3)
        throw std::invalid_argument("bicubic_resize: expected C x H x W");
    const int c = t.shape[0], h = t.shape[1], w = t.shape[2];
    if (h < 2 || w < 2)
        throw std::invalid_argument("bicubic_resize: input spatial extent < 2");
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bicubic_resize: non-positive target extents");

    const auto row_taps = build_taps(h, out_h);
    const auto col_taps = build_taps(w, out_w);

    // vertical pass: C x H x W -> C x out_h x W
    std::vector<double> mid(static_cast<std::size_t>(c) * out_h * w, 0.0);
    const auto& x = t.values();
    for (int ch = 0; ch < c; ++ch) {
        const double* src = x.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = mid.data() + static_cast<std::size_t>(ch) * out_h * w;
        for (int oi = 0; oi < out_h; ++oi) {
            double* orow = dst + static_cast<std::size_t>(oi) * w;
            for (int k = 0; k < 4; ++k) {
                const double wv = row_taps[oi].w[k];
                const double* srow =
                    src + static_cast<std::size_t>(row_taps[oi].idx[k]) * w;
                for (int j = 0; j < w; ++j) orow[j] += wv * srow[j];
            }
        }
    }
    // horizontal pass: C x out_h x W -> C x out_h x out_w
    std::vector<double> y(static_cast<std::size_t>(c) * out_h * out_w, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < out_h; ++oi) {
            const double* srow =
                mid.data() + (static_cast<std::size_t>(ch) * out_h + oi) * w;
            double* orow =
                y.data() + (static_cast<std::size_t>(ch) * out_h + oi) * out_w;
            for (int oj = 0; oj < out_w; ++oj) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k)
                    acc += col_taps[oj].w[k] * srow[col_taps[oj].idx[k]];
                orow[oj] = acc;
            }
        }

    Tensor out;
    out.shape = Shape{c, out_h, out_w};
    out.data = std::make_shared<std::vector<double>>(std::move(y));
    if (t.tracked()) {
        out.tape = t.tape;
        out.node = t.tape->record(
            out.shape, {t.node},
            [row_taps, col_taps, c, h, w, out_h, out_w](
                std::span<const double> g, const std::vector<std::span<double>>& gin) {
                // transpose of the two passes, in reverse order
                std::vector<double> gmid(static_cast<std::size_t>(c) * out_h * w, 0.0);
                for (int ch = 0; ch < c; ++ch)
                    for (int oi = 0; oi < out_h; ++oi) {
                        const double* grow =
                            g.data() + (static_cast<std::size_t>(ch) * out_h + oi) * out_w;
                        double* mrow =
                            gmid.data() + (static_cast<std::size_t>(ch) * out_h + oi) * w;
                        for (int oj = 0; oj < out_w; ++oj)
                            for (int k = 0; k < 4; ++k)
                                mrow[col_taps[oj].idx[k]] += col_taps[oj].w[k] * grow[oj];
                    }
                for (int ch = 0; ch < c; ++ch) {
                    double* gi = gin[0].data() + static_cast<std::size_t>(ch) * h * w;
                    const double* msrc =
                        gmid.data() + static_cast<std::size_t>(ch) * out_h * w;
                    for (int oi = 0; oi < out_h; ++oi) {
                        const double* mrow = msrc + static_cast<std::size_t>(oi) * w;
                        for (int k = 0; k < 4; ++k) {
                            const double wv = row_taps[oi].w[k];
                            double* grow =
                                gi + static_cast<std::size_t>(row_taps[oi].idx[k]) * w;
                            for (int j = 0; j < w; ++j) grow[j] += wv * mrow[j];
                        }
                    }
                }
            });
    }
    return out;
}

Tensor sobel_magnitude(const Tensor& t) {
    static const SobelPair sobel;
    Tensor gx = conv2d_fixed(t, sobel.gx);
    Tensor gy = conv2d_fixed(t, sobel.gy);
    Tensor sq = ew_binary(ew_binary(gx, gx, Binary::Mul),
                          ew_binary(gy, gy, Binary::Mul), Binary::Add);
    return ew_unary(affine(sq, 1.0, kSqrtGuard), Unary::Sqrt);
}

Tensor minmax_normalize(const Tensor& t, bool per_channel) {
    if (t.shape.size() != 3)
        throw std::invalid_argument("minmax_normalize: expected C x H x W");
    const auto& x = t.values();
    for (double v : x)
        if (!std::isfinite(v))
            throw std::invalid_argument("minmax_normalize: non-finite input");

    const int c = t.shape[0];
    const std::size_t plane = static_cast<std::size_t>(t.shape[1]) * t.shape[2];
    const int groups = per_channel ? c : 1;
    const std::size_t group_n = per_channel ? plane : plane * c;

    std::vector<double> y(x.size());
    std::vector<double> scale(groups), shift(groups);
    for (int gidx = 0; gidx < groups; ++gidx) {
        const double* p = x.data() + gidx * group_n;
        auto [mn, mx] = std::minmax_element(p, p + group_n);
        const double range = *mx - *mn;
        double* o = y.data() + gidx * group_n;
        if (range < 1e-12) {
            std::fill(o, o + group_n, 0.0);
            scale[gidx] = 0.0;
            shift[gidx] = 0.0;
        } else {
            scale[gidx] = 1.0 / range;
            shift[gidx] = -*mn / range;
            for (std::size_t i = 0; i < group_n; ++i) o[i] = p[i] * scale[gidx] + shift[gidx];
        }
    }

    Tensor out;
    out.shape = t.shape;
    out.data = std::make_shared<std::vector<double>>(std::move(y));
    if (t.tracked()) {
        out.tape = t.tape;
        out.node = t.tape->record(
            out.shape, {t.node},
            [scale, group_n, groups](std::span<const double> g,
                                     const std::vector<std::span<double>>& gin) {
                for (int gidx = 0; gidx < groups; ++gidx) {
                    const double s = scale[gidx];
                    double* gi = gin[0].data() + gidx * group_n;
                    const double* gp = g.data() + gidx * group_n;
                    for (std::size_t i = 0; i < group_n; ++i) gi[i] += s * gp[i];
                }
            });
    }
    return out;
}

}  // namespace dealkit
