#include "dealkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dealkit {

namespace {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor_from: empty shape");
    for (int e : shape)
        if (e < 1)
            throw std::invalid_argument("tensor_from: extent " + std::to_string(e) +
                                        " < 1");
}

Tape* common_tape(const Tensor& a, const Tensor& b) {
    if (a.tracked() && b.tracked() && a.tape != b.tape)
        throw std::invalid_argument("operands belong to different tapes");
    return a.tracked() ? a.tape : (b.tracked() ? b.tape : nullptr);
}

// Wraps a forward result: records the node when any input is tracked.
Tensor make_result(Shape shape, std::vector<double> values, Tape* tape,
                   std::vector<int> inputs, BackwardFn fn) {
    Tensor out;
    out.shape = std::move(shape);
    out.data = std::make_shared<std::vector<double>>(std::move(values));
    if (tape && !inputs.empty()) {
        out.tape = tape;
        out.node = tape->record(out.shape, std::move(inputs), std::move(fn));
    }
    return out;
}

int spatial_h(const Shape& s) { return s[s.size() - 2]; }
int spatial_w(const Shape& s) { return s.back(); }

}  // namespace

double Tensor::scalar() const {
    if (numel() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
    return (*data)[0];
}

Tensor tensor_from(std::vector<double> data, Shape shape, bool requires_grad,
                   Tape* tape) {
    check_shape(shape);
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("tensor_from: data length " +
                                    std::to_string(data.size()) +
                                    " does not match shape product " +
                                    std::to_string(shape_numel(shape)));
    if (requires_grad) {
        if (!tape)
            throw std::invalid_argument("tensor_from: requires_grad needs a tape");
        return tape->tensor_from(std::move(data), std::move(shape), true);
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(data));
    return t;
}

Tensor constant_like(const Tensor& t, double value) {
    return tensor_from(std::vector<double>(t.numel(), value), t.shape);
}

Tensor Tape::tensor_from(std::vector<double> data, Shape shape, bool requires_grad) {
    check_shape(shape);
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("tensor_from: data/shape length mismatch");
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(std::move(data));
    if (requires_grad) {
        t.requires_grad = true;
        t.tape = this;
        nodes_.push_back(Node{{}, std::move(shape), nullptr, true});
        t.node = static_cast<int>(nodes_.size()) - 1;
    }
    return t;
}

int Tape::record(const Shape& out_shape, std::vector<int> inputs, BackwardFn fn) {
    for (int id : inputs)
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::logic_error("tape: input node id out of range");
    nodes_.push_back(Node{std::move(inputs), out_shape, std::move(fn), false});
    return static_cast<int>(nodes_.size()) - 1;
}

std::unordered_map<int, Tensor> Tape::backward(const Tensor& loss) {
    if (!loss.tracked() || loss.tape != this)
        throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar");

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[loss.node] = {1.0};

    for (int id = loss.node; id >= 0; --id) {
        if (grads[id].empty()) continue;
        const Node& node = nodes_[id];
        if (node.is_leaf) continue;
        std::vector<std::span<double>> gin;
        gin.reserve(node.inputs.size());
        for (int in : node.inputs) {
            if (grads[in].empty())
                grads[in].assign(shape_numel(nodes_[in].shape), 0.0);
            gin.emplace_back(grads[in]);
        }
        node.backward(std::span<const double>(grads[id]), gin);
    }

    std::unordered_map<int, Tensor> result;
    for (int id = 0; id <= loss.node; ++id) {
        if (!nodes_[id].is_leaf) continue;
        Tensor g;
        g.shape = nodes_[id].shape;
        if (grads[id].empty()) grads[id].assign(shape_numel(g.shape), 0.0);
        g.data = std::make_shared<std::vector<double>>(std::move(grads[id]));
        result.emplace(id, std::move(g));
    }
    return result;
}

std::unordered_map<int, Tensor> backward(const Tensor& loss) {
    if (!loss.tracked())
        throw std::invalid_argument("backward: loss is not tracked on a tape");
    return loss.tape->backward(loss);
}

Tensor ew_unary(const Tensor& t, Unary kind) {
    const auto& x = t.values();
    std::vector<double> y(x.size());
    switch (kind) {
        case Unary::Neg:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
            break;
        case Unary::Sqrt:
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] <= 0.0)
                    throw std::domain_error("sqrt: input <= 0 (clamp upstream)");
                y[i] = std::sqrt(x[i]);
            }
            break;
        case Unary::Tanh:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
            break;
        case Unary::Log:
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] <= 0.0)
                    throw std::domain_error("log: input <= 0 (clamp upstream)");
                y[i] = std::log(x[i]);
            }
            break;
        case Unary::Sigmoid:
            for (std::size_t i = 0; i < x.size(); ++i)
                y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                   : std::exp(x[i]) / (1.0 + std::exp(x[i]));
            break;
        case Unary::Relu:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
    }

    auto xd = t.data;
    auto yd = std::make_shared<std::vector<double>>(std::move(y));
    Tensor out;
    out.shape = t.shape;
    out.data = yd;
    if (t.tracked()) {
        out.tape = t.tape;
        out.node = t.tape->record(
            out.shape, {t.node},
            [xd, yd, kind](std::span<const double> g,
                           const std::vector<std::span<double>>& gin) {
                auto& gi = gin[0];
                const auto& xv = *xd;
                const auto& yv = *yd;
                switch (kind) {
                    case Unary::Neg:
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
                        break;
                    case Unary::Sqrt:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += g[i] * 0.5 / yv[i];
                        break;
                    case Unary::Tanh:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += g[i] * (1.0 - yv[i] * yv[i]);
                        break;
                    case Unary::Log:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += g[i] / xv[i];
                        break;
                    case Unary::Sigmoid:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += g[i] * yv[i] * (1.0 - yv[i]);
                        break;
                    case Unary::Relu:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            gi[i] += xv[i] > 0.0 ? g[i] : 0.0;
                        break;
                }
            });
    }
    return out;
}

Tensor clamp(const Tensor& t, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    const auto& x = t.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
    auto xd = t.data;
    return make_result(t.shape, std::move(y), t.tape,
                       t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
                       [xd, lo, hi](std::span<const double> g,
                                    const std::vector<std::span<double>>& gin) {
                           const auto& xv = *xd;
                           auto& gi = gin[0];
                           // straight-through inside [lo,hi], zero outside
                           for (std::size_t i = 0; i < g.size(); ++i)
                               if (xv[i] >= lo && xv[i] <= hi) gi[i] += g[i];
                       });
}

Tensor affine(const Tensor& t, double scale, double offset) {
    const auto& x = t.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = scale * x[i] + offset;
    return make_result(t.shape, std::move(y), t.tape,
                       t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
                       [scale](std::span<const double> g,
                               const std::vector<std::span<double>>& gin) {
                           auto& gi = gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i)
                               gi[i] += scale * g[i];
                       });
}

Tensor ew_binary(const Tensor& a, const Tensor& b, Binary kind) {
    const bool same = a.shape == b.shape;
    bool bcast = false;
    if (!same) {
        bcast = a.shape.size() == 3 && b.shape.size() == 3 && b.shape[0] == 1 &&
                a.shape[0] > 1 && b.shape[1] == a.shape[1] && b.shape[2] == a.shape[2];
        if (!bcast)
            throw std::invalid_argument("ew_binary: shapes not equal nor broadcastable");
    }
    const auto& av = a.values();
    const auto& bv = b.values();
    if (kind == Binary::Div)
        for (double d : bv)
            if (d == 0.0) throw std::domain_error("div: denominator contains 0");

    const std::size_t plane = bcast ? bv.size() : 0;
    std::vector<double> y(av.size());
    auto rhs = [&](std::size_t i) { return bcast ? bv[i % plane] : bv[i]; };
    switch (kind) {
        case Binary::Add:
            for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + rhs(i);
            break;
        case Binary::Sub:
            for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] - rhs(i);
            break;
        case Binary::Mul:
            for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] * rhs(i);
            break;
        case Binary::Div:
            for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] / rhs(i);
            break;
    }

    Tape* tape = common_tape(a, b);
    std::vector<int> inputs;
    int slot_a = -1, slot_b = -1;
    if (a.tracked()) { slot_a = 0; inputs.push_back(a.node); }
    if (b.tracked()) { slot_b = static_cast<int>(inputs.size()); inputs.push_back(b.node); }

    auto ad = a.data;
    auto bd = b.data;
    return make_result(
        a.shape, std::move(y), tape, std::move(inputs),
        [ad, bd, kind, bcast, plane, slot_a, slot_b](
            std::span<const double> g, const std::vector<std::span<double>>& gin) {
            const auto& av = *ad;
            const auto& bv = *bd;
            auto rhs = [&](std::size_t i) { return bcast ? bv[i % plane] : bv[i]; };
            for (std::size_t i = 0; i < g.size(); ++i) {
                double da = 0.0, db = 0.0;
                switch (kind) {
                    case Binary::Add: da = g[i]; db = g[i]; break;
                    case Binary::Sub: da = g[i]; db = -g[i]; break;
                    case Binary::Mul: da = g[i] * rhs(i); db = g[i] * av[i]; break;
                    case Binary::Div: {
                        const double d = rhs(i);
                        da = g[i] / d;
                        db = -g[i] * av[i] / (d * d);
                        break;
                    }
                }
                if (slot_a >= 0) gin[slot_a][i] += da;
                if (slot_b >= 0) gin[slot_b][bcast ? i % plane : i] += db;
            }
        });
}

namespace {

// replicate-pad one channel plane into (h+2) x (w+2)
void pad_plane(const double* src, int h, int w, double* dst) {
    const int pw = w + 2;
    for (int i = -1; i <= h; ++i) {
        const double* row = src + static_cast<std::size_t>(std::clamp(i, 0, h - 1)) * w;
        double* out = dst + static_cast<std::size_t>(i + 1) * pw;
        out[0] = row[0];
        std::copy(row, row + w, out + 1);
        out[pw - 1] = row[w - 1];
    }
}

// adjoint of pad_plane: fold padded-buffer gradients back into h x w
void fold_plane(const double* gpad, int h, int w, double* gdst) {
    const int pw = w + 2;
    for (int i = -1; i <= h; ++i) {
        const double* row = gpad + static_cast<std::size_t>(i + 1) * pw;
        double* out = gdst + static_cast<std::size_t>(std::clamp(i, 0, h - 1)) * w;
        out[0] += row[0];
        for (int j = 0; j < w; ++j) out[j] += row[j + 1];
        out[w - 1] += row[pw - 1];
    }
}

}  // namespace

Tensor conv2d_fixed(const Tensor& t, const Kernel3x3& kernel) {
    if (t.shape.size() != 3)
        throw std::invalid_argument("conv2d_fixed: expected C x H x W input");
    const int c = t.shape[0], h = spatial_h(t.shape), w = spatial_w(t.shape);
    if (h < 3 || w < 3)
        throw std::invalid_argument("conv2d_fixed: spatial extent < 3");

    const int ph = h + 2, pw = w + 2;
    const auto& x = t.values();
    std::vector<double> y(x.size(), 0.0);
    std::vector<double> padded(static_cast<std::size_t>(ph) * pw);
    for (int ch = 0; ch < c; ++ch) {
        pad_plane(x.data() + static_cast<std::size_t>(ch) * h * w, h, w, padded.data());
        double* out = y.data() + static_cast<std::size_t>(ch) * h * w;
        for (int di = 0; di < 3; ++di)
            for (int dj = 0; dj < 3; ++dj) {
                const double kv = kernel[di][dj];
                if (kv == 0.0) continue;
                for (int i = 0; i < h; ++i) {
                    const double* src = padded.data() +
                                        static_cast<std::size_t>(i + di) * pw + dj;
                    double* orow = out + static_cast<std::size_t>(i) * w;
                    for (int j = 0; j < w; ++j) orow[j] += kv * src[j];
                }
            }
    }

    return make_result(
        t.shape, std::move(y), t.tape,
        t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
        [kernel, c, h, w](std::span<const double> g,
                          const std::vector<std::span<double>>& gin) {
            const int ph = h + 2, pw = w + 2;
            std::vector<double> gpad(static_cast<std::size_t>(ph) * pw);
            for (int ch = 0; ch < c; ++ch) {
                std::fill(gpad.begin(), gpad.end(), 0.0);
                const double* go = g.data() + static_cast<std::size_t>(ch) * h * w;
                for (int di = 0; di < 3; ++di)
                    for (int dj = 0; dj < 3; ++dj) {
                        const double kv = kernel[di][dj];
                        if (kv == 0.0) continue;
                        for (int i = 0; i < h; ++i) {
                            double* dst = gpad.data() +
                                          static_cast<std::size_t>(i + di) * pw + dj;
                            const double* grow = go + static_cast<std::size_t>(i) * w;
                            for (int j = 0; j < w; ++j) dst[j] += kv * grow[j];
                        }
                    }
                fold_plane(gpad.data(), h, w,
                           gin[0].data() + static_cast<std::size_t>(ch) * h * w);
            }
        });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.shape.size() != 3 || weight.shape.size() != 4 || bias.shape.size() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    const int cin = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int cout = weight.shape[0];
    if (weight.shape[1] != cin || weight.shape[2] != 3 || weight.shape[3] != 3 ||
        bias.shape[0] != cout)
        throw std::invalid_argument("conv2d: weight/bias shapes inconsistent");
    if (h < 3 || w < 3) throw std::invalid_argument("conv2d: spatial extent < 3");

    const int ph = h + 2, pw = w + 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto& xv = input.values();
    const auto& wv = weight.values();
    const auto& bv = bias.values();

    // keep the padded input; backward reuses it for the weight gradient
    auto padded = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(cin) * ph * pw);
    for (int ci = 0; ci < cin; ++ci)
        pad_plane(xv.data() + ci * plane, h, w,
                  padded->data() + static_cast<std::size_t>(ci) * ph * pw);

    std::vector<double> y(static_cast<std::size_t>(cout) * plane);
    for (int co = 0; co < cout; ++co) {
        double* out = y.data() + co * plane;
        std::fill(out, out + plane, bv[co]);
        for (int ci = 0; ci < cin; ++ci) {
            const double* pp = padded->data() + static_cast<std::size_t>(ci) * ph * pw;
            const double* wk = wv.data() + (static_cast<std::size_t>(co) * cin + ci) * 9;
            for (int di = 0; di < 3; ++di)
                for (int dj = 0; dj < 3; ++dj) {
                    const double kv = wk[di * 3 + dj];
                    for (int i = 0; i < h; ++i) {
                        const double* src = pp + static_cast<std::size_t>(i + di) * pw + dj;
                        double* orow = out + static_cast<std::size_t>(i) * w;
                        for (int j = 0; j < w; ++j) orow[j] += kv * src[j];
                    }
                }
        }
    }

    Tape* tape = nullptr;
    for (const Tensor* t : {&input, &weight, &bias})
        if (t->tracked()) {
            if (tape && t->tape != tape)
                throw std::invalid_argument("conv2d: mixed tapes");
            tape = t->tape;
        }
    std::vector<int> inputs;
    int s_in = -1, s_w = -1, s_b = -1;
    if (input.tracked()) { s_in = 0; inputs.push_back(input.node); }
    if (weight.tracked()) { s_w = static_cast<int>(inputs.size()); inputs.push_back(weight.node); }
    if (bias.tracked()) { s_b = static_cast<int>(inputs.size()); inputs.push_back(bias.node); }

    auto wd = weight.data;
    return make_result(
        Shape{cout, h, w}, std::move(y), tape, std::move(inputs),
        [padded, wd, cin, cout, h, w, s_in, s_w, s_b](
            std::span<const double> g, const std::vector<std::span<double>>& gin) {
            const int ph = h + 2, pw = w + 2;
            const std::size_t plane = static_cast<std::size_t>(h) * w;
            const auto& wv = *wd;
            std::vector<double> gpad;
            if (s_in >= 0)
                gpad.assign(static_cast<std::size_t>(cin) * ph * pw, 0.0);
            for (int co = 0; co < cout; ++co) {
                const double* go = g.data() + co * plane;
                if (s_b >= 0) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += go[i];
                    gin[s_b][co] += s;
                }
                for (int ci = 0; ci < cin; ++ci) {
                    const double* pp =
                        padded->data() + static_cast<std::size_t>(ci) * ph * pw;
                    const std::size_t wbase =
                        (static_cast<std::size_t>(co) * cin + ci) * 9;
                    for (int di = 0; di < 3; ++di)
                        for (int dj = 0; dj < 3; ++dj) {
                            const double kv = wv[wbase + di * 3 + dj];
                            double wg = 0.0;
                            double* gp = s_in >= 0
                                             ? gpad.data() +
                                                   static_cast<std::size_t>(ci) * ph * pw
                                             : nullptr;
                            for (int i = 0; i < h; ++i) {
                                const double* src =
                                    pp + static_cast<std::size_t>(i + di) * pw + dj;
                                const double* grow = go + static_cast<std::size_t>(i) * w;
                                if (gp) {
                                    double* dst =
                                        gp + static_cast<std::size_t>(i + di) * pw + dj;
                                    for (int j = 0; j < w; ++j) {
                                        wg += grow[j] * src[j];
                                        dst[j] += kv * grow[j];
                                    }
                                } else {
                                    for (int j = 0; j < w; ++j) wg += grow[j] * src[j];
                                }
                            }
                            if (s_w >= 0) gin[s_w][wbase + di * 3 + dj] += wg;
                        }
                }
            }
            if (s_in >= 0)
                for (int ci = 0; ci < cin; ++ci)
                    fold_plane(gpad.data() + static_cast<std::size_t>(ci) * ph * pw, h, w,
                               gin[s_in].data() + ci * plane);
        });
}

Tensor reduce(const Tensor& t, Reduction kind) {
    const auto& x = t.values();
    if (x.empty()) throw std::invalid_argument("reduce: empty tensor");
    double acc = 0.0;
    for (double v : x) acc += v;
    const double n = static_cast<double>(x.size());
    const double value = kind == Reduction::Mean ? acc / n : acc;
    const double gscale = kind == Reduction::Mean ? 1.0 / n : 1.0;
    return make_result(Shape{1}, {value}, t.tape,
                       t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
                       [gscale](std::span<const double> g,
                                const std::vector<std::span<double>>& gin) {
                           const double gv = g[0] * gscale;
                           for (double& v : gin[0]) v += gv;
                       });
}

Tensor gather_pixels(const Tensor& cam,
                     const std::vector<std::pair<int, int>>& idx) {
    if (cam.shape.size() != 3)
        throw std::invalid_argument("gather_pixels: expected K x H x W");
    const int k = cam.shape[0], h = cam.shape[1], w = cam.shape[2];
    if (static_cast<int>(idx.size()) != k)
        throw std::invalid_argument("gather_pixels: one index per channel required");
    std::vector<double> y(k);
    for (int c = 0; c < k; ++c) {
        auto [i, j] = idx[c];
        if (i < 0 || i >= h || j < 0 || j >= w)
            throw std::invalid_argument("gather_pixels: index out of range");
        y[c] = cam.at(c, i, j);
    }
    auto indices = idx;
    return make_result(Shape{k}, std::move(y), cam.tape,
                       cam.tracked() ? std::vector<int>{cam.node} : std::vector<int>{},
                       [indices, h, w](std::span<const double> g,
                                       const std::vector<std::span<double>>& gin) {
                           for (std::size_t c = 0; c < indices.size(); ++c) {
                               auto [i, j] = indices[c];
                               gin[0][(c * h + i) * w + j] += g[c];
                           }
                       });
}

Tensor channel_max_norm(const Tensor& t) {
    if (t.shape.size() != 3)
        throw std::invalid_argument("channel_max_norm: expected K x H x W");
    const int k = t.shape[0];
    const std::size_t plane = static_cast<std::size_t>(t.shape[1]) * t.shape[2];
    const auto& x = t.values();
    std::vector<double> y(x.size());
    std::vector<double> maxv(k);
    std::vector<int> argmax(k);
    for (int c = 0; c < k; ++c) {
        const double* p = x.data() + c * plane;
        double m = p[0];
        int am = 0;
        for (std::size_t i = 1; i < plane; ++i)
            if (p[i] > m) { m = p[i]; am = static_cast<int>(i); }
        maxv[c] = m;
        argmax[c] = am;
        double* o = y.data() + c * plane;
        if (m < 1e-12)
            std::fill(o, o + plane, 0.0);
        else
            for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] / m;
    }
    auto xd = t.data;
    return make_result(
        t.shape, std::move(y), t.tape,
        t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
        [xd, k, plane, maxv, argmax](std::span<const double> g,
                                     const std::vector<std::span<double>>& gin) {
            const auto& x = *xd;
            for (int c = 0; c < k; ++c) {
                const double m = maxv[c];
                if (m < 1e-12) continue;  // flat channel: zero gradient
                const double* xp = x.data() + c * plane;
                const double* gp = g.data() + c * plane;
                double* gi = gin[0].data() + c * plane;
                double dot = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    gi[i] += gp[i] / m;
                    dot += gp[i] * xp[i];
                }
                // subgradient through the max pick
                gi[argmax[c]] -= dot / (m * m);
            }
        });
}

Tensor spatial_mean_per_channel(const Tensor& t) {
    if (t.shape.size() != 3)
        throw std::invalid_argument("spatial_mean_per_channel: expected K x H x W");
    const int k = t.shape[0];
    const std::size_t plane = static_cast<std::size_t>(t.shape[1]) * t.shape[2];
    const auto& x = t.values();
    std::vector<double> y(k, 0.0);
    for (int c = 0; c < k; ++c) {
        const double* p = x.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) y[c] += p[i];
        y[c] /= static_cast<double>(plane);
    }
    return make_result(Shape{k}, std::move(y), t.tape,
                       t.tracked() ? std::vector<int>{t.node} : std::vector<int>{},
                       [k, plane](std::span<const double> g,
                                  const std::vector<std::span<double>>& gin) {
                           for (int c = 0; c < k; ++c) {
                               const double gv = g[c] / static_cast<double>(plane);
                               double* gi = gin[0].data() + c * plane;
                               for (std::size_t i = 0; i < plane; ++i) gi[i] += gv;
                           }
                       });
}

FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tolerance) {
    if (step < 1e-7 || step > 1e-3)
        throw std::invalid_argument("finite_diff_check: step outside [1e-7, 1e-3]");

    Tape tape;
    Tensor leaf = tape.tensor_from(x.values(), x.shape, true);
    Tensor loss = f(leaf);
    if (loss.numel() != 1)
        throw std::invalid_argument("finite_diff_check: f must return a scalar");
    auto grads = tape.backward(loss);
    const Tensor& g_ad = grads.at(leaf.node);

    const double f0 = f(tensor_from(x.values(), x.shape)).scalar();

    FdReport report;
    std::vector<double> work = x.values();
    for (std::size_t i = 0; i < work.size(); ++i) {
        const double orig = work[i];
        work[i] = orig + step;
        const double fp = f(tensor_from(work, x.shape)).scalar();
        work[i] = orig - step;
        const double fm = f(tensor_from(work, x.shape)).scalar();
        work[i] = orig;

        const double fd_c = (fp - fm) / (2.0 * step);
        const double fd_f = (fp - f0) / step;
        const double fd_b = (f0 - fm) / step;
        // one-sided diffs disagreeing at O(1) marks a kink (clamp/relu boundary)
        if (std::abs(fd_f - fd_b) > 1e-3 * std::max(1.0, std::abs(fd_c))) {
            ++report.excluded;
            continue;
        }
        const double rel =
            std::abs(g_ad.values()[i] - fd_c) / std::max(1.0, std::abs(fd_c));
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.checked;
    }
    report.pass = report.checked > 0 && report.max_rel_error < tolerance;
    return report;
}

}  // namespace dealkit
