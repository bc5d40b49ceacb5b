// Dense tensors and a reverse-mode autodiff tape.
//
// Tensors are immutable value types: shape + shared flat storage of
// doubles. A Tensor optionally participates in a Tape; ops record a
// backward closure per node. A Tape is confined to one thread.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dealkit {

using Shape = std::vector<int>;

class Tape;

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    bool requires_grad = false;
    int node = -1;       // tape node id, -1 when untracked
    Tape* tape = nullptr;

    Tensor() = default;

    std::size_t numel() const {
        std::size_t n = 1;
        for (int e : shape) n *= static_cast<std::size_t>(e);
        return n;
    }
    bool tracked() const { return node >= 0; }
    const std::vector<double>& values() const { return *data; }
    double scalar() const;

    // 3-D accessor (C x H x W), bounds unchecked
    double at(int c, int i, int j) const {
        const int h = shape[shape.size() - 2], w = shape.back();
        return (*data)[(static_cast<std::size_t>(c) * h + i) * w + j];
    }
};

// Constant (untracked) tensor. requires_grad=true needs a tape: use
// Tape::tensor_from or pass the tape here.
Tensor tensor_from(std::vector<double> data, Shape shape,
                   bool requires_grad = false, Tape* tape = nullptr);

Tensor constant_like(const Tensor& t, double value);

using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      const std::vector<std::span<double>>& grad_in)>;

class Tape {
  public:
    Tensor tensor_from(std::vector<double> data, Shape shape, bool requires_grad = true);

    // Records a node; inputs lists parent node ids (tracked inputs only).
    int record(const Shape& out_shape, std::vector<int> inputs, BackwardFn fn);

    // Reverse sweep from a scalar loss; returns leaf node id -> gradient.
    std::unordered_map<int, Tensor> backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        std::vector<int> inputs;
        Shape shape;
        BackwardFn backward;
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
};

enum class Unary { Neg, Sqrt, Tanh, Log, Sigmoid, Relu };
enum class Binary { Add, Sub, Mul, Div };
enum class Reduction { Mean, Sum };

Tensor ew_unary(const Tensor& t, Unary kind);
Tensor clamp(const Tensor& t, double lo, double hi);
// scale * t + offset
Tensor affine(const Tensor& t, double scale, double offset);

// Shapes must match, or b may be 1xHxW against a KxHxW (leading-channel
// broadcast); the broadcast input's gradient sums over channels.
Tensor ew_binary(const Tensor& a, const Tensor& b, Binary kind);

using Kernel3x3 = std::array<std::array<double, 3>, 3>;

// Per-channel cross-correlation with a fixed (non-trainable) 3x3 kernel,
// replicate border padding, same spatial size. Input K x H x W, H,W >= 3.
Tensor conv2d_fixed(const Tensor& t, const Kernel3x3& kernel);

// Trainable 3x3 convolution: input Cin x H x W, weight Cout x Cin x 3 x 3,
// bias Cout; replicate padding, stride 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor reduce(const Tensor& t, Reduction kind);

// Picks one pixel per channel: cam K x H x W, idx[k] = (i, j) -> Tensor [K].
// Indices are constants on the tape; gradient reaches only the picked values.
Tensor gather_pixels(const Tensor& cam, const std::vector<std::pair<int, int>>& idx);

// relu already applied upstream; divides each channel by its max value
// (channels with max < 1e-12 become all zeros with zero gradient).
Tensor channel_max_norm(const Tensor& t);

// Spatial mean per channel: K x H x W -> [K] (GAP logits).
Tensor spatial_mean_per_channel(const Tensor& t);

std::unordered_map<int, Tensor> backward(const Tensor& loss);

struct FdReport {
    double max_rel_error = 0.0;
    bool pass = false;
    int excluded = 0;   // elements skipped as non-smooth (one-sided diffs disagree)
    int checked = 0;
};

// Central-difference audit of backward() for f: Tensor -> scalar.
// Relative error per element: |g_ad - g_fd| / max(1, |g_fd|).
FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tolerance);

}  // namespace dealkit
