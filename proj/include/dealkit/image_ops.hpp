// Resampling, edge extraction and normalization primitives.

#pragma once

#include "dealkit/tensor.hpp"

namespace dealkit {

// 3x3 Sobel kernels: gx responds to vertical edges, gy = gx transposed.
struct SobelPair {
    Kernel3x3 gx{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
    Kernel3x3 gy{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};
};

// Maximum Sobel magnitude attainable on a [0,1]-valued image.
inline constexpr double kSobelMagnitudeMax = 5.656854249492380195206754896838;  // 4*sqrt(2)

// epsilon added under the square root so the magnitude gradient stays
// finite at exactly-zero edges
inline constexpr double kSqrtGuard = 1e-12;

// Catmull-Rom bicubic (a = -0.5), half-pixel centers, edge-clamped
// sampling. Differentiable: backward scatters the same weights.
Tensor bicubic_resize(const Tensor& t, int out_h, int out_w);

// Per-channel sqrt((Gx*t)^2 + (Gy*t)^2 + kSqrtGuard), replicate padding.
Tensor sobel_magnitude(const Tensor& t);

// (t - min) / (max - min), per channel or globally; degenerate range
// (max - min < 1e-12) maps to all zeros. Not differentiated through the
// min/max picks (used on constant inputs such as depth maps).
Tensor minmax_normalize(const Tensor& t, bool per_channel);

}  // namespace dealkit
