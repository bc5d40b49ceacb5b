// A deliberately small CAM-producing convolutional classifier: three
// 3x3 stages (widths 8, 16, K), relu between stages, stride 1 with
// replicate padding so the CAM keeps the input resolution.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dealkit/rng.hpp"
#include "dealkit/tensor.hpp"

namespace dealkit {

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
};

struct ToyModel {
    int num_classes = 0;
    std::vector<Param> params;

    static ToyModel init(int num_classes, Rng& rng);

    // for tests: cam and logits of a fresh zero last layer are all zero
    void zero_last_layer();
};

struct ForwardResult {
    Tensor cam;     // K x H x W in [0,1], relu + per-channel max normalized
    Tensor logits;  // K, spatial mean of the raw CAM (GAP)
};

// When tape != nullptr, parameters are registered as leaves and their
// node ids returned through param_nodes (aligned with model.params).
ForwardResult forward_cam(const ToyModel& model, const Tensor& x, Tape* tape = nullptr,
                          std::vector<int>* param_nodes = nullptr);

// Registers parameters as tape leaves (shared across samples of a batch).
std::vector<Tensor> param_leaves(const ToyModel& model, Tape& tape);

// Forward pass with already-registered parameter leaves.
ForwardResult forward_cam_with(const std::vector<Tensor>& leaves, int num_classes,
                               const Tensor& x);

// Plain-text checkpoint format (hex doubles, bit-exact round-trip).
void save_model(const std::filesystem::path& path, const ToyModel& model);
ToyModel load_model(const std::filesystem::path& path);

}  // namespace dealkit
