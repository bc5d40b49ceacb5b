// Synthetic RGB-D scenes: shape-class objects at constant depth over a
// ramped background, so semantic boundaries coincide with depth
// discontinuities by construction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dealkit/rng.hpp"
#include "dealkit/tensor.hpp"

namespace dealkit {

struct SynthConfig {
    int image_size = 64;
    int num_classes = 4;
    int objects_min = 1;
    int objects_max = 3;
    double depth_noise_std = 0.0;  // meters; 0.02 for RealSense-like noise
    double color_jitter = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Scene {
    Tensor rgb;                // 3 x H x W, values in [0,1]
    Tensor depth;              // 1 x H x W, meters, > 0
    std::vector<int> gt_mask;  // H*W, values in {0..K}, 0 = background
    std::vector<int> labels;   // K, presence derived from gt_mask
};

Scene generate_scene(const SynthConfig& cfg, Rng& rng);

// Writes per-sample rgb.ppm / depth.pfm / gt_mask.pgm under
// out_dir/{train,val}/<id>/, a labels.txt per split, and manifest.txt.
// Train and val draw from disjoint seed streams. Returns the manifest path.
std::filesystem::path generate_dataset(const SynthConfig& cfg, int n_train, int n_val,
                                       const std::filesystem::path& out_dir);

// Loads a split written by generate_dataset.
std::vector<Scene> read_split(const std::filesystem::path& split_dir, int num_classes);

}  // namespace dealkit
