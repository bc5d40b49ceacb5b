// Bit-exact file formats: PFM float rasters, binary PPM/PGM, and the
// plain-text labels format.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dealkit/tensor.hpp"

namespace dealkit {

// Portable FloatMap: "Pf" (1 channel) or "PF" (3 channels), scale -1.0
// (little-endian), rows bottom-to-top, float32. Values round-trip up to
// float32 rounding.
void write_pfm(const std::filesystem::path& path, const Tensor& t);
Tensor read_pfm(const std::filesystem::path& path);

// Binary P6, maxval 255; rgb values in [0,1] quantized to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_ppm(const std::filesystem::path& path);

// Binary P5, maxval 255; mask values are class indices.
void write_pgm(const std::filesystem::path& path, const std::vector<int>& mask,
               int h, int w);
std::pair<std::vector<int>, std::pair<int, int>> read_pgm(
    const std::filesystem::path& path);

// One line per sample: "<id> <k1,k2,...>" listing present class indices
// (possibly empty). Input/output vectors are binary presence vectors of
// uniform length K.
void write_labels(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::vector<int>>>& labels);
std::vector<std::pair<std::string, std::vector<int>>> read_labels(
    const std::filesystem::path& path, int num_classes);

}  // namespace dealkit
