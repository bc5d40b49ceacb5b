// Flat-key run configuration: "key = value" per line, '#' comments,
// unknown keys rejected.

#pragma once

#include <filesystem>
#include <string>

#include "dealkit/synth.hpp"
#include "dealkit/trainer.hpp"

namespace dealkit {

struct RunConfig {
    SynthConfig synth;
    TrainConfig train;
    std::string dataset_dir;
    std::string out_dir;

    // throws std::invalid_argument on unknown keys or bad values
    void apply(const std::string& key, const std::string& value);

    static RunConfig from_file(const std::filesystem::path& path);
};

}  // namespace dealkit
