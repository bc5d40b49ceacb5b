#include "dealkit/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dealkit {

namespace {

int to_int(const std::string& v) {
    std::size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("bad integer '" + v + "'");
    return r;
}

double to_double(const std::string& v) {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("bad number '" + v + "'");
    return r;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("bad boolean '" + v + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    // synthesis
    if (key == "image_size") synth.image_size = to_int(value);
    else if (key == "num_classes") synth.num_classes = to_int(value);
    else if (key == "objects_min") synth.objects_min = to_int(value);
    else if (key == "objects_max") synth.objects_max = to_int(value);
    else if (key == "depth_noise_std") synth.depth_noise_std = to_double(value);
    else if (key == "color_jitter") synth.color_jitter = to_double(value);
    else if (key == "seed") {
        synth.seed = static_cast<std::uint64_t>(std::stoull(value));
        train.seed = synth.seed;
    }
    // loss constants
    else if (key == "mu") train.loss.mu = to_double(value);
    else if (key == "sigma") train.loss.sigma = to_double(value);
    else if (key == "n_is") train.loss.n_is = to_int(value);
    else if (key == "w_edge") train.loss.w_edge = to_double(value);
    else if (key == "w_is") train.loss.w_is = to_double(value);
    else if (key == "w_fs") train.loss.w_fs = to_double(value);
    else if (key == "aux_scale") train.loss.aux_scale = to_double(value);
    else if (key == "warmup_fraction") train.loss.warmup_fraction = to_double(value);
    else if (key == "align_h") train.loss.align_h = to_int(value);
    else if (key == "align_w") train.loss.align_w = to_int(value);
    else if (key == "eps") train.loss.eps = to_double(value);
    else if (key == "fsl_radius") train.loss.fsl_radius = to_int(value);
    // training
    else if (key == "epochs") train.epochs = to_int(value);
    else if (key == "batch_size") train.batch_size = to_int(value);
    else if (key == "learning_rate") train.learning_rate = to_double(value);
    else if (key == "beta1") train.beta1 = to_double(value);
    else if (key == "beta2") train.beta2 = to_double(value);
    else if (key == "adam_eps") train.adam_eps = to_double(value);
    else if (key == "use_deal") train.use_deal = to_bool(value);
    else if (key == "use_isl") train.use_isl = to_bool(value);
    else if (key == "use_fsl") train.use_fsl = to_bool(value);
    // paths
    else if (key == "dataset_dir") dataset_dir = value;
    else if (key == "out_dir") out_dir = value;
    else
        throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::ios_base::failure(path.string() + ": cannot open config");
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        try {
            cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                        ": " + e.what());
        }
    }
    return cfg;
}

}  // namespace dealkit
