#include "dealkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "dealkit/io.hpp"

namespace dealkit {

void SynthConfig::validate() const {
    if (image_size < 16) throw std::invalid_argument("SynthConfig: image_size < 16");
    if (num_classes < 1) throw std::invalid_argument("SynthConfig: num_classes < 1");
    if (objects_min < 0 || objects_max < objects_min)
        throw std::invalid_argument("SynthConfig: bad objects_per_image range");
    if (depth_noise_std < 0.0 || color_jitter < 0.0)
        throw std::invalid_argument("SynthConfig: noise/jitter must be >= 0");
}

namespace {

struct Color { double r, g, b; };

// distinct base colors, hue-spaced around the wheel
Color class_color(int k, int num_classes) {
    const double h = 6.0 * k / num_classes;  // hue sector in [0,6)
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double v = 0.85, s = 0.8;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

enum class ShapeKind { Disc, Square, Triangle, Ring };

bool inside_shape(ShapeKind kind, double dx, double dy, double radius) {
    switch (kind) {
        case ShapeKind::Disc:
            return dx * dx + dy * dy <= radius * radius;
        case ShapeKind::Square:
            return std::max(std::abs(dx), std::abs(dy)) <= radius * 0.9;
        case ShapeKind::Triangle: {
            // apex up: halfwidth grows linearly from the top vertex
            if (dy < -radius || dy > radius) return false;
            return std::abs(dx) <= (dy + radius) * 0.5;
        }
        case ShapeKind::Ring: {
            const double d2 = dx * dx + dy * dy;
            return d2 <= radius * radius && d2 >= 0.55 * 0.55 * radius * radius;
        }
    }
    return false;
}

}  // namespace

Scene generate_scene(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    const int n = cfg.image_size;
    const std::size_t plane = static_cast<std::size_t>(n) * n;

    std::vector<double> depth(plane);
    std::vector<double> rgb(3 * plane);
    std::vector<int> mask(plane, 0);

    // background: smooth 2.0 -> 3.0 m ramp top to bottom, warm gray color
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * n + j;
            depth[p] = 2.0 + static_cast<double>(i) / (n - 1);
            rgb[p] = 0.82;
            rgb[plane + p] = 0.80;
            rgb[2 * plane + p] = 0.76;
        }

    const int n_obj = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    constexpr int kMaxPlacementTries = 100;
    constexpr int kMinVisiblePixels = 16;
    for (int o = 0; o < n_obj; ++o) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPlacementTries && !placed; ++attempt) {
            const int cls = rng.uniform_int(0, cfg.num_classes - 1);
            const auto kind = static_cast<ShapeKind>(cls % 4);
            const double cy = rng.uniform(0.2, 0.8) * n;
            const double cx = rng.uniform(0.2, 0.8) * n;
            const double radius = rng.uniform(0.12, 0.25) * n;
            const double obj_depth = rng.uniform(0.5, 1.8);

            int visible = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    if (inside_shape(kind, j - cx, i - cy, radius) &&
                        obj_depth < depth[p])
                        ++visible;
                }
            if (visible < kMinVisiblePixels) continue;

            const Color col = class_color(cls, cfg.num_classes);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const std::size_t p = static_cast<std::size_t>(i) * n + j;
                    if (!inside_shape(kind, j - cx, i - cy, radius)) continue;
                    if (obj_depth >= depth[p]) continue;  // nearest depth wins
                    depth[p] = obj_depth;
                    mask[p] = cls + 1;
                    rgb[p] = col.r;
                    rgb[plane + p] = col.g;
                    rgb[2 * plane + p] = col.b;
                }
            placed = true;
        }
        if (!placed)
            std::cerr << "generate_scene: giving up placing object " << o
                      << " after " << kMaxPlacementTries << " tries\n";
    }

    if (cfg.depth_noise_std > 0.0)
        for (double& d : depth)
            d = std::max(0.05, d + rng.gaussian(0.0, cfg.depth_noise_std));
    if (cfg.color_jitter > 0.0)
        for (double& v : rgb)
            v = std::clamp(v + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.0, 1.0);

    Scene scene;
    scene.rgb = tensor_from(std::move(rgb), {3, n, n});
    scene.depth = tensor_from(std::move(depth), {1, n, n});
    scene.labels.assign(cfg.num_classes, 0);
    for (int v : mask)
        if (v > 0) scene.labels[v - 1] = 1;
    scene.gt_mask = std::move(mask);
    return scene;
}

namespace {

std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", index);
    return buf;
}

void write_split(const SynthConfig& cfg, int count, std::uint64_t stream_base,
                 const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Rng base(cfg.seed);
    std::vector<std::pair<std::string, std::vector<int>>> labels;
    for (int i = 0; i < count; ++i) {
        Rng rng = base.fork(stream_base + static_cast<std::uint64_t>(i));
        Scene scene = generate_scene(cfg, rng);
        const std::string id = sample_id(i);
        const auto sdir = dir / id;
        std::filesystem::create_directories(sdir);
        write_ppm(sdir / "rgb.ppm", scene.rgb);
        write_pfm(sdir / "depth.pfm", scene.depth);
        write_pgm(sdir / "gt_mask.pgm", scene.gt_mask, cfg.image_size, cfg.image_size);
        labels.emplace_back(id, scene.labels);
    }
    write_labels(dir / "labels.txt", labels);
}

}  // namespace

std::filesystem::path generate_dataset(const SynthConfig& cfg, int n_train, int n_val,
                                       const std::filesystem::path& out_dir) {
    cfg.validate();
    if (n_train < 0 || n_val < 0 || n_train + n_val == 0)
        throw std::invalid_argument("generate_dataset: need at least one sample");

    std::filesystem::create_directories(out_dir);
    // disjoint seed streams per split, independent of counts
    write_split(cfg, n_train, 1ULL << 32, out_dir / "train");
    write_split(cfg, n_val, 2ULL << 32, out_dir / "val");

    const auto manifest = out_dir / "manifest.txt";
    std::ofstream os(manifest);
    if (!os) throw std::runtime_error(manifest.string() + ": cannot write manifest");
    os << "image_size = " << cfg.image_size << "\n"
       << "num_classes = " << cfg.num_classes << "\n"
       << "objects_min = " << cfg.objects_min << "\n"
       << "objects_max = " << cfg.objects_max << "\n"
       << "depth_noise_std = " << cfg.depth_noise_std << "\n"
       << "color_jitter = " << cfg.color_jitter << "\n"
       << "seed = " << cfg.seed << "\n"
       << "n_train = " << n_train << "\n"
       << "n_val = " << n_val << "\n";
    return manifest;
}

std::vector<Scene> read_split(const std::filesystem::path& split_dir, int num_classes) {
    const auto labels = read_labels(split_dir / "labels.txt", num_classes);
    std::vector<Scene> scenes;
    scenes.reserve(labels.size());
    for (const auto& [id, vec] : labels) {
        Scene s;
        const auto sdir = split_dir / id;
        s.rgb = read_ppm(sdir / "rgb.ppm");
        s.depth = read_pfm(sdir / "depth.pfm");
        auto [mask, hw] = read_pgm(sdir / "gt_mask.pgm");
        s.gt_mask = std::move(mask);
        s.labels = vec;
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace dealkit
