#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dealkit/config.hpp"
#include "dealkit/model.hpp"
#include "dealkit/synth.hpp"
#include "dealkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace dealkit;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dealkit_tr_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int counter;
};
int TempDir::counter = 0;

SynthConfig tiny_synth(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.image_size = 24;
    cfg.num_classes = 3;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.loss.align_h = 8;
    cfg.loss.align_w = 8;
    cfg.loss.fsl_radius = 4;
    return cfg;
}

}  // namespace

TEST_CASE("generate_scene invariants") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        SynthConfig cfg = tiny_synth(seed);
        Rng rng(seed);
        Scene s = generate_scene(cfg, rng);
        const int n = cfg.image_size;
        REQUIRE(s.rgb.shape == Shape({3, n, n}));
        REQUIRE(s.depth.shape == Shape({1, n, n}));
        REQUIRE(static_cast<int>(s.gt_mask.size()) == n * n);
        REQUIRE(static_cast<int>(s.labels.size()) == cfg.num_classes);

        for (double v : s.rgb.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : s.depth.values()) CHECK(v > 0.0);

        std::set<int> present;
        for (int m : s.gt_mask) {
            CHECK(m >= 0);
            CHECK(m <= cfg.num_classes);
            if (m > 0) present.insert(m);
        }
        CHECK(!present.empty());  // at least objects_min visible objects
        for (int c = 0; c < cfg.num_classes; ++c)
            CHECK(s.labels[c] == (present.count(c + 1) ? 1 : 0));
    }
}

TEST_CASE("scene object boundaries are depth discontinuities") {
    SynthConfig cfg = tiny_synth(5);
    cfg.depth_noise_std = 0.0;
    Rng rng(5);
    Scene s = generate_scene(cfg, rng);
    const int n = cfg.image_size;
    int boundary = 0, jumps = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j + 1 < n; ++j) {
            const int a = s.gt_mask[i * n + j], b = s.gt_mask[i * n + j + 1];
            if ((a == 0) != (b == 0)) {
                ++boundary;
                const double da = s.depth.at(0, i, j), db = s.depth.at(0, i, j + 1);
                if (std::abs(da - db) > 0.05) ++jumps;
            }
        }
    REQUIRE(boundary > 0);
    // every object/background transition steps in depth (objects sit in
    // front of the ramped background)
    CHECK(jumps == boundary);
}

TEST_CASE("generate_scene is deterministic in the seed") {
    SynthConfig cfg = tiny_synth(9);
    Rng r1(9), r2(9), r3(10);
    Scene a = generate_scene(cfg, r1);
    Scene b = generate_scene(cfg, r2);
    Scene c = generate_scene(cfg, r3);
    CHECK(a.rgb.values() == b.rgb.values());
    CHECK(a.depth.values() == b.depth.values());
    CHECK(a.gt_mask == b.gt_mask);
    CHECK(a.rgb.values() != c.rgb.values());
}

TEST_CASE("depth noise perturbs depth but not the mask") {
    SynthConfig clean = tiny_synth(4);
    SynthConfig noisy = clean;
    noisy.depth_noise_std = 0.02;
    Rng r1(4), r2(4);
    Scene a = generate_scene(clean, r1);
    Scene b = generate_scene(noisy, r2);
    CHECK(a.gt_mask == b.gt_mask);
    CHECK(a.depth.values() != b.depth.values());
    for (double v : b.depth.values()) CHECK(v >= 0.05);
}

TEST_CASE("dataset round trip") {
    TempDir tmp;
    SynthConfig cfg = tiny_synth(11);
    const fs::path manifest = generate_dataset(cfg, 3, 2, tmp.path);
    CHECK(fs::exists(manifest));
    CHECK(fs::exists(tmp.path / "train" / "labels.txt"));

    auto train = read_split(tmp.path / "train", cfg.num_classes);
    auto val = read_split(tmp.path / "val", cfg.num_classes);
    REQUIRE(train.size() == 3);
    REQUIRE(val.size() == 2);

    // labels on disk agree with the stored masks
    for (const auto& s : train) {
        std::set<int> present;
        for (int m : s.gt_mask)
            if (m > 0) present.insert(m);
        for (int c = 0; c < cfg.num_classes; ++c)
            CHECK(s.labels[c] == (present.count(c + 1) ? 1 : 0));
    }
    // train and val come from disjoint streams
    CHECK(train[0].gt_mask != val[0].gt_mask);

    CHECK_THROWS_AS(generate_dataset(cfg, 0, 0, tmp.path / "empty"),
                    std::invalid_argument);
}

TEST_CASE("toy model forward") {
    Rng rng(3);
    ToyModel model = ToyModel::init(3, rng);
    REQUIRE(model.params.size() == 6);
    CHECK(model.params[0].shape == Shape({8, 3, 3, 3}));
    CHECK(model.params[2].shape == Shape({16, 8, 3, 3}));
    CHECK(model.params[4].shape == Shape({3, 16, 3, 3}));

    SynthConfig cfg = tiny_synth(3);
    Rng srng(3);
    Scene scene = generate_scene(cfg, srng);
    ForwardResult fwd = forward_cam(model, scene.rgb);
    REQUIRE(fwd.cam.shape == Shape({3, cfg.image_size, cfg.image_size}));
    REQUIRE(fwd.logits.shape == Shape({3}));
    for (double v : fwd.cam.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // each non-flat channel is normalized so its max is exactly 1
    const std::size_t plane =
        static_cast<std::size_t>(cfg.image_size) * cfg.image_size;
    for (int c = 0; c < 3; ++c) {
        double mx = 0.0;
        for (std::size_t p = 0; p < plane; ++p)
            mx = std::max(mx, fwd.cam.values()[c * plane + p]);
        CHECK((mx == doctest::Approx(1.0) || mx == 0.0));
    }

    model.zero_last_layer();
    ForwardResult zero = forward_cam(model, scene.rgb);
    for (double v : zero.cam.values()) CHECK(v == 0.0);
    for (double v : zero.logits.values()) CHECK(v == 0.0);
}

TEST_CASE("model checkpoints round trip bit-exactly") {
    TempDir tmp;
    Rng rng(8);
    ToyModel model = ToyModel::init(4, rng);
    save_model(tmp.path / "m.ckpt", model);
    ToyModel back = load_model(tmp.path / "m.ckpt");
    REQUIRE(back.params.size() == model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        CHECK(back.params[i].name == model.params[i].name);
        CHECK(back.params[i].shape == model.params[i].shape);
        CHECK(back.params[i].value == model.params[i].value);
    }
    CHECK_THROWS_AS(load_model(tmp.path / "missing.ckpt"), std::ios_base::failure);
}

TEST_CASE("non-finite parameters are rejected before the forward pass") {
    Rng rng(2);
    ToyModel model = ToyModel::init(2, rng);
    model.params[0].value[0] = std::nan("");
    SynthConfig cfg = tiny_synth(2);
    Rng srng(2);
    Scene scene = generate_scene(cfg, srng);
    CHECK_THROWS_AS(forward_cam(model, scene.rgb), std::runtime_error);
}

TEST_CASE("TrainConfig validation") {
    TrainConfig cfg = tiny_train();
    CHECK_NOTHROW(cfg.validate());
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_train();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_train();
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("train_step reduces the classification loss") {
    SynthConfig scfg = tiny_synth(1);
    std::vector<Scene> scenes;
    for (std::uint64_t s = 0; s < 4; ++s) {
        Rng rng(s);
        scenes.push_back(generate_scene(scfg, rng));
    }
    std::vector<const Scene*> batch;
    for (const auto& s : scenes) batch.push_back(&s);

    TrainConfig cfg = tiny_train();
    cfg.learning_rate = 3e-3;
    Rng mrng(0);
    ToyModel model = ToyModel::init(scfg.num_classes, mrng);
    AdamState adam;
    Rng step_rng(1);
    double first = 0.0, last = 0.0;
    for (int it = 0; it < 25; ++it) {
        StepReport rep = train_step(model, adam, batch, cfg, 0, step_rng);
        if (it == 0) first = rep.base;
        last = rep.base;
        CHECK(std::isfinite(rep.total));
    }
    CHECK(last < first);
}

TEST_CASE("train_run is deterministic and reports consistently") {
    SynthConfig scfg = tiny_synth(21);
    std::vector<Scene> train_set, val_set;
    for (std::uint64_t s = 0; s < 4; ++s) {
        Rng rng(100 + s);
        train_set.push_back(generate_scene(scfg, rng));
    }
    for (std::uint64_t s = 0; s < 2; ++s) {
        Rng rng(200 + s);
        val_set.push_back(generate_scene(scfg, rng));
    }

    TrainConfig cfg = tiny_train();
    cfg.use_deal = true;
    std::vector<std::string> lines;
    RunResult a = train_run(train_set, val_set, cfg,
                            [&](const std::string& l) { lines.push_back(l); });
    RunResult b = train_run(train_set, val_set, cfg);
    CHECK(a.train_report.miou == b.train_report.miou);
    CHECK(a.val_report.miou == b.val_report.miou);
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.epoch_losses == b.epoch_losses);

    CHECK(static_cast<int>(a.epoch_losses.size()) == cfg.epochs);
    CHECK(!lines.empty());
    for (const auto& l : lines) CHECK(l.find('=') != std::string::npos);
    CHECK(a.train_report.miou >= 0.0);
    CHECK(a.train_report.miou <= 1.0);

    // a different seed changes the run
    TrainConfig cfg2 = cfg;
    cfg2.seed = 7;
    RunResult c = train_run(train_set, val_set, cfg2);
    CHECK(a.epoch_losses != c.epoch_losses);
}

TEST_CASE("deal weight follows the warmup schedule during training") {
    SynthConfig scfg = tiny_synth(33);
    std::vector<Scene> scenes;
    for (std::uint64_t s = 0; s < 2; ++s) {
        Rng rng(s);
        scenes.push_back(generate_scene(scfg, rng));
    }
    std::vector<const Scene*> batch;
    for (const auto& s : scenes) batch.push_back(&s);

    TrainConfig cfg = tiny_train();
    cfg.epochs = 6;  // warmup = floor(6/3) = 2 epochs
    cfg.use_deal = true;
    Rng mrng(1);
    ToyModel model = ToyModel::init(scfg.num_classes, mrng);
    AdamState adam;
    Rng rng(0);
    CHECK(train_step(model, adam, batch, cfg, 0, rng).deal_weight == 0.0);
    CHECK(train_step(model, adam, batch, cfg, 1, rng).deal_weight == 0.0);
    CHECK(train_step(model, adam, batch, cfg, 2, rng).deal_weight ==
          doctest::Approx(cfg.loss.w_edge));
}

TEST_CASE("experiment tables") {
    SynthConfig scfg = tiny_synth(44);
    std::vector<Scene> train_set, val_set;
    for (std::uint64_t s = 0; s < 2; ++s) {
        Rng rng(s);
        train_set.push_back(generate_scene(scfg, rng));
        Rng rng2(50 + s);
        val_set.push_back(generate_scene(scfg, rng2));
    }
    TrainConfig base = tiny_train();
    TrainConfig with_deal = base;
    with_deal.use_deal = true;
    TempDir tmp;
    ExperimentResult res = run_experiment(
        train_set, val_set, {{"baseline", base}, {"deal", with_deal}}, {0, 1},
        tmp.path);

    REQUIRE(res.variants.size() == 2);
    CHECK(res.variants[0].runs.size() == 2);
    CHECK(fs::exists(tmp.path / "baseline_seed0.log"));
    CHECK(fs::exists(tmp.path / "deal_seed1.log"));

    const std::string table = format_table(res);
    CHECK(table.find("baseline") != std::string::npos);
    CHECK(table.find("deal") != std::string::npos);
    const std::string kv = format_machine(res);
    CHECK(kv.find("baseline.val_miou_mean = ") != std::string::npos);
    CHECK(kv.find("deal.train_miou_mean = ") != std::string::npos);
    CHECK(kv.find("deal.seed1.best_epoch = ") != std::string::npos);
}

TEST_CASE("run config parsing") {
    TempDir tmp;
    std::ofstream(tmp.path / "run.cfg") << "# comment line\n"
                                        << "epochs = 5\n"
                                        << "batch_size = 4\n"
                                        << "image_size = 32\n"
                                        << "num_classes = 3\n"
                                        << "seed = 9\n"
                                        << "dataset_dir = /tmp/ds\n"
                                        << "w_edge = 0.08\n";
    RunConfig rc = RunConfig::from_file(tmp.path / "run.cfg");
    CHECK(rc.train.epochs == 5);
    CHECK(rc.train.batch_size == 4);
    CHECK(rc.synth.image_size == 32);
    CHECK(rc.synth.num_classes == 3);
    CHECK(rc.synth.seed == 9);
    CHECK(rc.train.seed == 9);
    CHECK(rc.dataset_dir == "/tmp/ds");
    CHECK(rc.train.loss.w_edge == 0.08);

    std::ofstream(tmp.path / "bad.cfg") << "not_a_key = 1\n";
    CHECK_THROWS_AS(RunConfig::from_file(tmp.path / "bad.cfg"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_file(tmp.path / "missing.cfg"),
                    std::ios_base::failure);
}
