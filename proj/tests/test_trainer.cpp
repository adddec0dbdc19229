#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <framefield/config.hpp>
#include <framefield/gradcheck.hpp>
#include <framefield/trainer.hpp>

#include "oracles.hpp"

using ff::Image;
using ff::Rng;
using ff::VideoClip;
using Tensor = ff::TensorT<double>;
using Trainer = ff::TrainerT<double>;

namespace {

ff::ModelConfig tiny_model() {
    ff::ModelConfig cfg;
    cfg.encoder.feat_channels = 6;
    cfg.encoder.num_blocks = 1;
    cfg.spatial_channels = 5;
    cfg.spatial_hidden = {8, 8};
    cfg.temporal_hidden = {8, 8};
    cfg.decoder_hidden = {8, 8};
    return cfg;
}

ff::TrainConfig tiny_train(const std::string& out_dir) {
    ff::TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.stage1_iters = 6;
    cfg.stage2_iters = 4;
    cfg.batch = 2;
    cfg.eval_every = 5;
    cfg.cosine_period = 10;
    cfg.seed = 11;
    cfg.sampler.patch = 8;
    cfg.val_scale = 4.0;
    cfg.out_dir = out_dir;
    return cfg;
}

struct TempDir {
    std::filesystem::path p;
    explicit TempDir(const std::string& tag) {
        p = std::filesystem::temp_directory_path() /
            ("framefield_train_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(p);
        std::filesystem::create_directories(p);
    }
    ~TempDir() { std::filesystem::remove_all(p); }
    std::string str() const { return p.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

VideoClip constant_clip(int64_t n, int64_t h, int64_t w, const std::vector<double>& rgb) {
    VideoClip clip;
    for (int64_t k = 0; k < n; ++k) {
        Image f(3, h, w);
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < h * w; ++i) f.data[static_cast<size_t>(c * h * w + i)] = rgb[static_cast<size_t>(c)];
        clip.frames.push_back(std::move(f));
    }
    return clip;
}

void constant_mlp(ff::MlpT<double>& mlp, const std::vector<double>& out) {
    for (auto& l : mlp.layers) {
        std::fill(l.weight.values().begin(), l.weight.values().end(), 0.0);
        std::fill(l.bias.values().begin(), l.bias.values().end(), 0.0);
    }
    mlp.layers.back().bias.values() = out;
}

} // namespace

TEST_CASE("training loss sits exactly on the floor when predictions match targets") {
    Rng rng(3);
    auto m = ff::ModelT<double>::make(tiny_model(), rng);
    constant_mlp(m.decoder, {0.3, 0.6, 0.9});

    const auto clip = constant_clip(9, 16, 16, {0.3, 0.6, 0.9});
    const auto windows = ff::sliding_windows(clip, 9, 9);
    ff::SamplerConfig sc;
    sc.patch = 8;
    Rng srng(5);
    const auto batch = ff::sample_training_batch(windows, 1, 2, srng, sc);

    const auto loss = ff::training_loss(m, batch, 1e-3);
    REQUIRE(loss.item() == 1e-3);
}

TEST_CASE("overfitting a fixed sample halves the loss within 200 iterations") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 9, 16, 16, 7);
    const auto windows = ff::sliding_windows(clip, 9, 9);

    ff::TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.stage1_iters = 200;
    cfg.stage2_iters = 0;
    cfg.batch = 1;
    cfg.lr_max = 1e-3;
    cfg.lr_min = 1e-5;
    cfg.cosine_period = 200;
    cfg.seed = 5;
    cfg.sampler.patch = 8;
    cfg.sampler.stage1_scale = 2.0;

    auto trainer = Trainer::make(cfg);
    const auto batch = ff::sample_training_batch(windows, 1, cfg.batch, trainer.rng, cfg.sampler);

    std::vector<double> losses;
    for (int k = 0; k < 200; ++k) losses.push_back(trainer.train_step(batch));
    INFO("loss[0]=" << losses.front() << " loss[199]=" << losses.back());
    REQUIRE(losses.back() < 0.5 * losses.front());
    REQUIRE(trainer.iter == 200);
}

TEST_CASE("fixed-seed training is bitwise reproducible and logs per contract") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 12, 16, 16, 9);
    TempDir da("det_a"), db("det_b");

    std::vector<double> la, lb;
    std::vector<int> stages;
    std::vector<double> scales;
    auto cfga = tiny_train(da.str());
    const auto ra = ff::run_training(cfga, clip, "", [&](int64_t, int st, double sc, double l) {
        la.push_back(l);
        stages.push_back(st);
        scales.push_back(sc);
    });
    auto cfgb = tiny_train(db.str());
    const auto rb =
        ff::run_training(cfgb, clip, "", [&](int64_t, int, double, double l) { lb.push_back(l); });

    REQUIRE(la.size() == 10);
    REQUIRE(la == lb); // bitwise equality of the full loss trajectory
    REQUIRE(slurp(ra.final_checkpoint) == slurp(rb.final_checkpoint));
    REQUIRE(slurp(ra.metrics_csv) == slurp(rb.metrics_csv));

    // stage 1 pins the scale, stage 2 draws it
    for (int k = 0; k < 6; ++k) {
        REQUIRE(stages[static_cast<size_t>(k)] == 1);
        REQUIRE(scales[static_cast<size_t>(k)] == 4.0);
    }
    bool saw_other = false;
    for (int k = 6; k < 10; ++k) {
        REQUIRE(stages[static_cast<size_t>(k)] == 2);
        REQUIRE(scales[static_cast<size_t>(k)] >= 1.0);
        REQUIRE(scales[static_cast<size_t>(k)] <= 4.0);
        saw_other = saw_other || scales[static_cast<size_t>(k)] != 4.0;
    }
    REQUIRE(saw_other);

    // metrics log: header plus one row per eval point
    const auto csv = slurp(ra.metrics_csv);
    REQUIRE(csv.rfind("iter,lr,loss,val_psnr,val_ssim\n", 0) == 0);
    size_t rows = 0;
    for (char c : csv) rows += c == '\n';
    REQUIRE(rows == 3);
    REQUIRE(csv.find("\n5,") != std::string::npos);
    REQUIRE(csv.find("\n10,") != std::string::npos);
    REQUIRE(std::filesystem::exists(da.p / "ckpt_000005.ffck"));
    REQUIRE(std::filesystem::exists(da.p / "ckpt_000010.ffck"));
    REQUIRE(std::filesystem::exists(da.p / "ckpt_final.ffck"));
}

TEST_CASE("resumed training matches the uninterrupted run bitwise") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 12, 16, 16, 9);
    TempDir full("res_full"), part("res_part");

    auto cfg = tiny_train(full.str());
    const auto rfull = ff::run_training(cfg, clip);

    // continue from the mid-run checkpoint in a fresh directory
    const auto mid = full.p / "ckpt_000005.ffck";
    REQUIRE(std::filesystem::exists(mid));
    std::filesystem::copy_file(mid, part.p / "ckpt_000005.ffck");
    auto cfg2 = tiny_train(part.str());
    const auto rres = ff::run_training(cfg2, clip, (part.p / "ckpt_000005.ffck").string());

    REQUIRE(slurp(rfull.final_checkpoint) == slurp(rres.final_checkpoint));
    REQUIRE(rfull.final_loss == rres.final_loss);
    REQUIRE(rres.iters_run == 10);

    // the shared eval row (iter 10) is identical in both logs
    const auto csv_full = slurp(rfull.metrics_csv), csv_res = slurp(rres.metrics_csv);
    const auto row10 = csv_full.substr(csv_full.find("\n10,") + 1);
    REQUIRE(csv_res.find(row10) != std::string::npos);
}

TEST_CASE("single-step resume: save, load, one step equals the straight run") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 9, 16, 16, 4);
    const auto windows = ff::sliding_windows(clip, 9, 9);
    auto cfg = tiny_train("unused");
    cfg.stage1_iters = 4;
    cfg.stage2_iters = 0;

    auto a = Trainer::make(cfg);
    TempDir d("step");
    double straight = 0.0;
    for (int k = 0; k < 4; ++k) {
        const auto batch = ff::sample_training_batch(windows, 1, cfg.batch, a.rng, cfg.sampler);
        if (k == 3) {
            // snapshot just before the last step
            a.save((d.p / "pre.ffck").string());
            auto b = Trainer::resume(cfg, (d.p / "pre.ffck").string());
            REQUIRE(b.iter == 3);
            straight = a.train_step(batch);
            REQUIRE(b.train_step(batch) == straight);
        } else {
            a.train_step(batch);
        }
    }
    REQUIRE(straight > 0.0);
}

TEST_CASE("every grad-bearing leaf of the training graph is a model parameter") {
    Rng rng(8);
    auto m = ff::ModelT<double>::make(tiny_model(), rng);
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 9, 16, 16, 2);
    const auto windows = ff::sliding_windows(clip, 9, 9);
    ff::SamplerConfig sc;
    sc.patch = 8;
    Rng srng(6);
    const auto batch = ff::sample_training_batch(windows, 1, 1, srng, sc);

    const auto loss = ff::training_loss(m, batch, 1e-3);

    // The constants the loss is allowed to touch: degraded inputs, lattice
    // coordinates, query times, ground-truth pixels; nothing else, and in
    // particular no motion-shaped data. Ops between gradient-free inputs fold
    // into constant nodes, so the legitimate folded combinations (frame and
    // delta lookups at the fixed lattice, the target concat) are listed too.
    std::vector<std::vector<double>> allowed;
    const auto& smp = batch[0];
    allowed.push_back(ff::encoder_input(smp.lr0, smp.lr1).values());
    const auto i0t = ff::tensor_from_image(smp.lr0);
    const auto i1t = ff::tensor_from_image(smp.lr1);
    allowed.push_back(i0t.values());
    allowed.push_back(i1t.values());
    std::vector<double> cat;
    for (const auto& tgt : smp.targets) {
        const int64_t ph = tgt.hr_patch.height, pw = tgt.hr_patch.width;
        const auto lattice = ff::lattice_coords<double>(ph, pw);
        allowed.push_back(lattice.values());
        allowed.push_back(std::vector<double>(static_cast<size_t>(ph * pw), tgt.xt));
        allowed.push_back(ff::nearest_delta(lattice, smp.lr0.height, smp.lr0.width).values());
        allowed.push_back(ff::bilinear_sample(i0t, lattice).values());
        allowed.push_back(ff::bilinear_sample(i1t, lattice).values());
        std::vector<double> tv;
        for (int64_t i = 0; i < ph; ++i)
            for (int64_t j = 0; j < pw; ++j)
                for (int64_t c = 0; c < 3; ++c) tv.push_back(tgt.hr_patch.at(c, i, j));
        cat.insert(cat.end(), tv.begin(), tv.end());
        allowed.push_back(std::move(tv));
    }
    allowed.push_back(std::move(cat));

    std::set<const void*> param_nodes;
    for (const auto& p : m.params()) param_nodes.insert(p.tensor.node().get());

    std::set<const void*> seen;
    size_t grad_leaves = 0, const_leaves = 0;
    auto walk = [&](auto&& self, const auto& node) -> void {
        if (!seen.insert(node.get()).second) return;
        if (!node->inputs.empty()) {
            for (const auto& in : node->inputs) self(self, in);
            return;
        }
        if (node->requires_grad) {
            ++grad_leaves;
            REQUIRE(param_nodes.count(node.get()) == 1);
        } else {
            ++const_leaves;
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == node->val;
            REQUIRE(ok);
        }
    };
    walk(walk, loss.node());

    REQUIRE(grad_leaves == param_nodes.size()); // every parameter participates
    REQUIRE(const_leaves >= 6);
}

TEST_CASE("non-finite values abort with sample and iteration diagnostics") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 9, 16, 16, 4);
    const auto windows = ff::sliding_windows(clip, 9, 9);
    auto cfg = tiny_train("unused");
    auto trainer = Trainer::make(cfg);
    trainer.model.decoder.layers.back().bias.values()[0] = std::nan("");

    const auto batch = ff::sample_training_batch(windows, 1, 1, trainer.rng, cfg.sampler);
    REQUIRE_THROWS_MATCHES(trainer.train_step(batch), ff::TrainError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("non-finite") &&
                               Catch::Matchers::ContainsSubstring("iteration 0") &&
                               Catch::Matchers::ContainsSubstring("sample 0")));
}

TEST_CASE("train config validation rejects broken settings") {
    auto ok = tiny_train("unused");
    REQUIRE_NOTHROW(ff::validate_train_config(ok));

    auto c = ok;
    c.batch = 0;
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
    c = ok;
    c.stage1_iters = 0;
    c.stage2_iters = 0;
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
    c = ok;
    c.eval_every = 0;
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
    c = ok;
    c.lr_min = 1.0;
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
    c = ok;
    c.window = 1;
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
    c = ok;
    c.model.flags = {false, false, true};
    REQUIRE_THROWS_AS(ff::validate_train_config(c), ff::ConfigError);
}

TEST_CASE("fixed-time variant trains only on the pinned positions") {
    const auto clip = ff::make_synthetic_clip(ff::SceneKind::moving_square, 9, 16, 16, 12);
    const auto windows = ff::sliding_windows(clip, 9, 9);
    ff::SamplerConfig sc;
    sc.patch = 8;
    sc.fixed_targets = {0, 4, 8};
    Rng rng(2);
    const auto batch = ff::sample_training_batch(windows, 1, 3, rng, sc);
    for (const auto& smp : batch) {
        REQUIRE(smp.targets.size() == 3);
        REQUIRE(smp.targets[0].xt == 0.0);
        REQUIRE(smp.targets[1].xt == 0.5);
        REQUIRE(smp.targets[2].xt == 1.0);
    }
}

TEST_CASE("config text parses comments, blanks, and whitespace") {
    const std::string text = "# run setup\n"
                             "stage1_iters = 12\n"
                             "\n"
                             "  sampler.patch=8   # inline note\n"
                             "model.spatial_hidden = 4, 4\n"
                             "out_dir = runs/a b\n";
    const auto kv = ff::parse_config_text(text, "mem");
    REQUIRE(kv.size() == 4);
    REQUIRE(kv[0] == std::make_pair(std::string("stage1_iters"), std::string("12")));
    REQUIRE(kv[1] == std::make_pair(std::string("sampler.patch"), std::string("8")));
    REQUIRE(kv[2] == std::make_pair(std::string("model.spatial_hidden"), std::string("4, 4")));
    REQUIRE(kv[3] == std::make_pair(std::string("out_dir"), std::string("runs/a b")));
}

TEST_CASE("malformed config lines name their origin and line") {
    using Catch::Matchers::ContainsSubstring;
    using Catch::Matchers::MessageMatches;
    REQUIRE_THROWS_MATCHES(ff::parse_config_text("a=1\nbogus line\n", "f.cfg"), ff::ConfigError,
                           MessageMatches(ContainsSubstring("f.cfg:2") &&
                                          ContainsSubstring("bogus line")));
    REQUIRE_THROWS_MATCHES(ff::parse_config_text("=3\n", "g.cfg"), ff::ConfigError,
                           MessageMatches(ContainsSubstring("g.cfg:1") &&
                                          ContainsSubstring("empty key")));
    REQUIRE_THROWS_MATCHES(ff::parse_config_file("/nonexistent/x.cfg"), ff::ConfigError,
                           MessageMatches(ContainsSubstring("/nonexistent/x.cfg")));
}

TEST_CASE("config keys route to trainer, sampler, and model fields") {
    ff::TrainConfig cfg;
    ff::apply_config(cfg, {{"stage1_iters", "7"},
                           {"stage2_iters", "3"},
                           {"lr_max", "0.01"},
                           {"seed", "99"},
                           {"out_dir", "elsewhere"},
                           {"sampler.fixed_targets", "0,4,8"},
                           {"sampler.augment", "on"},
                           {"sampler.scale_max", "3.5"},
                           {"model.feat_channels", "12"},
                           {"model.spatial_hidden", "4,4"},
                           {"model.use_flow", "false"},
                           {"model.single_network", "0"}});
    REQUIRE(cfg.stage1_iters == 7);
    REQUIRE(cfg.stage2_iters == 3);
    REQUIRE(cfg.lr_max == 0.01);
    REQUIRE(cfg.seed == 99);
    REQUIRE(cfg.out_dir == "elsewhere");
    REQUIRE(cfg.sampler.fixed_targets == std::vector<int64_t>{0, 4, 8});
    REQUIRE(cfg.sampler.augment);
    REQUIRE(cfg.sampler.scale_max == 3.5);
    REQUIRE(cfg.model.encoder.feat_channels == 12);
    REQUIRE(cfg.model.spatial_hidden == std::vector<int64_t>{4, 4});
    REQUIRE_FALSE(cfg.model.flags.use_flow);
    REQUIRE_FALSE(cfg.model.flags.single_network);
}

TEST_CASE("unknown and malformed config values are rejected by name") {
    using Catch::Matchers::ContainsSubstring;
    using Catch::Matchers::MessageMatches;
    ff::TrainConfig cfg;
    REQUIRE_THROWS_MATCHES(ff::apply_config_entry(cfg, "typo_key", "1"), ff::ConfigError,
                           MessageMatches(ContainsSubstring("unknown config key 'typo_key'")));
    REQUIRE_THROWS_MATCHES(ff::apply_config_entry(cfg, "batch", "two"), ff::ConfigError,
                           MessageMatches(ContainsSubstring("batch") &&
                                          ContainsSubstring("bad integer")));
    REQUIRE_THROWS_AS(ff::apply_config_entry(cfg, "batch", "4x"), ff::ConfigError);
    REQUIRE_THROWS_AS(ff::apply_config_entry(cfg, "lr_max", "fast"), ff::ConfigError);
    REQUIRE_THROWS_AS(ff::apply_config_entry(cfg, "model.use_flow", "maybe"), ff::ConfigError);
    REQUIRE_THROWS_AS(ff::apply_config_entry(cfg, "model.spatial_hidden", "4,x"), ff::ConfigError);
}

TEST_CASE("config file values land on the struct") {
    const auto dir = std::filesystem::temp_directory_path() / "ff_cfg_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "run.cfg").string();
    {
        std::ofstream out(path);
        out << "# tiny run\nstage1_iters = 5\nsampler.patch = 8\nmodel.num_blocks = 2\n";
    }
    ff::TrainConfig cfg;
    ff::apply_config(cfg, ff::parse_config_file(path));
    REQUIRE(cfg.stage1_iters == 5);
    REQUIRE(cfg.sampler.patch == 8);
    REQUIRE(cfg.model.encoder.num_blocks == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gradient sweep passes on a fresh build") {
    const auto rep = ff::run_gradcheck(1e-4, 3);
    const auto& w = rep.worst();
    CAPTURE(w.op, w.where, w.rel);
    REQUIRE(rep.ok());
    const char* expected[] = {"add",        "sub",          "mul",           "scale",
                              "sum",        "mean",         "reshape",       "transpose2d",
                              "concat_cols", "slice_cols",  "relu",          "sin_scaled",
                              "dense_forward", "charbonnier_loss", "bilinear_sample",
                              "warp_grid",  "conv3x3",      "encoder",       "spatial_inr",
                              "temporal_inr", "decode_rgb"};
    for (const char* name : expected) {
        bool found = false;
        for (const auto& e : rep.entries) found = found || e.op == name;
        CAPTURE(name);
        REQUIRE(found);
    }
}

TEST_CASE("corrupted sine backward is caught and named") {
    const auto rep = ff::run_gradcheck(1e-4, 3, true);
    REQUIRE_FALSE(rep.ok());
    bool sine_flagged = false;
    for (const auto& e : rep.entries)
        if (e.op == "sin_scaled" && e.rel >= rep.tol) sine_flagged = true;
    REQUIRE(sine_flagged);
    REQUIRE(rep.worst().rel >= rep.tol);
    REQUIRE_FALSE(ff::detail::corrupt_sine_backward); // hook restored
}
