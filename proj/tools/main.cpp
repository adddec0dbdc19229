#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <framefield/checkpoint.hpp>
#include <framefield/config.hpp>
#include <framefield/gradcheck.hpp>
#include <framefield/image_io.hpp>
#include <framefield/metrics.hpp>
#include <framefield/trainer.hpp>

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_double_list(const std::string& flag, const std::string& v) {
    std::vector<double> out;
    size_t start = 0;
    while (start <= v.size()) {
        const size_t c = v.find(',', start);
        const auto item = ff::detail::trim(v.substr(start, c == std::string::npos ? c : c - start));
        out.push_back(ff::detail::cfg_double(flag, item));
        if (c == std::string::npos) break;
        start = c + 1;
    }
    return out;
}

void apply_set_flags(ff::TrainConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ff::UsageError("--set expects key=value, got '" + s + "'");
        ff::apply_config_entry(cfg, ff::detail::trim(s.substr(0, eq)),
                               ff::detail::trim(s.substr(eq + 1)));
    }
}

std::string scale_label(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "x%g", s);
    return buf;
}

struct ClipSource {
    std::string synthetic, frames_dir;
    int64_t length = 9, size = 32;
    uint64_t seed = 12;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--synthetic", synthetic,
                        "synthetic scene: moving_square, two_squares, sinusoid_texture");
        cmd->add_option("--frames", frames_dir, "directory of PNG/PPM frames");
        cmd->add_option("--clip-length", length, "synthetic clip frame count");
        cmd->add_option("--clip-size", size, "synthetic clip edge length in pixels");
        cmd->add_option("--clip-seed", seed, "synthetic scene seed");
    }

    ff::VideoClip load() const {
        if (synthetic.empty() == frames_dir.empty())
            throw ff::UsageError("give exactly one data source: --synthetic or --frames");
        if (!synthetic.empty())
            return ff::make_synthetic_clip(ff::scene_kind_from_string(synthetic), length, size,
                                           size, seed);
        return ff::load_frame_dir(frames_dir);
    }
};

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const ff::TrainConfig& flag_overrides, const std::vector<bool>& flag_given,
              const ClipSource& src, const std::string& resume, const std::string& out_dir) {
    ff::TrainConfig cfg;
    if (!config_path.empty()) ff::apply_config(cfg, ff::parse_config_file(config_path));
    apply_set_flags(cfg, sets);
    if (flag_given[0]) cfg.stage1_iters = flag_overrides.stage1_iters;
    if (flag_given[1]) cfg.stage2_iters = flag_overrides.stage2_iters;
    if (flag_given[2]) cfg.batch = flag_overrides.batch;
    if (flag_given[3]) cfg.seed = flag_overrides.seed;
    if (flag_given[4]) cfg.eval_every = flag_overrides.eval_every;
    cfg.out_dir = out_dir;

    const auto clip = src.load();
    const auto rep = ff::run_training(cfg, clip, resume);
    std::printf("trained %" PRId64 " iterations, final loss %.6g\n", rep.iters_run, rep.final_loss);
    std::printf("checkpoint: %s\nmetrics: %s\n", rep.final_checkpoint.c_str(),
                rep.metrics_csv.c_str());
    return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& frame0, const std::string& frame1,
               double space_scale, const std::string& times_csv, int64_t num_frames,
               const std::string& region_csv, const std::string& out_dir) {
    if (times_csv.empty() == (num_frames == 0))
        throw ff::UsageError("give exactly one of --times or --num-frames");
    ff::RenderRequest req;
    req.space_scale = space_scale;
    if (!times_csv.empty()) {
        req.times = parse_double_list("--times", times_csv);
    } else if (num_frames == 1) {
        req.times = {0.5};
    } else {
        if (num_frames < 1) throw ff::UsageError("--num-frames must be positive");
        for (int64_t k = 0; k < num_frames; ++k)
            req.times.push_back(static_cast<double>(k) / static_cast<double>(num_frames - 1));
    }
    if (!region_csv.empty()) {
        const auto r = parse_double_list("--region", region_csv);
        if (r.size() != 4) throw ff::UsageError("--region expects x0,y0,x1,y1");
        for (double v : r)
            if (v < 0.0 || v > 1.0)
                throw ff::UsageError("--region values are frame fractions in [0,1]");
        req.has_region = true;
        // fractions of the frame extent onto the renderer's [-1,1) span
        req.region_x0 = -1.0 + 2.0 * r[0];
        req.region_y0 = -1.0 + 2.0 * r[1];
        req.region_x1 = -1.0 + 2.0 * r[2];
        req.region_y1 = -1.0 + 2.0 * r[3];
    }

    const auto model = ff::load_checkpoint<double>(ckpt);
    const auto f0 = ff::load_image(frame0);
    const auto f1 = ff::load_image(frame1);
    const auto grid = ff::encode(model.encoder, f0, f1);
    const auto t0 = ff::tensor_from_image(f0), t1 = ff::tensor_from_image(f1);
    const auto frames = ff::render_video(model, grid, t0, t1, req);

    fs::create_directories(out_dir);
    for (size_t i = 0; i < frames.size(); ++i) {
        const auto name = ff::frame_filename(static_cast<int64_t>(i), req.times[i]);
        ff::save_image((fs::path(out_dir) / name).string(), frames[i]);
    }
    std::printf("wrote %zu frames (%" PRId64 "x%" PRId64 ") to %s\n", frames.size(),
                frames.front().height, frames.front().width, out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const ClipSource& src, const std::string& mode_str,
             double space_scale, bool literal_center, bool oracle, const std::string& out_dir) {
    const auto clip = src.load();
    const auto mode = ff::eval_mode_from_string(mode_str);
    ff::EvalResult res;
    if (oracle) {
        // ground-truth stub: replays the clip frames in protocol order
        const auto positions = mode == ff::EvalMode::average
                                   ? std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8}
                               : literal_center ? std::vector<int64_t>{0, 3, 8}
                                                : std::vector<int64_t>{0, 4, 8};
        size_t call = 0;
        res = ff::evaluate_protocol(
            clip, space_scale, mode,
            [&](const ff::Image&, const ff::Image&, double, int64_t, int64_t) {
                const size_t g = call / positions.size();
                const int64_t p = positions[call % positions.size()];
                ++call;
                return clip.frames[g * 9 + static_cast<size_t>(p)];
            },
            literal_center);
    } else {
        if (ckpt.empty()) throw ff::UsageError("--checkpoint is required unless --oracle is given");
        const auto model = ff::load_checkpoint<double>(ckpt);
        res = ff::evaluate_protocol(
            clip, space_scale, mode,
            [&](const ff::Image& lr0, const ff::Image& lr1, double xt, int64_t h, int64_t w) {
                const auto grid = ff::encode(model.encoder, lr0, lr1);
                const auto t0 = ff::tensor_from_image(lr0), t1 = ff::tensor_from_image(lr1);
                return ff::emit_image(ff::synthesize_frame(model, grid, t0, t1, h, w, xt));
            },
            literal_center);
    }

    const std::vector<ff::ReportRow> rows{{mode_str, scale_label(space_scale), res.psnr, res.ssim}};
    std::fputs(ff::format_report_table(rows).c_str(), stdout);
    std::printf("(%" PRId64 " groups, %" PRId64 " frames)\n", res.groups, res.frames);
    fs::create_directories(out_dir);
    const auto csv_path = (fs::path(out_dir) / "eval.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw ff::DataError("cannot write '" + csv_path + "'");
    csv << ff::format_report_csv(rows);
    std::printf("report: %s\n", csv_path.c_str());
    return 0;
}

int cmd_gradcheck(double tol, uint64_t seed, bool corrupt) {
    const auto rep = ff::run_gradcheck(tol, seed, corrupt);
    for (const auto& e : rep.entries)
        std::printf("%-18s %-28s rel %.3e  %s\n", e.op.c_str(), e.where.c_str(), e.rel,
                    e.rel < rep.tol ? "ok" : "FAIL");
    if (rep.ok()) {
        std::printf("all %zu checks passed (tol %.1e)\n", rep.entries.size(), rep.tol);
        return 0;
    }
    const auto& w = rep.worst();
    std::printf("worst offender: op=%s parameter=%s rel. error=%.6e\n", w.op.c_str(),
                w.where.c_str(), w.rel);
    return 1;
}

int cmd_ablate(const std::string& variants_csv, int64_t iters, uint64_t seed,
               const std::vector<std::string>& sets, const ClipSource& src,
               const std::string& out_dir) {
    std::vector<std::string> variants{"full"};
    size_t start = 0;
    while (start <= variants_csv.size()) {
        const size_t c = variants_csv.find(',', start);
        const auto v = ff::detail::trim(
            variants_csv.substr(start, c == std::string::npos ? c : c - start));
        if (v != "f" && v != "m" && v != "s")
            throw ff::UsageError("unknown variant '" + v + "' (expected f, m, or s)");
        variants.push_back(v);
        if (c == std::string::npos) break;
        start = c + 1;
    }

    ff::TrainConfig base;
    base.stage1_iters = iters;
    base.stage2_iters = 0;
    base.batch = 2;
    base.seed = seed;
    base.eval_every = iters;
    base.cosine_period = iters;
    base.lr_max = 1e-3;
    base.lr_min = 1e-5;
    base.sampler.patch = 8;
    base.sampler.stage1_scale = 2.0;
    base.model.encoder.feat_channels = 8;
    base.model.encoder.num_blocks = 1;
    base.model.spatial_channels = 8;
    base.model.spatial_hidden = {8, 8};
    base.model.temporal_hidden = {8, 8};
    base.model.decoder_hidden = {8, 8};
    apply_set_flags(base, sets);

    const auto clip = src.load();
    const double eval_scale = base.sampler.stage1_scale;
    std::vector<ff::ReportRow> rows;
    for (const auto& v : variants) {
        auto cfg = base;
        if (v == "f") cfg.model.flags.use_flow = false;
        if (v == "m") cfg.model.flags.use_multiscale = false;
        if (v == "s") cfg.model.flags.single_network = true;
        cfg.out_dir = (fs::path(out_dir) / ("ablate_" + (v == "full" ? v : "no_" + v))).string();
        const auto rep = ff::run_training(cfg, clip);
        const auto model = ff::load_checkpoint<double>(rep.final_checkpoint);
        const auto res = ff::evaluate_protocol(
            clip, eval_scale, ff::EvalMode::center,
            [&](const ff::Image& lr0, const ff::Image& lr1, double xt, int64_t h, int64_t w) {
                const auto grid = ff::encode(model.encoder, lr0, lr1);
                const auto t0 = ff::tensor_from_image(lr0), t1 = ff::tensor_from_image(lr1);
                return ff::emit_image(ff::synthesize_frame(model, grid, t0, t1, h, w, xt));
            });
        rows.push_back({v == "full" ? v : "-" + v, scale_label(eval_scale), res.psnr, res.ssim});
    }

    std::fputs(ff::format_report_table(rows).c_str(), stdout);
    fs::create_directories(out_dir);
    const auto csv_path = (fs::path(out_dir) / "ablate.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw ff::DataError("cannot write '" + csv_path + "'");
    csv << ff::format_report_csv(rows);
    std::printf("report: %s\n", csv_path.c_str());
    return 0;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ff::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous space-time video super-resolution"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "fit a model on a clip");
    std::string tr_config, tr_resume, tr_out = "out";
    std::vector<std::string> tr_sets;
    ff::TrainConfig tr_flags;
    ClipSource tr_src;
    train->add_option("--config", tr_config, "key=value config file");
    train->add_option("--set", tr_sets, "override one config key, e.g. --set lr_max=1e-3");
    auto* o_s1 = train->add_option("--stage1-iters", tr_flags.stage1_iters, "fixed-scale stage length");
    auto* o_s2 = train->add_option("--stage2-iters", tr_flags.stage2_iters, "random-scale stage length");
    auto* o_ba = train->add_option("--batch", tr_flags.batch, "samples per step");
    auto* o_se = train->add_option("--seed", tr_flags.seed, "run seed");
    auto* o_ev = train->add_option("--eval-every", tr_flags.eval_every, "validation cadence, 0 = off");
    train->add_option("--resume", tr_resume, "checkpoint to continue from");
    train->add_option("--out-dir", tr_out, "output directory");
    tr_src.add_flags(train);

    auto* decode = app.add_subcommand("decode", "render frames from two inputs");
    std::string de_ckpt, de_f0, de_f1, de_times, de_region, de_out = "out";
    double de_scale = 4.0;
    int64_t de_num = 0;
    decode->add_option("--checkpoint", de_ckpt, "model checkpoint")->required();
    decode->add_option("--frame0", de_f0, "first input frame PNG/PPM")->required();
    decode->add_option("--frame1", de_f1, "second input frame PNG/PPM")->required();
    decode->add_option("--space-scale", de_scale, "spatial upsampling factor");
    decode->add_option("--times", de_times, "comma list of times in [0,1]");
    decode->add_option("--num-frames", de_num, "render K uniform times in [0,1]");
    decode->add_option("--region", de_region, "crop window x0,y0,x1,y1 as frame fractions");
    decode->add_option("--out-dir", de_out, "output directory");

    auto* eval = app.add_subcommand("eval", "evaluate on 9-frame groups");
    std::string ev_ckpt, ev_mode = "center", ev_out = "out";
    double ev_scale = 4.0;
    bool ev_literal = false, ev_oracle = false;
    ClipSource ev_src;
    eval->add_option("--checkpoint", ev_ckpt, "model checkpoint");
    eval->add_option("--mode", ev_mode, "center or average");
    eval->add_option("--space-scale", ev_scale, "degradation factor for the inputs");
    eval->add_flag("--literal-center", ev_literal, "use frames 1,4,9 instead of 1,5,9");
    eval->add_flag("--oracle", ev_oracle, "score a ground-truth stub instead of a model");
    eval->add_option("--out-dir", ev_out, "output directory");
    ev_src.add_flags(eval);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
    double gc_tol = 1e-4;
    uint64_t gc_seed = 1;
    bool gc_corrupt = false, gc_tiny = false;
    grad->add_option("--tol", gc_tol, "relative error tolerance");
    grad->add_option("--seed", gc_seed, "fixture seed");
    grad->add_flag("--tiny", gc_tiny, "tiny fixtures (always on; accepted for compatibility)");
    grad->add_flag("--corrupt-sine", gc_corrupt, "inject a broken sine backward; must fail");

    auto* ablate = app.add_subcommand("ablate", "compare the full model against variants");
    std::string ab_variants = "f,m,s", ab_out = "out";
    int64_t ab_iters = 300;
    uint64_t ab_seed = 7;
    std::vector<std::string> ab_sets;
    ClipSource ab_src;
    ab_src.synthetic = "two_squares";
    ab_src.size = 24;
    ablate->add_option("--variants", ab_variants, "comma list from f,m,s");
    ablate->add_option("--iters", ab_iters, "training iterations per variant");
    ablate->add_option("--seed", ab_seed, "shared seed");
    ablate->add_option("--set", ab_sets, "override one config key");
    ablate->add_option("--out-dir", ab_out, "output directory");
    ab_src.add_flags(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*train)
        return guarded([&] {
            return cmd_train(tr_config, tr_sets, tr_flags,
                             {o_s1->count() > 0, o_s2->count() > 0, o_ba->count() > 0,
                              o_se->count() > 0, o_ev->count() > 0},
                             tr_src, tr_resume, tr_out);
        });
    if (*decode)
        return guarded([&] {
            return cmd_decode(de_ckpt, de_f0, de_f1, de_scale, de_times, de_num, de_region, de_out);
        });
    if (*eval)
        return guarded([&] {
            return cmd_eval(ev_ckpt, ev_src, ev_mode, ev_scale, ev_literal, ev_oracle, ev_out);
        });
    if (*grad) return guarded([&] { return cmd_gradcheck(gc_tol, gc_seed, gc_corrupt); });
    if (*ablate)
        return guarded(
            [&] { return cmd_ablate(ab_variants, ab_iters, ab_seed, ab_sets, ab_src, ab_out); });
    return 2;
}
