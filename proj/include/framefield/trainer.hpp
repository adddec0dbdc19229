#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "renderer.hpp"
#include "rng.hpp"

namespace ff {

struct TrainConfig {
    int64_t stage1_iters = 3000; // fixed-scale stage
    int64_t stage2_iters = 1000; // random-scale stage
    int64_t batch = 4;
    double lr_max = 1e-4;
    double lr_min = 1e-7;
    int64_t cosine_period = 1000; // warm restarts
    uint64_t seed = 0;
    int64_t eval_every = 500;
    double charbonnier_eps = 1e-3;
    int64_t window = 9;
    double val_scale = 4.0; // degradation for the held-out metrics row
    std::string out_dir = "runs";
    ModelConfig model;
    SamplerConfig sampler;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.stage1_iters < 0 || cfg.stage2_iters < 0)
        throw ConfigError("train config: iteration counts must be non-negative");
    if (cfg.stage1_iters + cfg.stage2_iters < 1)
        throw ConfigError("train config: total iterations must be positive");
    if (cfg.batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (cfg.cosine_period < 1) throw ConfigError("train config: cosine_period must be >= 1");
    if (cfg.eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
    if (!(cfg.lr_max > 0) || !(cfg.lr_min >= 0) || cfg.lr_min > cfg.lr_max)
        throw ConfigError("train config: need lr_max > 0 and lr_min in [0, lr_max]");
    if (!(cfg.charbonnier_eps > 0)) throw ConfigError("train config: charbonnier_eps must be positive");
    if (cfg.window < 2) throw ConfigError("train config: window must be >= 2");
    if (!(cfg.val_scale >= 1.0)) throw ConfigError("train config: val_scale must be >= 1");
    cfg.model.decoder_in_dim(); // validates the flag combination
}

// Reconstruction loss of a batch: every HR patch pixel of every target frame
// is decoded through the per-query path and scored against the ground-truth
// pixel. One flat Charbonnier over the whole batch, so a decoder that emits
// the targets exactly yields the eps floor bitwise. Only the two degraded
// input patches enter the graph as data; target pixels are constants on the
// loss side and no ground-truth motion exists anywhere in the construction.
template <class T>
TensorT<T> training_loss(const ModelT<T>& m, const std::vector<TrainingSample>& samples, T eps) {
    if (samples.empty()) throw UsageError("training_loss: empty batch");
    std::vector<TensorT<T>> preds, tgts;
    for (size_t s = 0; s < samples.size(); ++s) {
        const auto& smp = samples[s];
        if (smp.targets.empty())
            throw DataError("training_loss: sample " + std::to_string(s) + " has no targets");
        const auto grid = encode(m.encoder, smp.lr0, smp.lr1);
        const auto i0 = tensor_from_image(smp.lr0);
        const auto i1 = tensor_from_image(smp.lr1);
        for (const auto& tgt : smp.targets) {
            const int64_t ph = tgt.hr_patch.height, pw = tgt.hr_patch.width;
            const auto coords = lattice_coords<T>(ph, pw);
            auto pred = decode_rgb(m, grid, i0, i1, coords, static_cast<T>(tgt.xt));
            for (T v : pred.values())
                if (!std::isfinite(v))
                    throw TrainError("non-finite prediction (scale " + std::to_string(smp.scale) +
                                     ", sample " + std::to_string(s) + ", target position " +
                                     std::to_string(tgt.position) + ")");
            preds.push_back(reshape(pred, {1, ph * pw * 3}));
            std::vector<T> tv(static_cast<size_t>(ph * pw * 3));
            for (int64_t i = 0; i < ph; ++i)
                for (int64_t j = 0; j < pw; ++j)
                    for (int64_t c = 0; c < 3; ++c)
                        tv[static_cast<size_t>((i * pw + j) * 3 + c)] =
                            static_cast<T>(tgt.hr_patch.at(c, i, j));
            tgts.push_back(TensorT<T>::from({1, ph * pw * 3}, std::move(tv)));
        }
    }
    return charbonnier_loss(concat_cols(preds), concat_cols(tgts), eps);
}

struct TrainReport {
    std::string final_checkpoint;
    std::string metrics_csv;
    double final_loss = 0.0;
    int64_t iters_run = 0;
};

template <class T = double>
class TrainerT {
public:
    TrainConfig cfg;
    ModelT<T> model;
    ParamList<T> params;
    AdamStateT<T> adam;
    Rng rng;
    int64_t iter = 0;

    static TrainerT make(const TrainConfig& cfg) {
        validate_train_config(cfg);
        TrainerT t(cfg);
        t.model = ModelT<T>::make(cfg.model, t.rng);
        t.params = t.model.params();
        return t;
    }

    static TrainerT resume(TrainConfig cfg, const std::string& ckpt_path) {
        validate_train_config(cfg);
        TrainerStateT<T> ts;
        auto model = load_checkpoint<T>(ckpt_path, &ts);
        cfg.model = model.cfg; // the checkpoint header is authoritative
        TrainerT t(cfg);
        t.model = std::move(model);
        t.params = t.model.params();
        t.adam = std::move(ts.adam);
        t.iter = ts.iter;
        t.rng.load_state(ts.rng_state);
        return t;
    }

    int stage() const { return iter < cfg.stage1_iters ? 1 : 2; }

    // one optimization step at the current iteration; advances the counter
    double train_step(const std::vector<TrainingSample>& batch) {
        zero_grads(params);
        TensorT<T> loss;
        try {
            loss = training_loss(model, batch, static_cast<T>(cfg.charbonnier_eps));
            backward(loss);
            adam_step(params, adam, static_cast<T>(cosine_lr(iter, cfg.cosine_period, cfg.lr_max,
                                                             cfg.lr_min)));
        } catch (const TrainError& e) {
            throw TrainError(std::string(e.what()) + " at iteration " + std::to_string(iter));
        }
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
            throw TrainError("non-finite loss (scale " + std::to_string(batch[0].scale) +
                             ", sample 0) at iteration " + std::to_string(iter));
        iter += 1;
        return lv;
    }

    void save(const std::string& path) const {
        TrainerStateT<T> ts;
        ts.iter = iter;
        ts.adam = adam;
        ts.rng_state = rng.save_state();
        save_checkpoint(path, model, &ts);
    }

private:
    explicit TrainerT(const TrainConfig& c) : cfg(c), rng(c.seed) {}
};

namespace detail {

// held-out midpoint reconstruction at the validation scale
template <class T>
std::pair<double, double> validate_window(const ModelT<T>& m, const Window& win, double scale) {
    const auto& gt = win.frame((win.length - 1) / 2);
    const auto lr0 = degrade(win.frame(0), scale);
    const auto lr1 = degrade(win.frame(win.length - 1), scale);
    const auto grid = encode(m.encoder, lr0, lr1);
    const auto fr = synthesize_frame(m, grid, tensor_from_image(lr0), tensor_from_image(lr1),
                                     gt.height, gt.width, T(0.5));
    ImageT<T> out = image_from_tensor(fr);
    for (auto& v : out.data) v = std::clamp(v, T(0), T(1));
    return {psnr(out, gt), ssim(out, gt)};
}

inline std::string checkpoint_name(int64_t iter) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "ckpt_%06lld.ffck", static_cast<long long>(iter));
    return buf;
}

} // namespace detail

// Two-stage loop: fixed-scale batches for stage1_iters, then uniformly random
// scales. Every eval_every steps the last window's midpoint is reconstructed
// and a metrics row plus a numbered checkpoint are written. `on_iter`, when
// set, observes (iter, stage, realized scale, loss) after each step.
template <class T = double>
TrainReport run_training(const TrainConfig& cfg, const VideoClip& clip,
                         const std::string& resume_path = "",
                         const std::function<void(int64_t, int, double, double)>& on_iter = {}) {
    validate_train_config(cfg);
    validate_clip(clip, "run_training");
    const auto windows = sliding_windows(clip, cfg.window, 1);

    auto trainer = resume_path.empty() ? TrainerT<T>::make(cfg) : TrainerT<T>::resume(cfg, resume_path);
    const int64_t total = cfg.stage1_iters + cfg.stage2_iters;
    if (trainer.iter > total)
        throw ConfigError("run_training: checkpoint is at iteration " + std::to_string(trainer.iter) +
                          ", past the configured total " + std::to_string(total));

    std::filesystem::create_directories(cfg.out_dir);
    const std::string csv_path = (std::filesystem::path(cfg.out_dir) / "metrics.csv").string();
    std::ofstream csv;
    if (resume_path.empty() || !std::filesystem::exists(csv_path)) {
        csv.open(csv_path, std::ios::trunc);
        csv << "iter,lr,loss,val_psnr,val_ssim\n";
    } else {
        csv.open(csv_path, std::ios::app);
    }
    if (!csv) throw DataError("run_training: cannot write '" + csv_path + "'");

    TrainReport rep;
    rep.metrics_csv = csv_path;
    double loss = 0.0;
    while (trainer.iter < total) {
        const int stage = trainer.stage();
        const auto batch =
            sample_training_batch(windows, stage, cfg.batch, trainer.rng, cfg.sampler);
        const int64_t it = trainer.iter;
        loss = trainer.train_step(batch);
        if (on_iter) on_iter(it, stage, batch[0].scale, loss);

        if ((it + 1) % cfg.eval_every == 0 || it + 1 == total) {
            const auto [vp, vs] = detail::validate_window(trainer.model, windows.back(), cfg.val_scale);
            char row[160];
            std::snprintf(row, sizeof(row), "%lld,%.10g,%.10g,%.6f,%.6f\n",
                          static_cast<long long>(it + 1),
                          cosine_lr(it, cfg.cosine_period, cfg.lr_max, cfg.lr_min), loss, vp, vs);
            csv << row;
            csv.flush();
            const auto ck = (std::filesystem::path(cfg.out_dir) / detail::checkpoint_name(it + 1)).string();
            trainer.save(ck);
            rep.final_checkpoint = ck;
        }
    }
    const auto final_ck = (std::filesystem::path(cfg.out_dir) / "ckpt_final.ffck").string();
    trainer.save(final_ck);
    rep.final_checkpoint = final_ck;
    rep.final_loss = loss;
    rep.iters_run = trainer.iter;
    return rep;
}

} // namespace ff
