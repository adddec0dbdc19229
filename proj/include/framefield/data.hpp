#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "image_io.hpp"
#include "rng.hpp"

namespace ff {

struct VideoClip {
    std::vector<Image> frames; // each [3,H,W], values in [0,1]
    std::string frame_rate_tag;

    int64_t height() const { return frames.empty() ? 0 : frames[0].height; }
    int64_t width() const { return frames.empty() ? 0 : frames[0].width; }
};

inline void validate_clip(const VideoClip& clip, const std::string& what) {
    if (clip.frames.size() < 2) throw DataError(what + ": clip needs at least 2 frames, got " +
                                                std::to_string(clip.frames.size()));
    for (size_t k = 1; k < clip.frames.size(); ++k)
        if (clip.frames[k].height != clip.height() || clip.frames[k].width != clip.width() ||
            clip.frames[k].channels != 3)
            throw DataError(what + ": frame " + std::to_string(k) + " dims differ from frame 0");
}

// ---- synthetic scenes -----------------------------------------------------------

enum class SceneKind { moving_square, two_squares, sinusoid_texture };

inline SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "moving_square") return SceneKind::moving_square;
    if (s == "two_squares") return SceneKind::two_squares;
    if (s == "sinusoid_texture") return SceneKind::sinusoid_texture;
    throw ConfigError("unknown synthetic scene '" + s + "' (expected moving_square, two_squares or "
                      "sinusoid_texture)");
}

inline std::string to_string(SceneKind k) {
    switch (k) {
    case SceneKind::moving_square: return "moving_square";
    case SceneKind::two_squares: return "two_squares";
    default: return "sinusoid_texture";
    }
}

// A procedurally generated video whose content translates with constant
// velocity, so the exact frame at ANY real-valued time and ANY resolution is
// available analytically. The continuous scene lives on [0,1)^2 with time
// measured in frame counts; pixels are box-filtered (exact coverage
// integrals), keeping every resolution mutually consistent.
struct SyntheticScene {
    SceneKind kind = SceneKind::moving_square;
    int64_t length = 9;
    int64_t height = 64, width = 64;
    uint64_t seed = 0;

    struct Box {
        double cy0 = 0, cx0 = 0; // center at time 0, scene units
        double vy = 0, vx = 0;   // scene units per frame
        double half = 0.1;       // half side
        double fg[3] = {1, 1, 1};
    };
    std::vector<Box> boxes;
    double bg[3] = {0, 0, 0};

    // sinusoid_texture parameters: per-channel phase-shifted plane wave
    // translating at (vy, vx)
    double wave_ky = 1, wave_kx = 1, amp = 0.35;
    double wave_vy = 0, wave_vx = 0;
    double phase[3] = {0, 0, 0};

    static SyntheticScene make(SceneKind kind, int64_t length, int64_t h, int64_t w, uint64_t seed) {
        if (length < 2) throw UsageError("SyntheticScene: length must be >= 2, got " + std::to_string(length));
        if (h < 1 || w < 1) throw UsageError("SyntheticScene: degenerate dims");
        SyntheticScene sc;
        sc.kind = kind;
        sc.length = length;
        sc.height = h;
        sc.width = w;
        sc.seed = seed;
        Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
        for (double& v : sc.bg) v = rng.uniform(0.05, 0.35);
        const int nbox = kind == SceneKind::moving_square ? 1 : kind == SceneKind::two_squares ? 2 : 0;
        for (int b = 0; b < nbox; ++b) {
            Box box;
            box.half = rng.uniform(0.09, 0.14);
            const double m = box.half + 0.04; // keep fully inside over the whole clip
            const double y0 = rng.uniform(m, 1.0 - m), y1 = rng.uniform(m, 1.0 - m);
            const double x0 = rng.uniform(m, 1.0 - m), x1 = rng.uniform(m, 1.0 - m);
            box.cy0 = y0;
            box.cx0 = x0;
            box.vy = (y1 - y0) / static_cast<double>(length - 1);
            box.vx = (x1 - x0) / static_cast<double>(length - 1);
            for (double& v : box.fg) v = rng.uniform(0.6, 0.95);
            // tint the two squares apart
            box.fg[b % 3] = rng.uniform(0.75, 0.95);
            box.fg[(b + 1) % 3] = rng.uniform(0.4, 0.6);
            sc.boxes.push_back(box);
        }
        if (kind == SceneKind::sinusoid_texture) {
            sc.wave_ky = static_cast<double>(1 + rng.uniform_int(3));
            sc.wave_kx = static_cast<double>(1 + rng.uniform_int(3));
            sc.amp = rng.uniform(0.25, 0.4);
            sc.wave_vy = rng.uniform(0.02, 0.08) * (rng.coin() ? 1.0 : -1.0);
            sc.wave_vx = rng.uniform(0.02, 0.08) * (rng.coin() ? 1.0 : -1.0);
            for (int c = 0; c < 3; ++c) sc.phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        return sc;
    }

    std::pair<double, double> box_center(size_t which, double tf) const {
        const Box& b = boxes.at(which);
        return {b.cy0 + b.vy * tf, b.cx0 + b.vx * tf};
    }

    // time of a window-relative query: window [first, first+win) at xt in [0,1]
    static double window_time(int64_t first, int64_t window, double xt) {
        return static_cast<double>(first) + xt * static_cast<double>(window - 1);
    }

    Image frame_at(double tf) const { return frame_at(tf, height, width); }

    Image frame_at(double tf, int64_t h, int64_t w) const {
        Image img(3, h, w);
        if (kind == SceneKind::sinusoid_texture) {
            sinusoid_frame(tf, img);
            return img;
        }
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < w; ++j) img.at(c, i, j) = bg[c];
        const double area = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
        for (size_t b = 0; b < boxes.size(); ++b) {
            const auto [cy, cx] = box_center(b, tf);
            const double hlf = boxes[b].half;
            // later boxes paint over earlier ones: subtract the part of this
            // pixel's earlier-box coverage that a later box re-covers
            for (int64_t i = 0; i < h; ++i) {
                const double py0 = static_cast<double>(i) / h, py1 = (static_cast<double>(i) + 1.0) / h;
                if (py1 < cy - hlf || py0 > cy + hlf) continue;
                for (int64_t j = 0; j < w; ++j) {
                    const double px0 = static_cast<double>(j) / w, px1 = (static_cast<double>(j) + 1.0) / w;
                    double cov = rect_overlap(py0, py1, px0, px1, cy - hlf, cy + hlf, cx - hlf, cx + hlf);
                    if (cov <= 0.0) continue;
                    for (size_t b2 = b + 1; b2 < boxes.size(); ++b2) {
                        const auto [cy2, cx2] = box_center(b2, tf);
                        const double h2 = boxes[b2].half;
                        cov -= rect_overlap(std::max(py0, cy - hlf), std::min(py1, cy + hlf),
                                            std::max(px0, cx - hlf), std::min(px1, cx + hlf), cy2 - h2,
                                            cy2 + h2, cx2 - h2, cx2 + h2);
                    }
                    if (cov <= 0.0) continue;
                    const double f = cov / area;
                    for (int64_t c = 0; c < 3; ++c) img.at(c, i, j) += f * (boxes[b].fg[c] - bg[c]);
                }
            }
        }
        return img;
    }

    VideoClip clip() const {
        VideoClip out;
        out.frames.reserve(static_cast<size_t>(length));
        for (int64_t k = 0; k < length; ++k) out.frames.push_back(frame_at(static_cast<double>(k)));
        out.frame_rate_tag = to_string(kind) + "/seed" + std::to_string(seed);
        return out;
    }

private:
    static double rect_overlap(double ay0, double ay1, double ax0, double ax1, double by0, double by1,
                               double bx0, double bx1) {
        const double dy = std::min(ay1, by1) - std::max(ay0, by0);
        const double dx = std::min(ax1, bx1) - std::max(ax0, bx0);
        return dy > 0.0 && dx > 0.0 ? dy * dx : 0.0;
    }

    void sinusoid_frame(double tf, Image& img) const {
        const int64_t h = img.height, w = img.width;
        const double al = 2.0 * std::numbers::pi * wave_ky; // y frequency
        const double be = 2.0 * std::numbers::pi * wave_kx; // x frequency
        const double area = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
        for (int64_t c = 0; c < 3; ++c) {
            const double g = phase[c] - al * wave_vy * tf - be * wave_vx * tf;
            // exact box filter: mean of sin(al*y + be*x + g) over the pixel via
            // the corner antiderivative F = -sin(al*y + be*x + g)/(al*be)
            auto F = [&](double y, double x) { return -std::sin(al * y + be * x + g) / (al * be); };
            for (int64_t i = 0; i < h; ++i) {
                const double y0 = static_cast<double>(i) / h, y1 = (static_cast<double>(i) + 1.0) / h;
                for (int64_t j = 0; j < w; ++j) {
                    const double x0 = static_cast<double>(j) / w, x1 = (static_cast<double>(j) + 1.0) / w;
                    const double m = (F(y1, x1) - F(y1, x0) - F(y0, x1) + F(y0, x0)) / area;
                    img.at(c, i, j) = 0.5 + amp * m;
                }
            }
        }
    }
};

inline VideoClip make_synthetic_clip(SceneKind kind, int64_t length, int64_t h, int64_t w, uint64_t seed) {
    return SyntheticScene::make(kind, length, h, w, seed).clip();
}

// ---- windows and degradation ----------------------------------------------------

// A window is a view [first, first+length) into a clip; inputs are its first
// and last frames.
struct Window {
    const VideoClip* clip = nullptr;
    int64_t first = 0;
    int64_t length = 9;

    const Image& frame(int64_t k) const { return clip->frames[static_cast<size_t>(first + k)]; }
};

inline std::vector<Window> sliding_windows(const VideoClip& clip, int64_t window = 9, int64_t stride = 9) {
    if (window < 2) throw UsageError("sliding_windows: window must be >= 2");
    if (stride < 1) throw UsageError("sliding_windows: stride must be >= 1");
    const int64_t len = static_cast<int64_t>(clip.frames.size());
    if (len < window)
        throw DataError("sliding_windows: clip length " + std::to_string(len) + " shorter than window " +
                        std::to_string(window));
    std::vector<Window> out;
    for (int64_t i = 0; i + window <= len; i += stride) out.push_back({&clip, i, window});
    return out;
}

// Degradation model: bicubic down-sampling by 1/scale.
inline Image degrade(const Image& frame, double scale) {
    if (!(scale >= 1.0)) throw UsageError("degrade: scale must be >= 1, got " + std::to_string(scale));
    return bicubic_resize(frame, 1.0 / scale);
}

// ---- augmentation ----------------------------------------------------------------

// k quarter-turns counterclockwise
inline Image rot90(const Image& img, int64_t k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    Image out(img.channels, k % 2 ? img.width : img.height, k % 2 ? img.height : img.width);
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < out.height; ++i)
            for (int64_t j = 0; j < out.width; ++j) {
                int64_t si = 0, sj = 0;
                switch (k) {
                case 1: si = j, sj = img.width - 1 - i; break;
                case 2: si = img.height - 1 - i, sj = img.width - 1 - j; break;
                default: si = img.height - 1 - j, sj = i; break;
                }
                out.at(c, i, j) = img.at(c, si, sj);
            }
    return out;
}

inline Image hflip(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < img.height; ++i)
            for (int64_t j = 0; j < img.width; ++j) out.at(c, i, j) = img.at(c, i, img.width - 1 - j);
    return out;
}

inline Image apply_augment(const Image& img, int64_t rot, bool flip) {
    Image out = rot90(img, rot);
    return flip ? hflip(out) : out;
}

inline Image invert_augment(const Image& img, int64_t rot, bool flip) {
    return rot90(flip ? hflip(img) : img, -rot);
}

// ---- training samples -----------------------------------------------------------

struct TrainingSample {
    Image lr0, lr1; // degraded endpoint patches, p x p
    struct Target {
        double xt = 0;       // (position - first) / (window - 1)
        int64_t position = 0; // frame position inside the window
        Image hr_patch;      // ph x ph
    };
    std::vector<Target> targets;
    double scale = 1.0;     // realized scale ph / p (stage 1: exactly the nominal)
    int64_t crop_y = 0, crop_x = 0; // patch origin on the source frame lattice
    int64_t window_first = 0;
    int64_t rot = 0;
    bool flip = false;
};

struct SamplerConfig {
    int64_t patch = 32;        // LR patch size, clamped to the degraded frame dims
    double stage1_scale = 4.0; // fixed space scale during stage 1
    double scale_min = 1.0, scale_max = 4.0;
    int64_t num_targets = 3;
    bool short_target_pool = false;      // interior pool {1..window-3} instead of {1..window-2}
    std::vector<int64_t> fixed_targets;  // when set: use exactly these window positions
    bool augment = true;
};

// One training batch. Draw order per call, all from `rng`: the shared batch
// scale (stage 2 only), then per sample: window index, patch origin (y, x),
// target positions without replacement (ascending afterwards), rotation,
// flip. The HR patch is cropped first and degraded as a unit, so the LR
// patch covers exactly the same scene region and the sample's realized scale
// is the exact ratio of the two patch sizes.
inline std::vector<TrainingSample> sample_training_batch(const std::vector<Window>& windows, int stage,
                                                         int64_t batch, Rng& rng,
                                                         const SamplerConfig& cfg = {}) {
    if (windows.empty()) throw DataError("sample_training_batch: no windows");
    if (stage != 1 && stage != 2) throw UsageError("sample_training_batch: stage must be 1 or 2");
    if (batch < 1) throw UsageError("sample_training_batch: batch must be >= 1");

    const double nominal = stage == 1 ? cfg.stage1_scale : rng.uniform(cfg.scale_min, cfg.scale_max);
    const int64_t win = windows[0].length;

    std::vector<int64_t> pool;
    if (cfg.fixed_targets.empty()) {
        const int64_t last = cfg.short_target_pool ? win - 3 : win - 2;
        for (int64_t k = 1; k <= last; ++k) pool.push_back(k);
        if (static_cast<int64_t>(pool.size()) < cfg.num_targets)
            throw ConfigError("sample_training_batch: target pool smaller than num_targets");
    } else {
        for (int64_t k : cfg.fixed_targets)
            if (k < 0 || k >= win)
                throw ConfigError("sample_training_batch: fixed target position " + std::to_string(k) +
                                  " outside window of length " + std::to_string(win));
    }

    std::vector<TrainingSample> out;
    out.reserve(static_cast<size_t>(batch));
    for (int64_t s = 0; s < batch; ++s) {
        const Window& w = windows[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(windows.size())))];
        const Image& f0 = w.frame(0);

        const int64_t lr_h = std::llround(static_cast<double>(f0.height) / nominal);
        const int64_t lr_w = std::llround(static_cast<double>(f0.width) / nominal);
        if (lr_h < 1 || lr_w < 1)
            throw DataError("sample_training_batch: scale " + std::to_string(nominal) +
                            " degenerates frames " + std::to_string(f0.height) + "x" +
                            std::to_string(f0.width));
        const int64_t p = std::min({cfg.patch, lr_h, lr_w});
        const int64_t ph = std::min({static_cast<int64_t>(std::llround(p * nominal)), f0.height, f0.width});

        TrainingSample smp;
        smp.window_first = w.first;
        smp.scale = static_cast<double>(ph) / static_cast<double>(p);
        smp.crop_y = rng.uniform_int(f0.height - ph + 1);
        smp.crop_x = rng.uniform_int(f0.width - ph + 1);

        std::vector<int64_t> chosen;
        if (cfg.fixed_targets.empty()) {
            std::vector<int64_t> rem = pool;
            for (int64_t n = 0; n < cfg.num_targets; ++n) {
                const auto pick = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(rem.size())));
                chosen.push_back(rem[pick]);
                rem.erase(rem.begin() + static_cast<std::ptrdiff_t>(pick));
            }
            std::sort(chosen.begin(), chosen.end());
        } else {
            chosen = cfg.fixed_targets;
        }

        smp.rot = cfg.augment ? rng.uniform_int(4) : 0;
        smp.flip = cfg.augment && rng.coin();

        auto crop = [&](const Image& src) {
            Image patch(src.channels, ph, ph);
            for (int64_t c = 0; c < src.channels; ++c)
                for (int64_t i = 0; i < ph; ++i)
                    for (int64_t j = 0; j < ph; ++j)
                        patch.at(c, i, j) = src.at(c, smp.crop_y + i, smp.crop_x + j);
            return patch;
        };
        const double realized = smp.scale;
        smp.lr0 = apply_augment(degrade(crop(w.frame(0)), realized), smp.rot, smp.flip);
        smp.lr1 = apply_augment(degrade(crop(w.frame(win - 1)), realized), smp.rot, smp.flip);
        for (int64_t k : chosen) {
            TrainingSample::Target tgt;
            tgt.position = k;
            tgt.xt = static_cast<double>(k) / static_cast<double>(win - 1);
            tgt.hr_patch = apply_augment(crop(w.frame(k)), smp.rot, smp.flip);
            smp.targets.push_back(std::move(tgt));
        }
        out.push_back(std::move(smp));
    }
    return out;
}

// ---- ingestion -------------------------------------------------------------------

inline VideoClip load_frame_dir(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw DataError("load_frame_dir: not a directory: " + path);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path)) {
        if (!e.is_regular_file()) continue;
        const auto ext = detail::lower_ext(e.path().filename().string());
        if (ext == ".png" || ext == ".ppm") files.push_back(e.path().string());
    }
    if (files.empty()) throw DataError("load_frame_dir: no PNG/PPM frames in " + path);
    std::sort(files.begin(), files.end());
    VideoClip clip;
    for (const auto& f : files) {
        Image img;
        try {
            img = load_image(f);
        } catch (const IoError& e) {
            throw DataError("load_frame_dir: " + std::string(e.what()));
        }
        if (!clip.frames.empty() && (img.height != clip.height() || img.width != clip.width()))
            throw DataError("load_frame_dir: frame dims " + std::to_string(img.height) + "x" +
                            std::to_string(img.width) + " of " + f + " differ from first frame");
        clip.frames.push_back(std::move(img));
    }
    if (clip.frames.size() < 2) throw DataError("load_frame_dir: need at least 2 frames in " + path);
    return clip;
}

} // namespace ff
