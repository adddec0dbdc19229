#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "data.hpp"
#include "geometry.hpp"

namespace ff {

// 10*log10(1/MSE) over all channels, capped at 99 dB (and at exact equality)
template <class T>
double psnr(const ImageT<T>& a, const ImageT<T>& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ShapeError("psnr: image dims differ");
    if (a.data.empty()) throw UsageError("psnr: empty image");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// Rec.601 luma plane
template <class T>
std::vector<double> luma(const ImageT<T>& img) {
    if (img.channels != 3 && img.channels != 1)
        throw UsageError("luma: need a 1- or 3-channel image, got " + std::to_string(img.channels));
    const size_t n = static_cast<size_t>(img.height * img.width);
    std::vector<double> y(n);
    if (img.channels == 1) {
        for (size_t i = 0; i < n; ++i) y[i] = static_cast<double>(img.data[i]);
        return y;
    }
    for (size_t i = 0; i < n; ++i)
        y[i] = 0.299 * static_cast<double>(img.data[i]) + 0.587 * static_cast<double>(img.data[n + i]) +
               0.114 * static_cast<double>(img.data[2 * n + i]);
    return y;
}

namespace detail {

inline std::vector<double> gaussian_taps_11() {
    std::vector<double> g(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = static_cast<double>(i - 5);
        g[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        s += g[static_cast<size_t>(i)];
    }
    for (auto& v : g) v /= s;
    return g;
}

// valid-window separable Gaussian blur: [h, w] -> [h-10, w-10]
inline std::vector<double> blur_valid(const std::vector<double>& in, int64_t h, int64_t w) {
    const auto g = gaussian_taps_11();
    const int64_t wo = w - 10, ho = h - 10;
    std::vector<double> mid(static_cast<size_t>(h * wo));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 11; ++k) acc += g[static_cast<size_t>(k)] * in[static_cast<size_t>(i * w + j + k)];
            mid[static_cast<size_t>(i * wo + j)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(ho * wo));
    for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 11; ++k) acc += g[static_cast<size_t>(k)] * mid[static_cast<size_t>((i + k) * wo + j)];
            out[static_cast<size_t>(i * wo + j)] = acc;
        }
    return out;
}

} // namespace detail

// Mean local structural similarity on luma: 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, L=1, windows fully inside the frame.
template <class T>
double ssim(const ImageT<T>& a, const ImageT<T>& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ShapeError("ssim: image dims differ");
    if (a.height < 11 || a.width < 11)
        throw UsageError("ssim: need at least 11x11 pixels, got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));
    const int64_t h = a.height, w = a.width;
    const auto la = luma(a), lb = luma(b);
    const size_t n = la.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = la[i] * la[i];
        bb[i] = lb[i] * lb[i];
        ab[i] = la[i] * lb[i];
    }
    const auto mu_a = detail::blur_valid(la, h, w);
    const auto mu_b = detail::blur_valid(lb, h, w);
    const auto m_aa = detail::blur_valid(aa, h, w);
    const auto m_bb = detail::blur_valid(bb, h, w);
    const auto m_ab = detail::blur_valid(ab, h, w);

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

enum class EvalMode { center, average };

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "center") return EvalMode::center;
    if (s == "average") return EvalMode::average;
    throw ConfigError("unknown eval mode '" + s + "' (center, average)");
}

struct EvalResult {
    double psnr = 0.0;
    double ssim = 0.0;
    int64_t groups = 0;
    int64_t frames = 0; // metric evaluations across all groups
};

// Nine-frame group evaluation: each group contributes the degraded first and
// last frames as inputs, and the model (via `render`) reconstructs frames at
// the mode's time set against ground truth at full resolution.
//   center:  xt in {0, 1/2, 1}; the literal_center flag swaps the midpoint
//            for the 4th frame (xt = 3/8)
//   average: xt in {0, 1/8, ..., 1}
// render(lr0, lr1, xt, h_out, w_out) -> Image
template <class RenderFn>
EvalResult evaluate_protocol(const VideoClip& clip, double scale, EvalMode mode, RenderFn render,
                             bool literal_center = false) {
    if (static_cast<int64_t>(clip.frames.size()) < 9)
        throw DataError("evaluate_protocol: need at least 9 frames, got " +
                        std::to_string(clip.frames.size()));
    if (!(scale >= 1.0)) throw UsageError("evaluate_protocol: scale must be >= 1");

    std::vector<int64_t> positions;
    if (mode == EvalMode::center)
        positions = literal_center ? std::vector<int64_t>{0, 3, 8} : std::vector<int64_t>{0, 4, 8};
    else
        positions = {0, 1, 2, 3, 4, 5, 6, 7, 8};

    EvalResult res;
    for (const auto& win : sliding_windows(clip, 9, 9)) {
        const auto lr0 = degrade(win.frame(0), scale);
        const auto lr1 = degrade(win.frame(8), scale);
        for (int64_t p : positions) {
            const double xt = static_cast<double>(p) / 8.0;
            const auto& gt = win.frame(p);
            const auto out = render(lr0, lr1, xt, gt.height, gt.width);
            res.psnr += psnr(out, gt);
            res.ssim += ssim(out, gt);
            ++res.frames;
        }
        ++res.groups;
    }
    res.psnr /= static_cast<double>(res.frames);
    res.ssim /= static_cast<double>(res.frames);
    return res;
}

// ---- report emission ----------------------------------------------------------

struct ReportRow {
    std::string method;
    std::string scale; // e.g. "x4" or "x2/x4"
    double psnr = 0.0;
    double ssim = 0.0;
};

inline std::string format_report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "method,scale,psnr,ssim\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.4f,%.4f\n", r.method.c_str(), r.scale.c_str(), r.psnr,
                      r.ssim);
        out += buf;
    }
    return out;
}

inline std::string format_report_table(const std::vector<ReportRow>& rows) {
    size_t mw = 6, sw = 5;
    for (const auto& r : rows) {
        mw = std::max(mw, r.method.size());
        sw = std::max(sw, r.scale.size());
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %-*s  %8s  %7s\n", static_cast<int>(mw), "method",
                  static_cast<int>(sw), "scale", "psnr", "ssim");
    std::string out = buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %-*s  %8.4f  %7.4f\n", static_cast<int>(mw),
                      r.method.c_str(), static_cast<int>(sw), r.scale.c_str(), r.psnr, r.ssim);
        out += buf;
    }
    return out;
}

} // namespace ff
