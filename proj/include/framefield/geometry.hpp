#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "tensor.hpp"

namespace ff {

// A continuous query point: spatial position in [-1,1]^2 (y, then x) and a
// time in [0,1] where 0 and 1 are the two input frames.
struct SpaceTimeQuery {
    double y = 0.0;
    double x = 0.0;
    double t = 0.0;
};

// Plain (non-differentiable) channel-major raster, layout [C,H,W]. Used by the
// data pipeline, file I/O and metrics; differentiable grid math runs on
// rank-3 tensors of the same layout.
template <class T>
struct ImageT {
    int64_t channels = 0, height = 0, width = 0;
    std::vector<T> data;

    ImageT() = default;
    ImageT(int64_t c, int64_t h, int64_t w)
        : channels(c), height(h), width(w), data(static_cast<size_t>(c * h * w), T(0)) {}

    T& at(int64_t c, int64_t i, int64_t j) { return data[static_cast<size_t>((c * height + i) * width + j)]; }
    const T& at(int64_t c, int64_t i, int64_t j) const {
        return data[static_cast<size_t>((c * height + i) * width + j)];
    }
    int64_t size() const { return channels * height * width; }
};

using Image = ImageT<double>;

// Continuous center of cell i on an axis with n cells: -1 + (2i+1)/n.
inline double normalize_index(int64_t i, int64_t n) {
    if (n <= 0) throw UsageError("normalize_index: axis size must be positive, got " + std::to_string(n));
    if (i < 0 || i >= n)
        throw IndexError("normalize_index: index " + std::to_string(i) + " outside [0, " + std::to_string(n) + ")");
    return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
}

inline std::pair<double, double> cell_center(int64_t i, int64_t j, int64_t h, int64_t w) {
    return {normalize_index(i, h), normalize_index(j, w)};
}

// Index of the cell whose center is nearest to coordinate x on an axis of n
// cells; equidistant boundary points resolve toward the smaller index, and
// out-of-range coordinates clamp to the border cell.
inline int64_t nearest_index(double x, int64_t n) {
    double u = (x + 1.0) * 0.5 * static_cast<double>(n); // cell i owns [i, i+1)
    double f = std::floor(u);
    int64_t i = static_cast<int64_t>(f);
    if (u == f && i > 0) --i; // boundary: tie between i-1 and i
    return std::clamp<int64_t>(i, 0, n - 1);
}

// Row-major grid of all cell centers for an h x w lattice, one (y, x) row per
// cell in scanline order. Constant tensor (no gradients).
template <class T = double>
TensorT<T> lattice_coords(int64_t h, int64_t w) {
    std::vector<T> v(static_cast<size_t>(h * w * 2));
    for (int64_t i = 0; i < h; ++i) {
        const T y = static_cast<T>(normalize_index(i, h));
        for (int64_t j = 0; j < w; ++j) {
            v[static_cast<size_t>((i * w + j) * 2)] = y;
            v[static_cast<size_t>((i * w + j) * 2 + 1)] = static_cast<T>(normalize_index(j, w));
        }
    }
    return TensorT<T>::from({h * w, 2}, std::move(v));
}

namespace detail {

template <class T>
void check_grid_coords(const TensorT<T>& grid, const TensorT<T>& coords, const char* op) {
    if (grid.ndim() != 3)
        throw ShapeError(std::string(op) + ": grid must be [C,H,W], got " + shape_str(grid.shape()));
    if (coords.ndim() != 2 || coords.dim(1) != 2)
        throw ShapeError(std::string(op) + ": coords must be [B,2], got " + shape_str(coords.shape()));
}

} // namespace detail

// Per-row lookup of the nearest cell's feature vector: grid [C,H,W] with
// coords [B,2] gives [B,C]. Gradients scatter back into the grid; the lookup
// is piecewise constant in the coordinates, so they receive none.
template <class T>
TensorT<T> gather_nearest(const TensorT<T>& grid, const TensorT<T>& coords) {
    detail::check_grid_coords(grid, coords, "gather_nearest");
    const int64_t C = grid.dim(0), H = grid.dim(1), W = grid.dim(2);
    const int64_t B = coords.dim(0);
    auto out = detail::make_op<T>({B, C}, {grid.node(), coords.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        const int64_t B = n.shape[0], C = n.shape[1];
        const int64_t HW = n.inputs[0]->shape[1] * n.inputs[0]->shape[2];
        auto& gg = detail::grad_buf(*n.inputs[0]);
        for (int64_t b = 0; b < B; ++b) {
            const int64_t cell = n.isaved[static_cast<size_t>(b)];
            for (int64_t c = 0; c < C; ++c)
                gg[static_cast<size_t>(c * HW + cell)] += n.grad[static_cast<size_t>(b * C + c)];
        }
    });
    const T* g = grid.values().data();
    const T* xs = coords.values().data();
    auto& y = out.values();
    const bool rg = out.requires_grad();
    if (rg) out.node()->isaved.resize(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        const int64_t i = nearest_index(static_cast<double>(xs[b * 2]), H);
        const int64_t j = nearest_index(static_cast<double>(xs[b * 2 + 1]), W);
        const int64_t cell = i * W + j;
        if (rg) out.node()->isaved[static_cast<size_t>(b)] = cell;
        for (int64_t c = 0; c < C; ++c) y[static_cast<size_t>(b * C + c)] = g[c * H * W + cell];
    }
    return out;
}

// Offset from each coordinate to its nearest cell center on an h x w lattice,
// rows (dy, dx). With scale_delta (the default) each axis is multiplied by
// n/2 so one cell width maps to unit length regardless of resolution.
// Differentiable in the coordinates almost everywhere (the chosen center is
// locally constant); clamped out-of-range coordinates get zero gradient.
template <class T>
TensorT<T> nearest_delta(const TensorT<T>& coords, int64_t h, int64_t w, bool scale_delta = true) {
    if (coords.ndim() != 2 || coords.dim(1) != 2)
        throw ShapeError("nearest_delta: coords must be [B,2], got " + detail::shape_str(coords.shape()));
    if (h <= 0 || w <= 0) throw UsageError("nearest_delta: lattice dims must be positive");
    const int64_t B = coords.dim(0);
    auto out = detail::make_op<T>({B, 2}, {coords.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        auto& gc = detail::grad_buf(*n.inputs[0]);
        for (size_t k = 0; k < gc.size(); ++k) gc[k] += n.grad[k] * n.saved[k];
    });
    const T* xs = coords.values().data();
    auto& y = out.values();
    const bool rg = out.requires_grad();
    if (rg) out.node()->saved.assign(static_cast<size_t>(B * 2), T(0));
    const double sy = scale_delta ? 0.5 * static_cast<double>(h) : 1.0;
    const double sx = scale_delta ? 0.5 * static_cast<double>(w) : 1.0;
    for (int64_t b = 0; b < B; ++b) {
        const double cy = std::clamp(static_cast<double>(xs[b * 2]), -1.0, 1.0);
        const double cx = std::clamp(static_cast<double>(xs[b * 2 + 1]), -1.0, 1.0);
        const int64_t i = nearest_index(cy, h);
        const int64_t j = nearest_index(cx, w);
        y[static_cast<size_t>(b * 2)] = static_cast<T>((cy - normalize_index(i, h)) * sy);
        y[static_cast<size_t>(b * 2 + 1)] = static_cast<T>((cx - normalize_index(j, w)) * sx);
        if (rg) {
            if (cy == static_cast<double>(xs[b * 2])) out.node()->saved[static_cast<size_t>(b * 2)] = static_cast<T>(sy);
            if (cx == static_cast<double>(xs[b * 2 + 1]))
                out.node()->saved[static_cast<size_t>(b * 2 + 1)] = static_cast<T>(sx);
        }
    }
    return out;
}

// Bilinear interpolation of the four cell centers surrounding each
// coordinate, border-clamped: grid [C,H,W] with coords [B,2] gives [B,C].
// Differentiable in both the grid values and the coordinates; beyond the
// border the result is constant, so clamped axes contribute zero gradient.
template <class T>
TensorT<T> bilinear_sample(const TensorT<T>& grid, const TensorT<T>& coords) {
    detail::check_grid_coords(grid, coords, "bilinear_sample");
    const int64_t C = grid.dim(0), H = grid.dim(1), W = grid.dim(2);
    const int64_t B = coords.dim(0);
    auto out = detail::make_op<T>({B, C}, {grid.node(), coords.node()}, +[](detail::Node<T>& n) {
        const int64_t B = n.shape[0], C = n.shape[1];
        const int64_t H = n.inputs[0]->shape[1], W = n.inputs[0]->shape[2];
        const int64_t HW = H * W;
        const T* g = n.inputs[0]->val.data();
        const bool need_grid = n.inputs[0]->requires_grad;
        const bool need_coords = n.inputs[1]->requires_grad;
        T* gg = need_grid ? detail::grad_buf(*n.inputs[0]).data() : nullptr;
        T* gc = need_coords ? detail::grad_buf(*n.inputs[1]).data() : nullptr;
        for (int64_t b = 0; b < B; ++b) {
            const T fy = n.saved[static_cast<size_t>(b * 2)];
            const T fx = n.saved[static_cast<size_t>(b * 2 + 1)];
            const int64_t* idx = &n.isaved[static_cast<size_t>(b * 4)];
            const int64_t p00 = idx[0] * W + idx[2], p01 = idx[0] * W + idx[3];
            const int64_t p10 = idx[1] * W + idx[2], p11 = idx[1] * W + idx[3];
            T dy = 0, dx = 0;
            for (int64_t c = 0; c < C; ++c) {
                const T go = n.grad[static_cast<size_t>(b * C + c)];
                const T* gch = g + c * HW;
                if (need_grid) {
                    T* ggc = gg + c * HW;
                    ggc[p00] += go * (1 - fy) * (1 - fx);
                    ggc[p01] += go * (1 - fy) * fx;
                    ggc[p10] += go * fy * (1 - fx);
                    ggc[p11] += go * fy * fx;
                }
                if (need_coords) {
                    dy += go * ((1 - fx) * (gch[p10] - gch[p00]) + fx * (gch[p11] - gch[p01]));
                    dx += go * ((1 - fy) * (gch[p01] - gch[p00]) + fy * (gch[p11] - gch[p10]));
                }
            }
            if (need_coords) {
                gc[b * 2] += dy * T(0.5) * static_cast<T>(H);
                gc[b * 2 + 1] += dx * T(0.5) * static_cast<T>(W);
            }
        }
    });
    const T* g = grid.values().data();
    const T* xs = coords.values().data();
    auto& y = out.values();
    const bool rg = out.requires_grad();
    if (rg) {
        out.node()->saved.resize(static_cast<size_t>(B * 2));
        out.node()->isaved.resize(static_cast<size_t>(B * 4));
    }
    for (int64_t b = 0; b < B; ++b) {
        const double uy = (static_cast<double>(xs[b * 2]) + 1.0) * 0.5 * static_cast<double>(H) - 0.5;
        const double ux = (static_cast<double>(xs[b * 2 + 1]) + 1.0) * 0.5 * static_cast<double>(W) - 0.5;
        const double iy = std::floor(uy), ix = std::floor(ux);
        const T fy = static_cast<T>(uy - iy), fx = static_cast<T>(ux - ix);
        const int64_t i0 = std::clamp<int64_t>(static_cast<int64_t>(iy), 0, H - 1);
        const int64_t i1 = std::clamp<int64_t>(static_cast<int64_t>(iy) + 1, 0, H - 1);
        const int64_t j0 = std::clamp<int64_t>(static_cast<int64_t>(ix), 0, W - 1);
        const int64_t j1 = std::clamp<int64_t>(static_cast<int64_t>(ix) + 1, 0, W - 1);
        if (rg) {
            out.node()->saved[static_cast<size_t>(b * 2)] = fy;
            out.node()->saved[static_cast<size_t>(b * 2 + 1)] = fx;
            int64_t* idx = &out.node()->isaved[static_cast<size_t>(b * 4)];
            idx[0] = i0;
            idx[1] = i1;
            idx[2] = j0;
            idx[3] = j1;
        }
        for (int64_t c = 0; c < C; ++c) {
            const T* gch = g + c * H * W;
            y[static_cast<size_t>(b * C + c)] = (1 - fy) * (1 - fx) * gch[i0 * W + j0] +
                                                (1 - fy) * fx * gch[i0 * W + j1] +
                                                fy * (1 - fx) * gch[i1 * W + j0] + fy * fx * gch[i1 * W + j1];
        }
    }
    return out;
}

// Resample a grid through a dense displacement field: flow is [2,H',W'] with
// channel 0 holding dy and channel 1 dx in normalized units, and output cell
// (i,j) samples the grid bilinearly at base(i,j) + flow(:,i,j). base defaults
// to the H' x W' cell centers. Differentiable through grid and flow.
template <class T>
TensorT<T> warp_grid(const TensorT<T>& grid, const TensorT<T>& flow, const TensorT<T>& base) {
    if (grid.ndim() != 3 || flow.ndim() != 3 || flow.dim(0) != 2)
        throw ShapeError("warp_grid: need grid [C,H,W] and flow [2,H',W'], got " +
                         detail::shape_str(grid.shape()) + " and " + detail::shape_str(flow.shape()));
    const int64_t C = grid.dim(0), Ho = flow.dim(1), Wo = flow.dim(2);
    if (base.ndim() != 2 || base.dim(0) != Ho * Wo || base.dim(1) != 2)
        throw ShapeError("warp_grid: base must be [" + std::to_string(Ho * Wo) + ",2], got " +
                         detail::shape_str(base.shape()));
    auto offsets = transpose2d(reshape(flow, {2, Ho * Wo}));
    auto rows = bilinear_sample(grid, add(base, offsets)); // [H'W', C]
    return reshape(transpose2d(rows), {C, Ho, Wo});
}

template <class T>
TensorT<T> warp_grid(const TensorT<T>& grid, const TensorT<T>& flow) {
    if (flow.ndim() != 3) throw ShapeError("warp_grid: flow must be [2,H',W'], got " + detail::shape_str(flow.shape()));
    return warp_grid(grid, flow, lattice_coords<T>(flow.dim(1), flow.dim(2)));
}

template <class T>
TensorT<T> tensor_from_image(const ImageT<T>& img) {
    return TensorT<T>::from({img.channels, img.height, img.width}, img.data);
}

template <class T>
ImageT<T> image_from_tensor(const TensorT<T>& t) {
    if (t.ndim() != 3) throw ShapeError("image_from_tensor: need rank 3, got " + detail::shape_str(t.shape()));
    ImageT<T> img(t.dim(0), t.dim(1), t.dim(2));
    img.data = t.values();
    return img;
}

// ---- bicubic degradation ------------------------------------------------------

namespace detail {

// Keys cubic convolution kernel, a = -0.5; support [-2, 2], exact zero at
// the integers away from the origin so unit scale is a strict identity.
inline double keys_cubic(double x) {
    x = std::abs(x);
    if (x < 1.0) return ((1.5 * x - 2.5) * x) * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

// Kahan-compensated mean; keeps the drift gate below meaningful in rounding.
template <class T>
double stable_mean(const std::vector<T>& v) {
    double s = 0.0, comp = 0.0;
    for (T x : v) {
        double y = static_cast<double>(x) - comp;
        double t = s + y;
        comp = (t - s) - y;
        s = t;
    }
    return s / static_cast<double>(v.size());
}

// One separable resampling pass along an axis of length n_in -> n_out.
// Evaluates each output as ref + sum(w * (v - ref)) / sum(w) around the
// center tap so constant runs reproduce bit-for-bit.
struct AxisTaps {
    int64_t n_out = 0;
    std::vector<int64_t> lo, hi; // inclusive source tap range per output
    std::vector<double> w;       // weights, hi-lo+1 entries per output, packed
    std::vector<int64_t> wofs;   // start of each output's weight run
    std::vector<int64_t> ref;    // center tap (clamped) used as the pivot
    std::vector<double> den;     // weight sum per output
};

inline AxisTaps make_axis_taps(int64_t n_in, int64_t n_out, double scale) {
    AxisTaps t;
    t.n_out = n_out;
    const double kscale = scale < 1.0 ? scale : 1.0; // widen support by 1/scale when shrinking
    const double support = 2.0 / kscale;
    for (int64_t k = 0; k < n_out; ++k) {
        const double u = (static_cast<double>(k) + 0.5) / scale - 0.5;
        const int64_t lo = static_cast<int64_t>(std::ceil(u - support));
        const int64_t hi = static_cast<int64_t>(std::floor(u + support));
        t.lo.push_back(lo);
        t.hi.push_back(hi);
        t.wofs.push_back(static_cast<int64_t>(t.w.size()));
        double den = 0.0;
        for (int64_t i = lo; i <= hi; ++i) {
            const double wi = keys_cubic((u - static_cast<double>(i)) * kscale);
            t.w.push_back(wi);
            den += wi;
        }
        t.den.push_back(den);
        t.ref.push_back(std::clamp<int64_t>(static_cast<int64_t>(std::lround(u)), 0, n_in - 1));
    }
    return t;
}

} // namespace detail

// Antialiased separable bicubic resampling for the degradation model,
// scale in (0, 1]: output dims are round(input dims * scale). For scale < 1
// the kernel support widens by 1/scale and weights renormalize; borders
// clamp. A global mean-restoration pass keeps the image mean stable for
// arbitrary content (border clamping alone drifts it), gated so exact cases
// (constants, unit scale) pass through untouched.
template <class T>
ImageT<T> bicubic_resize(const ImageT<T>& img, double scale) {
    if (!(scale > 0.0) || scale > 1.0)
        throw UsageError("bicubic_resize: scale must be in (0, 1], got " + std::to_string(scale));
    const int64_t Ho = std::llround(static_cast<double>(img.height) * scale);
    const int64_t Wo = std::llround(static_cast<double>(img.width) * scale);
    if (Ho < 1 || Wo < 1)
        throw DataError("bicubic_resize: output " + std::to_string(Ho) + "x" + std::to_string(Wo) +
                        " degenerate for input " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " at scale " + std::to_string(scale));

    const auto tw = detail::make_axis_taps(img.width, Wo, scale);
    const auto th = detail::make_axis_taps(img.height, Ho, scale);

    // horizontal pass: [C,H,W] -> [C,H,Wo]
    ImageT<T> mid(img.channels, img.height, Wo);
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < img.height; ++i) {
            const T* row = &img.at(c, i, 0);
            for (int64_t k = 0; k < Wo; ++k) {
                const double ref = static_cast<double>(row[tw.ref[static_cast<size_t>(k)]]);
                double acc = 0.0;
                const double* w = &tw.w[static_cast<size_t>(tw.wofs[static_cast<size_t>(k)])];
                for (int64_t s = tw.lo[static_cast<size_t>(k)]; s <= tw.hi[static_cast<size_t>(k)]; ++s) {
                    const int64_t sc = std::clamp<int64_t>(s, 0, img.width - 1);
                    acc += w[s - tw.lo[static_cast<size_t>(k)]] * (static_cast<double>(row[sc]) - ref);
                }
                mid.at(c, i, k) = static_cast<T>(acc / tw.den[static_cast<size_t>(k)] + ref);
            }
        }

    // vertical pass: [C,H,Wo] -> [C,Ho,Wo]
    ImageT<T> out(img.channels, Ho, Wo);
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t k = 0; k < Ho; ++k) {
            const double* w = &th.w[static_cast<size_t>(th.wofs[static_cast<size_t>(k)])];
            for (int64_t j = 0; j < Wo; ++j) {
                const double ref = static_cast<double>(mid.at(c, th.ref[static_cast<size_t>(k)], j));
                double acc = 0.0;
                for (int64_t s = th.lo[static_cast<size_t>(k)]; s <= th.hi[static_cast<size_t>(k)]; ++s) {
                    const int64_t sc = std::clamp<int64_t>(s, 0, img.height - 1);
                    acc += w[s - th.lo[static_cast<size_t>(k)]] * (static_cast<double>(mid.at(c, sc, j)) - ref);
                }
                out.at(c, k, j) = static_cast<T>(acc / th.den[static_cast<size_t>(k)] + ref);
            }
        }

    const double m_in = detail::stable_mean(img.data);
    const double m_out = detail::stable_mean(out.data);
    const double corr = m_in - m_out;
    if (std::abs(corr) > 1e-12 * std::max(1.0, std::abs(m_in)))
        for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) + corr);
    return out;
}

} // namespace ff
