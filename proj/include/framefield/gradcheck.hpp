#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "fields.hpp"
#include "geometry.hpp"
#include "nn.hpp"
#include "renderer.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ff {

struct GradCheckEntry {
    std::string op;
    std::string where; // leaf name and flat index of the worst disagreement
    double rel = 0.0;
};

struct GradCheckReport {
    double tol = 1e-4;
    std::vector<GradCheckEntry> entries;

    bool ok() const {
        for (const auto& e : entries)
            if (!(e.rel < tol)) return false;
        return true;
    }
    const GradCheckEntry& worst() const {
        size_t w = 0;
        for (size_t i = 1; i < entries.size(); ++i)
            if (entries[i].rel > entries[w].rel) w = i;
        return entries[w];
    }
};

namespace detail {

// central finite differences against one analytic backward pass
template <class F>
GradCheckEntry fd_entry(const std::string& op, ParamList<double>& leaves, F&& make_loss,
                        double h = 1e-5) {
    for (auto& l : leaves) l.tensor.zero_grad();
    backward(make_loss());
    std::vector<std::vector<double>> an;
    an.reserve(leaves.size());
    for (auto& l : leaves) an.push_back(l.tensor.grad());

    GradCheckEntry entry{op, "-", 0.0};
    for (size_t p = 0; p < leaves.size(); ++p) {
        auto& vals = leaves[p].tensor.values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double v0 = vals[i];
            vals[i] = v0 + h;
            const double fp = make_loss().item();
            vals[i] = v0 - h;
            const double fm = make_loss().item();
            vals[i] = v0;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = an[p][i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
            if (rel > entry.rel) {
                entry.rel = rel;
                entry.where = leaves[p].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return entry;
}

inline TensorT<double> rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo, double hi,
                                   bool rg = true) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TensorT<double>::from(std::move(shape), std::move(v), rg);
}

// Query points 0.18..0.32 cell widths away from every cell center and cell
// boundary. Bilinear sampling kinks at centers and nearest-cell lookup jumps
// at boundaries; finite differences are only valid clear of both.
inline TensorT<double> safe_coords(int64_t n, int64_t grid_h, int64_t grid_w, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(n * 2));
    for (int64_t k = 0; k < n; ++k) {
        for (int axis = 0; axis < 2; ++axis) {
            const int64_t dim = axis == 0 ? grid_h : grid_w;
            const double cell = static_cast<double>(rng.uniform_int(dim));
            const double off = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.18, 0.32);
            v[static_cast<size_t>(k * 2 + axis)] =
                (cell + off + 0.5) * 2.0 / static_cast<double>(dim) - 1.0;
        }
    }
    return TensorT<double>::from({n, 2}, std::move(v), true);
}

struct ScopedSineFault {
    bool prev;
    explicit ScopedSineFault(bool on) : prev(corrupt_sine_backward) { corrupt_sine_backward = on; }
    ~ScopedSineFault() { corrupt_sine_backward = prev; }
};

} // namespace detail

// Finite-difference sweeps over every differentiable operation, from scalar
// kernels to the full render path, on tiny fixtures. `corrupt_sine` flips the
// fault-injection hook in the sine backward so the sweep must fail and name
// the sine-carrying checks.
inline GradCheckReport run_gradcheck(double tol = 1e-4, uint64_t seed = 1,
                                     bool corrupt_sine = false) {
    using detail::fd_entry;
    using detail::rand_tensor;
    using Tensor = TensorT<double>;
    detail::ScopedSineFault fault(corrupt_sine);
    GradCheckReport rep;
    rep.tol = tol;
    Rng rng(seed);

    // fixed probe weights per check; the loss must be the same function on
    // every evaluation or finite differences measure the weight noise instead
    auto probe = [](std::vector<int64_t> shape, uint64_t s) {
        Rng r(s);
        return rand_tensor(std::move(shape), r, -1.0, 1.0, false);
    };
    auto wsum = [](const Tensor& out, const Tensor& w) { return sum(mul(out, w)); };

    {
        auto a = rand_tensor({3, 4}, rng, -1.0, 1.0);
        auto b = rand_tensor({3, 4}, rng, -1.0, 1.0);
        Rng wr(seed + 100);
        auto w = rand_tensor({3, 4}, wr, -1.0, 1.0, false);
        ParamList<double> leaves{{"a", a}, {"b", b}};
        rep.entries.push_back(fd_entry("add", leaves, [&] { return sum(mul(add(a, b), w)); }));
        rep.entries.push_back(fd_entry("sub", leaves, [&] { return sum(mul(sub(a, b), w)); }));
        rep.entries.push_back(fd_entry("mul", leaves, [&] { return sum(mul(mul(a, b), w)); }));
        rep.entries.push_back(fd_entry("scale", leaves, [&] { return sum(mul(scale(a, 1.7), w)); }));
        rep.entries.push_back(fd_entry("sum", leaves, [&] { return sum(add(a, b)); }));
        rep.entries.push_back(fd_entry("mean", leaves, [&] { return mean(mul(a, b)); }));
        rep.entries.push_back(fd_entry("reshape", leaves, [&] {
            return sum(mul(reshape(add(a, b), {4, 3}), reshape(w, {4, 3})));
        }));
        rep.entries.push_back(fd_entry(
            "transpose2d", leaves, [&] { return sum(mul(transpose2d(a), transpose2d(w))); }));
        rep.entries.push_back(fd_entry("concat_cols", leaves, [&] {
            auto cat = concat_cols(std::vector<Tensor>{a, b});
            return sum(mul(cat, concat_cols(std::vector<Tensor>{w, w})));
        }));
        rep.entries.push_back(fd_entry("slice_cols", leaves, [&] {
            auto cat = concat_cols(std::vector<Tensor>{a, b});
            return sum(
                mul(slice_cols(cat, 1, 7), slice_cols(concat_cols(std::vector<Tensor>{w, w}), 1, 7)));
        }));
    }

    {
        // relu probed away from its kink at zero
        std::vector<double> v;
        Rng r2(seed + 1);
        for (int i = 0; i < 12; ++i) {
            const double m = r2.uniform(0.2, 1.0);
            v.push_back(r2.coin() ? m : -m);
        }
        auto a = Tensor::from({3, 4}, std::move(v), true);
        auto w = probe({3, 4}, seed + 101);
        ParamList<double> leaves{{"x", a}};
        rep.entries.push_back(fd_entry("relu", leaves, [&] { return wsum(relu(a), w); }));
    }

    {
        auto x = rand_tensor({2, 5}, rng, -1.0, 1.0);
        auto w = probe({2, 5}, seed + 102);
        ParamList<double> leaves{{"x", x}};
        rep.entries.push_back(
            fd_entry("sin_scaled", leaves, [&] { return wsum(sin_scaled(x, 30.0), w); }));
    }

    {
        Rng mr(seed + 2);
        auto mlp = MlpT<double>::make(4, {6}, 3, mr);
        auto x = rand_tensor({5, 4}, rng, -1.0, 1.0);
        ParamList<double> leaves{{"x", x}};
        collect_mlp_params(mlp, "dense.", leaves);
        auto w = probe({5, 3}, seed + 103);
        rep.entries.push_back(
            fd_entry("dense_forward", leaves, [&] { return wsum(mlp.forward(x), w); }));
    }

    {
        auto p = rand_tensor({2, 6}, rng, -0.5, 0.5);
        auto t = rand_tensor({2, 6}, rng, -0.5, 0.5);
        ParamList<double> leaves{{"pred", p}, {"target", t}};
        rep.entries.push_back(
            fd_entry("charbonnier_loss", leaves, [&] { return charbonnier_loss(p, t, 1e-3); }));
    }

    {
        auto grid = rand_tensor({3, 4, 5}, rng, -1.0, 1.0);
        auto coords = detail::safe_coords(6, 4, 5, rng);
        auto w = probe({6, 3}, seed + 104);
        ParamList<double> leaves{{"grid", grid}, {"coords", coords}};
        rep.entries.push_back(fd_entry(
            "bilinear_sample", leaves, [&] { return wsum(bilinear_sample(grid, coords), w); }));
    }

    {
        auto grid = rand_tensor({2, 4, 4}, rng, -1.0, 1.0);
        // displacements of 0.1..0.4 cell widths keep warped positions clear of
        // the bilinear kinks at cell centers
        std::vector<double> fv(2 * 4 * 4);
        Rng fr(seed + 3);
        for (auto& f : fv) f = fr.uniform(0.05, 0.2) * (fr.coin() ? 1.0 : -1.0);
        auto flow = Tensor::from({2, 4, 4}, std::move(fv), true);
        auto w = probe({2, 4, 4}, seed + 105);
        ParamList<double> leaves{{"grid", grid}, {"flow", flow}};
        rep.entries.push_back(
            fd_entry("warp_grid", leaves, [&] { return wsum(warp_grid(grid, flow), w); }));
    }

    {
        Rng cr(seed + 4);
        auto layer = make_conv<double>(3, 2, cr);
        auto x = rand_tensor({3, 4, 5}, rng, -1.0, 1.0);
        ParamList<double> leaves{{"x", x}, {"conv.w", layer.weight}, {"conv.b", layer.bias}};
        auto w = probe({2, 4, 5}, seed + 106);
        rep.entries.push_back(
            fd_entry("conv3x3", leaves, [&] { return wsum(conv3x3(layer, x), w); }));
    }

    {
        EncoderConfig ec;
        ec.feat_channels = 4;
        ec.num_blocks = 1;
        Rng er(seed + 5);
        auto enc = EncoderT<double>::make(ec, er);
        auto x = rand_tensor({6, 5, 5}, rng, 0.0, 1.0);
        ParamList<double> leaves{{"x", x}};
        enc.collect_params("encoder.", leaves);
        auto w = probe({4, 5, 5}, seed + 107);
        rep.entries.push_back(
            fd_entry("encoder", leaves, [&] { return wsum(enc.forward(x), w); }));
    }

    {
        SpatialINRConfig sc;
        sc.grid_channels = 4;
        sc.out_channels = 4;
        sc.hidden = {6};
        Rng sr(seed + 6);
        auto field = SpatialINRT<double>::make(sc, sr);
        auto grid = rand_tensor({4, 4, 4}, rng, -1.0, 1.0);
        auto coords = detail::safe_coords(5, 4, 4, rng);
        ParamList<double> leaves{{"grid", grid}, {"coords", coords}};
        field.collect_params("spatial_inr.", leaves);
        auto w = probe({5, 4}, seed + 108);
        rep.entries.push_back(fd_entry(
            "spatial_inr", leaves, [&] { return wsum(field.query(grid, coords), w); }));
    }

    {
        TemporalINRConfig tc;
        tc.feat_channels = 4;
        tc.hidden = {6};
        Rng tr(seed + 7);
        auto field = TemporalINRT<double>::make(tc, tr);
        auto feat = rand_tensor({5, 4}, rng, -1.0, 1.0);
        ParamList<double> leaves{{"feat", feat}};
        field.collect_params("temporal_inr.", leaves);
        auto w = probe({5, 4}, seed + 109);
        rep.entries.push_back(fd_entry(
            "temporal_inr", leaves, [&] { return wsum(field.query(feat, 0.4), w); }));
    }

    {
        ModelConfig mc;
        mc.encoder.feat_channels = 4;
        mc.encoder.num_blocks = 1;
        mc.spatial_channels = 4;
        mc.spatial_hidden = {6};
        mc.temporal_hidden = {6};
        mc.decoder_hidden = {6};
        Rng mr(seed + 8);
        auto m = ModelT<double>::make(mc, mr);
        // shrink the motion head so warped queries stay clear of nearest-cell
        // boundaries
        for (auto& l : m.temporal.mlp.layers) {
            for (auto& v : l.weight.values()) v *= 0.02;
            for (auto& v : l.bias.values()) v *= 0.02;
        }
        Image i0(3, 5, 5), i1(3, 5, 5);
        Rng ir(seed + 9);
        for (auto& v : i0.data) v = ir.uniform();
        for (auto& v : i1.data) v = ir.uniform();
        const auto t0 = tensor_from_image(i0), t1 = tensor_from_image(i1);
        auto coords = detail::safe_coords(4, 5, 5, rng);
        coords.node()->requires_grad = false; // probe the parameters only
        ParamList<double> leaves = m.params();
        auto w = probe({4, 3}, seed + 110);
        rep.entries.push_back(fd_entry(
            "decode_rgb", leaves,
            [&] {
                auto grid = encode(m.encoder, i0, i1);
                return wsum(decode_rgb(m, grid, t0, t1, coords, 0.35), w);
            },
            1e-6)); // stacked sine layers: h=1e-5 truncation would mask real errors
    }

    return rep;
}

} // namespace ff
