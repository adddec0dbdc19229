#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ff {

// [h*w, C] row batch -> [C, h, w] grid, and back
template <class T>
TensorT<T> rows_to_grid(const TensorT<T>& rows, int64_t h, int64_t w) {
    if (rows.ndim() != 2 || rows.dim(0) != h * w)
        throw ShapeError("rows_to_grid: need [" + std::to_string(h * w) + ",C], got " +
                         detail::shape_str(rows.shape()));
    return reshape(transpose2d(rows), {rows.dim(1), h, w});
}

template <class T>
TensorT<T> grid_to_rows(const TensorT<T>& grid) {
    if (grid.ndim() != 3)
        throw ShapeError("grid_to_rows: need [C,H,W], got " + detail::shape_str(grid.shape()));
    return transpose2d(reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}));
}

struct SpatialINRConfig {
    int64_t grid_channels = 64; // encoder feature channels
    int64_t out_channels = 64;  // width of the continuous feature
    std::vector<int64_t> hidden = {64, 64, 256};
    // optional lookup variants, both off so the plain nearest-cell form is the
    // tested default
    bool local_ensemble = false;
    bool cell_decode = false;

    int64_t in_dim() const { return grid_channels + 2 + (cell_decode ? 2 : 0); }
};

// Continuous feature field over a discrete grid: a query snaps to its nearest
// cell and feeds (cell feature, scaled offset from the cell center) through a
// sine MLP. Values are differentiable w.r.t. grid and parameters everywhere,
// and w.r.t. the query coordinates almost everywhere (the offset channel
// carries the coordinate gradient; the cell choice is piecewise constant, so
// crossing a cell boundary is a jump).
template <class T>
struct SpatialINRT {
    SpatialINRConfig cfg;
    MlpT<T> mlp;

    static SpatialINRT make(const SpatialINRConfig& cfg, Rng& rng) {
        if (cfg.grid_channels < 1 || cfg.out_channels < 1)
            throw ConfigError("SpatialINR: channel counts must be positive");
        SpatialINRT s;
        s.cfg = cfg;
        s.mlp = MlpT<T>::make(cfg.in_dim(), cfg.hidden, cfg.out_channels, rng);
        return s;
    }

    // cell_h/cell_w condition the MLP on the query pixel footprint when
    // cell_decode is on; zero means "use the grid's own cell size"
    TensorT<T> query(const TensorT<T>& grid, const TensorT<T>& coords, T cell_h = T(0),
                     T cell_w = T(0)) const {
        if (grid.ndim() != 3 || grid.dim(0) != cfg.grid_channels)
            throw ShapeError("SpatialINR::query: grid " + detail::shape_str(grid.shape()) +
                             " does not carry " + std::to_string(cfg.grid_channels) + " channels");
        if (cfg.local_ensemble) return query_ensemble(grid, coords, cell_h, cell_w);
        auto z = gather_nearest(grid, coords);
        auto d = nearest_delta(coords, grid.dim(1), grid.dim(2));
        return head(z, d, grid, coords.dim(0), cell_h, cell_w);
    }

    TensorT<T> materialize(const TensorT<T>& grid, int64_t h_out, int64_t w_out) const {
        if (h_out < 1 || w_out < 1)
            throw UsageError("SpatialINR::materialize: output dims must be positive");
        auto rows = query(grid, lattice_coords<T>(h_out, w_out), T(2) / static_cast<T>(h_out),
                          T(2) / static_cast<T>(w_out));
        return rows_to_grid(rows, h_out, w_out);
    }

    void collect_params(const std::string& prefix, ParamList<T>& out) const {
        collect_mlp_params(mlp, prefix, out);
    }

  private:
    TensorT<T> head(const TensorT<T>& z, const TensorT<T>& d, const TensorT<T>& grid, int64_t B,
                    T cell_h, T cell_w) const {
        std::vector<TensorT<T>> parts = {z, d};
        if (cfg.cell_decode) {
            if (cell_h == T(0)) cell_h = T(2) / static_cast<T>(grid.dim(1));
            if (cell_w == T(0)) cell_w = T(2) / static_cast<T>(grid.dim(2));
            std::vector<T> cv(static_cast<size_t>(B * 2));
            for (int64_t r = 0; r < B; ++r) {
                cv[static_cast<size_t>(r * 2)] = cell_h;
                cv[static_cast<size_t>(r * 2 + 1)] = cell_w;
            }
            parts.push_back(TensorT<T>::from({B, 2}, std::move(cv)));
        }
        return mlp.forward(concat_cols(parts));
    }

    // Average the four cells around the query, weighted by bilinear overlap.
    // Weights are computed from forward coordinate values only; gradients
    // still flow through each branch's feature and offset.
    TensorT<T> query_ensemble(const TensorT<T>& grid, const TensorT<T>& coords, T cell_h,
                              T cell_w) const {
        const int64_t H = grid.dim(1), W = grid.dim(2), B = coords.dim(0);
        const T oy[2] = {T(-1) / static_cast<T>(H), T(1) / static_cast<T>(H)};
        const T ox[2] = {T(-1) / static_cast<T>(W), T(1) / static_cast<T>(W)};

        std::vector<TensorT<T>> branch(4);
        std::vector<std::vector<T>> weight(4, std::vector<T>(static_cast<size_t>(B)));
        const auto& cv = coords.values();
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                const int k = a * 2 + b;
                std::vector<T> off(static_cast<size_t>(B * 2));
                for (int64_t r = 0; r < B; ++r) {
                    off[static_cast<size_t>(r * 2)] = oy[a];
                    off[static_cast<size_t>(r * 2 + 1)] = ox[b];
                }
                auto shifted = add(coords, TensorT<T>::from({B, 2}, off));
                auto z = gather_nearest(grid, shifted);
                // offset measured from the branch cell's center back to the
                // original query: undo the half-cell shift in delta units
                std::vector<T> corr(static_cast<size_t>(B * 2));
                for (int64_t r = 0; r < B; ++r) {
                    corr[static_cast<size_t>(r * 2)] = T(0.5) * (a == 0 ? T(-1) : T(1));
                    corr[static_cast<size_t>(r * 2 + 1)] = T(0.5) * (b == 0 ? T(-1) : T(1));
                }
                auto d = sub(nearest_delta(shifted, H, W), TensorT<T>::from({B, 2}, corr));
                branch[static_cast<size_t>(k)] = head(z, d, grid, B, cell_h, cell_w);

                const auto& sv = shifted.values();
                for (int64_t r = 0; r < B; ++r) {
                    const double qy = std::clamp(static_cast<double>(cv[static_cast<size_t>(r * 2)]), -1.0, 1.0);
                    const double qx = std::clamp(static_cast<double>(cv[static_cast<size_t>(r * 2 + 1)]), -1.0, 1.0);
                    const double uy = (qy + 1.0) * 0.5 * static_cast<double>(H) - 0.5;
                    const double ux = (qx + 1.0) * 0.5 * static_cast<double>(W) - 0.5;
                    const int64_t iy =
                        nearest_index(std::clamp(static_cast<double>(sv[static_cast<size_t>(r * 2)]), -1.0, 1.0), H);
                    const int64_t ix = nearest_index(
                        std::clamp(static_cast<double>(sv[static_cast<size_t>(r * 2 + 1)]), -1.0, 1.0), W);
                    const double wy = std::max(0.0, 1.0 - std::fabs(uy - static_cast<double>(iy)));
                    const double wx = std::max(0.0, 1.0 - std::fabs(ux - static_cast<double>(ix)));
                    weight[static_cast<size_t>(k)][static_cast<size_t>(r)] = static_cast<T>(wy * wx);
                }
            }

        const int64_t C = cfg.out_channels;
        TensorT<T> acc;
        for (int k = 0; k < 4; ++k) {
            std::vector<T> wv(static_cast<size_t>(B * C));
            for (int64_t r = 0; r < B; ++r) {
                double s = 0.0;
                for (int kk = 0; kk < 4; ++kk) s += static_cast<double>(weight[static_cast<size_t>(kk)][static_cast<size_t>(r)]);
                const T wn = s > 0.0 ? static_cast<T>(static_cast<double>(weight[static_cast<size_t>(k)][static_cast<size_t>(r)]) / s)
                                     : T(0.25);
                for (int64_t c = 0; c < C; ++c) wv[static_cast<size_t>(r * C + c)] = wn;
            }
            auto term = mul(branch[static_cast<size_t>(k)], TensorT<T>::from({B, C}, std::move(wv)));
            acc = (k == 0) ? term : add(acc, term);
        }
        return acc;
    }
};

struct TemporalINRConfig {
    int64_t feat_channels = 64; // width of the spatial feature it consumes
    std::vector<int64_t> hidden = {64, 64, 256};
    bool dual_flow = true; // two flows (4 outputs); the ablation emits one (2)

    int64_t in_dim() const { return feat_channels + 1; }
    int64_t out_dim() const { return dual_flow ? 4 : 2; }
    int64_t num_flows() const { return dual_flow ? 2 : 1; }
};

template <class T>
struct FlowPairT {
    TensorT<T> flow0, flow1; // each [B, 2] in normalized coordinate units
};

// Continuous motion field: (spatial feature, time) -> motion flows through a
// sine MLP. Time is fed raw; the sine layers supply frequency content.
template <class T>
struct TemporalINRT {
    TemporalINRConfig cfg;
    MlpT<T> mlp;

    static TemporalINRT make(const TemporalINRConfig& cfg, Rng& rng) {
        if (cfg.feat_channels < 1) throw ConfigError("TemporalINR: feat_channels must be positive");
        TemporalINRT t;
        t.cfg = cfg;
        t.mlp = MlpT<T>::make(cfg.in_dim(), cfg.hidden, cfg.out_dim(), rng);
        // the stock head init emits O(1) flows, a full frame of motion, which
        // parks every warped query against the sampler's border clamp where
        // the coordinate gradient is zero and training cannot pull the motion
        // back. Start close to the identity warp instead and let the
        // reconstruction loss grow the field.
        auto& head = t.mlp.layers.back();
        for (auto& v : head.weight.values()) v *= T(0.01);
        for (auto& v : head.bias.values()) v *= T(0.01);
        return t;
    }

    TensorT<T> query(const TensorT<T>& feat, const TensorT<T>& xt_col) const {
        if (feat.ndim() != 2 || feat.dim(1) != cfg.feat_channels)
            throw ShapeError("TemporalINR::query: features " + detail::shape_str(feat.shape()) +
                             " do not carry " + std::to_string(cfg.feat_channels) + " channels");
        if (xt_col.ndim() != 2 || xt_col.dim(0) != feat.dim(0) || xt_col.dim(1) != 1)
            throw ShapeError("TemporalINR::query: time column must be [" + std::to_string(feat.dim(0)) +
                             ",1], got " + detail::shape_str(xt_col.shape()));
        return mlp.forward(concat_cols(std::vector<TensorT<T>>{feat, xt_col}));
    }

    TensorT<T> query(const TensorT<T>& feat, T xt) const {
        return query(feat, TensorT<T>::full({feat.dim(0), 1}, xt));
    }

    TensorT<T> materialize(const TensorT<T>& spatial_grid, T xt) const {
        if (spatial_grid.ndim() != 3)
            throw ShapeError("TemporalINR::materialize: need [C,H,W], got " +
                             detail::shape_str(spatial_grid.shape()));
        auto rows = query(grid_to_rows(spatial_grid), xt);
        return rows_to_grid(rows, spatial_grid.dim(1), spatial_grid.dim(2));
    }

    void collect_params(const std::string& prefix, ParamList<T>& out) const {
        collect_mlp_params(mlp, prefix, out);
    }
};

// [B, 4] -> two [B, 2] flows; a single-flow field serves both warp directions
template <class T>
FlowPairT<T> split_flows(const TensorT<T>& out) {
    if (out.ndim() != 2 || (out.dim(1) != 2 && out.dim(1) != 4))
        throw ShapeError("split_flows: need [B,2] or [B,4], got " + detail::shape_str(out.shape()));
    if (out.dim(1) == 2) return {out, out};
    return {slice_cols(out, 0, 2), slice_cols(out, 2, 4)};
}

} // namespace ff
