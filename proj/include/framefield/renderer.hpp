#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "fields.hpp"
#include "geometry.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ff {

struct AblationFlags {
    bool use_flow = true;       // off: decode from the unwarped feature
    bool use_multiscale = true; // off: drop the encoder-grid and frame samples
    bool single_network = false; // on: one MLP maps (z*, delta, xt) straight to flows
};

struct ModelConfig {
    EncoderConfig encoder;         // encoder.feat_channels is C below
    int64_t spatial_channels = 64; // width of the continuous feature
    std::vector<int64_t> spatial_hidden = {64, 64, 256};
    std::vector<int64_t> temporal_hidden = {64, 64, 256};
    std::vector<int64_t> decoder_hidden = {64, 64, 256, 256};
    bool dual_flow = true;
    bool local_ensemble = false;
    bool cell_decode = false;
    AblationFlags flags;

    // Decoder input width per flag combination. Full mode: two warped
    // features, the bilinear encoder sample, and both frame samples. Without
    // flow the single unwarped feature stands in for the warped pair. The
    // single-network mode has no feature field, so warping applies to the
    // encoder grid and the input frames directly.
    int64_t decoder_in_dim() const {
        const int64_t C = encoder.feat_channels, Cs = spatial_channels;
        int64_t warped = 0;
        if (flags.use_flow)
            warped = flags.single_network ? 2 * C + 6 : 2 * Cs;
        else if (!flags.single_network)
            warped = Cs;
        const int64_t multiscale = flags.use_multiscale ? C + 6 : 0;
        const int64_t total = warped + multiscale;
        if (total <= 0)
            throw ConfigError("ModelConfig: flag combination leaves the decoder no inputs "
                              "(use_flow off, use_multiscale off, single_network on)");
        return total;
    }
};

// The full pipeline: encoder grid -> continuous feature field -> motion field
// -> decoder. Only the components a flag combination actually uses are built.
template <class T>
struct ModelT {
    ModelConfig cfg;
    EncoderT<T> encoder;
    SpatialINRT<T> spatial;
    TemporalINRT<T> temporal;
    MlpT<T> single_net; // (z*, delta, xt) -> flow pair when single_network
    MlpT<T> decoder;

    bool has_spatial() const { return !cfg.flags.single_network; }
    bool has_temporal() const { return cfg.flags.use_flow && !cfg.flags.single_network; }
    bool has_single_net() const { return cfg.flags.use_flow && cfg.flags.single_network; }

    static ModelT make(const ModelConfig& cfg, Rng& rng) {
        const int64_t want = cfg.decoder_in_dim(); // validates the flag combination
        ModelT m;
        m.cfg = cfg;
        m.encoder = EncoderT<T>::make(cfg.encoder, rng);
        if (!cfg.flags.single_network) {
            SpatialINRConfig sc;
            sc.grid_channels = cfg.encoder.feat_channels;
            sc.out_channels = cfg.spatial_channels;
            sc.hidden = cfg.spatial_hidden;
            sc.local_ensemble = cfg.local_ensemble;
            sc.cell_decode = cfg.cell_decode;
            m.spatial = SpatialINRT<T>::make(sc, rng);
        }
        if (m.has_temporal()) {
            TemporalINRConfig tc;
            tc.feat_channels = cfg.spatial_channels;
            tc.hidden = cfg.temporal_hidden;
            tc.dual_flow = cfg.dual_flow;
            m.temporal = TemporalINRT<T>::make(tc, rng);
        }
        if (m.has_single_net())
            m.single_net = MlpT<T>::make(cfg.encoder.feat_channels + 3, cfg.temporal_hidden,
                                         cfg.dual_flow ? 4 : 2, rng);
        m.decoder = MlpT<T>::make(want, cfg.decoder_hidden, 3, rng);
        if (m.decoder.in_dim() != want)
            throw ConfigError("ModelT: decoder in_dim " + std::to_string(m.decoder.in_dim()) +
                              " does not match the flag-derived width " + std::to_string(want));
        return m;
    }

    TensorT<T> encode(const ImageT<T>& i0, const ImageT<T>& i1) const {
        return ff::encode(encoder, i0, i1);
    }

    ParamList<T> params() const {
        ParamList<T> out;
        encoder.collect_params("encoder.", out);
        if (has_spatial()) spatial.collect_params("spatial_inr.", out);
        if (has_temporal()) temporal.collect_params("temporal_inr.", out);
        if (has_single_net()) collect_mlp_params(single_net, "temporal_inr.", out);
        collect_mlp_params(decoder, "decoder.", out);
        return out;
    }
};

namespace detail {

template <class T>
TensorT<T> time_column(int64_t rows, T xt) {
    return TensorT<T>::full({rows, 1}, xt);
}

// motion flows at a coordinate batch: [B, 4] (or [B, 2] single-flow)
template <class T>
TensorT<T> flows_at(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& coords,
                    const TensorT<T>& xt_col) {
    if (m.has_single_net()) {
        auto z = gather_nearest(grid, coords);
        auto d = nearest_delta(coords, grid.dim(1), grid.dim(2));
        return m.single_net.forward(concat_cols(std::vector<TensorT<T>>{z, d, xt_col}));
    }
    if (!m.has_temporal()) throw UsageError("flows_at: model carries no motion field");
    return m.temporal.query(m.spatial.query(grid, coords), xt_col);
}

} // namespace detail

// Warp-and-fetch feature for a batch of queries: the feature at each
// coordinate's two motion targets, concatenated. The motion comes from the
// feature at the unwarped coordinate.
template <class T>
TensorT<T> spacetime_feature(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& coords,
                             const TensorT<T>& xt_col) {
    if (!m.has_temporal()) throw UsageError("spacetime_feature: needs the dual-field model form");
    auto pair = split_flows(detail::flows_at(m, grid, coords, xt_col));
    auto f0 = m.spatial.query(grid, add(coords, pair.flow0));
    auto f1 = m.spatial.query(grid, add(coords, pair.flow1));
    return concat_cols(std::vector<TensorT<T>>{f0, f1});
}

template <class T>
TensorT<T> spacetime_feature(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& coords,
                             T xt) {
    return spacetime_feature(m, grid, coords, detail::time_column<T>(coords.dim(0), xt));
}

// RGB at arbitrary space-time coordinates, the reference per-query path.
// Output is unclamped; clamping happens at image emission only. I0/I1 are
// [3,h,w] tensors of the two input frames. flows_override, when given,
// replaces the motion network's output (shape [B,4] or [B,2]).
template <class T>
TensorT<T> decode_rgb(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& i0,
                      const TensorT<T>& i1, const TensorT<T>& coords, const TensorT<T>& xt_col,
                      const TensorT<T>* flows_override = nullptr) {
    const auto& fl = m.cfg.flags;
    std::vector<TensorT<T>> parts;
    if (fl.use_flow) {
        auto pair = split_flows(flows_override ? *flows_override
                                               : detail::flows_at(m, grid, coords, xt_col));
        auto c0 = add(coords, pair.flow0);
        auto c1 = add(coords, pair.flow1);
        if (fl.single_network) {
            parts.push_back(bilinear_sample(grid, c0));
            parts.push_back(bilinear_sample(grid, c1));
            parts.push_back(bilinear_sample(i0, c0));
            parts.push_back(bilinear_sample(i1, c1));
        } else {
            parts.push_back(m.spatial.query(grid, c0));
            parts.push_back(m.spatial.query(grid, c1));
        }
    } else if (!fl.single_network) {
        parts.push_back(m.spatial.query(grid, coords));
    }
    if (fl.use_multiscale) {
        parts.push_back(bilinear_sample(grid, coords));
        parts.push_back(bilinear_sample(i0, coords));
        parts.push_back(bilinear_sample(i1, coords));
    }
    auto in = concat_cols(parts);
    if (in.dim(1) != m.decoder.in_dim())
        throw ConfigError("decode_rgb: assembled " + std::to_string(in.dim(1)) +
                          " feature columns for a decoder expecting " +
                          std::to_string(m.decoder.in_dim()));
    return m.decoder.forward(in);
}

template <class T>
TensorT<T> decode_rgb(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& i0,
                      const TensorT<T>& i1, const TensorT<T>& coords, T xt,
                      const TensorT<T>* flows_override = nullptr) {
    return decode_rgb(m, grid, i0, i1, coords, detail::time_column<T>(coords.dim(0), xt),
                      flows_override);
}

namespace detail {

// Shared whole-frame machinery: decode the lattice cells (ys x xs) of an
// H_out x W_out output. The feature field is materialized once at full output
// resolution and warped by sampling, so any cell subset reproduces the exact
// values of the full render.
template <class T>
TensorT<T> synthesize_cells(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& i0,
                            const TensorT<T>& i1, int64_t h_out, int64_t w_out,
                            const std::vector<T>& ys, const std::vector<T>& xs, T xt) {
    const auto& fl = m.cfg.flags;
    const int64_t B = static_cast<int64_t>(ys.size() * xs.size());
    std::vector<T> cv(static_cast<size_t>(B * 2));
    for (size_t i = 0; i < ys.size(); ++i)
        for (size_t j = 0; j < xs.size(); ++j) {
            cv[(i * xs.size() + j) * 2] = ys[i];
            cv[(i * xs.size() + j) * 2 + 1] = xs[j];
        }
    auto coords = TensorT<T>::from({B, 2}, std::move(cv));
    const T cell_h = T(2) / static_cast<T>(h_out), cell_w = T(2) / static_cast<T>(w_out);

    std::vector<TensorT<T>> parts;
    if (fl.use_flow) {
        auto xt_col = time_column<T>(B, xt);
        TensorT<T> flows;
        TensorT<T> S; // materialized feature at full output resolution
        if (fl.single_network) {
            auto z = gather_nearest(grid, coords);
            auto d = nearest_delta(coords, grid.dim(1), grid.dim(2));
            flows = m.single_net.forward(concat_cols(std::vector<TensorT<T>>{z, d, xt_col}));
        } else {
            S = m.spatial.materialize(grid, h_out, w_out);
            flows = m.temporal.query(m.spatial.query(grid, coords, cell_h, cell_w), xt_col);
        }
        auto pair = split_flows(flows);
        auto c0 = add(coords, pair.flow0);
        auto c1 = add(coords, pair.flow1);
        if (fl.single_network) {
            parts.push_back(bilinear_sample(grid, c0));
            parts.push_back(bilinear_sample(grid, c1));
            parts.push_back(bilinear_sample(i0, c0));
            parts.push_back(bilinear_sample(i1, c1));
        } else {
            parts.push_back(bilinear_sample(S, c0));
            parts.push_back(bilinear_sample(S, c1));
        }
    } else if (!fl.single_network) {
        parts.push_back(m.spatial.query(grid, coords, cell_h, cell_w));
    }
    if (fl.use_multiscale) {
        parts.push_back(bilinear_sample(grid, coords));
        parts.push_back(bilinear_sample(i0, coords));
        parts.push_back(bilinear_sample(i1, coords));
    }
    auto in = concat_cols(parts);
    if (in.dim(1) != m.decoder.in_dim())
        throw ConfigError("synthesize: assembled " + std::to_string(in.dim(1)) +
                          " feature columns for a decoder expecting " +
                          std::to_string(m.decoder.in_dim()));
    return m.decoder.forward(in); // [B, 3]
}

} // namespace detail

// Whole frame at a target resolution: materialize the feature field on the
// output lattice, move it by the materialized motion, decode every cell in
// one batch. Returns an unclamped [3, H_out, W_out] tensor.
template <class T>
TensorT<T> synthesize_frame(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& i0,
                            const TensorT<T>& i1, int64_t h_out, int64_t w_out, T xt) {
    if (h_out < 1 || w_out < 1) throw UsageError("synthesize_frame: output dims must be positive");
    std::vector<T> ys(static_cast<size_t>(h_out)), xs(static_cast<size_t>(w_out));
    for (int64_t i = 0; i < h_out; ++i) ys[static_cast<size_t>(i)] = static_cast<T>(normalize_index(i, h_out));
    for (int64_t j = 0; j < w_out; ++j) xs[static_cast<size_t>(j)] = static_cast<T>(normalize_index(j, w_out));
    auto rows = detail::synthesize_cells(m, grid, i0, i1, h_out, w_out, ys, xs, xt);
    return rows_to_grid(rows, h_out, w_out);
}

struct RenderRequest {
    double space_scale = 1.0;        // output dims = round(input dims * scale)
    std::vector<double> times;       // ascending, in [0,1] unless allow_extrapolation
    bool has_region = false;         // optional window in normalized coordinates
    double region_y0 = -1.0, region_x0 = -1.0; // inclusive lower corner
    double region_y1 = 1.0, region_x1 = 1.0;   // exclusive upper corner
    bool allow_extrapolation = false;
};

inline void validate_request(const RenderRequest& req) {
    if (req.times.empty()) throw UsageError("render request: no times given");
    if (!(req.space_scale >= 1.0))
        throw UsageError("render request: space_scale must be >= 1, got " + std::to_string(req.space_scale));
    for (size_t i = 0; i < req.times.size(); ++i) {
        if (!std::isfinite(req.times[i])) throw UsageError("render request: non-finite time");
        if (i > 0 && req.times[i] < req.times[i - 1])
            throw UsageError("render request: times must ascend");
        if (!req.allow_extrapolation && (req.times[i] < 0.0 || req.times[i] > 1.0))
            throw UsageError("render request: time " + std::to_string(req.times[i]) +
                             " outside [0,1] (extrapolation requires the explicit unsafe flag)");
    }
    if (req.has_region && !(req.region_y1 > req.region_y0 && req.region_x1 > req.region_x0))
        throw UsageError("render request: region must have positive extent");
}

// clamp to [0,1] and convert: the image emission step
template <class T>
ImageT<T> emit_image(const TensorT<T>& frame) {
    auto img = image_from_tensor(frame);
    for (auto& v : img.data) v = std::clamp(v, T(0), T(1));
    return img;
}

template <class T>
std::vector<ImageT<T>> render_video(const ModelT<T>& m, const TensorT<T>& grid, const TensorT<T>& i0,
                                    const TensorT<T>& i1, const RenderRequest& req) {
    validate_request(req);
    const int64_t h_in = grid.dim(1), w_in = grid.dim(2);
    const int64_t h_out = std::llround(static_cast<double>(h_in) * req.space_scale);
    const int64_t w_out = std::llround(static_cast<double>(w_in) * req.space_scale);

    // region restriction keeps the full-frame lattice and drops cells whose
    // centers fall outside [lo, hi), so a region render is a crop of the full
    // render over identical queries
    std::vector<T> ys, xs;
    for (int64_t i = 0; i < h_out; ++i) {
        const double y = normalize_index(i, h_out);
        if (!req.has_region || (y >= req.region_y0 && y < req.region_y1)) ys.push_back(static_cast<T>(y));
    }
    for (int64_t j = 0; j < w_out; ++j) {
        const double x = normalize_index(j, w_out);
        if (!req.has_region || (x >= req.region_x0 && x < req.region_x1)) xs.push_back(static_cast<T>(x));
    }
    if (ys.empty() || xs.empty()) throw UsageError("render request: region contains no output cells");

    std::vector<ImageT<T>> frames;
    frames.reserve(req.times.size());
    for (double t : req.times) {
        auto rows = detail::synthesize_cells(m, grid, i0, i1, h_out, w_out, ys, xs, static_cast<T>(t));
        frames.push_back(emit_image(rows_to_grid(rows, static_cast<int64_t>(ys.size()),
                                                 static_cast<int64_t>(xs.size()))));
    }
    return frames;
}

// frame_0007_t0.3333.png
inline std::string frame_filename(int64_t index, double time, const std::string& ext = "png") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "frame_%04lld_t%.4f.", static_cast<long long>(index), time);
    return std::string(buf) + ext;
}

} // namespace ff
