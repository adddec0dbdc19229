#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ff {

namespace detail {

// gather between a [Cin,H,W] grid and the 3x3 patch-column matrix
// cols[(ci*9 + ky*3 + kx), (i*w + j)], zero outside the border
template <class T>
void im2col3(const T* x, int64_t cin, int64_t h, int64_t w, T* cols) {
    const int64_t hw = h * w;
    for (int64_t ci = 0; ci < cin; ++ci)
        for (int64_t ky = 0; ky < 3; ++ky)
            for (int64_t kx = 0; kx < 3; ++kx) {
                T* dst = cols + (ci * 9 + ky * 3 + kx) * hw;
                for (int64_t i = 0; i < h; ++i) {
                    const int64_t si = i + ky - 1;
                    if (si < 0 || si >= h) {
                        for (int64_t j = 0; j < w; ++j) dst[i * w + j] = T(0);
                        continue;
                    }
                    const T* src = x + (ci * h + si) * w;
                    for (int64_t j = 0; j < w; ++j) {
                        const int64_t sj = j + kx - 1;
                        dst[i * w + j] = (sj < 0 || sj >= w) ? T(0) : src[sj];
                    }
                }
            }
}

// transpose of im2col3: accumulate patch-column gradients back into the grid
template <class T>
void col2im3_add(const T* cols, int64_t cin, int64_t h, int64_t w, T* x) {
    const int64_t hw = h * w;
    for (int64_t ci = 0; ci < cin; ++ci)
        for (int64_t ky = 0; ky < 3; ++ky)
            for (int64_t kx = 0; kx < 3; ++kx) {
                const T* src = cols + (ci * 9 + ky * 3 + kx) * hw;
                for (int64_t i = 0; i < h; ++i) {
                    const int64_t si = i + ky - 1;
                    if (si < 0 || si >= h) continue;
                    T* dst = x + (ci * h + si) * w;
                    for (int64_t j = 0; j < w; ++j) {
                        const int64_t sj = j + kx - 1;
                        if (sj >= 0 && sj < w) dst[sj] += src[i * w + j];
                    }
                }
            }
}

} // namespace detail

template <class T>
struct ConvLayerT {
    TensorT<T> weight; // [Cout, Cin, 3, 3]
    TensorT<T> bias;   // [Cout]

    int64_t in_channels() const { return weight.dim(1); }
    int64_t out_channels() const { return weight.dim(0); }
};

template <class T>
ConvLayerT<T> make_conv(int64_t cin, int64_t cout, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    std::vector<T> w(static_cast<size_t>(cout * cin * 9));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    ConvLayerT<T> layer;
    layer.weight = TensorT<T>::from({cout, cin, 3, 3}, std::move(w), true);
    layer.bias = TensorT<T>::zeros({cout}, true);
    return layer;
}

// 3x3 stride-1 convolution, zero-padded one pixel on each side so spatial
// dims are preserved. Fused forward (im2col + one matmul); the backward pass
// rebuilds the patch matrix instead of caching it.
template <class T>
TensorT<T> conv3x3(const ConvLayerT<T>& layer, const TensorT<T>& x) {
    if (x.ndim() != 3 || x.dim(0) != layer.in_channels())
        throw ShapeError("conv3x3: input " + detail::shape_str(x.shape()) + " vs weight " +
                         detail::shape_str(layer.weight.shape()));
    const int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t cout = layer.out_channels(), K = cin * 9, hw = h * w;

    auto out = detail::make_op<T>({cout, h, w}, {x.node(), layer.weight.node(), layer.bias.node()},
                                  +[](detail::Node<T>& n) {
        auto& xin = *n.inputs[0];
        auto& win = *n.inputs[1];
        auto& bin = *n.inputs[2];
        const int64_t cin = xin.shape[0], h = xin.shape[1], w = xin.shape[2];
        const int64_t cout = win.shape[0], K = cin * 9, hw = h * w;
        if (bin.requires_grad) {
            auto& db = detail::grad_buf(bin);
            for (int64_t o = 0; o < cout; ++o) {
                T s = 0;
                for (int64_t k = 0; k < hw; ++k) s += n.grad[static_cast<size_t>(o * hw + k)];
                db[static_cast<size_t>(o)] += s;
            }
        }
        if (win.requires_grad) {
            std::vector<T> cols(static_cast<size_t>(K * hw));
            detail::im2col3(xin.val.data(), cin, h, w, cols.data());
            std::vector<T> dw(static_cast<size_t>(cout * K));
            kern::matmul_nt(n.grad.data(), cols.data(), dw.data(), cout, hw, K);
            detail::accum_grad(win, dw.data());
        }
        if (xin.requires_grad) {
            std::vector<T> dcols(static_cast<size_t>(K * hw));
            kern::matmul_tn(win.val.data(), n.grad.data(), dcols.data(), K, cout, hw);
            detail::col2im3_add(dcols.data(), cin, h, w, detail::grad_buf(xin).data());
        }
    });

    std::vector<T> cols(static_cast<size_t>(K * hw));
    detail::im2col3(x.values().data(), cin, h, w, cols.data());
    kern::matmul_nn(layer.weight.values().data(), cols.data(), out.values().data(), cout, K, hw);
    auto& y = out.values();
    const auto& b = layer.bias.values();
    for (int64_t o = 0; o < cout; ++o)
        for (int64_t k = 0; k < hw; ++k) y[static_cast<size_t>(o * hw + k)] += b[static_cast<size_t>(o)];
    return out;
}

struct EncoderConfig {
    int64_t in_channels = 6; // two stacked RGB frames
    int64_t feat_channels = 64;
    int64_t num_blocks = 4;
    static constexpr int64_t kernel_size = 3;
};

// Resolution-preserving residual CNN: conv 6->C, num_blocks blocks of
// (conv-ReLU-conv plus skip), conv C->C.
template <class T>
struct EncoderT {
    EncoderConfig cfg;
    ConvLayerT<T> conv_in;
    std::vector<ConvLayerT<T>> block_conv1, block_conv2;
    ConvLayerT<T> conv_out;

    static EncoderT make(const EncoderConfig& cfg, Rng& rng) {
        if (cfg.feat_channels < 1 || cfg.num_blocks < 1 || cfg.in_channels < 1)
            throw ConfigError("Encoder: channels and blocks must be positive");
        EncoderT e;
        e.cfg = cfg;
        e.conv_in = make_conv<T>(cfg.in_channels, cfg.feat_channels, rng);
        for (int64_t b = 0; b < cfg.num_blocks; ++b) {
            e.block_conv1.push_back(make_conv<T>(cfg.feat_channels, cfg.feat_channels, rng));
            e.block_conv2.push_back(make_conv<T>(cfg.feat_channels, cfg.feat_channels, rng));
        }
        e.conv_out = make_conv<T>(cfg.feat_channels, cfg.feat_channels, rng);
        return e;
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        auto h = conv3x3(conv_in, x);
        for (size_t b = 0; b < block_conv1.size(); ++b)
            h = add(h, conv3x3(block_conv2[b], relu(conv3x3(block_conv1[b], h))));
        return conv3x3(conv_out, h);
    }

    void collect_params(const std::string& prefix, ParamList<T>& out) const {
        auto push = [&](const std::string& name, const ConvLayerT<T>& c) {
            out.push_back({prefix + name + ".w", c.weight});
            out.push_back({prefix + name + ".b", c.bias});
        };
        push("conv_in", conv_in);
        for (size_t b = 0; b < block_conv1.size(); ++b) {
            push("block" + std::to_string(b) + ".conv1", block_conv1[b]);
            push("block" + std::to_string(b) + ".conv2", block_conv2[b]);
        }
        push("conv_out", conv_out);
    }
};

// Stack two equally sized frames into the encoder's 6-channel input tensor.
template <class T>
TensorT<T> encoder_input(const ImageT<T>& i0, const ImageT<T>& i1) {
    if (i0.channels != 3 || i1.channels != 3 || i0.height != i1.height || i0.width != i1.width)
        throw DataError("encoder_input: frames must be 3-channel with matching dims, got [" +
                        std::to_string(i0.channels) + "," + std::to_string(i0.height) + "," +
                        std::to_string(i0.width) + "] and [" + std::to_string(i1.channels) + "," +
                        std::to_string(i1.height) + "," + std::to_string(i1.width) + "]");
    std::vector<T> v;
    v.reserve(static_cast<size_t>(6 * i0.height * i0.width));
    v.insert(v.end(), i0.data.begin(), i0.data.end());
    v.insert(v.end(), i1.data.begin(), i1.data.end());
    return TensorT<T>::from({6, i0.height, i0.width}, std::move(v));
}

template <class T>
TensorT<T> encode(const EncoderT<T>& enc, const ImageT<T>& i0, const ImageT<T>& i1) {
    return enc.forward(encoder_input(i0, i1));
}

} // namespace ff
