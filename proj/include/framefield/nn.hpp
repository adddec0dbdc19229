#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace ff {

enum class Activation { none, sine };

template <class T = double>
struct DenseLayerT {
    TensorT<T> weight; // [out, in]
    TensorT<T> bias;   // [out]
    Activation act = Activation::none;
    T frequency = T(1);

    int64_t in_dim() const { return weight.dim(1); }
    int64_t out_dim() const { return weight.dim(0); }
};

// Sine-network init: first layer U(-1/in, 1/in) driven at frequency 30;
// deeper layers U(-sqrt(6/in), sqrt(6/in)) at frequency 1, which is the
// standard scheme with the frequency factor folded into the weights. Biases
// use the same bound as their layer's weights.
template <class T>
DenseLayerT<T> make_dense(int64_t in, int64_t out, Activation act, bool is_first, Rng& rng) {
    const double bound = is_first ? 1.0 / static_cast<double>(in) : std::sqrt(6.0 / static_cast<double>(in));
    std::vector<T> w(static_cast<size_t>(in * out)), b(static_cast<size_t>(out));
    for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& x : b) x = static_cast<T>(rng.uniform(-bound, bound));
    DenseLayerT<T> l;
    l.weight = TensorT<T>::from({out, in}, std::move(w), true);
    l.bias = TensorT<T>::from({out}, std::move(b), true);
    l.act = act;
    l.frequency = (act == Activation::sine && is_first) ? T(30) : T(1);
    return l;
}

// y = act(frequency * (x W^T + b)), fused into one graph node. The sine path
// caches cos of the preactivation for backward.
template <class T>
TensorT<T> dense_forward(const DenseLayerT<T>& layer, const TensorT<T>& x) {
    if (x.ndim() != 2 || x.dim(1) != layer.in_dim())
        throw ShapeError("dense_forward: input " + detail::shape_str(x.shape()) + " vs weight " +
                         detail::shape_str(layer.weight.shape()));
    const int64_t B = x.dim(0), in = layer.in_dim(), out = layer.out_dim();
    const bool sine = layer.act == Activation::sine;

    auto node = detail::make_op<T>({B, out}, {x.node(), layer.weight.node(), layer.bias.node()},
                                   +[](detail::Node<T>& n) {
        auto& xin = *n.inputs[0];
        auto& win = *n.inputs[1];
        auto& bin = *n.inputs[2];
        const int64_t B = n.shape[0], out = n.shape[1], in = win.shape[1];
        const bool sine = n.isaved[0] != 0;
        const T freq = n.saved.back();
        const size_t m = static_cast<size_t>(B * out);

        // gz = dL/d(x W^T + b)
        std::vector<T> gz(m);
        if (sine) {
            const T fault = detail::corrupt_sine_backward ? T(1.01) : T(1);
            for (size_t i = 0; i < m; ++i) gz[i] = n.grad[i] * freq * fault * n.saved[i];
        } else {
            for (size_t i = 0; i < m; ++i) gz[i] = n.grad[i] * freq;
        }

        if (xin.requires_grad) {
            std::vector<T> dx(static_cast<size_t>(B * in));
            kern::matmul_nn(gz.data(), win.val.data(), dx.data(), B, out, in);
            detail::accum_grad(xin, dx.data());
        }
        if (win.requires_grad) {
            std::vector<T> dw(static_cast<size_t>(out * in));
            kern::matmul_tn(gz.data(), xin.val.data(), dw.data(), out, B, in);
            detail::accum_grad(win, dw.data());
        }
        if (bin.requires_grad) {
            auto& gb = detail::grad_buf(bin);
            for (int64_t r = 0; r < B; ++r)
                for (int64_t o = 0; o < out; ++o) gb[static_cast<size_t>(o)] += gz[static_cast<size_t>(r * out + o)];
        }
    });

    // z = freq * (x W^T + b)
    std::vector<T> wt(static_cast<size_t>(in * out));
    const auto& wv = layer.weight.values();
    for (int64_t o = 0; o < out; ++o)
        for (int64_t k = 0; k < in; ++k) wt[static_cast<size_t>(k * out + o)] = wv[static_cast<size_t>(o * in + k)];
    auto& y = node.values();
    kern::matmul_nn(x.values().data(), wt.data(), y.data(), B, in, out);
    const auto& bv = layer.bias.values();
    const T freq = layer.frequency;
    for (int64_t r = 0; r < B; ++r)
        for (int64_t o = 0; o < out; ++o) {
            auto i = static_cast<size_t>(r * out + o);
            y[i] = freq * (y[i] + bv[static_cast<size_t>(o)]);
        }

    const bool rg = node.requires_grad();
    if (sine) {
        const size_t m = static_cast<size_t>(B * out);
        std::vector<T> c(m);
        std::vector<T> z = y;
        kern::sincos_batch(z.data(), y.data(), c.data(), m);
        if (rg) node.node()->saved = std::move(c);
    }
    if (rg) {
        node.node()->saved.push_back(freq);
        node.node()->isaved = {sine ? int64_t(1) : int64_t(0)};
    }
    return node;
}

template <class T = double>
struct MlpT {
    std::vector<DenseLayerT<T>> layers;

    // sine-activated hidden stack with a linear head
    static MlpT make(int64_t in, const std::vector<int64_t>& hidden, int64_t out, Rng& rng) {
        MlpT mlp;
        int64_t cur = in;
        for (size_t i = 0; i < hidden.size(); ++i) {
            mlp.layers.push_back(make_dense<T>(cur, hidden[i], Activation::sine, i == 0, rng));
            cur = hidden[i];
        }
        mlp.layers.push_back(make_dense<T>(cur, out, Activation::none, hidden.empty(), rng));
        return mlp;
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        TensorT<T> h = x;
        for (const auto& l : layers) h = dense_forward(l, h);
        return h;
    }

    int64_t in_dim() const { return layers.front().in_dim(); }
    int64_t out_dim() const { return layers.back().out_dim(); }
};

// mean over elements of sqrt((pred-target)^2 + eps^2). Accumulated relative
// to the eps floor so a perfect fit returns eps bitwise, which downstream
// contracts assert.
template <class T>
TensorT<T> charbonnier_loss(const TensorT<T>& pred, const TensorT<T>& target, T eps) {
    detail::check_same_shape(pred, target, "charbonnier_loss");
    if (!(eps > T(0))) throw UsageError("charbonnier_loss: eps must be positive");
    auto out = detail::make_op<T>({1}, {pred.node(), target.node()}, +[](detail::Node<T>& n) {
        const auto& pv = n.inputs[0]->val;
        const auto& tv = n.inputs[1]->val;
        const T eps = n.saved[0];
        const T g = n.grad[0] / static_cast<T>(pv.size());
        if (n.inputs[0]->requires_grad) {
            auto& gp = detail::grad_buf(*n.inputs[0]);
            for (size_t i = 0; i < gp.size(); ++i) {
                const T d = pv[i] - tv[i];
                gp[i] += g * d / std::sqrt(d * d + eps * eps);
            }
        }
        if (n.inputs[1]->requires_grad) {
            auto& gt = detail::grad_buf(*n.inputs[1]);
            for (size_t i = 0; i < gt.size(); ++i) {
                const T d = pv[i] - tv[i];
                gt[i] -= g * d / std::sqrt(d * d + eps * eps);
            }
        }
    });
    if (out.requires_grad()) out.node()->saved = {eps};
    const auto& pv = pred.values();
    const auto& tv = target.values();
    T acc = 0;
    for (size_t i = 0; i < pv.size(); ++i) {
        const T d = pv[i] - tv[i];
        acc += std::sqrt(d * d + eps * eps) - eps;
    }
    out.values()[0] = acc / static_cast<T>(pv.size()) + eps;
    return out;
}

// lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi (iter mod period) / period));
// restarts at lr_max every period.
inline double cosine_lr(int64_t iter, int64_t period, double lr_max, double lr_min) {
    if (iter < 0 || period <= 0) throw UsageError("cosine_lr: need iter >= 0 and period > 0");
    const double phase = static_cast<double>(iter % period) / static_cast<double>(period);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase * 3.14159265358979323846));
}

template <class T = double>
struct ParamRef {
    std::string name;
    TensorT<T> tensor; // shares the underlying node
};

template <class T = double>
using ParamList = std::vector<ParamRef<T>>;

// Enumerate an MLP's layers as "<prefix>l<i>.w" / "<prefix>l<i>.b".
template <class T>
void collect_mlp_params(const MlpT<T>& mlp, const std::string& prefix, ParamList<T>& out) {
    for (size_t i = 0; i < mlp.layers.size(); ++i) {
        out.push_back({prefix + "l" + std::to_string(i) + ".w", mlp.layers[i].weight});
        out.push_back({prefix + "l" + std::to_string(i) + ".b", mlp.layers[i].bias});
    }
}

template <class T = double>
struct AdamStateT {
    int64_t step = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::vector<std::vector<T>> m, v; // aligned with the param list
};

// Standard bias-corrected Adam. A parameter whose gradient is entirely zero
// (or missing) is left untouched, so a step with no gradients is a no-op on
// values regardless of accumulated moments.
template <class T>
void adam_step(ParamList<T>& params, AdamStateT<T>& st, T lr) {
    if (st.m.empty()) {
        st.m.resize(params.size());
        st.v.resize(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            st.m[p].assign(static_cast<size_t>(params[p].tensor.size()), T(0));
            st.v[p].assign(static_cast<size_t>(params[p].tensor.size()), T(0));
        }
    }
    if (st.m.size() != params.size())
        throw UsageError("adam_step: state tracks " + std::to_string(st.m.size()) + " params, got " +
                         std::to_string(params.size()));
    st.step += 1;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        auto& t = params[p].tensor;
        const auto& g = t.grad();
        if (g.empty()) continue;
        bool all_zero = true;
        for (T x : g) {
            if (!std::isfinite(x)) throw TrainError("non-finite gradient in parameter " + params[p].name);
            all_zero = all_zero && x == T(0);
        }
        if (all_zero) continue;
        auto& pm = st.m[p];
        auto& pv = st.v[p];
        auto& val = t.values();
        for (size_t i = 0; i < val.size(); ++i) {
            pm[i] = st.beta1 * pm[i] + (T(1) - st.beta1) * g[i];
            pv[i] = st.beta2 * pv[i] + (T(1) - st.beta2) * g[i] * g[i];
            const T mhat = pm[i] / bc1;
            const T vhat = pv[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

template <class T>
void zero_grads(ParamList<T>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

} // namespace ff
