#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "kernels.hpp"

namespace ff {

namespace detail {

// Test hook: gradcheck fault injection. When set, sine backward passes are
// deliberately scaled wrong so the finite-difference suite must flag them.
inline bool corrupt_sine_backward = false;

template <class T>
struct Node {
    std::vector<int64_t> shape;
    std::vector<T> val;
    std::vector<T> grad;            // leaves: persists across backward calls until zeroed
    std::vector<T> saved;           // op scratch kept for backward (cos caches, weights...)
    std::vector<int64_t> isaved;    // op scratch: indices, dims
    std::vector<std::shared_ptr<Node>> inputs;
    void (*bwd)(Node&) = nullptr;
    bool requires_grad = false;
    bool is_leaf = true;
    uint64_t epoch = 0;             // last backward pass that touched grad
    uint64_t visit = 0;             // topo-sort mark

    int64_t size() const {
        int64_t s = 1;
        for (auto d : shape) s *= d;
        return s;
    }
};

template <class T>
struct Engine {
    inline static uint64_t epoch = 0;
    inline static uint64_t visit = 0;
};

// Returns the node's gradient buffer ready for accumulation in the current
// backward pass. Intermediates restart from zero each pass; leaves keep
// accumulating until explicitly zeroed (documented backward() behavior).
template <class T>
std::vector<T>& grad_buf(Node<T>& n) {
    if (n.epoch != Engine<T>::epoch) {
        if (!n.is_leaf || n.grad.empty()) n.grad.assign(static_cast<size_t>(n.size()), T(0));
        n.epoch = Engine<T>::epoch;
    }
    return n.grad;
}

template <class T>
void accum_grad(Node<T>& n, const T* g) {
    auto& buf = grad_buf(n);
    kern::axpy(g, buf.data(), buf.size());
}

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

} // namespace detail

template <class T = double>
class TensorT {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : n_(std::move(n)) {}

    static TensorT from(std::vector<int64_t> shape, std::vector<T> vals, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        if (static_cast<int64_t>(vals.size()) != n->size())
            throw ShapeError("Tensor::from: " + std::to_string(vals.size()) + " values for shape " +
                             detail::shape_str(n->shape));
        n->val = std::move(vals);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->val.assign(static_cast<size_t>(n->size()), T(0));
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT full(std::vector<int64_t> shape, T v, bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return n_ != nullptr; }
    const std::vector<int64_t>& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return n_->size(); }

    std::vector<T>& values() { return n_->val; }
    const std::vector<T>& values() const { return n_->val; }
    std::vector<T>& grad() { return n_->grad; }
    const std::vector<T>& grad() const { return n_->grad; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) {
        if (b && !n_->is_leaf) throw UsageError("requires_grad can only be toggled on leaf tensors");
        n_->requires_grad = b;
    }

    T item() const {
        if (n_->size() != 1) throw UsageError("item() on tensor of shape " + detail::shape_str(n_->shape));
        return n_->val[0];
    }

    void zero_grad() { n_->grad.assign(static_cast<size_t>(n_->size()), T(0)); }

    const NodePtr& node() const { return n_; }

private:
    NodePtr n_;
};

using Tensor = TensorT<double>;

namespace detail {

// Op-node factory shared by all differentiable operations (including the
// fused ones defined in other headers). Graph edges and backward scratch are
// recorded only when some input needs gradients.
template <class T>
TensorT<T> make_op(std::vector<int64_t> shape, std::vector<typename TensorT<T>::NodePtr> inputs,
                   void (*bwd)(Node<T>&)) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val.resize(static_cast<size_t>(n->size()));
    n->is_leaf = false;
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->inputs = std::move(inputs);
        n->bwd = bwd;
    }
    return TensorT<T>(std::move(n));
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

} // namespace detail

// ---- elementwise ------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()}, +[](detail::Node<T>& n) {
        if (n.inputs[0]->requires_grad) detail::accum_grad(*n.inputs[0], n.grad.data());
        if (n.inputs[1]->requires_grad) detail::accum_grad(*n.inputs[1], n.grad.data());
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& y = out.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()}, +[](detail::Node<T>& n) {
        if (n.inputs[0]->requires_grad) detail::accum_grad(*n.inputs[0], n.grad.data());
        if (n.inputs[1]->requires_grad) {
            auto& gb = detail::grad_buf(*n.inputs[1]);
            kern::axpy(n.grad.data(), gb.data(), gb.size(), T(-1));
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& y = out.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::make_op<T>(a.shape(), {a.node(), b.node()}, +[](detail::Node<T>& n) {
        const auto& av = n.inputs[0]->val;
        const auto& bv = n.inputs[1]->val;
        if (n.inputs[0]->requires_grad) {
            auto& ga = detail::grad_buf(*n.inputs[0]);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * bv[i];
        }
        if (n.inputs[1]->requires_grad) {
            auto& gb = detail::grad_buf(*n.inputs[1]);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * av[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& y = out.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    auto out = detail::make_op<T>(a.shape(), {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        auto& ga = detail::grad_buf(*n.inputs[0]);
        kern::axpy(n.grad.data(), ga.data(), ga.size(), n.saved[0]);
    });
    if (out.requires_grad()) out.node()->saved = {c};
    const auto& av = a.values();
    auto& y = out.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * c;
    return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    auto out = detail::make_op<T>(a.shape(), {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        auto& ga = detail::grad_buf(*n.inputs[0]);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.val[i] > T(0) ? n.grad[i] : T(0);
    });
    const auto& av = a.values();
    auto& y = out.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] > T(0) ? av[i] : T(0);
    return out;
}

// y = sin(freq * x); standalone sine op (the dense layers use a fused path)
template <class T>
TensorT<T> sin_scaled(const TensorT<T>& a, T freq) {
    auto out = detail::make_op<T>(a.shape(), {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        const T freq = n.saved.back();
        T fault = detail::corrupt_sine_backward ? T(1.01) : T(1);
        auto& ga = detail::grad_buf(*n.inputs[0]);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * freq * fault * n.saved[i];
    });
    const auto& av = a.values();
    auto& y = out.values();
    const size_t m = y.size();
    if (out.requires_grad()) {
        auto& sv = out.node()->saved;
        sv.resize(m + 1);
        std::vector<T> arg(m);
        for (size_t i = 0; i < m; ++i) arg[i] = freq * av[i];
        kern::sincos_batch(arg.data(), y.data(), sv.data(), m);
        sv[m] = freq;
    } else {
        std::vector<T> arg(m), c(m);
        for (size_t i = 0; i < m; ++i) arg[i] = freq * av[i];
        kern::sincos_batch(arg.data(), y.data(), c.data(), m);
    }
    return out;
}

// ---- reductions -------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    auto out = detail::make_op<T>({1}, {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        auto& ga = detail::grad_buf(*n.inputs[0]);
        const T g = n.grad[0];
        for (auto& v : ga) v += g;
    });
    T s = 0;
    for (T v : a.values()) s += v;
    out.values()[0] = s;
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    auto out = detail::make_op<T>({1}, {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        auto& ga = detail::grad_buf(*n.inputs[0]);
        const T g = n.grad[0] / static_cast<T>(ga.size());
        for (auto& v : ga) v += g;
    });
    T s = 0;
    for (T v : a.values()) s += v;
    out.values()[0] = s / static_cast<T>(a.size());
    return out;
}

// ---- shape ops --------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int64_t> shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    if (n != a.size())
        throw ShapeError("reshape: size mismatch " + detail::shape_str(a.shape()) + " -> " +
                         detail::shape_str(shape));
    auto out = detail::make_op<T>(std::move(shape), {a.node()}, +[](detail::Node<T>& n) {
        if (n.inputs[0]->requires_grad) detail::accum_grad(*n.inputs[0], n.grad.data());
    });
    out.values() = a.values();
    return out;
}

template <class T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d: need rank 2, got " + detail::shape_str(a.shape()));
    const int64_t R = a.dim(0), C = a.dim(1);
    auto out = detail::make_op<T>({C, R}, {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        const int64_t C = n.shape[0], R = n.shape[1];
        auto& ga = detail::grad_buf(*n.inputs[0]);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t r = 0; r < R; ++r) ga[static_cast<size_t>(r * C + c)] += n.grad[static_cast<size_t>(c * R + r)];
    });
    const auto& av = a.values();
    auto& y = out.values();
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) y[static_cast<size_t>(c * R + r)] = av[static_cast<size_t>(r * C + c)];
    return out;
}

// concat along the last (column) axis of rank-2 tensors with equal row counts
template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: empty input list");
    const int64_t R = parts[0].dim(0);
    int64_t C = 0;
    std::vector<typename TensorT<T>::NodePtr> ins;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != R)
            throw ShapeError("concat_cols: incompatible part " + detail::shape_str(p.shape()));
        C += p.dim(1);
        ins.push_back(p.node());
    }
    auto out = detail::make_op<T>({R, C}, std::move(ins), +[](detail::Node<T>& n) {
        const int64_t R = n.shape[0], C = n.shape[1];
        int64_t c0 = 0;
        for (auto& in : n.inputs) {
            const int64_t w = in->shape[1];
            if (in->requires_grad) {
                auto& g = detail::grad_buf(*in);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < w; ++c)
                        g[static_cast<size_t>(r * w + c)] += n.grad[static_cast<size_t>(r * C + c0 + c)];
            }
            c0 += w;
        }
    });
    auto& y = out.values();
    int64_t c0 = 0;
    for (const auto& p : parts) {
        const int64_t w = p.dim(1);
        const auto& pv = p.values();
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < w; ++c) y[static_cast<size_t>(r * C + c0 + c)] = pv[static_cast<size_t>(r * w + c)];
        c0 += w;
    }
    return out;
}

template <class T>
TensorT<T> slice_cols(const TensorT<T>& a, int64_t c0, int64_t c1) {
    if (a.ndim() != 2) throw ShapeError("slice_cols: need rank 2, got " + detail::shape_str(a.shape()));
    const int64_t R = a.dim(0), C = a.dim(1);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw IndexError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + std::to_string(C) + " columns");
    const int64_t W = c1 - c0;
    auto out = detail::make_op<T>({R, W}, {a.node()}, +[](detail::Node<T>& n) {
        if (!n.inputs[0]->requires_grad) return;
        const int64_t R = n.shape[0], W = n.shape[1];
        const int64_t C = n.inputs[0]->shape[1], c0 = n.isaved[0];
        auto& g = detail::grad_buf(*n.inputs[0]);
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < W; ++c)
                g[static_cast<size_t>(r * C + c0 + c)] += n.grad[static_cast<size_t>(r * W + c)];
    });
    if (out.requires_grad()) out.node()->isaved = {c0};
    const auto& av = a.values();
    auto& y = out.values();
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < W; ++c) y[static_cast<size_t>(r * W + c)] = av[static_cast<size_t>(r * C + c0 + c)];
    return out;
}

// ---- matmul -----------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                         detail::shape_str(b.shape()));
    const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto out = detail::make_op<T>({M, N}, {a.node(), b.node()}, +[](detail::Node<T>& n) {
        const int64_t M = n.shape[0], N = n.shape[1];
        const int64_t K = n.inputs[0]->shape[1];
        const auto& A = n.inputs[0]->val;
        const auto& B = n.inputs[1]->val;
        if (n.inputs[0]->requires_grad) {
            std::vector<T> dA(static_cast<size_t>(M * K));
            kern::matmul_nt(n.grad.data(), B.data(), dA.data(), M, N, K);
            detail::accum_grad(*n.inputs[0], dA.data());
        }
        if (n.inputs[1]->requires_grad) {
            std::vector<T> dB(static_cast<size_t>(K * N));
            kern::matmul_tn(A.data(), n.grad.data(), dB.data(), K, M, N);
            detail::accum_grad(*n.inputs[1], dB.data());
        }
    });
    kern::matmul_nn(a.values().data(), b.values().data(), out.values().data(), M, K, N);
    return out;
}

// ---- backward ---------------------------------------------------------------

template <class T>
void backward(const TensorT<T>& loss) {
    if (!loss.defined()) throw UsageError("backward: undefined tensor");
    auto* root = loss.node().get();
    if (root->size() != 1)
        throw UsageError("backward: loss must be scalar, got shape " + detail::shape_str(root->shape));
    if (!root->requires_grad)
        throw UsageError("backward: loss does not depend on any requires_grad tensor");

    const uint64_t vmark = ++detail::Engine<T>::visit;
    std::vector<detail::Node<T>*> order;
    std::vector<std::pair<detail::Node<T>*, size_t>> stack;
    root->visit = vmark;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        bool descended = false;
        while (i < n->inputs.size()) {
            auto* in = n->inputs[i++].get();
            if (in->requires_grad && in->visit != vmark) {
                in->visit = vmark;
                stack.emplace_back(in, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->inputs.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    ++detail::Engine<T>::epoch;
    const T one = T(1);
    detail::accum_grad(*root, &one);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* n = *it;
        if (n->bwd && n->epoch == detail::Engine<T>::epoch) n->bwd(*n);
    }
}

} // namespace ff
