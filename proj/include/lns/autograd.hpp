#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Every operation appends one node holding its value and a closure that
// distributes the node's gradient to its inputs. Nodes are appended in
// execution order, so walking the tape backwards visits each node after all
// of its consumers. Gradients from multiple consumers add up.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "lns/functional.hpp"
#include "lns/tensor.hpp"

namespace lns::ag {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const BasicTensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape->requires_grad(*this); }
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(const BasicTensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(BasicTensor<T> value, bool requires_grad = true) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
        return {this, nodes_.size() - 1};
    }

    Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

    /// Appends the result of an operation. The node tracks gradients when any
    /// parent does; `fn` is dropped otherwise.
    Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        bool tracked = false;
        for (const auto& p : parents) tracked = tracked || requires_grad(p);
        nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(fn) : BackwardFn{}});
        return {this, nodes_.size() - 1};
    }

    const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds `g` into the gradient of `v`. Ignored for untracked nodes.
    void accumulate(Var<T> v, const BasicTensor<T>& g) {
        Node& n = nodes_.at(v.id);
        if (!n.requires_grad) return;
        require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
        if (!n.grad) {
            n.grad = g;
            return;
        }
        auto dst = n.grad->data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
    void backward(Var<T> loss) {
        if (value(loss).size() != 1)
            throw ValueError("backward: loss must be a scalar, got shape " + value(loss).shape().str());
        if (!requires_grad(loss)) throw ValueError("backward: loss does not depend on any tracked value");
        for (auto& n : nodes_) n.grad.reset();
        nodes_[loss.id].grad = BasicTensor<T>(value(loss).shape(), T{1});
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad && n.backward) {
                const BasicTensor<T> g = *n.grad;  // closures may grow other grads
                n.backward(g);
            }
        }
    }

    /// Gradient of the last backward() loss with respect to `v`; zeros when
    /// `v` did not influence the loss. Throws for untracked nodes.
    BasicTensor<T> grad(Var<T> v) const {
        const Node& n = nodes_.at(v.id);
        if (!n.requires_grad) throw ValueError("grad: node " + std::to_string(v.id) + " is detached");
        return n.grad ? *n.grad : BasicTensor<T>(n.value.shape());
    }

private:
    struct Node {
        BasicTensor<T> value;
        std::optional<BasicTensor<T>> grad;
        bool requires_grad;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, std::size_t padding, T pad_value = T{}) {
    Tape<T>& t = *x.tape;
    auto out = fn::conv2d(x.value(), w.value(), stride, padding, pad_value);
    return t.record(std::move(out), {x, w}, [&t, x, w, stride, padding, pad_value](const BasicTensor<T>& g) {
        BasicTensor<T> gx, gw;
        fn::conv2d_backward(x.value(), w.value(), g, stride, padding, pad_value, x.requires_grad() ? &gx : nullptr,
                            w.requires_grad() ? &gw : nullptr);
        if (x.requires_grad()) t.accumulate(x, gx);
        if (w.requires_grad()) t.accumulate(w, gw);
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    Tape<T>& t = *x.tape;
    auto out = fn::linear(x.value(), w.value(), b.value());
    return t.record(std::move(out), {x, w, b}, [&t, x, w, b](const BasicTensor<T>& g) {
        BasicTensor<T> gx, gw, gb;
        fn::linear_backward(x.value(), w.value(), g, x.requires_grad() ? &gx : nullptr,
                            w.requires_grad() ? &gw : nullptr, b.requires_grad() ? &gb : nullptr);
        if (x.requires_grad()) t.accumulate(x, gx);
        if (w.requires_grad()) t.accumulate(w, gw);
        if (b.requires_grad()) t.accumulate(b, gb);
    });
}

enum class Mode { train, eval };

/// Batch norm over axis 1. Train mode uses batch statistics and updates
/// `state` (when non-null); eval mode reads `state`, which must be non-null.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, fn::BatchNormState<T>* state, Mode mode) {
    Tape<T>& t = *x.tape;
    if (mode == Mode::train) {
        auto cache = std::make_shared<fn::BatchNormCache<T>>();
        auto out = fn::batch_norm_train(x.value(), gamma.value(), beta.value(), state, cache.get());
        return t.record(std::move(out), {x, gamma, beta}, [&t, x, gamma, beta, cache](const BasicTensor<T>& g) {
            BasicTensor<T> gx, gg, gb;
            fn::batch_norm_train_backward(*cache, gamma.value(), g, x.requires_grad() ? &gx : nullptr, &gg, &gb);
            if (x.requires_grad()) t.accumulate(x, gx);
            t.accumulate(gamma, gg);
            t.accumulate(beta, gb);
        });
    }
    if (!state) throw ValueError("batch_norm: eval mode needs running statistics");
    auto out = fn::batch_norm_eval(x.value(), gamma.value(), beta.value(), *state);
    const fn::BatchNormState<T> snapshot = *state;
    return t.record(std::move(out), {x, gamma, beta}, [&t, x, gamma, beta, snapshot](const BasicTensor<T>& g) {
        const auto& xv = x.value();
        const std::size_t c = xv.dim(1);
        const std::size_t inner = xv.size() / (xv.dim(0) * c);
        BasicTensor<T> gx(xv.shape()), gg(gamma.shape()), gb(beta.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const std::size_t ch = (i / inner) % c;
            const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(snapshot.running_var[ch]) +
                                                          fn::kBatchNormEps));
            const T xhat = (xv[i] - snapshot.running_mean[ch]) * istd;
            gx[i] = g[i] * gamma.value()[ch] * istd;
            gg[ch] += g[i] * xhat;
            gb[ch] += g[i];
        }
        t.accumulate(x, gx);
        t.accumulate(gamma, gg);
        t.accumulate(beta, gb);
    });
}

/// Pins the branch taken by each piecewise-linear activation. In record mode
/// the activation inputs are stored; in replay mode every element stays on
/// the branch its recorded input selected, so the network is locally linear
/// in the activation inputs. Lets finite differences with a finite step
/// probe a point without crossing kinks. Test instrumentation.
template <typename T>
struct RegionFreeze {
    bool replay = false;
    std::vector<BasicTensor<T>> points;
    std::size_t cursor = 0;

    /// Input that selects the branch: the recorded one when replaying.
    const BasicTensor<T>& reference(Var<T> x) {
        if (!replay) {
            points.push_back(x.value());
            return x.value();
        }
        const auto& r = points.at(cursor++);
        require_same_shape(r.shape(), x.shape(), "activation replay");
        return r;
    }
};

template <typename T>
Var<T> relu(Var<T> x, RegionFreeze<T>* freeze = nullptr) {
    Tape<T>& t = *x.tape;
    const BasicTensor<T> ref = freeze ? freeze->reference(x) : x.value();
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ref[i] > T{0} ? x.value()[i] : T{0};
    return t.record(std::move(out), {x}, [&t, x, ref](const BasicTensor<T>& g) {
        BasicTensor<T> gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = ref[i] > T{0} ? g[i] : T{0};
        t.accumulate(x, gx);
    });
}

/// Clip to [-1, 1]; gradient passes strictly inside the interval only.
template <typename T>
Var<T> hardtanh(Var<T> x, RegionFreeze<T>* freeze = nullptr) {
    Tape<T>& t = *x.tape;
    const BasicTensor<T> ref = freeze ? freeze->reference(x) : x.value();
    BasicTensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = ref[i] <= T{-1} ? T{-1} : ref[i] >= T{1} ? T{1} : x.value()[i];
    return t.record(std::move(out), {x}, [&t, x, ref](const BasicTensor<T>& g) {
        BasicTensor<T> gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (ref[i] > T{-1} && ref[i] < T{1}) ? g[i] : T{0};
        t.accumulate(x, gx);
    });
}

template <typename T>
Var<T> prelu(Var<T> x, Var<T> slope, RegionFreeze<T>* freeze = nullptr) {
    Tape<T>& t = *x.tape;
    const BasicTensor<T> ref = freeze ? freeze->reference(x) : x.value();
    const auto& xv = x.value();
    const auto& sv = slope.value();
    if (xv.rank() < 2 || sv.size() != xv.dim(1))
        throw ShapeError("prelu: slope " + sv.shape().str() + " does not match input " + xv.shape().str());
    const std::size_t c = xv.dim(1);
    const std::size_t inner = xv.size() / (xv.dim(0) * c);
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = ref[i] > T{0} ? xv[i] : sv[(i / inner) % c] * xv[i];
    return t.record(std::move(out), {x, slope}, [&t, x, slope, ref, c, inner](const BasicTensor<T>& g) {
        const auto& xv = x.value();
        BasicTensor<T> gx(xv.shape()), gs(slope.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const std::size_t ch = (i / inner) % c;
            if (ref[i] > T{0}) {
                gx[i] = g[i];
            } else {
                gx[i] = slope.value()[ch] * g[i];
                gs[ch] += xv[i] * g[i];
            }
        }
        t.accumulate(x, gx);
        t.accumulate(slope, gs);
    });
}

template <typename T>
Var<T> activation(Var<T> x, fn::Activation act, std::optional<Var<T>> slope = std::nullopt,
                  RegionFreeze<T>* freeze = nullptr) {
    switch (act) {
        case fn::Activation::none: return x;
        case fn::Activation::relu: return relu(x, freeze);
        case fn::Activation::hardtanh: return hardtanh(x, freeze);
        case fn::Activation::prelu:
            if (!slope) throw ValueError("prelu activation needs a slope parameter");
            return prelu(x, *slope, freeze);
    }
    return x;
}

template <typename T>
Var<T> tanh(Var<T> x) {
    Tape<T>& t = *x.tape;
    auto out = fn::tanh(x.value());
    const Var<T> self{&t, t.size()};
    return t.record(std::move(out), {x}, [&t, x, self](const BasicTensor<T>& g) {
        const auto& y = self.value();
        BasicTensor<T> gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (T{1} - y[i] * y[i]);
        t.accumulate(x, gx);
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tape<T>& t = *x.tape;
    return t.record(x.value().reshaped(shape), {x},
                    [&t, x](const BasicTensor<T>& g) { t.accumulate(x, g.reshaped(x.shape())); });
}

/// Multiplies by a constant (no gradient flows into the factor).
template <typename T>
Var<T> scale(Var<T> x, T factor) {
    Tape<T>& t = *x.tape;
    BasicTensor<T> out = x.value();
    for (auto& v : out.data()) v *= factor;
    return t.record(std::move(out), {x}, [&t, x, factor](const BasicTensor<T>& g) {
        BasicTensor<T> gx = g;
        for (auto& v : gx.data()) v *= factor;
        t.accumulate(x, gx);
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    require_same_shape(a.shape(), b.shape(), "add");
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return t.record(std::move(out), {a, b}, [&t, a, b](const BasicTensor<T>& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    Tape<T>& t = *x.tape;
    T s{};
    for (T v : x.value().data()) s += v;
    return t.record(BasicTensor<T>(Shape{1}, s), {x},
                    [&t, x](const BasicTensor<T>& g) { t.accumulate(x, BasicTensor<T>(x.shape(), g[0])); });
}

template <typename T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Sum of squares of every element.
template <typename T>
Var<T> sum_squares(Var<T> x) {
    Tape<T>& t = *x.tape;
    T s{};
    for (T v : x.value().data()) s += v * v;
    return t.record(BasicTensor<T>(Shape{1}, s), {x}, [&t, x](const BasicTensor<T>& g) {
        BasicTensor<T> gx = x.value();
        for (auto& v : gx.data()) v *= T{2} * g[0];
        t.accumulate(x, gx);
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
    Tape<T>& t = *logits.tape;
    BasicTensor<T> probs;
    const T loss = fn::cross_entropy(logits.value(), labels, &probs);
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    return t.record(BasicTensor<T>(Shape{1}, loss), {logits},
                    [&t, logits, probs = std::move(probs), lab = std::move(lab)](const BasicTensor<T>& g) {
                        BasicTensor<T> gx = probs;
                        const std::size_t n = gx.dim(0);
                        for (std::size_t i = 0; i < n; ++i) gx.at(i, static_cast<std::size_t>(lab[i])) -= T{1};
                        const T s = g[0] / static_cast<T>(n);
                        for (auto& v : gx.data()) v *= s;
                        t.accumulate(logits, gx);
                    });
}

}  // namespace lns::ag
