#include "itnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "itnas/error.hpp"

namespace itnas::ad {

namespace {

using detail::Node;
using detail::NodePtr;

void check_finite(Primitive kind, std::span<const Tensor> inputs) {
    if (!checked_mode()) {
        return;
    }
    for (const Tensor& t : inputs) {
        if (!t.defined()) {
            continue;
        }
        for (double v : t.values()) {
            if (!std::isfinite(v)) {
                throw NumericError("non-finite input to " + std::string(primitive_name(kind)));
            }
        }
    }
}

bool should_record(std::span<const Tensor> inputs) {
    if (!grad_enabled()) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor& t) { return t.requires_grad(); });
}

// Wraps forward values into a tensor and, when needed, records the backward rule.
template <typename Fn>
Tensor emit(Primitive kind, Shape shape, std::vector<double> values,
            std::vector<Tensor> inputs, Fn&& backward_fn) {
    Tensor out(std::move(shape), std::move(values), false);
    if (should_record(inputs)) {
        std::vector<NodePtr> nodes;
        nodes.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            nodes.push_back(t.node());
        }
        out.node()->requires_grad = true;
        Tape::active().record(kind, std::move(nodes), out.node(),
                              std::forward<Fn>(backward_fn));
    }
    return out;
}

void require_same_shape(Primitive kind, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(primitive_name(kind)) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

void require_rank(Primitive kind, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(primitive_name(kind)) + ": expected rank " +
                         std::to_string(rank) + ", got shape " + shape_to_string(t.shape()));
    }
}

std::vector<double>* grad_of(const NodePtr& node) {
    return node->requires_grad ? &node->grad_buffer() : nullptr;
}

template <typename Forward, typename Derivative>
Tensor unary(Primitive kind, const Tensor& a, Forward f, Derivative df) {
    check_finite(kind, std::span(&a, 1));
    std::vector<double> out(a.numel());
    auto in = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(in[i]);
    }
    NodePtr an = a.node();
    return emit(kind, a.shape(), std::move(out), {a}, [an, df](const Node& o) {
        auto* ga = grad_of(an);
        if (!ga) {
            return;
        }
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            (*ga)[i] += o.grad[i] * df(an->values[i], o.values[i]);
        }
    });
}

// Splits a shape into (rows, last-axis length).
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& a) {
    const std::size_t cols = a.shape().back();
    return {a.numel() / cols, cols};
}

struct Dims4 {
    std::size_t n, c, h, w;
};

Dims4 dims4(Primitive kind, const Tensor& x) {
    require_rank(kind, x, 4);
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, const Conv2dParams& p) {
    const std::size_t span = p.dilation * (k - 1) + 1;
    if (in + 2 * p.padding < span) {
        throw ShapeError("convolution window larger than padded input");
    }
    return (in + 2 * p.padding - span) / p.stride + 1;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(Primitive::Add, a, b);
    const Tensor ins[] = {a, b};
    check_finite(Primitive::Add, ins);
    std::vector<double> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    NodePtr an = a.node(), bn = b.node();
    return emit(Primitive::Add, a.shape(), std::move(out), {a, b}, [an, bn](const Node& o) {
        for (const NodePtr& n : {an, bn}) {
            if (auto* g = grad_of(n)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) {
                    (*g)[i] += o.grad[i];
                }
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(Primitive::Mul, a, b);
    const Tensor ins[] = {a, b};
    check_finite(Primitive::Mul, ins);
    std::vector<double> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    NodePtr an = a.node(), bn = b.node();
    return emit(Primitive::Mul, a.shape(), std::move(out), {a, b}, [an, bn](const Node& o) {
        if (auto* g = grad_of(an)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                (*g)[i] += o.grad[i] * bn->values[i];
            }
        }
        if (auto* g = grad_of(bn)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                (*g)[i] += o.grad[i] * an->values[i];
            }
        }
    });
}

Tensor negate(const Tensor& a) {
    return unary(
        Primitive::Negate, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        Primitive::Scale, a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Tensor exp(const Tensor& a) {
    return unary(
        Primitive::Exp, a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        Primitive::Log, a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return unary(
        // NaN passes through so non-finite values are not silently dropped.
        Primitive::Relu, a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
        [](double x, double) { return x > 0.0 || std::isnan(x) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& a) {
    return masked_softmax(a, std::vector<bool>(a.shape().back(), true));
}

Tensor masked_softmax(const Tensor& a, const std::vector<bool>& active) {
    const Primitive kind = std::all_of(active.begin(), active.end(), [](bool b) { return b; })
                               ? Primitive::Softmax
                               : Primitive::MaskedSoftmax;
    check_finite(kind, std::span(&a, 1));
    auto [rows, cols] = rows_cols(a);
    if (active.size() != cols) {
        throw ShapeError("masked_softmax: mask length " + std::to_string(active.size()) +
                         " does not match last axis " + std::to_string(cols));
    }
    if (std::none_of(active.begin(), active.end(), [](bool b) { return b; })) {
        throw ShapeError("masked_softmax: no active entries");
    }
    std::vector<double> out(a.numel(), 0.0);
    auto in = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * cols;
        double* y = out.data() + r * cols;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < cols; ++k) {
            if (active[k]) {
                peak = std::max(peak, x[k]);
            }
        }
        double total = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            if (active[k]) {
                y[k] = std::exp(x[k] - peak);
                total += y[k];
            }
        }
        for (std::size_t k = 0; k < cols; ++k) {
            y[k] /= total;
        }
    }
    NodePtr an = a.node();
    return emit(kind, a.shape(), std::move(out), {a}, [an, rows, cols](const Node& o) {
        auto* ga = grad_of(an);
        if (!ga) {
            return;
        }
        // Inactive outputs are constant zero, so y_k = 0 kills their terms.
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.values.data() + r * cols;
            const double* g = o.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t k = 0; k < cols; ++k) {
                dot += y[k] * g[k];
            }
            for (std::size_t k = 0; k < cols; ++k) {
                (*ga)[r * cols + k] += y[k] * (g[k] - dot);
            }
        }
    });
}

Tensor log_softmax(const Tensor& a) {
    check_finite(Primitive::LogSoftmax, std::span(&a, 1));
    auto [rows, cols] = rows_cols(a);
    std::vector<double> out(a.numel());
    auto in = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * cols;
        const double peak = *std::max_element(x, x + cols);
        double total = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            total += std::exp(x[k] - peak);
        }
        const double lse = peak + std::log(total);
        for (std::size_t k = 0; k < cols; ++k) {
            out[r * cols + k] = x[k] - lse;
        }
    }
    NodePtr an = a.node();
    return emit(Primitive::LogSoftmax, a.shape(), std::move(out), {a},
                [an, rows, cols](const Node& o) {
                    auto* ga = grad_of(an);
                    if (!ga) {
                        return;
                    }
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double* y = o.values.data() + r * cols;
                        const double* g = o.grad.data() + r * cols;
                        double gsum = 0.0;
                        for (std::size_t k = 0; k < cols; ++k) {
                            gsum += g[k];
                        }
                        for (std::size_t k = 0; k < cols; ++k) {
                            (*ga)[r * cols + k] += g[k] - std::exp(y[k]) * gsum;
                        }
                    }
                });
}

Tensor matvec(const Tensor& matrix, const Tensor& vec) {
    require_rank(Primitive::MatVec, matrix, 2);
    require_rank(Primitive::MatVec, vec, 1);
    const std::size_t m = matrix.dim(0), n = matrix.dim(1);
    if (vec.dim(0) != n) {
        throw ShapeError("matvec: " + shape_to_string(matrix.shape()) + " x " +
                         shape_to_string(vec.shape()));
    }
    const Tensor ins[] = {matrix, vec};
    check_finite(Primitive::MatVec, ins);
    std::vector<double> out(m, 0.0);
    auto a = matrix.values();
    auto v = vec.values();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += a[i * n + j] * v[j];
        }
        out[i] = acc;
    }
    NodePtr an = matrix.node(), vn = vec.node();
    return emit(Primitive::MatVec, {m}, std::move(out), {matrix, vec},
                [an, vn, m, n](const Node& o) {
                    if (auto* g = grad_of(an)) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                (*g)[i * n + j] += o.grad[i] * vn->values[j];
                            }
                        }
                    }
                    if (auto* g = grad_of(vn)) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                (*g)[j] += o.grad[i] * an->values[i * n + j];
                            }
                        }
                    }
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(Primitive::MatMul, a, 2);
    require_rank(Primitive::MatMul, b, 2);
    const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
    if (b.dim(0) != n) {
        throw ShapeError("matmul: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
    }
    const Tensor ins[] = {a, b};
    check_finite(Primitive::MatMul, ins);
    std::vector<double> out(m * p, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = av[i * n + k];
            for (std::size_t j = 0; j < p; ++j) {
                out[i * p + j] += aik * bv[k * p + j];
            }
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return emit(Primitive::MatMul, {m, p}, std::move(out), {a, b},
                [an, bn, m, n, p](const Node& o) {
                    if (auto* g = grad_of(an)) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t k = 0; k < n; ++k) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < p; ++j) {
                                    acc += o.grad[i * p + j] * bn->values[k * p + j];
                                }
                                (*g)[i * n + k] += acc;
                            }
                        }
                    }
                    if (auto* g = grad_of(bn)) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t k = 0; k < n; ++k) {
                                const double aik = an->values[i * n + k];
                                for (std::size_t j = 0; j < p; ++j) {
                                    (*g)[k * p + j] += aik * o.grad[i * p + j];
                                }
                            }
                        }
                    }
                });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Conv2dParams& params) {
    const auto [n, c, h, wd] = dims4(Primitive::DepthwiseConv2d, x);
    require_rank(Primitive::DepthwiseConv2d, w, 3);
    if (w.dim(0) != c) {
        throw ShapeError("depthwise_conv2d: kernel " + shape_to_string(w.shape()) +
                         " does not match " + std::to_string(c) + " channels");
    }
    if (params.stride == 0 || params.dilation == 0) {
        throw ShapeError("depthwise_conv2d: stride and dilation must be positive");
    }
    const Tensor ins[] = {x, w};
    check_finite(Primitive::DepthwiseConv2d, ins);
    const std::size_t kh = w.dim(1), kw = w.dim(2);
    const std::size_t ho = conv_out_extent(h, kh, params);
    const std::size_t wo = conv_out_extent(wd, kw, params);
    const std::size_t s = params.stride;
    const long d = static_cast<long>(params.dilation);
    const long pad = static_cast<long>(params.padding);
    const long hl = static_cast<long>(h), wl = static_cast<long>(wd);

    // For kernel column kx: output columns [lo, hi) read input column ox * s + off.
    struct ColumnSpan {
        std::size_t lo, hi;
        long off;
    };
    std::vector<ColumnSpan> spans(kw);
    const long sl = static_cast<long>(s);
    for (std::size_t kx = 0; kx < kw; ++kx) {
        const long off = static_cast<long>(kx) * d - pad;
        const long lo = off >= 0 ? 0 : (-off + sl - 1) / sl;
        const long hi = wl - off > 0 ? std::min<long>(static_cast<long>(wo), (wl - off + sl - 1) / sl) : 0;
        spans[kx] = {static_cast<std::size_t>(std::min(lo, hi)), static_cast<std::size_t>(hi), off};
    }

    // Calls fn(out_row, in_row, weight_index, span) for every kernel tap row
    // that lies inside the input.
    auto for_each_row = [=](auto&& fn) {
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t in_base = (b * c + ch) * h * wd;
                const std::size_t out_base = (b * c + ch) * ho * wo;
                const std::size_t w_base = ch * kh * kw;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const long iy = static_cast<long>(oy * s) - pad + static_cast<long>(ky) * d;
                        if (iy < 0 || iy >= hl) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            fn(out_base + oy * wo, in_base + static_cast<std::size_t>(iy) * wd,
                               w_base + ky * kw + kx, spans[kx]);
                        }
                    }
                }
            }
        }
    };

    std::vector<double> out(n * c * ho * wo, 0.0);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    for_each_row([&](std::size_t orow, std::size_t irow, std::size_t k, const ColumnSpan& sp) {
        const double wk = wv[k];
        double* dst = out.data() + orow;
        const double* src = xv + static_cast<long>(irow) + sp.off;
        if (s == 1) {
            for (std::size_t ox = sp.lo; ox < sp.hi; ++ox) {
                dst[ox] += wk * src[ox];
            }
        } else {
            for (std::size_t ox = sp.lo; ox < sp.hi; ++ox) {
                dst[ox] += wk * src[ox * s];
            }
        }
    });

    NodePtr xn = x.node(), wn = w.node();
    return emit(Primitive::DepthwiseConv2d, {n, c, ho, wo}, std::move(out), {x, w},
                [xn, wn, s, for_each_row](const Node& o) {
                    auto* gx = grad_of(xn);
                    auto* gw = grad_of(wn);
                    const double* go = o.grad.data();
                    for_each_row([&](std::size_t orow, std::size_t irow, std::size_t k,
                                     const ColumnSpan& sp) {
                        const double* g = go + orow;
                        if (gx) {
                            const double wk = wn->values[k];
                            double* dst = gx->data() + static_cast<long>(irow) + sp.off;
                            for (std::size_t ox = sp.lo; ox < sp.hi; ++ox) {
                                dst[ox * s] += g[ox] * wk;
                            }
                        }
                        if (gw) {
                            const double* src = xn->values.data() + static_cast<long>(irow) + sp.off;
                            double acc = 0.0;
                            for (std::size_t ox = sp.lo; ox < sp.hi; ++ox) {
                                acc += g[ox] * src[ox * s];
                            }
                            (*gw)[k] += acc;
                        }
                    });
                });
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
    const auto [n, cin, h, wd] = dims4(Primitive::PointwiseConv2d, x);
    require_rank(Primitive::PointwiseConv2d, w, 2);
    if (w.dim(1) != cin) {
        throw ShapeError("pointwise_conv2d: weight " + shape_to_string(w.shape()) +
                         " does not match " + std::to_string(cin) + " input channels");
    }
    const std::size_t cout = w.dim(0);
    if (bias.defined() && bias.shape() != Shape{cout}) {
        throw ShapeError("pointwise_conv2d: bias shape " + shape_to_string(bias.shape()));
    }
    if (stride == 0) {
        throw ShapeError("pointwise_conv2d: stride must be positive");
    }
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    check_finite(Primitive::PointwiseConv2d, inputs);
    const std::size_t ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
    const std::size_t plane = ho * wo;

    // Strided input of sample b as [Cin, plane]; a view when stride == 1.
    auto gather = [=](const double* xv, std::size_t b, std::vector<double>& buf) -> const double* {
        const double* src = xv + b * cin * h * wd;
        if (stride == 1) {
            return src;
        }
        buf.resize(cin * plane);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    buf[(ci * ho + oy) * wo + ox] = src[(ci * h + oy * stride) * wd + ox * stride];
                }
            }
        }
        return buf.data();
    };

    std::vector<double> out(n * cout * plane, 0.0);
    const double* wv = w.values().data();
    std::vector<double> buf;
    for (std::size_t b = 0; b < n; ++b) {
        const double* cols = gather(x.values().data(), b, buf);
        for (std::size_t co = 0; co < cout; ++co) {
            double* dst = out.data() + (b * cout + co) * plane;
            std::fill(dst, dst + plane, bias.defined() ? bias.values()[co] : 0.0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double wk = wv[co * cin + ci];
                const double* src = cols + ci * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    dst[p] += wk * src[p];
                }
            }
        }
    }
    NodePtr xn = x.node(), wn = w.node();
    NodePtr bn = bias.defined() ? bias.node() : nullptr;
    return emit(Primitive::PointwiseConv2d, {n, cout, ho, wo}, std::move(out), std::move(inputs),
                [=](const Node& o) {
                    auto* gx = grad_of(xn);
                    auto* gw = grad_of(wn);
                    auto* gb = bn ? grad_of(bn) : nullptr;
                    std::vector<double> buf, gcols;
                    for (std::size_t b = 0; b < n; ++b) {
                        const double* cols = gather(xn->values.data(), b, buf);
                        if (gx) {
                            gcols.assign(cin * plane, 0.0);
                        }
                        for (std::size_t co = 0; co < cout; ++co) {
                            const double* go = o.grad.data() + (b * cout + co) * plane;
                            if (gb) {
                                double acc = 0.0;
                                for (std::size_t p = 0; p < plane; ++p) {
                                    acc += go[p];
                                }
                                (*gb)[co] += acc;
                            }
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                if (gw) {
                                    const double* src = cols + ci * plane;
                                    double acc = 0.0;
                                    for (std::size_t p = 0; p < plane; ++p) {
                                        acc += go[p] * src[p];
                                    }
                                    (*gw)[co * cin + ci] += acc;
                                }
                                if (gx) {
                                    const double wk = wn->values[co * cin + ci];
                                    double* dst = gcols.data() + ci * plane;
                                    for (std::size_t p = 0; p < plane; ++p) {
                                        dst[p] += go[p] * wk;
                                    }
                                }
                            }
                        }
                        if (gx) {
                            double* dst = gx->data() + b * cin * h * wd;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                for (std::size_t oy = 0; oy < ho; ++oy) {
                                    for (std::size_t ox = 0; ox < wo; ++ox) {
                                        dst[(ci * h + oy * stride) * wd + ox * stride] +=
                                            gcols[(ci * ho + oy) * wo + ox];
                                    }
                                }
                            }
                        }
                    }
                });
}

Tensor avg_pool3x3(const Tensor& x, std::size_t stride) {
    const auto [n, c, h, wd] = dims4(Primitive::AvgPool3x3, x);
    if (stride == 0) {
        throw ShapeError("avg_pool3x3: stride must be positive");
    }
    check_finite(Primitive::AvgPool3x3, std::span(&x, 1));
    const Conv2dParams geom{stride, 1, 1};
    const std::size_t ho = conv_out_extent(h, 3, geom), wo = conv_out_extent(wd, 3, geom);
    auto window = [=](std::size_t oy, std::size_t ox, auto&& fn) {
        const long y0 = static_cast<long>(oy * stride) - 1;
        const long x0 = static_cast<long>(ox * stride) - 1;
        for (long iy = std::max(0L, y0); iy < std::min<long>(static_cast<long>(h), y0 + 3); ++iy) {
            for (long ix = std::max(0L, x0); ix < std::min<long>(static_cast<long>(wd), x0 + 3);
                 ++ix) {
                fn(static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix));
            }
        }
    };
    std::vector<double> out(n * c * ho * wo);
    std::vector<double> counts(ho * wo);
    auto xv = x.values();
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            std::size_t cnt = 0;
            window(oy, ox, [&](std::size_t) { ++cnt; });
            counts[oy * wo + ox] = static_cast<double>(cnt);
        }
    }
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* src = xv.data() + plane * h * wd;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                window(oy, ox, [&](std::size_t i) { acc += src[i]; });
                out[(plane * ho + oy) * wo + ox] = acc / counts[oy * wo + ox];
            }
        }
    }
    NodePtr xn = x.node();
    return emit(Primitive::AvgPool3x3, {n, c, ho, wo}, std::move(out), {x},
                [=](const Node& o) {
                    auto* gx = grad_of(xn);
                    if (!gx) {
                        return;
                    }
                    for (std::size_t plane = 0; plane < n * c; ++plane) {
                        double* dst = gx->data() + plane * h * wd;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const double g =
                                    o.grad[(plane * ho + oy) * wo + ox] / counts[oy * wo + ox];
                                window(oy, ox, [&](std::size_t i) { dst[i] += g; });
                            }
                        }
                    }
                });
}

Tensor max_pool3x3(const Tensor& x, std::size_t stride) {
    const auto [n, c, h, wd] = dims4(Primitive::MaxPool3x3, x);
    if (stride == 0) {
        throw ShapeError("max_pool3x3: stride must be positive");
    }
    check_finite(Primitive::MaxPool3x3, std::span(&x, 1));
    const Conv2dParams geom{stride, 1, 1};
    const std::size_t ho = conv_out_extent(h, 3, geom), wo = conv_out_extent(wd, 3, geom);
    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(out.size());
    auto xv = x.values();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * wd;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const long y0 = static_cast<long>(oy * stride) - 1;
                const long x0 = static_cast<long>(ox * stride) - 1;
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                bool found = false;
                for (long iy = std::max(0L, y0); iy < std::min<long>(static_cast<long>(h), y0 + 3);
                     ++iy) {
                    for (long ix = std::max(0L, x0);
                         ix < std::min<long>(static_cast<long>(wd), x0 + 3); ++ix) {
                        const std::size_t i =
                            base + static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix);
                        if (!found || xv[i] > best) {
                            best = xv[i];
                            best_i = i;
                            found = true;
                        }
                    }
                }
                const std::size_t oi = (plane * ho + oy) * wo + ox;
                out[oi] = best;
                argmax[oi] = best_i;
            }
        }
    }
    NodePtr xn = x.node();
    return emit(Primitive::MaxPool3x3, {n, c, ho, wo}, std::move(out), {x},
                [xn, argmax = std::move(argmax)](const Node& o) {
                    auto* gx = grad_of(xn);
                    if (!gx) {
                        return;
                    }
                    for (std::size_t oi = 0; oi < o.grad.size(); ++oi) {
                        (*gx)[argmax[oi]] += o.grad[oi];
                    }
                });
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_channels: no inputs");
    }
    const auto [n, c0, h, wd] = dims4(Primitive::ConcatChannels, parts[0]);
    (void)c0;
    std::size_t total_c = 0;
    for (const Tensor& p : parts) {
        const auto d = dims4(Primitive::ConcatChannels, p);
        if (d.n != n || d.h != h || d.w != wd) {
            throw ShapeError("concat_channels: incompatible shape " + shape_to_string(p.shape()));
        }
        total_c += d.c;
    }
    check_finite(Primitive::ConcatChannels, parts);
    const std::size_t plane = h * wd;
    std::vector<double> out(n * total_c * plane);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        const std::size_t pc = p.dim(1);
        auto pv = p.values();
        for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(pv.data() + b * pc * plane, pc * plane,
                        out.data() + (b * total_c + off) * plane);
        }
        off += pc;
    }
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
    }
    return emit(Primitive::ConcatChannels, {n, total_c, h, wd}, std::move(out),
                std::vector<Tensor>(parts.begin(), parts.end()),
                [=](const Node& o) {
                    for (std::size_t k = 0; k < nodes.size(); ++k) {
                        auto* g = grad_of(nodes[k]);
                        if (!g) {
                            continue;
                        }
                        const std::size_t pc = nodes[k]->shape[1];
                        for (std::size_t b = 0; b < n; ++b) {
                            const double* src = o.grad.data() + (b * total_c + offsets[k]) * plane;
                            double* dst = g->data() + b * pc * plane;
                            for (std::size_t i = 0; i < pc * plane; ++i) {
                                dst[i] += src[i];
                            }
                        }
                    }
                });
}

Tensor global_avg_pool(const Tensor& x) {
    const auto [n, c, h, wd] = dims4(Primitive::GlobalAvgPool, x);
    check_finite(Primitive::GlobalAvgPool, std::span(&x, 1));
    const std::size_t plane = h * wd;
    std::vector<double> out(n * c);
    auto xv = x.values();
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            acc += xv[i * plane + p];
        }
        out[i] = acc / static_cast<double>(plane);
    }
    NodePtr xn = x.node();
    return emit(Primitive::GlobalAvgPool, {n, c}, std::move(out), {x}, [=](const Node& o) {
        auto* gx = grad_of(xn);
        if (!gx) {
            return;
        }
        for (std::size_t i = 0; i < n * c; ++i) {
            const double g = o.grad[i] / static_cast<double>(plane);
            for (std::size_t p = 0; p < plane; ++p) {
                (*gx)[i * plane + p] += g;
            }
        }
    });
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(Primitive::Affine, x, 2);
    require_rank(Primitive::Affine, weight, 2);
    const std::size_t n = x.dim(0), f = x.dim(1), o_dim = weight.dim(0);
    if (weight.dim(1) != f || bias.shape() != Shape{o_dim}) {
        throw ShapeError("affine: x " + shape_to_string(x.shape()) + ", weight " +
                         shape_to_string(weight.shape()) + ", bias " +
                         shape_to_string(bias.shape()));
    }
    const Tensor ins[] = {x, weight, bias};
    check_finite(Primitive::Affine, ins);
    std::vector<double> out(n * o_dim);
    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t j = 0; j < o_dim; ++j) {
            double acc = bv[j];
            for (std::size_t k = 0; k < f; ++k) {
                acc += wv[j * f + k] * xv[b * f + k];
            }
            out[b * o_dim + j] = acc;
        }
    }
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.node();
    return emit(Primitive::Affine, {n, o_dim}, std::move(out), {x, weight, bias},
                [=](const Node& o) {
                    auto* gx = grad_of(xn);
                    auto* gw = grad_of(wn);
                    auto* gb = grad_of(bn);
                    for (std::size_t b = 0; b < n; ++b) {
                        for (std::size_t j = 0; j < o_dim; ++j) {
                            const double g = o.grad[b * o_dim + j];
                            if (gb) {
                                (*gb)[j] += g;
                            }
                            for (std::size_t k = 0; k < f; ++k) {
                                if (gx) {
                                    (*gx)[b * f + k] += g * wn->values[j * f + k];
                                }
                                if (gw) {
                                    (*gw)[j * f + k] += g * xn->values[b * f + k];
                                }
                            }
                        }
                    }
                });
}

Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels) {
    require_rank(Primitive::NllLoss, log_probs, 2);
    const std::size_t n = log_probs.dim(0), classes = log_probs.dim(1);
    if (labels.size() != n) {
        throw ShapeError("nll_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw ShapeError("nll_loss: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(classes) + ")");
        }
    }
    check_finite(Primitive::NllLoss, std::span(&log_probs, 1));
    auto lp = log_probs.values();
    double acc = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        acc -= lp[b * classes + static_cast<std::size_t>(labels[b])];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<int> ys(labels.begin(), labels.end());
    NodePtr ln = log_probs.node();
    return emit(Primitive::NllLoss, {1}, {acc * inv_n}, {log_probs},
                [ln, ys = std::move(ys), classes, inv_n](const Node& o) {
                    auto* g = grad_of(ln);
                    if (!g) {
                        return;
                    }
                    for (std::size_t b = 0; b < ys.size(); ++b) {
                        (*g)[b * classes + static_cast<std::size_t>(ys[b])] -= o.grad[0] * inv_n;
                    }
                });
}

Tensor sum(const Tensor& a) {
    check_finite(Primitive::Sum, std::span(&a, 1));
    double acc = 0.0;
    for (double v : a.values()) {
        acc += v;
    }
    NodePtr an = a.node();
    return emit(Primitive::Sum, {1}, {acc}, {a}, [an](const Node& o) {
        if (auto* g = grad_of(an)) {
            for (double& v : *g) {
                v += o.grad[0];
            }
        }
    });
}

Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights) {
    if (terms.empty()) {
        throw ShapeError("weighted_sum: no terms");
    }
    require_rank(Primitive::WeightedSum, weights, 1);
    if (weights.dim(0) != terms.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms but weights " +
                         shape_to_string(weights.shape()));
    }
    for (const Tensor& t : terms) {
        require_same_shape(Primitive::WeightedSum, terms[0], t);
    }
    std::vector<Tensor> inputs(terms.begin(), terms.end());
    inputs.push_back(weights);
    check_finite(Primitive::WeightedSum, inputs);
    const std::size_t len = terms[0].numel();
    std::vector<double> out(len, 0.0);
    auto wv = weights.values();
    // Canonical term order keeps the reduction deterministic.
    for (std::size_t k = 0; k < terms.size(); ++k) {
        auto tv = terms[k].values();
        const double wk = wv[k];
        for (std::size_t i = 0; i < len; ++i) {
            out[i] += wk * tv[i];
        }
    }
    std::vector<NodePtr> nodes;
    for (const Tensor& t : terms) {
        nodes.push_back(t.node());
    }
    NodePtr wn = weights.node();
    return emit(Primitive::WeightedSum, terms[0].shape(), std::move(out), std::move(inputs),
                [nodes, wn, len](const Node& o) {
                    auto* gw = grad_of(wn);
                    for (std::size_t k = 0; k < nodes.size(); ++k) {
                        const double wk = wn->values[k];
                        if (auto* gt = grad_of(nodes[k])) {
                            for (std::size_t i = 0; i < len; ++i) {
                                (*gt)[i] += wk * o.grad[i];
                            }
                        }
                        if (gw) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < len; ++i) {
                                acc += o.grad[i] * nodes[k]->values[i];
                            }
                            (*gw)[k] += acc;
                        }
                    }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_to_string(a.shape()) + " to " +
                         shape_to_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    NodePtr an = a.node();
    return emit(Primitive::Reshape, std::move(shape), std::move(out), {a}, [an](const Node& o) {
        if (auto* g = grad_of(an)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                (*g)[i] += o.grad[i];
            }
        }
    });
}

Tensor apply_primitive(Primitive kind, std::span<const Tensor> in, const Attrs& attrs) {
    auto need = [&](std::size_t count) {
        if (in.size() != count) {
            throw ShapeError(std::string(primitive_name(kind)) + ": expected " +
                             std::to_string(count) + " inputs, got " + std::to_string(in.size()));
        }
    };
    switch (kind) {
    case Primitive::Add: need(2); return add(in[0], in[1]);
    case Primitive::Mul: need(2); return mul(in[0], in[1]);
    case Primitive::Negate: need(1); return negate(in[0]);
    case Primitive::Scale: need(1); return scale(in[0], attrs.factor);
    case Primitive::Exp: need(1); return exp(in[0]);
    case Primitive::Log: need(1); return log(in[0]);
    case Primitive::Relu: need(1); return relu(in[0]);
    case Primitive::Softmax: need(1); return softmax(in[0]);
    case Primitive::MaskedSoftmax: need(1); return masked_softmax(in[0], attrs.mask);
    case Primitive::LogSoftmax: need(1); return log_softmax(in[0]);
    case Primitive::MatVec: need(2); return matvec(in[0], in[1]);
    case Primitive::MatMul: need(2); return matmul(in[0], in[1]);
    case Primitive::DepthwiseConv2d: need(2); return depthwise_conv2d(in[0], in[1], attrs.conv);
    case Primitive::PointwiseConv2d:
        if (in.size() == 2) {
            return pointwise_conv2d(in[0], in[1], Tensor{}, attrs.stride);
        }
        need(3);
        return pointwise_conv2d(in[0], in[1], in[2], attrs.stride);
    case Primitive::AvgPool3x3: need(1); return avg_pool3x3(in[0], attrs.stride);
    case Primitive::MaxPool3x3: need(1); return max_pool3x3(in[0], attrs.stride);
    case Primitive::ConcatChannels: return concat_channels(in);
    case Primitive::GlobalAvgPool: need(1); return global_avg_pool(in[0]);
    case Primitive::Affine: need(3); return affine(in[0], in[1], in[2]);
    case Primitive::NllLoss: need(1); return nll_loss(in[0], attrs.labels);
    case Primitive::Sum: need(1); return sum(in[0]);
    case Primitive::WeightedSum:
        if (in.size() < 2) {
            throw ShapeError("weighted_sum: expected terms followed by a weight vector");
        }
        return weighted_sum(in.first(in.size() - 1), in.back());
    case Primitive::Reshape: need(1); return reshape(in[0], attrs.shape);
    }
    throw ShapeError("unsupported primitive");
}

} // namespace itnas::ad
