#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mexp/numgrid/grid.hpp"
#include "mexp/numgrid/tape.hpp"

namespace mexp {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
BasicTape<T>* tape_for(std::initializer_list<const BasicGrid<T>*> inputs) {
    auto* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const auto* g : inputs) {
        if (g && g->defined() && g->requires_grad()) return tape;
    }
    return nullptr;
}

template <typename T>
BasicTape<T>* tape_for(const std::vector<BasicGrid<T>>& inputs) {
    auto* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const auto& g : inputs) {
        if (g.requires_grad()) return tape;
    }
    return nullptr;
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

inline int conv_output_extent(int in, int kernel, const Conv2dOptions& o) {
    return (in + 2 * o.padding - o.dilation * (kernel - 1) - 1) / o.stride + 1;
}

namespace detail {

struct ConvGeometry {
    int batch, channels, height, width;
    int out_channels, kh, kw;
    int out_h, out_w;
    Conv2dOptions opt;

    int col_rows() const { return channels * kh * kw; }
    int col_cols() const { return batch * out_h * out_w; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const int plane = g.out_h * g.out_w;
    const int cols = g.col_cols();
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
                for (int n = 0; n < g.batch; ++n) {
                    const T* src = x + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
                    T* dst = row + static_cast<std::size_t>(n) * plane;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.opt.stride - g.opt.padding + ki * g.opt.dilation;
                        T* drow = dst + oy * g.out_w;
                        if (iy < 0 || iy >= g.height) {
                            std::fill(drow, drow + g.out_w, T(0));
                            continue;
                        }
                        const T* srow = src + static_cast<std::size_t>(iy) * g.width;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.opt.stride - g.opt.padding + kj * g.opt.dilation;
                            drow[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const int plane = g.out_h * g.out_w;
    const int cols = g.col_cols();
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
                for (int n = 0; n < g.batch; ++n) {
                    T* dst = dx + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
                    const T* src = row + static_cast<std::size_t>(n) * plane;
                    for (int oy = 0; oy < g.out_h; ++oy) {
                        const int iy = oy * g.opt.stride - g.opt.padding + ki * g.opt.dilation;
                        if (iy < 0 || iy >= g.height) continue;
                        T* drow = dst + static_cast<std::size_t>(iy) * g.width;
                        const T* srow = src + oy * g.out_w;
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const int ix = ox * g.opt.stride - g.opt.padding + kj * g.opt.dilation;
                            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation. `input` is C×H×W or N×C×H×W, `kernel` O×C×Kh×Kw,
/// `bias` (optional, may be undefined) has O entries. The output keeps the
/// input's rank.
template <typename T>
BasicGrid<T> conv2d(const BasicGrid<T>& input, const BasicGrid<T>& kernel,
                    const BasicGrid<T>& bias, Conv2dOptions opt = {}) {
    using detail::require;
    require(input.rank() == 3 || input.rank() == 4,
            "conv2d: input must be CxHxW or NxCxHxW, got " + to_string(input.shape()));
    require(kernel.rank() == 4, "conv2d: kernel must be OxCxKhxKw, got " + to_string(kernel.shape()));
    if (opt.stride < 1 || opt.padding < 0 || opt.dilation < 1) {
        throw ValidationError("conv2d: need stride >= 1, padding >= 0, dilation >= 1");
    }
    const bool batched = input.rank() == 4;
    detail::ConvGeometry g{};
    g.batch = batched ? input.extent(0) : 1;
    g.channels = input.extent(-3);
    g.height = input.extent(-2);
    g.width = input.extent(-1);
    g.out_channels = kernel.extent(0);
    g.kh = kernel.extent(2);
    g.kw = kernel.extent(3);
    g.opt = opt;
    require(kernel.extent(1) == g.channels,
            "conv2d: kernel expects " + std::to_string(kernel.extent(1)) + " input channels, input has " +
                std::to_string(g.channels));
    if (bias.defined()) {
        require(bias.size() == static_cast<std::size_t>(g.out_channels),
                "conv2d: bias length must equal output channels");
    }
    const int eff_h = opt.dilation * (g.kh - 1) + 1;
    const int eff_w = opt.dilation * (g.kw - 1) + 1;
    require(eff_h <= g.height + 2 * opt.padding && eff_w <= g.width + 2 * opt.padding,
            "conv2d: effective kernel does not fit the padded input");
    g.out_h = conv_output_extent(g.height, g.kh, opt);
    g.out_w = conv_output_extent(g.width, g.kw, opt);

    const int plane = g.out_h * g.out_w;
    auto col = std::make_shared<Buffer<T>>(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
    detail::im2col(input.data(), g, col->data());

    detail::MapConstMat<T> w(kernel.data(), g.out_channels, g.col_rows());
    detail::MapConstMat<T> c(col->data(), g.col_rows(), g.col_cols());
    detail::RowMat<T> y = w * c;

    Buffer<T> out(static_cast<std::size_t>(g.batch) * g.out_channels * plane);
    for (int n = 0; n < g.batch; ++n) {
        for (int o = 0; o < g.out_channels; ++o) {
            const T b = bias.defined() ? bias[o] : T(0);
            const T* src = y.data() + static_cast<std::size_t>(o) * g.col_cols() + n * plane;
            T* dst = out.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * plane;
            for (int p = 0; p < plane; ++p) dst[p] = src[p] + b;
        }
    }
    Shape shape = batched ? Shape{g.batch, g.out_channels, g.out_h, g.out_w}
                          : Shape{g.out_channels, g.out_h, g.out_w};
    BasicGrid<T> result(std::move(shape), std::move(out));

    if (auto* tape = detail::tape_for<T>({&input, &kernel, &bias})) {
        result.set_requires_grad(true);
        tape->push("conv2d", {input, kernel, bias}, result, [=]() mutable {
            const auto dout = result.grad();
            detail::RowMat<T> dy(g.out_channels, g.col_cols());
            for (int n = 0; n < g.batch; ++n) {
                for (int o = 0; o < g.out_channels; ++o) {
                    const T* src = dout.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * plane;
                    std::copy(src, src + plane, dy.data() + static_cast<std::size_t>(o) * g.col_cols() + n * plane);
                }
            }
            detail::MapConstMat<T> cm(col->data(), g.col_rows(), g.col_cols());
            detail::MapConstMat<T> wm(kernel.data(), g.out_channels, g.col_rows());
            if (kernel.requires_grad()) {
                detail::MapMat<T> dw(kernel.grad_buffer().data(), g.out_channels, g.col_rows());
                dw.noalias() += dy * cm.transpose();
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = bias.grad_buffer();
                for (int o = 0; o < g.out_channels; ++o) db[o] += dy.row(o).sum();
            }
            if (input.requires_grad()) {
                detail::RowMat<T> dcol = wm.transpose() * dy;
                detail::col2im_add(dcol.data(), g, input.grad_buffer().data());
            }
        });
    }
    return result;
}

template <typename T>
BasicGrid<T> conv2d(const BasicGrid<T>& input, const BasicGrid<T>& kernel, Conv2dOptions opt = {}) {
    return conv2d(input, kernel, BasicGrid<T>{}, opt);
}

// ---------------------------------------------------------------------------
// Dense layer

/// y = W·x + b for `input` of length n (or a batch N×n), `weights` m×n,
/// optional `bias` of length m.
template <typename T>
BasicGrid<T> fully_connected(const BasicGrid<T>& input, const BasicGrid<T>& weights,
                             const BasicGrid<T>& bias = {}) {
    using detail::require;
    require(weights.rank() == 2, "fully_connected: weights must be m x n, got " + to_string(weights.shape()));
    require(input.rank() == 1 || input.rank() == 2,
            "fully_connected: input must be n or N x n, got " + to_string(input.shape()));
    const int m = weights.extent(0);
    const int n = weights.extent(1);
    const bool batched = input.rank() == 2;
    const int rows = batched ? input.extent(0) : 1;
    require(input.extent(-1) == n, "fully_connected: input length " + std::to_string(input.extent(-1)) +
                                       " does not match weights " + to_string(weights.shape()));
    if (bias.defined()) {
        require(bias.size() == static_cast<std::size_t>(m), "fully_connected: bias length must be m");
    }
    detail::MapConstMat<T> x(input.data(), rows, n);
    detail::MapConstMat<T> w(weights.data(), m, n);
    Buffer<T> out(static_cast<std::size_t>(rows) * m);
    detail::MapMat<T> y(out.data(), rows, m);
    y.noalias() = x * w.transpose();
    if (bias.defined()) {
        for (int r = 0; r < rows; ++r)
            for (int i = 0; i < m; ++i) y(r, i) += bias[i];
    }
    BasicGrid<T> result(batched ? Shape{rows, m} : Shape{m}, std::move(out));

    if (auto* tape = detail::tape_for<T>({&input, &weights, &bias})) {
        result.set_requires_grad(true);
        tape->push("fully_connected", {input, weights, bias}, result, [=]() mutable {
            detail::MapConstMat<T> dy(result.grad().data(), rows, m);
            detail::MapConstMat<T> xm(input.data(), rows, n);
            detail::MapConstMat<T> wm(weights.data(), m, n);
            if (weights.requires_grad()) {
                detail::MapMat<T> dw(weights.grad_buffer().data(), m, n);
                dw.noalias() += dy.transpose() * xm;
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = bias.grad_buffer();
                for (int r = 0; r < rows; ++r)
                    for (int i = 0; i < m; ++i) db[i] += dy(r, i);
            }
            if (input.requires_grad()) {
                detail::MapMat<T> dx(input.grad_buffer().data(), rows, n);
                dx.noalias() += dy * wm;
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

/// Elementwise unary op whose derivative is a function of the output.
template <typename T, typename Fwd, typename DerivFromOut>
BasicGrid<T> unary_from_output(const char* name, const BasicGrid<T>& x, Fwd f, DerivFromOut df) {
    Buffer<T> out(x.size());
    f(x.values(), std::span<T>(out));
    BasicGrid<T> result(x.shape(), std::move(out));
    if (auto* tape = tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push(name, {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            const auto y = result.values();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df(y[i]);
        });
    }
    return result;
}

template <typename T>
T stable_sigmoid(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
BasicGrid<T> tanh(const BasicGrid<T>& x) {
    return detail::unary_from_output<T>(
        "tanh", x,
        [](std::span<const T> in, std::span<T> out) {
            using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
            const auto n = static_cast<Eigen::Index>(in.size());
            Eigen::Map<Arr>(out.data(), n) = Eigen::Map<const Arr>(in.data(), n).tanh();
        },
        [](T y) { return T(1) - y * y; });
}

template <typename T>
BasicGrid<T> sigmoid(const BasicGrid<T>& x) {
    return detail::unary_from_output<T>(
        "sigmoid", x,
        [](std::span<const T> in, std::span<T> out) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = detail::stable_sigmoid(in[i]);
        },
        [](T y) { return y * (T(1) - y); });
}

enum class Activation { tanh, sigmoid };

template <typename T>
BasicGrid<T> activation(const BasicGrid<T>& x, Activation kind) {
    return kind == Activation::tanh ? tanh(x) : sigmoid(x);
}

namespace detail {

template <typename T, typename F, typename DA, typename DB>
BasicGrid<T> binary(const char* name, const BasicGrid<T>& a, const BasicGrid<T>& b, F f, DA da, DB db) {
    require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " + to_string(a.shape()) +
                                        " vs " + to_string(b.shape()));
    Buffer<T> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    BasicGrid<T> result(a.shape(), std::move(out));
    if (auto* tape = tape_for<T>({&a, &b})) {
        result.set_requires_grad(true);
        tape->push(name, {a, b}, result, [=]() mutable {
            const auto dy = result.grad();
            const auto av2 = a.values();
            const auto bv2 = b.values();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * da(av2[i], bv2[i]);
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dy[i] * db(av2[i], bv2[i]);
            }
        });
    }
    return result;
}

}  // namespace detail

template <typename T>
BasicGrid<T> add(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    return detail::binary<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
BasicGrid<T> sub(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    return detail::binary<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
BasicGrid<T> mul(const BasicGrid<T>& a, const BasicGrid<T>& b) {
    return detail::binary<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
BasicGrid<T> scale(const BasicGrid<T>& x, T factor) {
    Buffer<T> out(x.values().begin(), x.values().end());
    for (auto& v : out) v *= factor;
    BasicGrid<T> result(x.shape(), std::move(out));
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("scale", {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicGrid<T> sum(const BasicGrid<T>& x) {
    T acc = 0;
    for (T v : x.values()) acc += v;
    BasicGrid<T> result({1}, {acc});
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("sum", {x}, result, [=]() mutable {
            const T g = result.grad()[0];
            for (auto& d : x.grad_buffer()) d += g;
        });
    }
    return result;
}

template <typename T>
BasicGrid<T> mean(const BasicGrid<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Σ x·w with `w` treated as a constant.
template <typename T>
BasicGrid<T> weighted_sum(const BasicGrid<T>& x, std::span<const T> w) {
    detail::require(w.size() == x.size(), "weighted_sum: weight count must match grid size");
    T acc = 0;
    const auto xv = x.values();
    for (std::size_t i = 0; i < w.size(); ++i) acc += xv[i] * w[i];
    BasicGrid<T> result({1}, {acc});
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        std::vector<T> wcopy(w.begin(), w.end());
        tape->push("weighted_sum", {x}, result, [=]() mutable {
            const T g = result.grad()[0];
            auto dx = x.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * wcopy[i];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
BasicGrid<T> reshape(const BasicGrid<T>& x, Shape shape) {
    detail::require(numel(shape) == x.size(),
                    "reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
    BasicGrid<T> result = x.detached_reshape(std::move(shape));
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("reshape", {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
        });
    }
    return result;
}

namespace detail {

struct AxisSplit {
    std::size_t outer = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit a;
    for (int i = 0; i < axis; ++i) a.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

inline int normalize_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

}  // namespace detail

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
BasicGrid<T> concat(const std::vector<BasicGrid<T>>& parts, int axis) {
    detail::require(!parts.empty(), "concat: no inputs");
    const int rank = parts.front().rank();
    axis = detail::normalize_axis(axis, rank);
    Shape shape = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        detail::require(p.rank() == rank, "concat: rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i != axis) {
                detail::require(p.extent(i) == shape[i], "concat: extent mismatch " + to_string(p.shape()) +
                                                             " vs " + to_string(shape));
            }
        }
        total += p.extent(axis);
    }
    shape[axis] = total;
    const auto split = detail::split_at(shape, axis);
    Buffer<T> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = static_cast<std::size_t>(p.extent(axis)) * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o) {
            std::copy_n(p.data() + o * chunk, chunk, out.data() + o * total * split.inner + offset);
        }
        offset += chunk;
    }
    BasicGrid<T> result(shape, std::move(out));
    if (auto* tape = detail::tape_for<T>(parts)) {
        result.set_requires_grad(true);
        tape->push("concat", parts, result, [=]() mutable {
            const auto dy = result.grad();
            for (std::size_t k = 0; k < parts.size(); ++k) {
                auto p = parts[k];
                if (!p.requires_grad()) continue;
                auto dp = p.grad_buffer();
                const std::size_t chunk = static_cast<std::size_t>(p.extent(axis)) * split.inner;
                for (std::size_t o = 0; o < split.outer; ++o) {
                    const T* src = dy.data() + o * total * split.inner + offsets[k];
                    T* dst = dp.data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return result;
}

/// Half-open range [begin, end) along `axis`.
template <typename T>
BasicGrid<T> slice(const BasicGrid<T>& x, int axis, int begin, int end) {
    axis = detail::normalize_axis(axis, x.rank());
    detail::require(0 <= begin && begin < end && end <= x.extent(axis), "slice: bad range");
    Shape shape = x.shape();
    const int full = shape[axis];
    shape[axis] = end - begin;
    const auto split = detail::split_at(shape, axis);
    const std::size_t chunk = static_cast<std::size_t>(end - begin) * split.inner;
    Buffer<T> out(numel(shape));
    for (std::size_t o = 0; o < split.outer; ++o) {
        std::copy_n(x.data() + o * full * split.inner + begin * split.inner, chunk, out.data() + o * chunk);
    }
    BasicGrid<T> result(shape, std::move(out));
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("slice", {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            for (std::size_t o = 0; o < split.outer; ++o) {
                T* dst = dx.data() + o * full * split.inner + begin * split.inner;
                const T* src = dy.data() + o * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
        });
    }
    return result;
}

/// x[index] along the leading axis, with that axis dropped.
template <typename T>
BasicGrid<T> select(const BasicGrid<T>& x, int index) {
    detail::require(x.rank() >= 2, "select: needs rank >= 2");
    Shape rest(x.shape().begin() + 1, x.shape().end());
    return reshape(slice(x, 0, index, index + 1), rest);
}

/// Stacks equally shaped grids along a new leading axis.
template <typename T>
BasicGrid<T> stack(const std::vector<BasicGrid<T>>& parts) {
    detail::require(!parts.empty(), "stack: no inputs");
    std::vector<BasicGrid<T>> lifted;
    lifted.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s{1};
        s.insert(s.end(), p.shape().begin(), p.shape().end());
        lifted.push_back(reshape(p, s));
    }
    return concat(lifted, 0);
}

// ---------------------------------------------------------------------------
// Resampling

/// 2×2 average pooling with stride 2 over the trailing two axes.
template <typename T>
BasicGrid<T> avg_pool2(const BasicGrid<T>& x) {
    detail::require(x.rank() >= 2, "avg_pool2: needs rank >= 2");
    const int h = x.extent(-2), w = x.extent(-1);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("avg_pool2: extents must be even, got " + to_string(x.shape()));
    }
    Shape shape = x.shape();
    shape[shape.size() - 2] = h / 2;
    shape[shape.size() - 1] = w / 2;
    const std::size_t planes = x.size() / (static_cast<std::size_t>(h) * w);
    const int oh = h / 2, ow = w / 2;
    Buffer<T> out(numel(shape));
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * h * w;
        T* dst = out.data() + p * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const T* a = src + (2 * i) * w + 2 * j;
                dst[i * ow + j] = (a[0] + a[1] + a[w] + a[w + 1]) * T(0.25);
            }
    }
    BasicGrid<T> result(shape, std::move(out));
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("avg_pool2", {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            for (std::size_t p = 0; p < planes; ++p) {
                T* dst = dx.data() + p * h * w;
                const T* src = dy.data() + p * oh * ow;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) {
                        const T g = src[i * ow + j] * T(0.25);
                        T* a = dst + (2 * i) * w + 2 * j;
                        a[0] += g;
                        a[1] += g;
                        a[w] += g;
                        a[w + 1] += g;
                    }
            }
        });
    }
    return result;
}

/// 2× nearest-neighbour upsampling over the trailing two axes.
template <typename T>
BasicGrid<T> upsample_nearest2(const BasicGrid<T>& x) {
    detail::require(x.rank() >= 2, "upsample_nearest2: needs rank >= 2");
    const int h = x.extent(-2), w = x.extent(-1);
    Shape shape = x.shape();
    shape[shape.size() - 2] = 2 * h;
    shape[shape.size() - 1] = 2 * w;
    const std::size_t planes = x.size() / (static_cast<std::size_t>(h) * w);
    const int oh = 2 * h, ow = 2 * w;
    Buffer<T> out(numel(shape));
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.data() + p * h * w;
        T* dst = out.data() + p * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * w + j / 2];
    }
    BasicGrid<T> result(shape, std::move(out));
    if (auto* tape = detail::tape_for<T>({&x})) {
        result.set_requires_grad(true);
        tape->push("upsample_nearest2", {x}, result, [=]() mutable {
            auto dx = x.grad_buffer();
            const auto dy = result.grad();
            for (std::size_t p = 0; p < planes; ++p) {
                T* dst = dx.data() + p * h * w;
                const T* src = dy.data() + p * oh * ow;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Probabilities and losses

/// Softmax over the last axis, max-subtracted.
template <typename T>
BasicGrid<T> softmax(const BasicGrid<T>& logits) {
    const int k = logits.extent(-1);
    const std::size_t rows = logits.size() / k;
    Buffer<T> out(logits.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = logits.data() + r * k;
        T* y = out.data() + r * k;
        const T mx = *std::max_element(x, x + k);
        T z = 0;
        for (int i = 0; i < k; ++i) z += (y[i] = std::exp(x[i] - mx));
        for (int i = 0; i < k; ++i) y[i] /= z;
    }
    BasicGrid<T> result(logits.shape(), std::move(out));
    if (auto* tape = detail::tape_for<T>({&logits})) {
        result.set_requires_grad(true);
        tape->push("softmax", {logits}, result, [=]() mutable {
            auto dx = logits.grad_buffer();
            const auto dy = result.grad();
            const auto y = result.values();
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (int i = 0; i < k; ++i) dot += dy[r * k + i] * y[r * k + i];
                for (int i = 0; i < k; ++i) dx[r * k + i] += y[r * k + i] * (dy[r * k + i] - dot);
            }
        });
    }
    return result;
}

inline constexpr double kLogFloor = 1e-12;

/// Mean cross-entropy between per-row probability vectors and one-hot
/// targets: −(1/N) Σ_i Σ_k t_ik · log(max(p_ik, 1e-12)).
template <typename T>
BasicGrid<T> class_loss(const BasicGrid<T>& probs, const BasicGrid<T>& onehot) {
    if (probs.shape() != onehot.shape()) {
        throw ShapeError("class_loss: predictions " + to_string(probs.shape()) + " vs targets " +
                         to_string(onehot.shape()));
    }
    const int k = probs.extent(-1);
    const std::size_t rows = probs.size() / k;
    const auto t = onehot.values();
    for (std::size_t r = 0; r < rows; ++r) {
        int ones = 0;
        for (int i = 0; i < k; ++i) {
            const T v = t[r * k + i];
            if (v == T(1)) {
                ++ones;
            } else if (v != T(0)) {
                ones = -1;
                break;
            }
        }
        if (ones != 1) throw ValidationError("class_loss: target row " + std::to_string(r) + " is not one-hot");
    }
    const T floor = static_cast<T>(kLogFloor);
    const auto p = probs.values();
    T acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (t[i] != T(0)) acc -= t[i] * std::log(std::max(p[i], floor));
    }
    const T n = static_cast<T>(rows);
    BasicGrid<T> result({1}, {acc / n});
    if (auto* tape = detail::tape_for<T>({&probs})) {
        result.set_requires_grad(true);
        tape->push("class_loss", {probs, onehot}, result, [=]() mutable {
            const T g = result.grad()[0];
            auto dp = probs.grad_buffer();
            const auto pv = probs.values();
            const auto tv = onehot.values();
            for (std::size_t i = 0; i < dp.size(); ++i) {
                if (tv[i] != T(0) && pv[i] > floor) dp[i] -= g * tv[i] / (n * pv[i]);
            }
        });
    }
    return result;
}

/// Mean absolute error (1/N) Σ |pred_i − target_i|. `pred` may carry a
/// trailing unit axis (N×1).
template <typename T>
BasicGrid<T> intensity_loss(const BasicGrid<T>& pred, std::span<const T> target) {
    if (pred.size() != target.size() || target.empty()) {
        throw ShapeError("intensity_loss: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
    }
    const auto p = pred.values();
    T acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - target[i]);
    const T n = static_cast<T>(p.size());
    BasicGrid<T> result({1}, {acc / n});
    if (auto* tape = detail::tape_for<T>({&pred})) {
        result.set_requires_grad(true);
        std::vector<T> tcopy(target.begin(), target.end());
        tape->push("intensity_loss", {pred}, result, [=]() mutable {
            const T g = result.grad()[0];
            auto dp = pred.grad_buffer();
            const auto pv = pred.values();
            for (std::size_t i = 0; i < dp.size(); ++i) {
                const T d = pv[i] - tcopy[i];
                dp[i] += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0))) / n;
            }
        });
    }
    return result;
}

}  // namespace mexp
