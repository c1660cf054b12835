#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mexp/numgrid/grid.hpp"
#include "mexp/numgrid/rng.hpp"

namespace mexp {

/// Named learnable grids plus one RMSProp accumulator per parameter.
/// Iteration order is lexicographic by name.
template <typename T>
class BasicParamSet {
public:
    using GridT = BasicGrid<T>;

    const GridT& add(const std::string& name, GridT value) {
        if (params_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
        value.set_requires_grad(true);
        accumulators_.emplace(name, Buffer<T>(value.size(), T(0)));
        return params_.emplace(name, std::move(value)).first->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const GridT& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
        return it->second;
    }

    GridT& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
        return it->second;
    }

    Buffer<T>& accumulator(const std::string& name) { return accumulators_.at(name); }
    const Buffer<T>& accumulator(const std::string& name) const { return accumulators_.at(name); }

    const std::map<std::string, GridT>& entries() const { return params_; }
    std::map<std::string, GridT>& entries() { return params_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [name, _] : params_) out.push_back(name);
        return out;
    }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, g] : params_) n += g.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, g] : params_) g.zero_grad();
    }

    /// Gradient of `name`; zeros when backward never reached it.
    std::vector<T> grad(const std::string& name) const {
        const auto& g = at(name);
        if (!g.has_grad()) return std::vector<T>(g.size(), T(0));
        return {g.grad().begin(), g.grad().end()};
    }

    /// Deep copy converted to another scalar type (gradient state dropped).
    template <typename U>
    BasicParamSet<U> cast() const {
        BasicParamSet<U> out;
        for (const auto& [name, g] : params_) {
            out.add(name, BasicGrid<U>(g.shape(), std::vector<U>(g.values().begin(), g.values().end())));
            const auto& acc = accumulators_.at(name);
            out.accumulator(name).assign(acc.begin(), acc.end());
        }
        return out;
    }

private:
    std::map<std::string, GridT> params_;
    std::map<std::string, Buffer<T>> accumulators_;
};

using ParamSet = BasicParamSet<float>;
using ParamSetD = BasicParamSet<double>;

struct Fans {
    double fan_in = 1;
    double fan_out = 1;
};

/// Fan-in/fan-out convention: m×n dense weights read n inputs into m outputs;
/// O×C×Kh×Kw kernels read C·Kh·Kw inputs into O·Kh·Kw outputs.
inline Fans fans_of(const Shape& shape) {
    if (shape.empty()) throw ValidationError("xavier_init: empty shape");
    if (shape.size() == 1) return {double(shape[0]), double(shape[0])};
    double receptive = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
    return {shape[1] * receptive, shape[0] * receptive};
}

inline double xavier_bound(const Shape& shape) {
    const auto f = fans_of(shape);
    return std::sqrt(6.0 / (f.fan_in + f.fan_out));
}

/// Uniform Xavier/Glorot draw on ±sqrt(6 / (fan_in + fan_out)); deterministic in `seed`.
template <typename T = float>
BasicGrid<T> xavier_init(const Shape& shape, std::uint64_t seed) {
    const double bound = xavier_bound(shape);
    CounterRng rng(seed);
    std::vector<T> values(numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return BasicGrid<T>(shape, std::move(values));
}

/// Uniform on ±limit, used where Xavier is not prescribed (recurrent weights).
template <typename T = float>
BasicGrid<T> uniform_init(const Shape& shape, double limit, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<T> values(numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
    return BasicGrid<T>(shape, std::move(values));
}

struct RmsPropConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.005;
    double rho = 0.9;
    double epsilon = 1e-8;
};

namespace detail {

/// When `clear` is set the gradient buffer is zeroed in the same pass.
template <typename T>
void rmsprop_apply(std::span<T> theta, std::span<T> grad, Buffer<T>& acc, const RmsPropConfig& cfg,
                   bool clear) {
    const T lr = static_cast<T>(cfg.learning_rate);
    const T wd = static_cast<T>(cfg.weight_decay);
    const T rho = static_cast<T>(cfg.rho);
    const T eps = static_cast<T>(cfg.epsilon);
    const std::size_t n = theta.size();
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> th(theta.data(), static_cast<Eigen::Index>(n));
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> a(acc.data(), static_cast<Eigen::Index>(n));
    if (grad.empty()) {
        a *= rho;
        th -= (lr * wd) * th;
        return;
    }
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> g(grad.data(), static_cast<Eigen::Index>(n));
    a = rho * a + (T(1) - rho) * g.square();
    th -= lr * (g / (a.sqrt() + eps) + wd * th);
    if (clear) g.setZero();
}

inline void check_rmsprop(const RmsPropConfig& cfg) {
    if (!(cfg.learning_rate > 0)) throw ValidationError("rmsprop: learning rate must be positive");
    if (!(cfg.weight_decay >= 0)) throw ValidationError("rmsprop: weight decay must be non-negative");
}

}  // namespace detail

/// One RMSProp step with decoupled weight decay: a ← ρa + (1−ρ)g²;
/// θ ← θ − lr·(g/(√a + ε) + λθ). The decay term stays out of the
/// accumulator, so it shrinks weights in proportion to their size instead of
/// by a normalised step of about lr.
/// `grads` must name exactly the parameters in `params`.
template <typename T>
void rmsprop_update(BasicParamSet<T>& params, const std::map<std::string, std::vector<T>>& grads,
                    const RmsPropConfig& cfg) {
    detail::check_rmsprop(cfg);
    if (grads.size() != params.size()) {
        throw ValidationError("rmsprop: got gradients for " + std::to_string(grads.size()) + " of " +
                              std::to_string(params.size()) + " parameters");
    }
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw ValidationError("rmsprop: gradient for unknown parameter '" + name + "'");
        if (g.size() != params.at(name).size()) {
            throw ShapeError("rmsprop: gradient size mismatch for '" + name + "'");
        }
    }
    for (auto& [name, param] : params.entries()) {
        auto g = grads.at(name);
        detail::rmsprop_apply<T>(param.mutable_values(), g, params.accumulator(name), cfg, false);
    }
}

/// Same update using the gradients accumulated on the parameters by the
/// last backward pass (absent gradient = zero), then clears them.
template <typename T>
void rmsprop_step(BasicParamSet<T>& params, const RmsPropConfig& cfg) {
    detail::check_rmsprop(cfg);
    for (auto& [name, param] : params.entries()) {
        auto g = param.has_grad() ? param.grad_buffer() : std::span<T>{};
        detail::rmsprop_apply<T>(param.mutable_values(), g, params.accumulator(name), cfg, true);
    }
}

}  // namespace mexp
