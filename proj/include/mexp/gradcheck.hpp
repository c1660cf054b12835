#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mexp/model.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"
#include "mexp/numgrid/tape.hpp"

namespace mexp {

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t checked = 0;
    std::string worst;  // "leaf[index]" of the largest error
};

struct GradCheckOptions {
    double eps = 1e-5;
    std::size_t samples_per_leaf = 24;  // entries probed per leaf; all when fewer
    double floor = 1e-6;                // denominator floor for near-zero gradients
    std::uint64_t seed = 1;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of the scalar `loss` with central differences,
/// perturbing sampled entries of every leaf in `leaves`.
inline GradCheckResult check_gradients(ParamSetD& leaves, const std::function<GridD()>& loss,
                                       const GradCheckOptions& opt) {
    if (!(opt.eps > 0)) throw ValidationError("grad_check: eps must be positive");
    leaves.zero_grad();
    TapeD tape;
    GridD l;
    {
        Recording<double> rec(tape);
        l = loss();
    }
    tape.backward(l);

    GradCheckResult res;
    CounterRng rng(opt.seed, "gradcheck.sample");
    for (const auto& name : leaves.names()) {
        const auto analytic = leaves.grad(name);
        auto& leaf = leaves.at(name);
        std::vector<std::size_t> idx(leaf.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > opt.samples_per_leaf) {
            for (std::size_t i = 0; i < opt.samples_per_leaf; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
            idx.resize(opt.samples_per_leaf);
        }
        for (std::size_t i : idx) {
            double& v = leaf.mutable_values()[i];
            const double saved = v;
            v = saved + opt.eps;
            const double up = loss().item();
            v = saved - opt.eps;
            const double down = loss().item();
            v = saved;
            const double numeric = (up - down) / (2 * opt.eps);
            const double err = relative_error(analytic[i], numeric, opt.floor);
            ++res.checked;
            if (err >= res.max_rel_error) {
                res.max_rel_error = err;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

namespace detail {

inline GridD random_grid(const Shape& shape, CounterRng& rng, double lo = -1, double hi = 1) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return GridD(shape, std::move(v));
}

/// Random fixed projection turning any output into a scalar.
inline GridD project(const GridD& out, std::uint64_t seed) {
    CounterRng rng(seed, "gradcheck.project");
    std::vector<double> w(out.size());
    for (auto& x : w) x = rng.uniform(-1, 1);
    return weighted_sum(out, std::span<const double>(w));
}

/// Small widths with every stage of the full pipeline intact.
inline Architecture tiny_architecture() {
    Architecture a;
    a.frame_height = 32;
    a.frame_width = 32;
    a.spatial_block1 = 4;
    a.spatial_block2 = 6;
    a.spatial_block3 = 8;
    a.spatial_reduce_mid = 6;
    a.feature_channels = 5;
    a.temporal_enc1 = 3;
    a.temporal_enc2 = 4;
    a.temporal_dec = 3;
    a.joint_channels = 6;
    a.vector_hidden = 12;
    a.vector_dim = 6;
    a.gru_hidden = 6;
    a.head_hidden = 6;
    return a;
}

}  // namespace detail

using GradComponent = std::function<GradCheckResult(const GradCheckOptions&)>;

/// Named gradient checks on seeded small inputs, in double precision.
inline const std::map<std::string, GradComponent>& grad_components() {
    static const std::map<std::string, GradComponent> registry = [] {
        std::map<std::string, GradComponent> r;

        r["conv2d"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.conv2d");
            ParamSetD p;
            p.add("input", detail::random_grid({2, 3, 7, 7}, rng));
            p.add("kernel", detail::random_grid({4, 3, 3, 3}, rng));
            p.add("bias", detail::random_grid({4}, rng));
            p.add("kernel_dilated", detail::random_grid({2, 3, 3, 3}, rng));
            return check_gradients(p, [&] {
                const auto a = conv2d(p.at("input"), p.at("kernel"), p.at("bias"), {2, 1, 1});
                const auto b = conv2d(p.at("input"), p.at("kernel_dilated"), {1, 2, 2});
                return add(detail::project(a, 1), detail::project(b, 2));
            }, opt);
        };

        r["fully_connected"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.fc");
            ParamSetD p;
            p.add("input", detail::random_grid({3, 6}, rng));
            p.add("weight", detail::random_grid({5, 6}, rng));
            p.add("bias", detail::random_grid({5}, rng));
            return check_gradients(p, [&] {
                return detail::project(fully_connected(p.at("input"), p.at("weight"), p.at("bias")), 3);
            }, opt);
        };

        r["activations"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.act");
            ParamSetD p;
            p.add("x", detail::random_grid({4, 5}, rng, -3, 3));
            return check_gradients(p, [&] {
                return add(detail::project(tanh(p.at("x")), 4), detail::project(sigmoid(p.at("x")), 5));
            }, opt);
        };

        r["softmax_class_loss"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.softmax");
            ParamSetD p;
            p.add("logits", detail::random_grid({4, 5}, rng, -2, 2));
            const std::vector<int> cls{0, 3, 1, 4};
            const auto onehot = one_hot<double>(cls, 5);
            return check_gradients(p, [&] { return class_loss(softmax(p.at("logits")), onehot); }, opt);
        };

        r["intensity_loss"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.l1");
            ParamSetD p;
            std::vector<double> pred(6), target(6);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                target[i] = rng.uniform(0, 1);
                // keep clear of the kink at pred == target
                pred[i] = target[i] + (rng.below(2) ? 1 : -1) * rng.uniform(0.05, 0.5);
            }
            p.add("pred", GridD({6}, pred));
            return check_gradients(p, [&] { return intensity_loss(p.at("pred"), std::span<const double>(target)); },
                                   opt);
        };

        r["gru_step"] = [](const GradCheckOptions& opt) {
            CounterRng rng(opt.seed, "gradcheck.gru");
            ParamSetD p;
            for (const char* gate : {"gru.update", "gru.reset", "gru.candidate"}) {
                p.add(std::string(gate) + ".weight", detail::random_grid({6, 10}, rng));
                p.add(std::string(gate) + ".bias", detail::random_grid({6}, rng));
            }
            p.add("x", detail::random_grid({4}, rng));
            p.add("h", detail::random_grid({6}, rng));
            return check_gradients(p, [&] { return detail::project(gru_step(p.at("x"), p.at("h"), p), 6); }, opt);
        };

        r["pipeline"] = [](const GradCheckOptions& opt) {
            // 15 frames: the recurrent unroll spans 14 steps
            const auto arch = detail::tiny_architecture();
            auto p = init_params<double>(arch, opt.seed);
            CounterRng rng(opt.seed, "gradcheck.pipeline");
            const int n = 15;
            const auto frames = detail::random_grid({n, 3, arch.frame_height, arch.frame_width}, rng, 0, 1);
            const auto flows = detail::random_grid({n - 1, 2, arch.frame_height, arch.frame_width}, rng, -1, 1);
            std::vector<int> cls(n - 1);
            std::vector<double> inten(n - 1);
            for (int k = 0; k < n - 1; ++k) {
                cls[k] = static_cast<int>(rng.below(5));
                inten[k] = rng.uniform(0, 1);
            }
            auto o = opt;
            o.samples_per_leaf = std::min<std::size_t>(opt.samples_per_leaf, 6);
            return check_gradients(p, [&] {
                const auto out = run_pipeline(p, arch, frames, flows);
                return pipeline_loss<double>(out, cls, inten, 1.0).total;
            }, o);
        };
        return r;
    }();
    return registry;
}

inline GradCheckResult grad_check(const std::string& component, const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0)) throw ValidationError("grad_check: eps must be positive");
    const auto& reg = grad_components();
    const auto it = reg.find(component);
    if (it == reg.end()) {
        std::string known;
        for (const auto& [name, fn] : reg) known += (known.empty() ? "" : ", ") + name;
        throw ValidationError("grad_check: unknown component '" + component + "' (known: " + known + ")");
    }
    return it->second(opt);
}

}  // namespace mexp
