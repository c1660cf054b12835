#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mexp/architecture.hpp"
#include "mexp/contrast.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"

namespace mexp {

enum class ExpressionState { neutral, onset, onset_apex, apex, apex_offset, offset };

inline std::string_view state_name(ExpressionState s) {
    switch (s) {
        case ExpressionState::neutral: return "neutral";
        case ExpressionState::onset: return "onset";
        case ExpressionState::onset_apex: return "onset-apex";
        case ExpressionState::apex: return "apex";
        case ExpressionState::apex_offset: return "apex-offset";
        case ExpressionState::offset: return "offset";
    }
    return "?";
}

template <typename T>
struct ClassPrediction {
    BasicGrid<T> probs;  // K (or N×K)
    std::vector<int> predicted_class;
};

template <typename T>
struct IntensityPrediction {
    BasicGrid<T> intensity;  // 1 (or N×1), each in [0,1]
};

/// Lowest index among the maximal entries.
template <typename T>
int argmax(std::span<const T> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

template <typename T>
void add_memory_params(BasicParamSet<T>& params, const Architecture& arch, std::uint64_t seed) {
    detail::add_layer(params, "gru.input.fc1", {arch.vector_hidden, arch.flat_joint()}, seed);
    detail::add_layer(params, "gru.input.fc2", {arch.vector_dim, arch.vector_hidden}, seed);
    // recurrent weights: uniform ±1/sqrt(hidden), zero bias
    const double limit = 1.0 / std::sqrt(static_cast<double>(arch.gru_hidden));
    for (const char* gate : {"gru.update", "gru.reset", "gru.candidate"}) {
        const std::string w = std::string(gate) + ".weight";
        params.add(w, uniform_init<T>({arch.gru_hidden, arch.vector_dim + arch.gru_hidden}, limit,
                                      derive_seed(seed, w)));
        params.add(std::string(gate) + ".bias", BasicGrid<T>::zeros({arch.gru_hidden}));
    }
    detail::add_layer(params, "head.class.fc1", {arch.head_hidden, arch.gru_hidden}, seed);
    detail::add_layer(params, "head.class.fc2", {arch.classes, arch.head_hidden}, seed);
    detail::add_layer(params, "head.reg.fc1", {arch.head_hidden, arch.gru_hidden}, seed);
    detail::add_layer(params, "head.reg.fc2", {1, arch.head_hidden}, seed);
}

namespace detail {

template <typename T>
BasicGrid<T> dense(const BasicGrid<T>& x, const BasicParamSet<T>& params, const std::string& prefix) {
    return fully_connected(x, params.at(prefix + ".weight"), params.at(prefix + ".bias"));
}

}  // namespace detail

/// Flatten → dense(vector_hidden) + tanh → dense(vector_dim) + tanh.
/// 256×h×w gives a vector; N×256×h×w gives N×vector_dim.
template <typename T>
BasicGrid<T> reduce_to_vector(const JointFeature<T>& joint, const BasicParamSet<T>& params) {
    const auto& f = joint.features;
    const int flat = params.at("gru.input.fc1.weight").extent(1);
    const bool batched = f.rank() == 4;
    if ((f.rank() != 3 && !batched) || f.size() / (batched ? f.extent(0) : 1) != static_cast<std::size_t>(flat)) {
        throw ShapeError("reduce_to_vector: joint feature " + to_string(f.shape()) + " does not flatten to " +
                         std::to_string(flat));
    }
    auto x = reshape(f, batched ? Shape{f.extent(0), flat} : Shape{flat});
    x = tanh(detail::dense(x, params, "gru.input.fc1"));
    return tanh(detail::dense(x, params, "gru.input.fc2"));
}

/// z = σ(W_z[x;h]+b_z), r = σ(W_r[x;h]+b_r), h̃ = tanh(W_h[x; r⊙h]+b_h),
/// h' = (1−z)⊙h + z⊙h̃.
template <typename T>
BasicGrid<T> gru_step(const BasicGrid<T>& x, const BasicGrid<T>& h_prev, const BasicParamSet<T>& params) {
    const int hidden = params.at("gru.update.bias").extent(0);
    const int input = params.at("gru.update.weight").extent(1) - hidden;
    if (x.rank() != 1 || h_prev.rank() != 1 || x.extent(0) != input || h_prev.extent(0) != hidden) {
        throw ShapeError("gru_step: expected x[" + std::to_string(input) + "], h[" + std::to_string(hidden) +
                         "], got " + to_string(x.shape()) + ", " + to_string(h_prev.shape()));
    }
    const auto xh = concat<T>({x, h_prev}, 0);
    const auto z = sigmoid(detail::dense(xh, params, "gru.update"));
    const auto r = sigmoid(detail::dense(xh, params, "gru.reset"));
    const auto candidate = tanh(detail::dense(concat<T>({x, mul(r, h_prev)}, 0), params, "gru.candidate"));
    return add(h_prev, mul(z, sub(candidate, h_prev)));
}

/// Runs the GRU over the rows of `xs` (N×input) from a zero state and returns
/// the N×hidden stack of states.
template <typename T>
BasicGrid<T> gru_sequence(const BasicGrid<T>& xs, const BasicParamSet<T>& params) {
    const int hidden = params.at("gru.update.bias").extent(0);
    auto h = BasicGrid<T>::zeros({hidden});
    std::vector<BasicGrid<T>> states;
    states.reserve(xs.extent(0));
    for (int t = 0; t < xs.extent(0); ++t) {
        h = gru_step(select(xs, t), h, params);
        states.push_back(h);
    }
    return stack(states);
}

template <typename T>
struct HeadOutput {
    ClassPrediction<T> cls;
    IntensityPrediction<T> intensity;
};

/// Classification: dense + tanh → dense(classes) → softmax.
/// Regression: dense + tanh → dense(1) → sigmoid.
template <typename T>
HeadOutput<T> heads(const BasicGrid<T>& h, const BasicParamSet<T>& params) {
    const auto logits = detail::dense(tanh(detail::dense(h, params, "head.class.fc1")), params, "head.class.fc2");
    const auto probs = softmax(logits);
    const auto intensity = sigmoid(detail::dense(tanh(detail::dense(h, params, "head.reg.fc1")), params, "head.reg.fc2"));
    HeadOutput<T> out{{probs, {}}, {intensity}};
    const int k = probs.extent(-1);
    for (std::size_t r = 0; r < probs.size() / k; ++r) {
        out.cls.predicted_class.push_back(argmax<T>(probs.values().subspan(r * k, k)));
    }
    return out;
}

/// Cross-entropy over a sequence of per-frame probability vectors.
template <typename T>
BasicGrid<T> class_loss(const std::vector<BasicGrid<T>>& pred_probs, const std::vector<BasicGrid<T>>& true_onehot) {
    if (pred_probs.size() != true_onehot.size() || pred_probs.empty()) {
        throw ShapeError("class_loss: " + std::to_string(pred_probs.size()) + " predictions vs " +
                         std::to_string(true_onehot.size()) + " targets");
    }
    return class_loss(stack(pred_probs), stack(true_onehot));
}

/// N×K one-hot rows for class indices.
template <typename T>
BasicGrid<T> one_hot(std::span<const int> classes, int k) {
    std::vector<T> v(classes.size() * k, T(0));
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] < 0 || classes[i] >= k) throw ValidationError("one_hot: class index out of range");
        v[i * k + classes[i]] = T(1);
    }
    return BasicGrid<T>({static_cast<int>(classes.size()), k}, std::move(v));
}

struct StateThresholds {
    double low = 0.1;    // below: neutral
    double high = 0.9;   // at or above: apex
    double split = 0.5;  // onset vs onset-apex, offset vs apex-offset
};

/// Per-frame expression phase from an intensity envelope. Non-neutral,
/// non-apex frames are rising or falling by the sign of the 3-frame moving
/// average of forward differences (frames t−1, t, t+1; zero counts as rising).
template <typename T>
std::vector<ExpressionState> states_from_intensity(std::span<const T> intensity, const StateThresholds& th = {}) {
    if (intensity.empty()) throw ValidationError("states_from_intensity: empty sequence");
    for (T v : intensity) {
        if (!(v >= T(0) && v <= T(1))) throw ValidationError("states_from_intensity: values must lie in [0,1]");
    }
    const int n = static_cast<int>(intensity.size());
    std::vector<ExpressionState> out(n, ExpressionState::neutral);
    for (int t = 0; t < n; ++t) {
        const double v = intensity[t];
        if (v < th.low) continue;
        if (v >= th.high) {
            out[t] = ExpressionState::apex;
            continue;
        }
        double slope = 0;
        int count = 0;
        for (int d = t - 1; d <= t + 1; ++d) {
            if (d < 0 || d + 1 >= n) continue;
            slope += double(intensity[d + 1]) - double(intensity[d]);
            ++count;
        }
        if (count) slope /= count;
        if (slope >= 0) {
            out[t] = v <= th.split ? ExpressionState::onset : ExpressionState::onset_apex;
        } else {
            out[t] = v > th.split ? ExpressionState::apex_offset : ExpressionState::offset;
        }
    }
    return out;
}

}  // namespace mexp
