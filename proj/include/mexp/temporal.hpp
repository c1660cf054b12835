#pragma once

#include <cstdint>

#include "mexp/architecture.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"

namespace mexp {

/// Per-pixel motion likelihood in [0,1] at a quarter of the flow resolution:
/// 1 × H/4 × W/4 (or N × 1 × H/4 × W/4).
template <typename T>
struct MotionMap {
    BasicGrid<T> likelihood;
};

template <typename T>
void add_temporal_params(BasicParamSet<T>& params, const Architecture& arch, std::uint64_t seed) {
    detail::add_layer(params, "temporal.enc1", {arch.temporal_enc1, 2, 3, 3}, seed);
    detail::add_layer(params, "temporal.enc2", {arch.temporal_enc2, arch.temporal_enc1, 3, 3}, seed);
    detail::add_layer(params, "temporal.dec", {arch.temporal_dec, arch.temporal_enc2, 3, 3}, seed);
    detail::add_layer(params, "temporal.out", {1, arch.temporal_dec, 1, 1}, seed);
}

/// Encoder: two stride-2 3×3 tanh blocks (H/4) and a 2×2 average-pool
/// bottleneck (H/8). Decoder: 2× nearest upsampling back to H/4, a 3×3 tanh
/// block, and a 1×1 sigmoid head. Accepts 2×H×W flow or N×2×H×W.
template <typename T>
MotionMap<T> encode_motion(const BasicGrid<T>& flow, const BasicParamSet<T>& params) {
    if (flow.rank() < 3 || flow.extent(-3) != 2) {
        throw ShapeError("encode_motion: expected 2xHxW flow, got " + to_string(flow.shape()));
    }
    // the bottleneck pools H/4 once more, so H/4 must itself be even
    if (flow.extent(-2) % 8 != 0 || flow.extent(-1) % 8 != 0) {
        throw ShapeError("encode_motion: flow extents must be divisible by 8, got " + to_string(flow.shape()));
    }
    auto conv = [&](const BasicGrid<T>& x, const std::string& p, Conv2dOptions opt) {
        return conv2d(x, params.at(p + ".weight"), params.at(p + ".bias"), opt);
    };
    const Conv2dOptions down{.stride = 2, .padding = 1, .dilation = 1};
    const Conv2dOptions same{.stride = 1, .padding = 1, .dilation = 1};
    auto x = tanh(conv(flow, "temporal.enc1", down));
    x = tanh(conv(x, "temporal.enc2", down));
    x = avg_pool2(x);
    x = upsample_nearest2(x);
    x = tanh(conv(x, "temporal.dec", same));
    return {sigmoid(conv(x, "temporal.out", {}))};
}

/// 2×2 mean pooling, stride 2; brings the motion map to the spatial map grid.
template <typename T>
BasicGrid<T> downsample2(const BasicGrid<T>& map) {
    return avg_pool2(map);
}

template <typename T>
BasicGrid<T> downsample2(const MotionMap<T>& map) {
    return avg_pool2(map.likelihood);
}

}  // namespace mexp
