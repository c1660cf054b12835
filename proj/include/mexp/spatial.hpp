#pragma once

#include <cstdint>

#include "mexp/architecture.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"

namespace mexp {

/// 128 × H/8 × W/8 feature map of one frame (or N × 128 × H/8 × W/8 for a
/// batch of frames).
template <typename T>
struct SpatialFeatureMap {
    BasicGrid<T> features;
};

template <typename T>
void add_spatial_params(BasicParamSet<T>& params, const Architecture& arch, std::uint64_t seed) {
    detail::add_layer(params, "spatial.block1", {arch.spatial_block1, 3, 3, 3}, seed);
    detail::add_layer(params, "spatial.block2", {arch.spatial_block2, arch.spatial_block1, 3, 3}, seed);
    detail::add_layer(params, "spatial.block3", {arch.spatial_block3, arch.spatial_block2, 3, 3}, seed);
    detail::add_layer(params, "spatial.reduce1", {arch.spatial_reduce_mid, arch.spatial_block3, 1, 1}, seed);
    detail::add_layer(params, "spatial.reduce2", {arch.feature_channels, arch.spatial_reduce_mid, 1, 1}, seed);
}

/// Three stride-2 3×3 tanh blocks (H → H/8), then two 1×1 tanh reductions
/// down to the feature width. Accepts 3×H×W or N×3×H×W.
template <typename T>
SpatialFeatureMap<T> encode_spatial(const BasicGrid<T>& frame, const BasicParamSet<T>& params) {
    if (frame.rank() < 3 || frame.extent(-3) != 3) {
        throw ShapeError("encode_spatial: expected 3xHxW frame(s), got " + to_string(frame.shape()));
    }
    if (frame.extent(-2) % 8 != 0 || frame.extent(-1) % 8 != 0) {
        throw ShapeError("encode_spatial: frame extents must be divisible by 8, got " + to_string(frame.shape()));
    }
    const Conv2dOptions down{.stride = 2, .padding = 1, .dilation = 1};
    auto block = [&](const BasicGrid<T>& x, const char* name, Conv2dOptions opt) {
        const std::string p = name;
        return tanh(conv2d(x, params.at(p + ".weight"), params.at(p + ".bias"), opt));
    };
    auto x = block(frame, "spatial.block1", down);
    x = block(x, "spatial.block2", down);
    x = block(x, "spatial.block3", down);
    x = block(x, "spatial.reduce1", {});
    x = block(x, "spatial.reduce2", {});
    return {x};
}

}  // namespace mexp
