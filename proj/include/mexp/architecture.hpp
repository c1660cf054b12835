#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>

#include "mexp/numgrid/param_set.hpp"

namespace mexp {

/// Layer widths of the whole pipeline. Defaults give the 64×64 → 128×8×8
/// spatial map, 16×16 motion map and 256-d recurrent input.
struct Architecture {
    int frame_height = 64;
    int frame_width = 64;

    int spatial_block1 = 16;
    int spatial_block2 = 64;
    int spatial_block3 = 256;
    int spatial_reduce_mid = 128;
    int feature_channels = 128;

    int temporal_enc1 = 16;
    int temporal_enc2 = 32;
    int temporal_dec = 16;

    int context_dilation = 4;
    int joint_channels = 256;

    int vector_hidden = 1024;
    int vector_dim = 256;
    int gru_hidden = 256;
    int head_hidden = 256;
    int classes = 5;

    int map_height() const { return frame_height / 8; }
    int map_width() const { return frame_width / 8; }
    int flat_joint() const { return joint_channels * map_height() * map_width(); }
    int fused_channels() const { return 4 * feature_channels + 1; }

    void validate() const {
        if (frame_height <= 0 || frame_width <= 0 || frame_height % 8 != 0 || frame_width % 8 != 0) {
            throw ShapeError("frame extents must be positive multiples of 8, got " + std::to_string(frame_height) +
                             "x" + std::to_string(frame_width));
        }
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Architecture, frame_height, frame_width, spatial_block1,
                                                spatial_block2, spatial_block3, spatial_reduce_mid,
                                                feature_channels, temporal_enc1, temporal_enc2, temporal_dec,
                                                context_dilation, joint_channels, vector_hidden, vector_dim,
                                                gru_hidden, head_hidden, classes)

namespace detail {

/// Xavier-initialised weight plus zero bias, each seeded from its own name.
template <typename T>
void add_layer(BasicParamSet<T>& params, const std::string& prefix, const Shape& weight_shape,
               std::uint64_t seed) {
    const std::string w = prefix + ".weight";
    params.add(w, xavier_init<T>(weight_shape, derive_seed(seed, w)));
    params.add(prefix + ".bias", BasicGrid<T>::zeros({weight_shape[0]}));
}

}  // namespace detail

}  // namespace mexp
