#pragma once

#include <cstdint>

#include "mexp/architecture.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"
#include "mexp/spatial.hpp"

namespace mexp {

/// Time-contrasted differences between the feature maps of frames t and t+1:
///   l1_c2 = local(FM_t)   − context(FM_t+1)
///   l1_l2 = local(FM_t)   − local(FM_t+1)
///   l2_c1 = local(FM_t+1) − context(FM_t)
template <typename T>
struct ContrastBundle {
    BasicGrid<T> f_l1_c2;
    BasicGrid<T> f_l1_l2;
    BasicGrid<T> f_l2_c1;
};

/// 256 × h × w fused representation fed to the recurrent stage.
template <typename T>
struct JointFeature {
    BasicGrid<T> features;
};

template <typename T>
void add_contrast_params(BasicParamSet<T>& params, const Architecture& arch, std::uint64_t seed) {
    const int c = arch.feature_channels;
    detail::add_layer(params, "contrast.local", {c, c, 3, 3}, seed);
    detail::add_layer(params, "contrast.context", {c, c, 3, 3}, seed);
    detail::add_layer(params, "fuse", {arch.joint_channels, arch.fused_channels(), 1, 1}, seed);
}

/// M_l: 3×3 convolution (padding 1) + tanh; one weight set for every frame.
template <typename T>
BasicGrid<T> local_feature(const BasicGrid<T>& fm, const BasicParamSet<T>& params) {
    return tanh(conv2d(fm, params.at("contrast.local.weight"), params.at("contrast.local.bias"),
                       {.stride = 1, .padding = 1, .dilation = 1}));
}

/// M_c: 3×3 convolution with dilation `dilation` (padding = dilation) + tanh.
template <typename T>
BasicGrid<T> context_feature(const BasicGrid<T>& fm, const BasicParamSet<T>& params, int dilation = 4) {
    return tanh(conv2d(fm, params.at("contrast.context.weight"), params.at("contrast.context.bias"),
                       {.stride = 1, .padding = dilation, .dilation = dilation}));
}

/// Bundle from already computed local/context transforms of both frames.
template <typename T>
ContrastBundle<T> contrast_from_transforms(const BasicGrid<T>& local_t, const BasicGrid<T>& context_t,
                                           const BasicGrid<T>& local_t1, const BasicGrid<T>& context_t1) {
    return {sub(local_t, context_t1), sub(local_t, local_t1), sub(local_t1, context_t)};
}

template <typename T>
ContrastBundle<T> contrast_features(const SpatialFeatureMap<T>& fm_t, const SpatialFeatureMap<T>& fm_t1,
                                    const BasicParamSet<T>& params, int dilation = 4) {
    if (fm_t.features.shape() != fm_t1.features.shape()) {
        throw ShapeError("contrast_features: feature maps differ " + to_string(fm_t.features.shape()) + " vs " +
                         to_string(fm_t1.features.shape()));
    }
    return contrast_from_transforms(local_feature(fm_t.features, params), context_feature(fm_t.features, params, dilation),
                                    local_feature(fm_t1.features, params),
                                    context_feature(fm_t1.features, params, dilation));
}

/// Channel concatenation [FM_t+1 | l1_c2 | l1_l2 | l2_c1 | motion] followed by
/// a 1×1 convolution to the joint width and tanh. Works on single maps
/// (C×h×w) or batches (N×C×h×w).
template <typename T>
JointFeature<T> fuse_joint(const SpatialFeatureMap<T>& fm_t1, const ContrastBundle<T>& bundle,
                           const BasicGrid<T>& motion, const BasicParamSet<T>& params) {
    const auto& f = fm_t1.features;
    for (const auto* g : {&bundle.f_l1_c2, &bundle.f_l1_l2, &bundle.f_l2_c1}) {
        if (g->shape() != f.shape()) {
            throw ShapeError("fuse_joint: contrast map " + to_string(g->shape()) + " vs feature map " +
                             to_string(f.shape()));
        }
    }
    if (motion.rank() != f.rank() || motion.extent(-1) != f.extent(-1) || motion.extent(-2) != f.extent(-2) ||
        motion.extent(-3) != 1 || (f.rank() == 4 && motion.extent(0) != f.extent(0))) {
        throw ShapeError("fuse_joint: motion map " + to_string(motion.shape()) + " does not match feature map " +
                         to_string(f.shape()));
    }
    auto stacked = concat<T>({f, bundle.f_l1_c2, bundle.f_l1_l2, bundle.f_l2_c1, motion}, -3);
    return {tanh(conv2d(stacked, params.at("fuse.weight"), params.at("fuse.bias")))};
}

}  // namespace mexp
