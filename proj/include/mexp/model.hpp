#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mexp/architecture.hpp"
#include "mexp/contrast.hpp"
#include "mexp/flow.hpp"
#include "mexp/memory.hpp"
#include "mexp/numgrid/ops.hpp"
#include "mexp/numgrid/param_set.hpp"
#include "mexp/spatial.hpp"
#include "mexp/temporal.hpp"

namespace mexp {

/// All learnable parameters of the pipeline, Xavier-initialised (recurrent
/// gates excepted). Each module draws from its own seed stream.
template <typename T = float>
BasicParamSet<T> init_params(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    BasicParamSet<T> params;
    add_spatial_params(params, arch, derive_seed(seed, "spatial"));
    add_temporal_params(params, arch, derive_seed(seed, "temporal"));
    add_contrast_params(params, arch, derive_seed(seed, "contrast"));
    add_memory_params(params, arch, derive_seed(seed, "memory"));
    return params;
}

/// Per-pair outputs for a frame window: row k describes frame k+1 as seen
/// through the pair (k, k+1) and the recurrent state of all earlier pairs.
template <typename T>
struct PipelineOutput {
    BasicGrid<T> probs;      // P×classes
    BasicGrid<T> intensity;  // P×1
    std::vector<int> predicted_class;

    int pairs() const { return probs.extent(0); }
};

/// Horn–Schunck flow for each consecutive pair, stacked as P×2×H×W.
inline Grid pair_flows(std::span<const Grid> frames, const FlowOptions& opt = {}) {
    if (frames.size() < 2) throw ValidationError("pair_flows: need at least two frames");
    std::vector<float> all;
    Shape one;
    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const Grid g = flow_to_grid(estimate_flow(frames[k], frames[k + 1], opt));
        one = g.shape();
        all.insert(all.end(), g.values().begin(), g.values().end());
    }
    Shape shape{static_cast<int>(frames.size() - 1)};
    shape.insert(shape.end(), one.begin(), one.end());
    return Grid(shape, std::move(all));
}

/// N frames (3×H×W each) stacked into an N×3×H×W grid of scalar type T.
template <typename T>
BasicGrid<T> stack_frames(std::span<const Grid> frames) {
    if (frames.empty()) throw ValidationError("stack_frames: no frames");
    std::vector<T> all;
    all.reserve(frames.size() * frames[0].size());
    for (const auto& f : frames) {
        if (f.shape() != frames[0].shape()) throw ShapeError("stack_frames: frame shapes differ");
        all.insert(all.end(), f.values().begin(), f.values().end());
    }
    Shape shape{static_cast<int>(frames.size())};
    shape.insert(shape.end(), frames[0].shape().begin(), frames[0].shape().end());
    return BasicGrid<T>(shape, std::move(all));
}

/// Full forward pass over N frames and their N−1 precomputed flows. The
/// non-recurrent stages run batched over all frames; spatial maps, local and
/// context transforms are computed once per frame and shared by both pairs
/// that contain it.
template <typename T>
PipelineOutput<T> run_pipeline(const BasicParamSet<T>& params, const Architecture& arch,
                               const BasicGrid<T>& frames, const BasicGrid<T>& flows) {
    if (frames.rank() != 4 || flows.rank() != 4) {
        throw ShapeError("run_pipeline: expected N x 3 x H x W frames and P x 2 x H x W flows");
    }
    const int n = frames.extent(0);
    const int p = n - 1;
    if (n < 2 || flows.extent(0) != p) {
        throw ShapeError("run_pipeline: " + std::to_string(n) + " frames need " + std::to_string(n - 1) +
                         " flows, got " + to_string(flows.shape()));
    }
    const auto fm = encode_spatial(frames, params).features;
    const auto ml = local_feature(fm, params);
    const auto mc = context_feature(fm, params, arch.context_dilation);
    const auto bundle = contrast_from_transforms(slice(ml, 0, 0, p), slice(mc, 0, 0, p), slice(ml, 0, 1, n),
                                                 slice(mc, 0, 1, n));
    const auto motion = downsample2(encode_motion(flows, params));
    const auto joint = fuse_joint(SpatialFeatureMap<T>{slice(fm, 0, 1, n)}, bundle, motion, params);
    const auto xs = reduce_to_vector(joint, params);
    const auto hs = gru_sequence(xs, params);
    auto out = heads(hs, params);
    return {out.cls.probs, out.intensity.intensity, std::move(out.cls.predicted_class)};
}

template <typename T>
struct LossTerms {
    BasicGrid<T> l_class;
    BasicGrid<T> l_reg;
    BasicGrid<T> total;
};

/// L = L_class + λ·L_reg, both averaged over the pairs of the window.
template <typename T>
LossTerms<T> pipeline_loss(const PipelineOutput<T>& out, std::span<const int> classes,
                           std::span<const T> intensity, double lambda) {
    const auto onehot = one_hot<T>(classes, out.probs.extent(1));
    const auto lc = class_loss(out.probs, onehot);
    const auto lr = intensity_loss(out.intensity, intensity);
    return {lc, lr, add(lc, scale(lr, static_cast<T>(lambda)))};
}

}  // namespace mexp
