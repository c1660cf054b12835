#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mexp/data/clip.hpp"
#include "mexp/numgrid/rng.hpp"

namespace mexp::data {

struct Range {
    double lo;
    double hi;
};

/// Geometric augmentation recipe; one transform is drawn per output sequence.
struct AugmentSpec {
    Range rotation_deg{-10.0, 10.0};
    Range scale{0.9, 1.1};
    Range translation_px{-2.0, 2.0};
    int count = 150;

    void validate() const {
        for (const auto& r : {rotation_deg, scale, translation_px}) {
            if (!(r.lo <= r.hi)) throw ValidationError("augment: range lower bound exceeds upper bound");
        }
        if (!(scale.lo > 0)) throw ValidationError("augment: scale must be positive");
        if (count < 0) throw ValidationError("augment: count must be non-negative");
    }
};

struct AugmentParams {
    double rotation_deg = 0;
    double scale = 1;
    double tx = 0;
    double ty = 0;
};

/// The `index`-th transform of the stream keyed by `seed`; a pure function
/// of its arguments, so augmented sequences can be regenerated on demand.
inline AugmentParams sample_augment(const AugmentSpec& spec, std::uint64_t seed, std::uint64_t index) {
    CounterRng rng(derive_seed(derive_seed(seed, "augment"), index));
    AugmentParams p;
    p.rotation_deg = rng.uniform(spec.rotation_deg.lo, spec.rotation_deg.hi);
    p.scale = rng.uniform(spec.scale.lo, spec.scale.hi);
    p.tx = rng.uniform(spec.translation_px.lo, spec.translation_px.hi);
    p.ty = rng.uniform(spec.translation_px.lo, spec.translation_px.hi);
    return p;
}

/// Rotation and scale about the frame centre followed by translation;
/// bilinear resampling with border replication.
inline Grid warp_frame(const Grid& frame, const AugmentParams& p) {
    const int channels = frame.extent(0), h = frame.extent(1), w = frame.extent(2);
    const double theta = p.rotation_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> out(frame.size());
    const float* src = frame.data();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            // inverse map: destination → source
            const double ox = c - cx - p.tx, oy = r - cy - p.ty;
            const double sx = std::clamp((cs * ox + sn * oy) / p.scale + cx, 0.0, double(w - 1));
            const double sy = std::clamp((-sn * ox + cs * oy) / p.scale + cy, 0.0, double(h - 1));
            const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - x0, fy = sy - y0;
            for (int ch = 0; ch < channels; ++ch) {
                const float* s = src + ch * plane;
                const double top = (1 - fx) * s[y0 * w + x0] + fx * s[y0 * w + x1];
                const double bottom = (1 - fx) * s[y1 * w + x0] + fx * s[y1 * w + x1];
                out[ch * plane + static_cast<std::size_t>(r) * w + c] = static_cast<float>((1 - fy) * top + fy * bottom);
            }
        }
    }
    return Grid(frame.shape(), std::move(out));
}

/// Same transform on every frame; labels are copied unchanged.
inline Clip apply_augment(const Clip& clip, const AugmentParams& p) {
    Clip out = clip;
    for (auto& f : out.frames) f = warp_frame(f, p);
    return out;
}

inline std::string augmented_id(const std::string& base, std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_aug%03zu", index);
    return base + buf;
}

/// spec.count augmented copies of `clip`, ids suffixed "_augNNN".
inline std::vector<Clip> augment(const Clip& clip, const AugmentSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<Clip> out;
    out.reserve(spec.count);
    for (int i = 0; i < spec.count; ++i) {
        out.push_back(apply_augment(clip, sample_augment(spec, seed, static_cast<std::uint64_t>(i))));
        out.back().id = augmented_id(clip.id, static_cast<std::size_t>(i));
    }
    return out;
}

}  // namespace mexp::data
