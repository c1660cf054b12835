#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mexp/data/clip.hpp"
#include "mexp/numgrid/rng.hpp"

namespace mexp::data {

/// Local muscle-motion template on a 64×64 reference face: displacement of
/// peak `amplitude` px along `direction`, Gaussian falloff of width `sigma`.
struct DeformationTemplate {
    double cx, cy;  // column, row
    double dx, dy;  // unit direction
};

// brow/nose/mouth regions, one per expression class
inline constexpr std::array<DeformationTemplate, kNumClasses> kClassTemplates{{
    {18.0, 44.0, -0.70710678, -0.70710678},  // mouth corner up-left
    {32.0, 32.0, 0.0, -1.0},                 // nose wrinkle up
    {44.0, 16.0, 0.0, -1.0},                 // right brow raise
    {32.0, 52.0, 0.0, -1.0},                 // lip raise
    {18.0, 16.0, 0.70710678, 0.70710678},    // left brow lower
}};

struct SynthOptions {
    int height = 64;
    int width = 64;
    double sigma = 6.0;
    double amplitude_min = 2.5;
    double amplitude_max = 3.5;
    double center_jitter = 2.0;
    // frames from onset to apex (and apex to offset); 0 picks
    // max = (length − 3) / 2 and min = max − 2
    int rise_min = 0;
    int rise_max = 0;
};

/// Smooth random texture: a sum of plane waves, evaluated at real-valued
/// positions so warped frames are exact resamples of the same surface.
class WaveTexture {
public:
    WaveTexture(CounterRng& rng, int waves = 10) {
        for (int k = 0; k < waves; ++k) {
            const double angle = rng.uniform(0.0, 6.283185307179586);
            const double wavelength = rng.uniform(7.0, 24.0);
            const double f = 6.283185307179586 / wavelength;
            waves_.push_back({f * std::cos(angle), f * std::sin(angle), rng.uniform(0.0, 6.283185307179586),
                              rng.uniform(0.5, 1.0)});
        }
        double norm = 0;
        for (const auto& w : waves_) norm += w.amp;
        for (auto& w : waves_) w.amp /= norm;
    }

    /// In [-1, 1].
    double operator()(double x, double y) const {
        double v = 0;
        for (const auto& w : waves_) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
        return v;
    }

private:
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves_;
};

/// Textured static face proxy plus one class-specific local deformation whose
/// amplitude follows the onset→apex→offset triangular envelope.
inline Clip generate_clip(int class_id, int length, std::uint64_t seed, const SynthOptions& opt = {}) {
    if (class_id < 0 || class_id >= kNumClasses) {
        throw ValidationError("generate_clip: class_id must be in [0, 4], got " + std::to_string(class_id));
    }
    if (length < 5) throw ValidationError("generate_clip: length must be >= 5, got " + std::to_string(length));
    if (opt.height <= 0 || opt.width <= 0) throw ValidationError("generate_clip: bad frame size");

    CounterRng rng(seed, "synth.clip");
    Clip clip;
    clip.class_id = class_id;

    const int hi = opt.rise_max > 0 ? opt.rise_max : std::max(1, (length - 3) / 2);
    const int lo = std::clamp(opt.rise_min > 0 ? opt.rise_min : hi - 2, 1, hi);
    if (2 * hi + 3 > length) throw ValidationError("generate_clip: expression does not fit in " + std::to_string(length) + " frames");
    const int rise = lo + static_cast<int>(rng.below(hi - lo + 1));
    const int fall = lo + static_cast<int>(rng.below(hi - lo + 1));
    const int latest_onset = length - 2 - rise - fall;
    clip.onset = 1 + static_cast<int>(rng.below(latest_onset));
    clip.apex = clip.onset + rise;
    clip.offset = clip.apex + fall;

    const WaveTexture texture(rng);
    const std::array<double, 3> base{rng.uniform(0.55, 0.7), rng.uniform(0.4, 0.5), rng.uniform(0.3, 0.4)};
    const std::array<double, 3> gain{0.25, 0.22, 0.2};

    const double sx = opt.width / 64.0, sy = opt.height / 64.0;
    const auto& tpl = kClassTemplates[class_id];
    const double cx = (tpl.cx + rng.uniform(-opt.center_jitter, opt.center_jitter)) * sx;
    const double cy = (tpl.cy + rng.uniform(-opt.center_jitter, opt.center_jitter)) * sy;
    const double amplitude = rng.uniform(opt.amplitude_min, opt.amplitude_max);
    const double two_sigma2 = 2.0 * opt.sigma * opt.sigma * sx * sy;

    const auto envelope = triangular_envelope(length, clip.onset, clip.apex, clip.offset);
    const std::size_t plane = static_cast<std::size_t>(opt.height) * opt.width;
    for (int t = 0; t < length; ++t) {
        std::vector<float> px(3 * plane);
        const double a = amplitude * envelope[t];
        for (int r = 0; r < opt.height; ++r) {
            for (int c = 0; c < opt.width; ++c) {
                const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
                const double w = a * std::exp(-d2 / two_sigma2);
                // content at p moved to p + D(p): sample the surface at p − D
                const double v = texture(c - w * tpl.dx, r - w * tpl.dy);
                const std::size_t k = static_cast<std::size_t>(r) * opt.width + c;
                for (int ch = 0; ch < 3; ++ch) {
                    px[ch * plane + k] = static_cast<float>(std::clamp(base[ch] + gain[ch] * v, 0.0, 1.0));
                }
            }
        }
        clip.frames.emplace_back(Shape{3, opt.height, opt.width}, std::move(px));
    }
    label_from_timing(clip);
    return clip;
}

/// Centre of the deformation for a clip's class, in pixels of an H×W frame
/// (without the per-clip jitter).
inline std::pair<double, double> template_center(int class_id, int height = 64, int width = 64) {
    const auto& t = kClassTemplates.at(class_id);
    return {t.cx * width / 64.0, t.cy * height / 64.0};
}

inline std::string clip_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04zu", index);
    return buf;
}

/// `count` clips with classes cycling 0..4 and per-clip seeds derived from `seed`.
inline std::vector<Clip> generate_dataset(std::size_t count, int length, std::uint64_t seed,
                                          const SynthOptions& opt = {}) {
    std::vector<Clip> clips;
    clips.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Clip c = generate_clip(static_cast<int>(i % kNumClasses), length, derive_seed(seed, i), opt);
        c.id = clip_id(i);
        clips.push_back(std::move(c));
    }
    return clips;
}

}  // namespace mexp::data
