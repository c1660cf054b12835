#pragma once

#include <string>
#include <vector>

#include "mexp/memory.hpp"
#include "mexp/numgrid/grid.hpp"

namespace mexp::data {

inline constexpr int kNumClasses = 5;

/// Ordered RGB frames (3×H×W, values in [0,1]) with per-frame labels.
struct Clip {
    std::string id;
    int class_id = 0;
    int onset = 0;
    int apex = 0;
    int offset = 0;
    std::string action_units;
    std::vector<Grid> frames;
    std::vector<float> intensity;
    std::vector<ExpressionState> states;

    int length() const { return static_cast<int>(frames.size()); }
};

/// 0 outside [onset, offset], linear rise to exactly 1 at apex, linear fall.
inline std::vector<float> triangular_envelope(int length, int onset, int apex, int offset) {
    std::vector<float> e(length, 0.0f);
    for (int t = 0; t < length; ++t) {
        if (t < onset || t > offset) continue;
        if (t == apex) {
            e[t] = 1.0f;
        } else if (t < apex) {
            e[t] = static_cast<float>(double(t - onset) / double(apex - onset));
        } else {
            e[t] = static_cast<float>(double(offset - t) / double(offset - apex));
        }
    }
    return e;
}

/// Fills intensity and states from onset/apex/offset and the frame count.
inline void label_from_timing(Clip& clip, const StateThresholds& th = {}) {
    clip.intensity = triangular_envelope(clip.length(), clip.onset, clip.apex, clip.offset);
    clip.states = states_from_intensity<float>(clip.intensity, th);
}

}  // namespace mexp::data
