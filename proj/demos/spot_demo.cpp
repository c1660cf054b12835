// Spots the expression in one synthetic clip with a trained checkpoint and
// prints the per-frame intensity next to the ground truth.
//
//   spot_demo model.ckpt [class] [seed]

#include <cstdio>
#include <cstdlib>

#include "mexp/data/synth.hpp"
#include "mexp/eval.hpp"

int main(int argc, char** argv) {
    using namespace mexp;
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s model.ckpt [class] [seed]\n", argv[0]);
        return 1;
    }
    const auto [cfg, params] = load_model(argv[1]);
    const int cls = argc > 2 ? std::atoi(argv[2]) : 0;
    const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1;
    const auto clip = data::generate_clip(cls, cfg.sequence_length, seed);

    const auto r = spot(params, cfg, clip);
    std::printf("frame  truth  score  state\n");
    for (int t = 0; t < clip.length(); ++t) {
        std::printf("%5d  %5.2f  %5.2f  %s\n", t, clip.intensity[t], r.scores[t],
                    std::string(state_name(r.states[t])).c_str());
    }
    if (r.interval) {
        std::printf("detected frames %d..%d, true %d..%d\n", r.interval->start, r.interval->end, clip.onset, clip.offset);
    } else {
        std::printf("nothing detected, true %d..%d\n", clip.onset, clip.offset);
    }
    std::printf("class %d (true %d)\n", r.clip_class, clip.class_id);
}
