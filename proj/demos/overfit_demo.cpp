// Trains on a handful of synthetic clips and reports how well the model
// memorised them.
//
//   overfit_demo [steps] [clips]

#include <cstdio>
#include <cstdlib>

#include "mexp/data/synth.hpp"
#include "mexp/eval.hpp"
#include "mexp/train.hpp"

int main(int argc, char** argv) {
    using namespace mexp;
    TrainConfig cfg;
    cfg.max_steps = argc > 1 ? std::atoi(argv[1]) : 300;
    const std::size_t n = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 8;

    const auto clips = data::generate_dataset(n, cfg.sequence_length, 42);
    const auto res = train(cfg, clips, std::nullopt, {[&](const StepLoss& r) {
        if (r.step % 50 == 0) std::printf("step %4d  class %.4f  intensity %.4f\n", r.step, r.l_class, r.l_reg);
    }});

    FlowCache flows(cfg.flow);
    const auto loss = dataset_loss(res.params, cfg, clips, &flows);
    const auto rep = evaluate(res.params, cfg, clips, &flows);
    std::printf("train loss %.4f  accuracy %.3f  spotting auc %.3f\n", loss.total, rep.accuracy, rep.auc);
}
