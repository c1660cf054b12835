#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mexp/data/augment.hpp"
#include "mexp/data/clip.hpp"
#include "mexp/model.hpp"
#include "mexp/numgrid/checkpoint.hpp"
#include "mexp/numgrid/tape.hpp"

namespace mexp {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StateThresholds, low, high, split)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FlowOptions, smoothness, iterations)

namespace data {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Range, lo, hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentSpec, rotation_deg, scale, translation_px, count)
}  // namespace data

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.005;
    int sequence_length = 14;
    int max_steps = 2000;
    std::uint64_t seed = 42;
    double lambda = 1.0;
    double spot_threshold = 0.5;
    StateThresholds thresholds{};
    FlowOptions flow{};
    int checkpoint_every = 500;
    int keep_checkpoints = 3;
    bool augment = false;
    data::AugmentSpec augmentation{};
    Architecture architecture{};

    RmsPropConfig optimizer() const { return {learning_rate, weight_decay}; }

    void validate() const {
        auto fail = [](const std::string& what) { throw ValidationError("train config: " + what); };
        if (!(learning_rate > 0)) fail("learning_rate must be positive");
        if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
        if (sequence_length < 2) fail("sequence_length must be >= 2");
        if (max_steps < 1) fail("max_steps must be positive");
        if (!(lambda > 0)) fail("lambda must be positive");
        if (!(spot_threshold > 0 && spot_threshold < 1)) fail("spot_threshold must be in (0, 1)");
        if (!(thresholds.low > 0 && thresholds.low < thresholds.split && thresholds.split < thresholds.high &&
              thresholds.high <= 1)) {
            fail("thresholds must satisfy 0 < low < split < high <= 1");
        }
        if (!(flow.smoothness > 0) || flow.iterations < 1) fail("flow parameters must be positive");
        if (checkpoint_every < 1 || keep_checkpoints < 1) fail("checkpoint cadence must be positive");
        augmentation.validate();
        architecture.validate();
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, weight_decay, sequence_length,
                                                max_steps, seed, lambda, spot_threshold, thresholds, flow,
                                                checkpoint_every, keep_checkpoints, augment, augmentation,
                                                architecture)

/// Defaults overlaid with `j`; unknown top-level keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    const nlohmann::json known = TrainConfig{};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ValidationError("train config: unknown key '" + key + "'");
    }
    TrainConfig cfg;
    try {
        cfg = j.get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open config " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed config " + file.string() + ": " + e.what());
    }
    return config_from_json(j);
}

struct StepLoss {
    int step = 0;
    double l_class = 0;
    double l_reg = 0;
    double total = 0;
};

inline void write_metrics_csv(const std::vector<StepLoss>& rows, std::ostream& out) {
    out << "step,l_class,l_reg,total\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.step, r.l_class, r.l_reg, r.total);
        out << buf;
    }
}

/// Pair flows of whole clips, computed on first use.
class FlowCache {
public:
    explicit FlowCache(FlowOptions opt) : opt_(opt) {}

    const Grid& get(const data::Clip& clip) {
        auto it = cache_.find(clip.id);
        if (it == cache_.end()) it = cache_.emplace(clip.id, pair_flows(clip.frames, opt_)).first;
        return it->second;
    }

private:
    FlowOptions opt_;
    std::map<std::string, Grid> cache_;
};

/// One training example: a window of consecutive frames, its pair flows and
/// per-pair targets (pair k is labelled with frame k+1).
struct Window {
    Grid frames;  // N×3×H×W
    Grid flows;   // (N−1)×2×H×W
    std::vector<int> classes;
    std::vector<float> intensity;
};

inline Window make_window(const data::Clip& clip, const Grid& clip_flows, int start, int length) {
    const std::span<const Grid> all(clip.frames);
    Window w;
    w.frames = stack_frames<float>(all.subspan(start, length));
    w.flows = slice(clip_flows, 0, start, start + length - 1);
    for (int k = start + 1; k < start + length; ++k) {
        w.classes.push_back(clip.class_id);
        w.intensity.push_back(clip.intensity[k]);
    }
    return w;
}

struct TrainResult {
    ParamSet params;
    std::vector<StepLoss> losses;
    std::filesystem::path final_checkpoint;
};

struct TrainHooks {
    std::function<void(const StepLoss&)> on_step;
};

namespace detail {

inline std::string checkpoint_name(int step) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "checkpoint_%06d.ckpt", step);
    return buf;
}

}  // namespace detail

/// Adds the training config (and, once written, the step) to a checkpoint.
inline nlohmann::json checkpoint_config(const TrainConfig& cfg, int step) {
    nlohmann::json j = cfg;
    j["step"] = step;
    return j;
}

/// Architecture and parameters stored in a training checkpoint.
inline std::pair<TrainConfig, ParamSet> load_model(const std::filesystem::path& file) {
    const Checkpoint ckpt = load_checkpoint(file);
    nlohmann::json cfg_json = ckpt.config;
    cfg_json.erase("step");
    TrainConfig cfg = config_from_json(cfg_json);
    return {cfg, params_from_checkpoint<float>(ckpt)};
}

/// One clip per step, a random window of `sequence_length` frames, BPTT over
/// the window and an RMSProp update. With `augment` set, each step draws
/// either the original clip or one of its `augmentation.count` transformed
/// copies, generated on demand from the config seed.
inline TrainResult train(const TrainConfig& cfg, const std::vector<data::Clip>& clips,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const TrainHooks& hooks = {}) {
    cfg.validate();
    if (clips.empty()) throw ValidationError("train: empty training set");
    for (const auto& c : clips) {
        if (c.length() < 2) throw ValidationError("train: clip '" + c.id + "' has fewer than 2 frames");
        if (c.frames[0].extent(1) != cfg.architecture.frame_height ||
            c.frames[0].extent(2) != cfg.architecture.frame_width) {
            throw ShapeError("train: clip '" + c.id + "' frame size does not match the architecture");
        }
    }
    if (out_dir) std::filesystem::create_directories(*out_dir);

    TrainResult result{init_params<float>(cfg.architecture, cfg.seed), {}, {}};
    auto& params = result.params;
    const auto opt = cfg.optimizer();
    FlowCache cache(cfg.flow);
    const std::uint64_t sample_key = derive_seed(cfg.seed, "train.sample");
    const std::uint64_t augment_key = derive_seed(cfg.seed, "train.augment");
    std::vector<std::filesystem::path> kept;

    for (int step = 1; step <= cfg.max_steps; ++step) {
        CounterRng rng(derive_seed(sample_key, static_cast<std::uint64_t>(step)));
        const std::size_t ci = rng.below(clips.size());
        const data::Clip& base = clips[ci];
        const int length = std::min(cfg.sequence_length, base.length());
        const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(base.length() - length + 1)));
        const std::uint64_t variant = cfg.augment ? rng.below(static_cast<std::uint64_t>(cfg.augmentation.count) + 1) : 0;

        Window w;
        if (variant == 0) {
            w = make_window(base, cache.get(base), start, length);
        } else {
            const auto p = data::sample_augment(cfg.augmentation, derive_seed(augment_key, ci), variant - 1);
            data::Clip part = base;
            part.frames.assign(base.frames.begin() + start, base.frames.begin() + start + length);
            for (auto& f : part.frames) f = data::warp_frame(f, p);
            part.intensity.assign(base.intensity.begin() + start, base.intensity.begin() + start + length);
            w = make_window(part, pair_flows(part.frames, cfg.flow), 0, length);
        }

        Tape tape;
        LossTerms<float> loss;
        {
            Recording<float> rec(tape);
            const auto out = run_pipeline(params, cfg.architecture, w.frames, w.flows);
            loss = pipeline_loss<float>(out, w.classes, w.intensity, cfg.lambda);
        }
        const StepLoss row{step, loss.l_class.item(), loss.l_reg.item(), loss.total.item()};
        if (!std::isfinite(row.total)) {
            throw RuntimeFailure("non-finite loss at step " + std::to_string(step) + " (clip '" + base.id + "')");
        }
        tape.backward(loss.total);
        rmsprop_step(params, opt);
        result.losses.push_back(row);
        if (hooks.on_step) hooks.on_step(row);

        if (out_dir && (step % cfg.checkpoint_every == 0 || step == cfg.max_steps)) {
            const auto path = *out_dir / detail::checkpoint_name(step);
            save_checkpoint(to_checkpoint(params, checkpoint_config(cfg, step)), path);
            if (kept.empty() || kept.back() != path) kept.push_back(path);
            while (static_cast<int>(kept.size()) > cfg.keep_checkpoints) {
                std::filesystem::remove(kept.front());
                kept.erase(kept.begin());
            }
            result.final_checkpoint = path;
        }
    }
    if (out_dir) {
        const auto final_path = *out_dir / "final.ckpt";
        save_checkpoint(to_checkpoint(params, checkpoint_config(cfg, cfg.max_steps)), final_path);
        result.final_checkpoint = final_path;
        std::ofstream csv(*out_dir / "metrics.csv");
        write_metrics_csv(result.losses, csv);
    }
    return result;
}

}  // namespace mexp
