#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mexp/data/augment.hpp"
#include "mexp/data/dataset.hpp"
#include "mexp/data/synth.hpp"
#include "mexp/eval.hpp"
#include "mexp/gradcheck.hpp"
#include "mexp/train.hpp"

namespace mexp::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2 };

/// Frames of a bare clip directory (frame_0000.png, frame_0001.png, ...).
inline data::Clip read_clip_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("clip directory not found: " + dir.string());
    data::Clip clip;
    clip.id = dir.filename().string();
    while (fs::exists(dir / data::frame_filename(clip.length()))) {
        clip.frames.push_back(data::read_frame(dir / data::frame_filename(clip.length())));
    }
    if (clip.length() < 2) throw ValidationError("clip '" + clip.id + "' needs at least 2 frames");
    clip.intensity.assign(clip.frames.size(), 0.0f);
    return clip;
}

struct Options {
    // synth
    fs::path out;
    std::size_t clips = 10;
    int length = 14;
    std::uint64_t seed = 42;
    // augment
    fs::path in;
    int count = 150;
    // train / eval / spot
    fs::path data;
    fs::path config;
    fs::path checkpoint;
    fs::path report;
    fs::path clip;
    std::optional<int> max_steps;
    std::optional<std::uint64_t> train_seed;
    // gradcheck
    std::string component;
    double eps = 1e-5;
};

inline int cmd_synth(const Options& o) {
    if (o.clips < 1) throw ValidationError("synth: --clips must be positive");
    const auto clips = data::generate_dataset(o.clips, o.length, o.seed);
    data::save_dataset(clips, o.out);
    std::cout << "wrote " << clips.size() << " clips to " << o.out.string() << "\n";
    return kOk;
}

inline int cmd_augment(const Options& o) {
    data::AugmentSpec spec;
    spec.count = o.count;
    spec.validate();
    const auto ds = data::load_dataset(o.in);
    std::vector<data::Clip> out;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
        auto aug = data::augment(ds.clips[i], spec, derive_seed(o.seed, ds.clips[i].id));
        for (auto& c : aug) out.push_back(std::move(c));
    }
    data::save_dataset(out, o.out);
    std::cout << "wrote " << out.size() << " clips to " << o.out.string() << "\n";
    return kOk;
}

inline int cmd_train(const Options& o) {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
    if (o.max_steps) cfg.max_steps = *o.max_steps;
    if (o.train_seed) cfg.seed = *o.train_seed;
    cfg.validate();
    const auto ds = data::load_dataset(o.data);
    fs::create_directories(o.out);
    {
        std::ofstream f(o.out / "config.json");
        f << nlohmann::json(cfg).dump(2) << "\n";
    }
    const auto res = train(cfg, ds.clips, o.out, {[&](const StepLoss& r) {
        if (r.step % 100 == 0 || r.step == cfg.max_steps) {
            std::printf("step %d loss %.5f (class %.5f, intensity %.5f)\n", r.step, r.total, r.l_class, r.l_reg);
            std::fflush(stdout);
        }
    }});
    std::cout << "checkpoint " << res.final_checkpoint.string() << "\n";
    return kOk;
}

inline int cmd_eval(const Options& o) {
    const auto ds = data::load_dataset(o.data);
    const auto [cfg, params] = load_model(o.checkpoint);
    const auto rep = evaluate(params, cfg, ds.clips, nullptr, {cfg.spot_threshold, cfg.thresholds.low});
    if (o.report.has_parent_path()) fs::create_directories(o.report.parent_path());
    std::ofstream f(o.report);
    if (!f) throw RuntimeFailure("cannot write " + o.report.string());
    f << report_json(rep).dump(2) << "\n";
    std::printf("accuracy %.4f auc %.4f\n", rep.accuracy, rep.auc);
    return kOk;
}

inline int cmd_spot(const Options& o) {
    const auto [cfg, params] = load_model(o.checkpoint);
    const auto clip = read_clip_dir(o.clip);
    const auto r = spot(params, cfg, clip);
    std::printf("frame_index,p0,p1,p2,p3,p4,predicted_class,intensity,state\n");
    for (std::size_t t = 0; t < r.scores.size(); ++t) {
        std::printf("%zu", t);
        for (float p : r.probs[t]) std::printf(",%.6f", p);
        std::printf(",%d,%.6f,%s\n", r.predicted_class[t], r.scores[t], std::string(state_name(r.states[t])).c_str());
    }
    if (r.interval) {
        std::printf("# interval %d %d class %d\n", r.interval->start, r.interval->end, r.clip_class);
    } else {
        std::printf("# interval none class %d\n", r.clip_class);
    }
    return kOk;
}

inline double gradcheck_tolerance(const std::string& component) { return component == "pipeline" ? 1e-3 : 1e-4; }

inline int cmd_gradcheck(const Options& o) {
    GradCheckOptions opt;
    opt.eps = o.eps;
    const auto r = grad_check(o.component, opt);
    const double tol = gradcheck_tolerance(o.component);
    std::printf("%s max_rel_error %.3e over %zu entries (worst %s) tolerance %.0e %s\n", o.component.c_str(),
                r.max_rel_error, r.checked, r.worst.c_str(), tol, r.max_rel_error < tol ? "PASS" : "FAIL");
    return r.max_rel_error < tol ? kOk : kRuntime;
}

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 1 for invalid input or usage, 2 for runtime failures.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Micro-expression spotting and recognition toolkit", "mexp"};
    app.require_subcommand(1, 1);
    Options o;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
    synth->add_option("--out", o.out, "Output dataset directory")->required();
    synth->add_option("--clips", o.clips, "Number of clips")->required();
    synth->add_option("--seed", o.seed, "Random seed")->required();
    synth->add_option("--length", o.length, "Frames per clip")->capture_default_str();

    auto* aug = app.add_subcommand("augment", "Write augmented copies of every clip");
    aug->add_option("--in", o.in, "Input dataset directory")->required();
    aug->add_option("--out", o.out, "Output dataset directory")->required();
    aug->add_option("--count", o.count, "Augmented copies per clip")->capture_default_str();
    aug->add_option("--seed", o.seed, "Random seed")->required();

    auto* tr = app.add_subcommand("train", "Train on a dataset directory");
    tr->add_option("--data", o.data, "Dataset directory")->required();
    tr->add_option("--config", o.config, "JSON training config");
    tr->add_option("--out", o.out, "Output directory for checkpoints and metrics")->required();
    tr->add_option("--max-steps", o.max_steps, "Override max_steps");
    tr->add_option("--seed", o.train_seed, "Override seed");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
    ev->add_option("--data", o.data, "Dataset directory")->required();
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    ev->add_option("--report", o.report, "Output report.json")->required();

    auto* sp = app.add_subcommand("spot", "Per-frame intensity and detected interval of one clip");
    sp->add_option("--clip", o.clip, "Clip directory of frame_NNNN.png files")->required();
    sp->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();

    auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gc->add_option("--component", o.component, "Component name")->required();
    gc->add_option("--eps", o.eps, "Finite-difference step")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return kOk;
        const auto used = app.get_subcommands();
        std::cerr << (used.empty() ? app.help() : used.front()->help());
        return kValidation;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*aug) return cmd_augment(o);
        if (*tr) return cmd_train(o);
        if (*ev) return cmd_eval(o);
        if (*sp) return cmd_spot(o);
        return cmd_gradcheck(o);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace mexp::cli
