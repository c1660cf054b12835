#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mexp/data/clip.hpp"
#include "mexp/model.hpp"
#include "mexp/train.hpp"

namespace mexp {

struct RocPoint {
    double fpr = 0;
    double tpr = 0;
    double threshold = 0;
};

struct RocResult {
    double auc = 0;
    std::vector<RocPoint> curve;  // from (0,0) to (1,1)
};

namespace detail {

template <typename L>
RocResult roc_auc_impl(std::span<const double> scores, std::span<const L> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::uint64_t pos = 0, neg = 0;
    for (L l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw ValidationError("roc_auc: labels must contain both classes");

    RocResult r;
    r.curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    // pairs counted exactly in integers: a positive beats every negative
    // scored strictly below it and ties with those in its own group
    std::uint64_t tp = 0, fp = 0, concordant2 = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::uint64_t gp = 0, gn = 0;
        const double s = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? gp : gn)++;
        concordant2 += gp * (2 * (neg - fp - gn) + gn);
        tp += gp;
        fp += gn;
        r.curve.push_back({double(fp) / double(neg), double(tp) / double(pos), s});
    }
    r.auc = double(concordant2) / (2.0 * double(pos) * double(neg));
    return r;
}

}  // namespace detail

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted
/// half. The curve sweeps a threshold down through the distinct scores.
/// Labels are 0 (negative) or non-zero (positive).
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
    return detail::roc_auc_impl(scores, labels);
}

inline RocResult roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
    const std::vector<int> l(labels.begin(), labels.end());
    return detail::roc_auc_impl<int>(scores, l);
}

struct Interval {
    int start = 0;
    int end = 0;  // inclusive

    bool operator==(const Interval&) const = default;
};

/// Longest run of scores above `threshold`; the earliest wins ties.
inline std::optional<Interval> detect_interval(std::span<const double> scores, double threshold) {
    std::optional<Interval> best;
    int run_start = -1;
    for (int t = 0; t <= static_cast<int>(scores.size()); ++t) {
        const bool above = t < static_cast<int>(scores.size()) && scores[t] > threshold;
        if (above && run_start < 0) run_start = t;
        if (!above && run_start >= 0) {
            if (!best || t - 1 - run_start > best->end - best->start) best = Interval{run_start, t - 1};
            run_start = -1;
        }
    }
    return best;
}

/// Inference over every consecutive pair of a clip.
inline PipelineOutput<float> predict(const ParamSet& params, const Architecture& arch, const data::Clip& clip,
                                     const Grid& flows) {
    if (clip.length() < 2) throw ValidationError("predict: clip '" + clip.id + "' has fewer than 2 frames");
    return run_pipeline(params, arch, stack_frames<float>(clip.frames), flows);
}

/// Majority vote of per-pair classes over pairs whose intensity exceeds
/// `threshold` (all pairs when none do); ties go to the lowest class.
inline int vote_class(std::span<const int> pair_class, std::span<const float> pair_intensity, double threshold,
                      int classes = data::kNumClasses) {
    if (pair_class.size() != pair_intensity.size() || pair_class.empty()) {
        throw ShapeError("vote_class: need one intensity per predicted class");
    }
    std::vector<int> votes(classes, 0);
    bool any = false;
    for (std::size_t k = 0; k < pair_class.size(); ++k) {
        if (pair_intensity[k] > threshold) {
            ++votes.at(pair_class[k]);
            any = true;
        }
    }
    if (!any) {
        for (int c : pair_class) ++votes.at(c);
    }
    return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

struct SpotResult {
    std::vector<double> scores;  // one per frame
    std::optional<Interval> interval;
    // filled by spot(); frame 0 repeats the first pair like the scores
    std::vector<std::array<float, data::kNumClasses>> probs;
    std::vector<int> predicted_class;
    std::vector<ExpressionState> states;
    int clip_class = -1;
};

/// Per-frame scores from pair predictions: pair k scores frame k+1 and the
/// first frame repeats the first pair's score.
inline SpotResult spot_from_pairs(std::span<const float> pair_intensity, double threshold) {
    if (pair_intensity.empty()) throw ValidationError("spot: clip too short");
    SpotResult r;
    r.scores.push_back(pair_intensity[0]);
    for (float v : pair_intensity) r.scores.push_back(v);
    r.interval = detect_interval(r.scores, threshold);
    return r;
}

inline SpotResult spot(const ParamSet& params, const TrainConfig& cfg, const data::Clip& clip,
                       const Grid* flows = nullptr) {
    if (clip.length() < 2) throw ValidationError("spot: clip '" + clip.id + "' is too short");
    const Grid own = flows ? Grid{} : pair_flows(clip.frames, cfg.flow);
    const auto out = predict(params, cfg.architecture, clip, flows ? *flows : own);
    auto r = spot_from_pairs(out.intensity.values(), cfg.spot_threshold);
    const int k = out.probs.extent(1);
    if (k != data::kNumClasses) throw ShapeError("spot: model has " + std::to_string(k) + " classes");
    for (int f = 0; f < clip.length(); ++f) {
        const int pair = std::max(0, f - 1);
        std::array<float, data::kNumClasses> p{};
        std::copy_n(out.probs.values().begin() + pair * k, k, p.begin());
        r.probs.push_back(p);
        r.predicted_class.push_back(out.predicted_class[pair]);
    }
    r.states = states_from_intensity<double>(r.scores, cfg.thresholds);
    r.clip_class = vote_class(out.predicted_class, out.intensity.values(), cfg.spot_threshold);
    return r;
}

using Confusion = std::array<std::array<int, data::kNumClasses>, data::kNumClasses>;

struct MetricsReport {
    std::vector<StepLoss> losses;
    double accuracy = 0;
    Confusion confusion{};  // [true][predicted]
    double auc = 0;
    std::vector<RocPoint> roc;
};

inline double accuracy_of(const Confusion& c) {
    long diag = 0, total = 0;
    for (int i = 0; i < data::kNumClasses; ++i) {
        for (int j = 0; j < data::kNumClasses; ++j) {
            total += c[i][j];
            if (i == j) diag += c[i][j];
        }
    }
    return total ? double(diag) / double(total) : 0.0;
}

struct EvalOptions {
    double spot_threshold = 0.5;
    double positive_intensity = 0.1;  // ground-truth frame counts as positive above this
};

/// Recognition accuracy and confusion plus frame-level spotting ROC over
/// `clips`. Flows come from `cache` when given.
inline MetricsReport evaluate(const ParamSet& params, const TrainConfig& cfg, const std::vector<data::Clip>& clips,
                              FlowCache* cache = nullptr, const EvalOptions& opt = {}) {
    if (clips.empty()) throw ValidationError("evaluate: empty test set");
    MetricsReport rep;
    std::vector<double> scores;
    std::vector<int> positive;
    for (const auto& clip : clips) {
        const Grid flows = cache ? cache->get(clip) : pair_flows(clip.frames, cfg.flow);
        const auto out = predict(params, cfg.architecture, clip, flows);
        const auto inten = out.intensity.values();
        const int cls = vote_class(out.predicted_class, inten, opt.spot_threshold);
        rep.confusion.at(clip.class_id)[cls]++;
        const auto s = spot_from_pairs(inten, opt.spot_threshold);
        for (int t = 0; t < clip.length(); ++t) {
            scores.push_back(s.scores[t]);
            positive.push_back(clip.intensity[t] > opt.positive_intensity);
        }
    }
    rep.accuracy = accuracy_of(rep.confusion);
    const bool has_pos = std::count(positive.begin(), positive.end(), 1) > 0;
    const bool has_neg = std::count(positive.begin(), positive.end(), 0) > 0;
    if (has_pos && has_neg) {
        auto roc = roc_auc(scores, positive);
        rep.auc = roc.auc;
        rep.roc = std::move(roc.curve);
    }
    return rep;
}

/// Mean window loss over whole clips (no gradient tracking).
inline StepLoss dataset_loss(const ParamSet& params, const TrainConfig& cfg, const std::vector<data::Clip>& clips,
                             FlowCache* cache = nullptr) {
    if (clips.empty()) throw ValidationError("dataset_loss: no clips");
    StepLoss mean;
    for (const auto& clip : clips) {
        const Grid flows = cache ? cache->get(clip) : pair_flows(clip.frames, cfg.flow);
        const auto w = make_window(clip, flows, 0, clip.length());
        const auto out = run_pipeline(params, cfg.architecture, w.frames, w.flows);
        const auto l = pipeline_loss<float>(out, w.classes, w.intensity, cfg.lambda);
        mean.l_class += l.l_class.item();
        mean.l_reg += l.l_reg.item();
        mean.total += l.total.item();
    }
    const double n = static_cast<double>(clips.size());
    mean.l_class /= n;
    mean.l_reg /= n;
    mean.total /= n;
    return mean;
}

/// Recognition only.
inline std::pair<double, Confusion> evaluate_recognition(const ParamSet& params, const TrainConfig& cfg,
                                                         const std::vector<data::Clip>& clips,
                                                         FlowCache* cache = nullptr) {
    const auto rep = evaluate(params, cfg, clips, cache, {cfg.spot_threshold, cfg.thresholds.low});
    return {rep.accuracy, rep.confusion};
}

inline nlohmann::json report_json(const MetricsReport& r) {
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : r.roc) {
        roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}});
    }
    nlohmann::json j{{"accuracy", r.accuracy}, {"auc", r.auc}, {"confusion", r.confusion}, {"roc", roc}};
    if (!r.losses.empty()) {
        nlohmann::json losses = nlohmann::json::array();
        for (const auto& l : r.losses) losses.push_back({l.step, l.l_class, l.l_reg, l.total});
        j["losses"] = losses;
    }
    return j;
}

}  // namespace mexp
