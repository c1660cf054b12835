#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mexp/data/synth.hpp"
#include "mexp/eval.hpp"
#include "mexp/gradcheck.hpp"
#include "mexp/train.hpp"
#include "reference.hpp"

using namespace mexp;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(int steps) {
    TrainConfig cfg;
    cfg.architecture = detail::tiny_architecture();
    cfg.max_steps = steps;
    cfg.sequence_length = 6;
    cfg.checkpoint_every = 2;
    cfg.learning_rate = 1e-3;
    return cfg;
}

std::vector<data::Clip> tiny_clips(std::size_t n, std::uint64_t seed = 3) {
    data::SynthOptions so;
    so.height = so.width = 32;
    so.sigma = 3.0;
    return data::generate_dataset(n, 8, seed, so);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config defaults, json round trip and validation") {
    const TrainConfig d;
    CHECK(d.learning_rate == 1e-4);
    CHECK(d.weight_decay == 0.005);
    CHECK(d.sequence_length == 14);
    CHECK(d.lambda == 1.0);
    CHECK(d.checkpoint_every == 500);
    CHECK(d.keep_checkpoints == 3);

    const auto cfg = config_from_json(nlohmann::json{{"max_steps", 17}, {"flow", {{"iterations", 50}}}});
    CHECK(cfg.max_steps == 17);
    CHECK(cfg.flow.iterations == 50);
    CHECK(cfg.flow.smoothness == d.flow.smoothness);
    CHECK(cfg.learning_rate == d.learning_rate);

    const nlohmann::json j = cfg;
    const auto back = config_from_json(j);
    CHECK(nlohmann::json(back) == j);

    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"learning_rat", 1}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"sequence_length", 1}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"learning_rate", 0}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ValidationError);
}

TEST_CASE("metrics csv format") {
    std::ostringstream out;
    write_metrics_csv({{1, 0.5, 0.25, 0.75}, {2, 0.125, 0.0625, 0.1875}}, out);
    CHECK(out.str() == "step,l_class,l_reg,total\n1,0.5,0.25,0.75\n2,0.125,0.0625,0.1875\n");
}

TEST_CASE("window pairs are labelled with their second frame") {
    const auto clips = tiny_clips(1);
    const auto& c = clips[0];
    const auto flows = pair_flows(c.frames);
    const auto w = make_window(c, flows, 2, 4);
    CHECK(w.frames.shape() == Shape{4, 3, 32, 32});
    CHECK(w.flows.shape() == Shape{3, 2, 32, 32});
    REQUIRE(w.intensity.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(w.intensity[k] == c.intensity[3 + k]);
        CHECK(w.classes[k] == c.class_id);
    }
}

TEST_CASE("training is deterministic and writes checkpoints and metrics") {
    const auto clips = tiny_clips(3);
    const auto cfg = tiny_config(7);
    const fs::path a = fs::temp_directory_path() / "mexp_train_a";
    const fs::path b = fs::temp_directory_path() / "mexp_train_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const auto ra = train(cfg, clips, a);
    const auto rb = train(cfg, clips, b);

    CHECK(ra.losses.size() == 7);
    CHECK(slurp(a / "final.ckpt") == slurp(b / "final.ckpt"));
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK_FALSE(fs::exists(a / "checkpoint_000002.ckpt"));
    for (const char* name : {"checkpoint_000004.ckpt", "checkpoint_000006.ckpt", "checkpoint_000007.ckpt"}) {
        CHECK(fs::exists(a / name));
    }

    const auto [cfg2, params] = load_model(a / "final.ckpt");
    CHECK(nlohmann::json(cfg2) == nlohmann::json(cfg));
    for (const auto& n : params.names()) {
        const auto x = params.at(n).values();
        const auto y = ra.params.at(n).values();
        CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    }

    std::ifstream csv(a / "metrics.csv");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 8);

    auto other = cfg;
    other.seed = 43;
    const auto rc = train(other, clips);
    CHECK(rc.losses[0].total != ra.losses[0].total);

    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("augmented training stays deterministic") {
    const auto clips = tiny_clips(2);
    auto cfg = tiny_config(4);
    cfg.augment = true;
    const auto r1 = train(cfg, clips);
    const auto r2 = train(cfg, clips);
    for (std::size_t i = 0; i < r1.losses.size(); ++i) CHECK(r1.losses[i].total == r2.losses[i].total);
}

TEST_CASE("training input errors") {
    const auto cfg = tiny_config(1);
    CHECK_THROWS_AS(train(cfg, {}), ValidationError);
    const auto big = data::generate_dataset(1, 6, 1);
    CHECK_THROWS_AS(train(cfg, big), ShapeError);
}

TEST_CASE("roc_auc cases") {
    CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}).auc == Approx(0.75));
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}).auc == 1.0);
    CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}).auc == 0.5);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
}

TEST_CASE("roc_auc matches brute force, is rank invariant, curve is monotone") {
    CounterRng rng(21, "eval.auc");
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(199));
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (int i = 0; i < n; ++i) {
            // coarse grid so ties happen
            s[i] = static_cast<double>(rng.below(20)) / 20.0;
            l[i] = rng.below(2);
        }
        l[0] = 1;
        l[1] = 0;
        const auto r = roc_auc(s, l);
        CHECK(std::abs(r.auc - ref::auc_bruteforce(s, l)) < 1e-12);

        std::vector<double> t(n);
        for (int i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7;
        CHECK(std::abs(roc_auc(t, l).auc - r.auc) < 1e-12);

        REQUIRE(r.curve.size() >= 2);
        CHECK(r.curve.front().fpr == 0.0);
        CHECK(r.curve.front().tpr == 0.0);
        CHECK(r.curve.back().fpr == 1.0);
        CHECK(r.curve.back().tpr == 1.0);
        for (std::size_t k = 1; k < r.curve.size(); ++k) {
            CHECK(r.curve[k].fpr >= r.curve[k - 1].fpr);
            CHECK(r.curve[k].tpr >= r.curve[k - 1].tpr);
        }
    }
}

TEST_CASE("interval detection and spot padding") {
    const std::vector<double> s{0, 0, .8, .9, .8, 0};
    const auto iv = detect_interval(s, 0.5);
    REQUIRE(iv);
    CHECK(iv->start == 2);
    CHECK(iv->end == 4);
    CHECK_FALSE(detect_interval(std::vector<double>(5, 0.0), 0.5));
    const auto tie = detect_interval(std::vector<double>{.9, 0, .9, 0}, 0.5);
    REQUIRE(tie);
    CHECK(tie->start == 0);
    CHECK(tie->end == 0);
    const auto tail = detect_interval(std::vector<double>{0, .9, .9}, 0.5);
    REQUIRE(tail);
    CHECK(tail->start == 1);
    CHECK(tail->end == 2);

    const std::vector<float> pairs{0.2f, 0.7f, 0.9f};
    const auto r = spot_from_pairs(pairs, 0.5);
    REQUIRE(r.scores.size() == 4);
    CHECK(r.scores[0] == Approx(0.2));
    CHECK(r.scores[3] == Approx(0.9));
    REQUIRE(r.interval);
    CHECK(r.interval->start == 2);
    CHECK(r.interval->end == 3);
}

TEST_CASE("vote_class majority and ties") {
    const std::vector<int> cls{1, 2, 2, 1, 3};
    CHECK(vote_class(cls, std::vector<float>{.9f, .9f, .9f, .1f, .1f}, 0.5) == 2);
    CHECK(vote_class(cls, std::vector<float>{.9f, .9f, .1f, .1f, .1f}, 0.5) == 1);
    CHECK(vote_class(cls, std::vector<float>(5, 0.0f), 0.5) == 1);
    CHECK(vote_class(std::vector<int>{4, 0}, std::vector<float>{.9f, .9f}, 0.5) == 0);
    CHECK_THROWS_AS(vote_class(cls, std::vector<float>{.9f}, 0.5), ShapeError);
}

TEST_CASE("accuracy is trace over total") {
    Confusion c{};
    c[0][0] = 3;
    c[1][1] = 4;
    c[1][2] = 2;
    c[4][4] = 1;
    CHECK(accuracy_of(c) == Approx(0.8));
    Confusion diag{};
    for (int i = 0; i < 5; ++i) diag[i][i] = 2;
    CHECK(accuracy_of(diag) == 1.0);
}

TEST_CASE("evaluate produces a consistent report") {
    const auto clips = tiny_clips(4);
    const auto cfg = tiny_config(2);
    const auto res = train(cfg, clips);
    const auto rep = evaluate(res.params, cfg, clips);
    int total = 0;
    for (const auto& row : rep.confusion)
        for (int v : row) total += v;
    CHECK(total == 4);
    CHECK(rep.accuracy == accuracy_of(rep.confusion));
    CHECK(rep.auc >= 0.0);
    CHECK(rep.auc <= 1.0);
    const auto j = report_json(rep);
    CHECK(j.contains("accuracy"));
    CHECK(j.contains("auc"));
    CHECK(j["confusion"].size() == 5);
    const auto again = evaluate(res.params, cfg, clips);
    CHECK(report_json(again) == j);

    const auto sp = spot(res.params, cfg, clips[0]);
    CHECK(sp.scores.size() == static_cast<std::size_t>(clips[0].length()));
    CHECK(sp.probs.size() == sp.scores.size());
    CHECK(sp.states.size() == sp.scores.size());
    CHECK_THROWS_AS(evaluate(res.params, cfg, {}), ValidationError);
}

TEST_CASE("grad_check registry") {
    GradCheckOptions opt;
    CHECK(grad_check("fully_connected", opt).max_rel_error < 1e-6);
    CHECK(grad_check("intensity_loss", opt).max_rel_error < 1e-4);
    CHECK_THROWS_AS(grad_check("nope", opt), ValidationError);
    opt.eps = 0;
    CHECK_THROWS_AS(grad_check("conv2d", opt), ValidationError);
}

TEST_CASE("overfit fixture: window-10 smoothed loss trends down over the first 50 steps") {
    data::SynthOptions so;
    const auto clips = data::generate_dataset(8, 14, 42, so);
    TrainConfig cfg;
    cfg.max_steps = 50;
    const auto res = train(cfg, clips);
    std::vector<double> smooth;
    for (int i = 0; i + 10 <= 50; ++i) {
        double s = 0;
        for (int k = i; k < i + 10; ++k) s += res.losses[k].total;
        smooth.push_back(s / 10);
    }
    INFO("first " << smooth.front() << " last " << smooth.back());
    CHECK(smooth.back() <= smooth.front());
    const auto half = smooth.size() / 2;
    const double early = std::accumulate(smooth.begin(), smooth.begin() + half, 0.0) / half;
    const double late = std::accumulate(smooth.end() - half, smooth.end(), 0.0) / half;
    CHECK(late <= early);
}
