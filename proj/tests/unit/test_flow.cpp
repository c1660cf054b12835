#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "mexp/data/synth.hpp"
#include "mexp/flow.hpp"

using namespace mexp;

namespace {

Grid textured_frame(const data::WaveTexture& tex, double dx, double dy, int h = 64, int w = 64) {
    std::vector<float> px(3 * static_cast<std::size_t>(h) * w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double v = 0.5 + 0.3 * tex(c - dx, r - dy);
            for (int ch = 0; ch < 3; ++ch) px[ch * plane + r * w + c] = static_cast<float>(v);
        }
    return Grid({3, h, w}, std::move(px));
}

double mean_epe(const FlowField& f, double u, double v) {
    double s = 0;
    for (std::size_t i = 0; i < f.u.size(); ++i) s += std::hypot(f.u[i] - u, f.v[i] - v);
    return s / f.u.size();
}

}  // namespace

TEST_CASE("identical frames give exactly zero flow") {
    CounterRng rng(1, "flow.test");
    const data::WaveTexture tex(rng);
    const auto f = textured_frame(tex, 0, 0);
    const auto flow = estimate_flow(f, f);
    for (float x : flow.u.values()) CHECK(x == 0.0f);
    for (float x : flow.v.values()) CHECK(x == 0.0f);
}

TEST_CASE("one pixel shifts are recovered") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CounterRng rng(seed, "flow.test");
        const data::WaveTexture tex(rng);
        const auto a = textured_frame(tex, 0, 0);
        CHECK(mean_epe(estimate_flow(a, textured_frame(tex, 1, 0)), 1, 0) < 0.3);
        CHECK(mean_epe(estimate_flow(a, textured_frame(tex, 0, -1)), 0, -1) < 0.3);
    }
}

TEST_CASE("horizontal ramp shifted right") {
    const auto ramp = [](double dx) {
        std::vector<float> px(3 * 64 * 64);
        for (int ch = 0; ch < 3; ++ch)
            for (int r = 0; r < 64; ++r)
                for (int c = 0; c < 64; ++c)
                    px[(ch * 64 + r) * 64 + c] = static_cast<float>(0.2 + 0.6 * (c - dx) / 63.0);
        return Grid({3, 64, 64}, std::move(px));
    };
    const auto flow = estimate_flow(ramp(0), ramp(1));
    double mu = 0, mv = 0;
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        mu += flow.u.values()[i];
        mv += flow.v.values()[i];
    }
    mu /= flow.u.size();
    mv /= flow.u.size();
    CHECK(mu >= 0.7);
    CHECK(mu <= 1.3);
    CHECK(std::abs(mv) < 0.1);
}

TEST_CASE("swapping the frames negates the flow") {
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
        CounterRng rng(seed, "flow.test");
        const data::WaveTexture tex(rng);
        const auto a = textured_frame(tex, 0, 0);
        const auto b = textured_frame(tex, 0.7, -0.4);
        const auto fwd = estimate_flow(a, b);
        const auto bwd = estimate_flow(b, a);
        double d = 0;
        for (std::size_t i = 0; i < fwd.u.size(); ++i)
            d += std::abs(fwd.u.values()[i] + bwd.u.values()[i]) + std::abs(fwd.v.values()[i] + bwd.v.values()[i]);
        CHECK(d / (2.0 * fwd.u.size()) < 0.2);
    }
}

TEST_CASE("flow is deterministic") {
    CounterRng rng(3, "flow.test");
    const data::WaveTexture tex(rng);
    const auto a = textured_frame(tex, 0, 0);
    const auto b = textured_frame(tex, 1, 1);
    const auto f1 = estimate_flow(a, b);
    const auto f2 = estimate_flow(a, b);
    CHECK(std::equal(f1.u.values().begin(), f1.u.values().end(), f2.u.values().begin()));
    CHECK(std::equal(f1.v.values().begin(), f1.v.values().end(), f2.v.values().begin()));
}

TEST_CASE("flow output shape and csv") {
    const auto a = Grid::zeros({3, 8, 16});
    const auto flow = estimate_flow(a, a);
    CHECK(flow.height() == 8);
    CHECK(flow.width() == 16);
    CHECK(flow_to_grid(flow).shape() == Shape{2, 8, 16});
    std::ostringstream out;
    write_flow_csv(flow, out);
    const auto text = out.str();
    CHECK(text.rfind("row,col,u,v\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 8 * 16);
}

TEST_CASE("flow input validation") {
    CHECK_THROWS_AS(estimate_flow(Grid::zeros({3, 8, 8}), Grid::zeros({3, 8, 9})), ShapeError);
    CHECK_THROWS_AS(estimate_flow(Grid::zeros({1, 8, 8}), Grid::zeros({1, 8, 8})), ShapeError);
    CHECK_THROWS_AS(estimate_flow(Grid::zeros({3, 8, 8}), Grid::zeros({3, 8, 8}), {0.0, 10}), ValidationError);
    CHECK_THROWS_AS(estimate_flow(Grid::zeros({3, 8, 8}), Grid::zeros({3, 8, 8}), {1.0, 0}), ValidationError);
}
