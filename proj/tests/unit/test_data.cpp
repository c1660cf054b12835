#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mexp/data/augment.hpp"
#include "mexp/data/dataset.hpp"
#include "mexp/data/split.hpp"
#include "mexp/data/synth.hpp"

using namespace mexp;
using namespace mexp::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

bool same_pixels(const Clip& a, const Clip& b) {
    if (a.length() != b.length()) return false;
    for (int t = 0; t < a.length(); ++t) {
        const auto x = a.frames[t].values();
        const auto y = b.frames[t].values();
        if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("generate_clip shape, labels and determinism") {
    const auto c = generate_clip(2, 14, 7);
    REQUIRE(c.length() == 14);
    for (const auto& f : c.frames) {
        CHECK(f.shape() == Shape{3, 64, 64});
        for (float v : f.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(c.intensity.size() == 14);
    CHECK(c.states.size() == 14);
    CHECK(c.onset <= c.apex);
    CHECK(c.apex <= c.offset);
    CHECK(c.intensity[c.apex] == 1.0f);
    for (int t = 0; t < 14; ++t) {
        if (t < c.onset || t > c.offset) CHECK(c.intensity[t] == 0.0f);
    }
    CHECK(same_pixels(c, generate_clip(2, 14, 7)));
    CHECK_FALSE(same_pixels(c, generate_clip(2, 14, 8)));
    CHECK_THROWS_AS(generate_clip(5, 14, 1), ValidationError);
    CHECK_THROWS_AS(generate_clip(-1, 14, 1), ValidationError);
    CHECK_THROWS_AS(generate_clip(0, 4, 1), ValidationError);
}

TEST_CASE("deformation is local to the class template region") {
    for (int cls = 0; cls < kNumClasses; ++cls) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto c = generate_clip(cls, 14, seed);
            const auto [cx, cy] = template_center(cls);
            const auto& a = c.frames[c.apex];
            const auto& z = c.frames[0];
            double in = 0, out = 0;
            int ni = 0, no = 0;
            for (int ch = 0; ch < 3; ++ch)
                for (int r = 0; r < 64; ++r)
                    for (int q = 0; q < 64; ++q) {
                        const std::size_t k = (ch * 64 + r) * 64 + q;
                        const double d = std::abs(a[k] - z[k]);
                        if (std::hypot(q - cx, r - cy) <= 8) {
                            in += d;
                            ++ni;
                        } else {
                            out += d;
                            ++no;
                        }
                    }
            CHECK(in / ni > out / no);
        }
    }
}

TEST_CASE("augment count, ranges and identity") {
    const auto clip = generate_clip(1, 6, 3);
    const AugmentSpec spec;
    CHECK(spec.count == 150);
    const auto out = augment(clip, spec, 11);
    REQUIRE(out.size() == 150);
    std::set<std::string> ids;
    for (const auto& c : out) {
        CHECK(c.length() == clip.length());
        CHECK(c.intensity == clip.intensity);
        CHECK(c.states == clip.states);
        CHECK(c.class_id == clip.class_id);
        ids.insert(c.id);
    }
    CHECK(ids.size() == 150);
    CHECK(out[7].id == clip.id + "_aug007");

    for (std::uint64_t i = 0; i < 10000; ++i) {
        const auto p = sample_augment(spec, 5, i);
        CHECK(p.rotation_deg >= -10.0);
        CHECK(p.rotation_deg <= 10.0);
        CHECK(p.scale >= 0.9);
        CHECK(p.scale <= 1.1);
        CHECK(p.tx >= -2.0);
        CHECK(p.tx <= 2.0);
        CHECK(p.ty >= -2.0);
        CHECK(p.ty <= 2.0);
    }

    AugmentSpec zero{{0, 0}, {1, 1}, {0, 0}, 3};
    for (const auto& c : augment(clip, zero, 1)) CHECK(same_pixels(c, clip));

    AugmentSpec bad;
    bad.scale = {1.2, 1.1};
    CHECK_THROWS_AS(augment(clip, bad, 1), ValidationError);
}

TEST_CASE("warp translation moves content") {
    std::vector<float> px(3 * 16 * 16, 0.0f);
    for (int ch = 0; ch < 3; ++ch) px[(ch * 16 + 8) * 16 + 8] = 1.0f;
    const Grid f({3, 16, 16}, px);
    const auto g = warp_frame(f, {0, 1, 2, -1});
    CHECK(g[(0 * 16 + 7) * 16 + 10] == 1.0f);
    CHECK(g[(0 * 16 + 8) * 16 + 8] == 0.0f);
}

TEST_CASE("dataset round trip through PNG") {
    TempDir dir("mexp_data_rt");
    auto clips = generate_dataset(2, 6, 9);
    clips[1].action_units = "AU4";
    const auto m = save_dataset(clips, dir.path);
    CHECK(m.size() == 2);
    CHECK(fs::exists(dir.path / "manifest.json"));
    CHECK(fs::exists(dir.path / "clip_0000" / "frame_0005.png"));
    const auto ds = load_dataset(dir.path);
    REQUIRE(ds.manifest.size() == 2);
    REQUIRE(ds.clips.size() == 2);
    CHECK(ds.manifest.clips[1].action_units == "AU4");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(ds.clips[i].id == clips[i].id);
        CHECK(ds.clips[i].class_id == clips[i].class_id);
        CHECK(ds.clips[i].intensity == clips[i].intensity);
        for (int t = 0; t < 6; ++t) {
            const auto a = ds.clips[i].frames[t].values();
            const auto b = clips[i].frames[t].values();
            for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 0.5f / 255.0f + 1e-6f);
        }
    }
}

TEST_CASE("dataset errors are distinct") {
    TempDir dir("mexp_data_err");
    save_dataset(generate_dataset(2, 5, 1), dir.path);

    fs::remove(dir.path / "clip_0001" / "frame_0003.png");
    try {
        load_dataset(dir.path);
        FAIL("expected MissingFrameError");
    } catch (const MissingFrameError& e) {
        CHECK(std::string(e.what()).find("frame_0003.png") != std::string::npos);
    }

    fs::copy_file(dir.path / "clip_0000" / "frame_0000.png", dir.path / "clip_0001" / "frame_0003.png");
    fs::copy_file(dir.path / "clip_0000" / "frame_0000.png", dir.path / "clip_0000" / "frame_0005.png");
    CHECK_THROWS_AS(load_dataset(dir.path), FrameCountError);
    fs::remove(dir.path / "clip_0000" / "frame_0005.png");
    CHECK_NOTHROW(load_dataset(dir.path));

    {
        std::ofstream f(dir.path / "manifest.json");
        f << R"({"clips": [{"id": "clip_0000", "class_id": 1, "onset": 3, "apex": 2, "offset": 4, "n_frames": 5}]})";
    }
    CHECK_THROWS_AS(load_dataset(dir.path), ManifestError);
    {
        std::ofstream f(dir.path / "manifest.json");
        f << R"({"clips": [{"id": "clip_0000"}]})";
    }
    CHECK_THROWS_AS(load_dataset(dir.path), ManifestError);
    {
        std::ofstream f(dir.path / "manifest.json");
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_dataset(dir.path), ManifestError);
}

TEST_CASE("ratio split: 70/30, stratified, disjoint, deterministic") {
    DatasetManifest m;
    for (int i = 0; i < 10; ++i) m.clips.push_back({"c" + std::to_string(i), "c", i % 5, 0, 1, 2, 5, ""});
    const auto f = split_ratio(m, 3);
    CHECK(f.train.size() == 7);
    CHECK(f.test.size() == 3);
    std::set<std::string> all(f.train.begin(), f.train.end());
    for (const auto& id : f.test) CHECK(all.insert(id).second);
    CHECK(all.size() == 10);
    const auto g = split_ratio(m, 3);
    CHECK(f.train == g.train);
    CHECK(f.test == g.test);

    DatasetManifest big;
    for (int i = 0; i < 100; ++i) big.clips.push_back({"c" + std::to_string(i), "c", i % 5, 0, 1, 2, 5, ""});
    const auto h = split_ratio(big, 1);
    std::vector<int> per_class(5, 0);
    for (const auto& id : h.test) per_class[std::stoi(id.substr(1)) % 5]++;
    for (int n : per_class) CHECK(n == 6);
}

TEST_CASE("leave-one-out split") {
    DatasetManifest m;
    for (int i = 0; i < 6; ++i) m.clips.push_back({"c" + std::to_string(i), "c", 0, 0, 1, 2, 5, ""});
    const auto folds = split(m, SplitMode::leave_one_out, 0);
    REQUIRE(folds.size() == 6);
    for (std::size_t k = 0; k < folds.size(); ++k) {
        REQUIRE(folds[k].test.size() == 1);
        CHECK(folds[k].test[0] == m.clips[k].id);
        CHECK(folds[k].train.size() == 5);
    }
    DatasetManifest one;
    one.clips.push_back({"x", "x", 0, 0, 1, 2, 5, ""});
    CHECK_THROWS_AS(split(one, SplitMode::ratio, 0), ValidationError);
}
