#include <catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "mexp/data/dataset.hpp"
#include "mexp/gradcheck.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(MEXP_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p);
    std::string out;
    char buf[512];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

struct Workdir {
    fs::path path = fs::temp_directory_path() / "mexp_cli_test";
    Workdir() {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Workdir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run("").code == 1);
    CHECK(run("bogus").code == 1);
    const auto r = run("synth --clips 3");
    CHECK(r.code == 1);
    CHECK(r.out.find("--out") != std::string::npos);
    CHECK(run("synth --out /tmp/x --clips 3 --seed 1 --frobnicate").code == 1);
    CHECK(run("gradcheck --component nope").code == 1);
    CHECK(run("gradcheck --component conv2d --eps 0").code == 1);
    CHECK(run("--help").code == 0);
}

TEST_CASE("synth, augment and dataset errors") {
    Workdir w;
    auto r = run("synth --out " + (w / "ds") + " --clips 5 --seed 7 --length 6");
    REQUIRE(r.code == 0);
    const auto ds = mexp::data::load_dataset(w / "ds");
    CHECK(ds.clips.size() == 5);
    CHECK(fs::exists(w / "ds/clip_0004/frame_0005.png"));

    r = run("synth --out " + (w / "ds2") + " --clips 5 --seed 7 --length 6");
    REQUIRE(r.code == 0);
    for (const char* f : {"manifest.json", "clip_0002/frame_0003.png"}) {
        std::ifstream a(w / ("ds/" + std::string(f)), std::ios::binary), b(w / ("ds2/" + std::string(f)), std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
    }

    r = run("synth --out " + (w / "one") + " --clips 1 --seed 3 --length 5");
    REQUIRE(r.code == 0);
    r = run("augment --in " + (w / "one") + " --out " + (w / "aug") + " --seed 1");
    REQUIRE(r.code == 0);
    const auto m = mexp::data::read_manifest(w / "aug");
    CHECK(m.size() == 150);
    CHECK(m.clips[0].id == "clip_0000_aug000");

    CHECK(run("eval --data " + (w / "missing") + " --checkpoint x --report y").code == 1);
    fs::remove(w / "ds/clip_0001/frame_0002.png");
    CHECK(run("augment --in " + (w / "ds") + " --out " + (w / "aug2") + " --seed 1 --count 2").code == 1);
}

TEST_CASE("train, eval and spot end to end") {
    Workdir w;
    REQUIRE(run("synth --out " + (w / "ds") + " --clips 3 --seed 5 --length 8").code == 0);
    nlohmann::json cfg{{"max_steps", 3},
                       {"sequence_length", 6},
                       {"checkpoint_every", 2},
                       {"architecture", nlohmann::json(mexp::detail::tiny_architecture())}};
    cfg["architecture"]["frame_height"] = 64;
    cfg["architecture"]["frame_width"] = 64;
    {
        std::ofstream f(w / "cfg.json");
        f << cfg.dump();
    }
    auto r = run("train --data " + (w / "ds") + " --config " + (w / "cfg.json") + " --out " + (w / "run"));
    INFO(r.out);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(w / "run/final.ckpt"));
    CHECK(fs::exists(w / "run/checkpoint_000002.ckpt"));
    std::ifstream csv(w / "run/metrics.csv");
    std::stringstream s;
    s << csv.rdbuf();
    CHECK(count_lines(s.str()) == 4);

    // flags override the config file
    r = run("train --data " + (w / "ds") + " --config " + (w / "cfg.json") + " --out " + (w / "run2") + " --max-steps 1");
    REQUIRE(r.code == 0);
    std::ifstream csv2(w / "run2/metrics.csv");
    std::stringstream s2;
    s2 << csv2.rdbuf();
    CHECK(count_lines(s2.str()) == 2);

    r = run("eval --data " + (w / "ds") + " --checkpoint " + (w / "run/final.ckpt") + " --report " + (w / "out/report.json"));
    REQUIRE(r.code == 0);
    std::ifstream rep(w / "out/report.json");
    const auto j = nlohmann::json::parse(rep);
    CHECK(j.contains("accuracy"));
    CHECK(j.contains("auc"));
    CHECK(j.contains("roc"));
    CHECK(j["confusion"].size() == 5);

    r = run("spot --clip " + (w / "ds/clip_0000") + " --checkpoint " + (w / "run/final.ckpt"));
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("frame_index,p0,p1,p2,p3,p4,predicted_class,intensity,state\n", 0) == 0);
    CHECK(count_lines(r.out) == 1 + 8 + 1);
    CHECK(r.out.find("# interval") != std::string::npos);

    {
        std::ofstream f(w / "bad.json");
        f << R"({"max_steps": 3, "no_such_key": 1})";
    }
    CHECK(run("train --data " + (w / "ds") + " --config " + (w / "bad.json") + " --out " + (w / "run3")).code == 1);
    {
        std::ofstream f(w / "junk.ckpt");
        f << "not a checkpoint";
    }
    CHECK(run("spot --clip " + (w / "ds/clip_0000") + " --checkpoint " + (w / "junk.ckpt")).code != 0);
}

TEST_CASE("gradcheck subcommand") {
    const auto r = run("gradcheck --component fully_connected");
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
}
