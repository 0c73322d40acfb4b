#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "ppn/io.hpp"

namespace fs = std::filesystem;
using ppn::cli::run;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

TEST_CASE("help exits zero, unknown input exits with usage error") {
    CHECK(run({"--help"}) == 0);
    CHECK(run({"simulate", "--help"}) == 0);
    CHECK(run({"no-such-command"}) == 2);
    CHECK(run({"simulate", "--no-such-flag", "3"}) == 2);
    CHECK(run({}) == 2);  // a subcommand is required
}

TEST_CASE("simulate is byte-reproducible under a fixed seed") {
    const fs::path dir = fs::temp_directory_path() / "ppn_cli_sim";
    fs::remove_all(dir);
    const fs::path a = dir / "a", b = dir / "b";

    const std::vector<std::string> args_a = {"simulate", "--out", a.string(), "--count", "2",
                                             "--size", "256", "--sources", "5:9", "--seed", "1"};
    std::vector<std::string> args_b = args_a;
    args_b[2] = b.string();
    REQUIRE(run(args_a) == 0);
    REQUIRE(run(args_b) == 0);

    for (const std::string name : {"img_00000.ppn", "img_00001.ppn", "img_00000.truth.csv",
                                   "img_00001.truth.csv", "img_00000.meta.json"}) {
        CAPTURE(name);
        CHECK(slurp(a / name) == slurp(b / name));
        CHECK(!slurp(a / name).empty());
    }

    // Different seed changes the bytes.
    const fs::path c = dir / "c";
    std::vector<std::string> args_c = args_a;
    args_c[2] = c.string();
    args_c.back() = "2";
    REQUIRE(run(args_c) == 0);
    CHECK(slurp(a / "img_00000.ppn") != slurp(c / "img_00000.ppn"));
    fs::remove_all(dir);
}

TEST_CASE("detect-baseline and evaluate round-trip through files") {
    const fs::path dir = fs::temp_directory_path() / "ppn_cli_detect";
    fs::remove_all(dir);
    fs::create_directories(dir);

    REQUIRE(run({"simulate", "--out", (dir / "data").string(), "--count", "1", "--size", "256",
                 "--sources", "12", "--seed", "3"}) == 0);
    const std::string image = (dir / "data" / "img_00000.ppn").string();
    const std::string truth = (dir / "data" / "img_00000.truth.csv").string();
    const std::string det = (dir / "det.csv").string();
    const std::string report = (dir / "report.json").string();

    REQUIRE(run({"detect-baseline", "--image", image, "--tau", "0.5", "--min-area", "3", "--out",
                 det}) == 0);
    CHECK(fs::exists(det));

    REQUIRE(run({"evaluate", "--pred", det, "--truth", truth, "--r-tp", "0.4", "--flux-bins", "30",
                 "--rtp-sweep", "0.05:1.0:5", "--out", report}) == 0);
    const std::string text = slurp(report);
    CHECK(text.find("\"precision\"") != std::string::npos);
    CHECK(text.find("\"per_bin\"") != std::string::npos);
    CHECK(text.find("\"per_rtp\"") != std::string::npos);

    // Missing files surface as runtime errors (exit 1) naming the path.
    CHECK(run({"evaluate", "--pred", (dir / "nope.csv").string(), "--truth", truth}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("print-config output reproduces the run when fed back") {
    const fs::path dir = fs::temp_directory_path() / "ppn_cli_cfg";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Capture the effective config of a flag-driven invocation.
    const fs::path cfg_file = dir / "cfg.json";
    {
        std::ostringstream captured;
        auto* old = std::cout.rdbuf(captured.rdbuf());
        const int code = run({"simulate", "--out", (dir / "x").string(), "--count", "1", "--size",
                              "128", "--sources", "4", "--seed", "9", "--print-config"});
        std::cout.rdbuf(old);
        REQUIRE(code == 0);
        std::ofstream out(cfg_file);
        out << captured.str();
    }

    // Run once from flags, once from the captured config.
    REQUIRE(run({"simulate", "--out", (dir / "x").string(), "--count", "1", "--size", "128",
                 "--sources", "4", "--seed", "9"}) == 0);
    REQUIRE(run({"simulate", "--config", cfg_file.string(), "--out", (dir / "y").string()}) == 0);
    CHECK(slurp(dir / "x" / "img_00000.ppn") == slurp(dir / "y" / "img_00000.ppn"));
    CHECK(slurp(dir / "x" / "img_00000.truth.csv") == slurp(dir / "y" / "img_00000.truth.csv"));

    // Unknown keys in a config file are rejected.
    {
        std::ofstream bad(dir / "bad.json");
        bad << R"({"cont": 1})";
    }
    CHECK(run({"simulate", "--config", (dir / "bad.json").string()}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("bench and bench-report on a tiny ladder") {
    const fs::path dir = fs::temp_directory_path() / "ppn_cli_bench";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string timings = (dir / "timings.csv").string();

    REQUIRE(run({"bench", "--detector", "baseline", "--sizes", "128,256", "--repeats", "2",
                 "--seed", "4", "--out", timings}) == 0);
    CHECK(fs::exists(timings));

    REQUIRE(run({"bench-report", "--in", timings, "--table", (dir / "table.csv").string(),
                 "--curve", (dir / "curve.csv").string()}) == 0);
    CHECK(fs::exists(dir / "table.csv"));
    CHECK(fs::exists(dir / "curve.csv"));
    fs::remove_all(dir);
}
