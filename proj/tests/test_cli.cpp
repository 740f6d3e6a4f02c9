// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "canonsplat.hpp"

#include "support/test_util.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sys/wait.h>

namespace canonsplat {
namespace {

namespace fs = std::filesystem;

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun
run(const std::string &args) {
    const std::string cmd = std::string(CANONSPLAT_CLI) + " " + args + " 2>/dev/null";
    CliRun r;
    FILE *p = popen(cmd.c_str(), "r");
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) {
        r.out.append(buf.data(), n);
    }
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string
slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
  protected:
    static void
    SetUpTestSuite() {
        root_ = new fs::path(fs::temp_directory_path() / "canonsplat_cli_test");
        fs::remove_all(*root_);
        fs::create_directories(*root_);
        // three small synthetic pairs shared by the pose and evaluation tests
        const CliRun r = run("synth --seed 3 --count 3 --size 40 --out " + (*root_ / "data").string());
        ASSERT_EQ(r.code, 0);
    }
    static void
    TearDownTestSuite() {
        fs::remove_all(*root_);
        delete root_;
    }
    static fs::path *root_;
};

fs::path *Cli::root_ = nullptr;

TEST_F(Cli, RenderMatchesLibrary) {
    std::mt19937_64 rng(1);
    const auto scene = testing::random_scene(rng, 8, 1);
    ply::write_scene(scene, *root_ / "s.ply");
    const Camera cam = testing::make_camera(32, 32, 32.0, {so3::axis_angle({0, 1, 0}, 0.05), Vec3(0.1, 0, 0)});
    records::write_json(*root_ / "cam.json", records::camera_json(cam.intrinsics, cam.pose));
    const auto out = *root_ / "render";
    const CliRun r = run("render --scene " + (*root_ / "s.ply").string() + " --camera " + (*root_ / "cam.json").string() +
                      " --background 0.1,0.2,0.3 --out " + out.string());
    ASSERT_EQ(r.code, 0);
    const auto expected = raster::render(ply::read_scene(*root_ / "s.ply"), cam, Vec3(0.1, 0.2, 0.3));
    EXPECT_EQ(io::read_png(out / "color.png"), io::quantize8(expected.color));
    const auto depth = io::read_pfm(out / "depth.pfm");
    for (std::size_t i = 0; i < depth.size(); ++i) {
        EXPECT_NEAR(depth.data()[i], expected.depth.data()[i], 1e-5 * (1.0 + expected.depth.data()[i]));
    }
    const auto summary = records::read_json(out / "summary.json");
    EXPECT_EQ(summary["primitives"], 8);
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run("render --scene /nonexistent.ply --out " + root_->string()).code, 2);
    EXPECT_EQ(run("no-such-command").code, 2);
    EXPECT_EQ(run("--help").code, 0);
    std::ofstream(*root_ / "bad.ply") << "not a ply";
    EXPECT_EQ(run("render --scene " + (*root_ / "bad.ply").string() + " --out " + (*root_ / "r2").string()).code, 3);
    EXPECT_EQ(run("estimate-pose --predictor vit --views " + (*root_ / "data/pair_0000").string()).code, 2);
}

TEST_F(Cli, EstimatePosePnpOnly) {
    const CliRun r = run("estimate-pose --no-refine --views " + (*root_ / "data/pair_0000").string());
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j.size(), 1U);
    EXPECT_EQ(j[0]["stage"], "pnp");
    EXPECT_EQ(j[0]["pair_id"], "pair_0000");
    EXPECT_LT(j[0]["rot_err_deg"].get<double>(), 0.05);
}

TEST_F(Cli, EstimatePoseDeterministicAndRefined) {
    const std::string args = "estimate-pose --seed 9 --views " + (*root_ / "data/pair_0001").string();
    const CliRun a = run(args + " --out " + (*root_ / "a.json").string());
    const CliRun b = run(args + " --out " + (*root_ / "b.json").string());
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(slurp(*root_ / "a.json"), slurp(*root_ / "b.json"));
    const auto j = records::read_json(*root_ / "a.json");
    ASSERT_EQ(j.size(), 2U);
    EXPECT_EQ(j[1]["stage"], "refined");
    EXPECT_EQ(j[1]["steps_run"], 200);
    // refinement against the real view never raises the photometric loss
    const auto views = records::read_views(*root_ / "data/pair_0001");
    const auto scene = oracle_canonical_predict(views);
    const auto &q = views[1];
    auto loss = [&](const nlohmann::json &rec) {
        const Camera cam{q.intrinsics, records::pose_from_json(rec)};
        return metrics::reconstruction_loss(raster::render(scene, cam).color, q.image, default_refine_loss(), false)
            .value;
    };
    EXPECT_LE(loss(j[1]), loss(j[0]));
}

TEST_F(Cli, MakeEvalsetAndEvaluate) {
    const auto manifest = *root_ / "data/manifest.jsonl";
    const CliRun m = run("make-evalset --matches " + (*root_ / "data/matches").string() + " --out " + manifest.string());
    ASSERT_EQ(m.code, 0);
    EXPECT_NE(m.out.find("small: "), std::string::npos);
    EXPECT_NE(m.out.find("out-of-range: "), std::string::npos);
    const auto recs = evalset::read_manifest(manifest);
    ASSERT_EQ(recs.size(), 3U);
    for (const auto &rec : recs) {
        EXPECT_GT(rec.r_overlap, 0.0);
        EXPECT_LE(rec.r_overlap, 1.0);
        EXPECT_EQ(rec.bin, evalset::bin_overlap(rec.r_overlap));
    }

    const CliRun e = run("evaluate --no-refine --steps 20 --manifest " + manifest.string());
    ASSERT_EQ(e.code, 0);
    const auto j = nlohmann::json::parse(e.out);
    ASSERT_EQ(j["pairs"].size(), 3U);
    EXPECT_TRUE(j["skipped"].empty());
    double psnr = 0.0;
    for (const auto &p : j["pairs"]) {
        psnr += p["psnr"].get<double>();
        EXPECT_TRUE(p.contains("ssim"));
        EXPECT_TRUE(p.contains("overlap_bin"));
    }
    EXPECT_NEAR(j["overall"]["psnr"].get<double>(), psnr / 3.0, 1e-9);
    EXPECT_EQ(j["overall"]["count"], 3);
    EXPECT_TRUE(j["pose_auc"].contains("auc5"));
}

TEST_F(Cli, MakeEvalsetEmptyAndCorrupt) {
    const auto empty = *root_ / "empty";
    fs::create_directories(empty);
    EXPECT_EQ(run("make-evalset --matches " + empty.string() + " --out " + (empty / "m.jsonl").string()).code, 0);
    std::ofstream(empty / "x.12.mmap") << "junk";
    std::ofstream(empty / "x.21.mmap") << "junk";
    EXPECT_EQ(run("make-evalset --matches " + empty.string() + " --out " + (empty / "m.jsonl").string()).code, 3);
}

TEST_F(Cli, AblateFusion) {
    const CliRun r = run("ablate-fusion --trials 2 --size 32 --noise-deg 0,2");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    ASSERT_EQ(j["levels"].size(), 2U);
    EXPECT_LT(std::abs(j["levels"][0]["mean_delta_db"].get<double>()), 0.05);
    EXPECT_GT(j["levels"][1]["mean_delta_db"].get<double>(), 0.0);
    EXPECT_TRUE(j["baseline_monotone"].get<bool>());
}

} // namespace
} // namespace canonsplat
