// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "canonsplat/evalset.hpp"
#include "canonsplat/records.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace canonsplat {
namespace {

namespace fs = std::filesystem;
using evalset::MatchMap;
using evalset::OverlapBin;

/// First `valid` of `total` pixels get score 1, the rest 0.
MatchMap
map_with_fraction(int valid, int total) {
    MatchMap m(static_cast<std::uint32_t>(total), 1);
    for (int i = 0; i < valid; ++i) {
        m.score[static_cast<std::size_t>(i)] = 1.0F;
    }
    return m;
}

fs::path
temp_path(const std::string &name) {
    return fs::temp_directory_path() / ("canonsplat_test_" + name);
}

TEST(Overlap, AllValid) {
    const MatchMap ones(8, 8, 1.0F);
    const auto r = evalset::overlap_ratio(ones, ones);
    EXPECT_EQ(r.r_overlap, 1.0);
    EXPECT_EQ(r.bin, OverlapBin::OutOfRange);
}

TEST(Overlap, MinRule) {
    const auto r = evalset::overlap_ratio(map_with_fraction(4, 10), map_with_fraction(6, 10));
    EXPECT_EQ(r.r12, 0.4);
    EXPECT_EQ(r.r21, 0.6);
    EXPECT_EQ(r.r_overlap, 0.4);
    EXPECT_EQ(r.bin, OverlapBin::Medium);
    const auto s = evalset::overlap_ratio(map_with_fraction(6, 10), map_with_fraction(4, 10));
    EXPECT_EQ(s.r_overlap, r.r_overlap);
}

TEST(Overlap, StrictThreshold) {
    EXPECT_EQ(evalset::kDefaultMatchThreshold, 0.005);
    const MatchMap at(5, 5, 0.005F);
    EXPECT_EQ(evalset::overlap_ratio(at, at).r_overlap, 0.0);
    // exact equality with the stored value is still invalid
    EXPECT_EQ(evalset::overlap_ratio(at, at, static_cast<double>(0.005F)).r_overlap, 0.0);
    EXPECT_EQ(evalset::overlap_ratio(at, at, 0.004).r_overlap, 1.0);
}

TEST(Overlap, MonotoneInThreshold) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0F, 1.0F);
    MatchMap a(16, 16), b(16, 16);
    for (auto &s : a.score) {
        s = u(rng);
    }
    for (auto &s : b.score) {
        s = u(rng);
    }
    double prev = 1.0;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
        const double r = evalset::overlap_ratio(a, b, t).r_overlap;
        EXPECT_LE(r, prev);
        prev = r;
    }
}

TEST(Bins, Boundaries) {
    EXPECT_EQ(evalset::bin_overlap(0.10), OverlapBin::Small);
    EXPECT_EQ(evalset::bin_overlap(0.40), OverlapBin::Medium);
    EXPECT_EQ(evalset::bin_overlap(0.60), OverlapBin::Large);
    EXPECT_EQ(evalset::bin_overlap(0.01), OverlapBin::OutOfRange);
    EXPECT_EQ(evalset::bin_overlap(0.30), OverlapBin::Medium);
    EXPECT_EQ(evalset::bin_overlap(0.05), OverlapBin::Small);
    EXPECT_EQ(evalset::bin_overlap(0.55), OverlapBin::Large);
    EXPECT_EQ(evalset::bin_overlap(0.80), OverlapBin::Large);
    EXPECT_EQ(evalset::bin_overlap(0.81), OverlapBin::OutOfRange);
    EXPECT_EQ(evalset::to_string(OverlapBin::Small), "small");
}

TEST(MatchMapIo, RoundTrip) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0.0F, 1.0F);
    MatchMap m(7, 5);
    for (auto &s : m.score) {
        s = u(rng);
    }
    const auto path = temp_path("rt.mmap");
    evalset::write_matchmap(m, path);
    EXPECT_EQ(fs::file_size(path), 12U + 4U * 35U);
    EXPECT_EQ(evalset::read_matchmap(path), m);
    fs::remove(path);
}

void
write_bytes(const fs::path &p, const std::string &bytes) {
    std::ofstream(p, std::ios::binary) << bytes;
}

void
expect_parse_error(const fs::path &p, const std::string &needle) {
    try {
        evalset::read_matchmap(p);
        ADD_FAILURE() << needle;
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

TEST(MatchMapIo, Corruptions) {
    const auto path = temp_path("bad.mmap");
    evalset::write_matchmap(MatchMap(4, 4, 0.5F), path);
    std::ifstream in(path, std::ios::binary);
    const std::string good((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    write_bytes(path, "XMAP" + good.substr(4));
    expect_parse_error(path, "bad magic");
    write_bytes(path, good.substr(0, 9));
    expect_parse_error(path, "truncated");
    write_bytes(path, good.substr(0, good.size() - 2));
    expect_parse_error(path, "truncated");
    // header claims 4x4, payload holds 15 scores
    write_bytes(path, good.substr(0, good.size() - 4));
    expect_parse_error(path, "size mismatch");
    fs::remove(path);
    EXPECT_THROW(evalset::read_matchmap(path), Error);
}

TEST(Manifest, JsonLinesRoundTrip) {
    std::vector<evalset::OverlapRecord> recs = {
        evalset::overlap_ratio(map_with_fraction(1, 10), map_with_fraction(2, 10), 0.005, "a"),
        evalset::overlap_ratio(map_with_fraction(7, 10), map_with_fraction(6, 10), 0.005, "b")};
    const auto path = temp_path("manifest.jsonl");
    evalset::write_manifest(recs, path);
    const auto back = evalset::read_manifest(path);
    ASSERT_EQ(back.size(), 2U);
    EXPECT_EQ(back[0].pair_id, "a");
    EXPECT_EQ(back[0].bin, OverlapBin::Small);
    EXPECT_EQ(back[1].bin, OverlapBin::Large);
    EXPECT_EQ(back[1].r_overlap, 0.6);
    fs::remove(path);
}

TEST(Records, PoseRecordSchema) {
    records::PoseRecord r;
    r.pair_id = "p0";
    r.stage = records::Stage::Refined;
    r.pose = {so3::axis_angle({0, 1, 0}, 0.1), Vec3(1, 2, 3)};
    r.error = metrics::PoseError{0.1, 0.2, 0.2};
    r.inliers = 40;
    r.steps_run = 200;
    const auto j = records::to_json(r);
    EXPECT_EQ(j["stage"], "refined");
    EXPECT_EQ(j["rotation_quat"].size(), 4U);
    EXPECT_EQ(j["translation"][2], 3.0);
    EXPECT_EQ(j["rot_err_deg"], 0.1);
    EXPECT_EQ(j["inliers"], 40);
    const auto p = records::pose_from_json(j);
    EXPECT_LT((p.rotation - r.pose.rotation).norm(), 1e-12);
}

TEST(Records, ViewDirectoryRoundTrip) {
    ViewBundle v;
    v.image = Image(3, 2, 3, 0.25);
    v.intrinsics = CameraIntrinsics::from_heuristic(3, 2);
    v.depth = Image(3, 2, 1, 2.5);
    v.pose = CameraPose{so3::axis_angle({1, 0, 0}, 0.2), Vec3(0, 1, 0)};
    const auto dir = temp_path("viewdir");
    records::write_view(dir, "view1", v);
    const auto views = records::read_views(dir);
    ASSERT_EQ(views.size(), 1U);
    EXPECT_EQ(views[0].intrinsics, v.intrinsics);
    EXPECT_EQ(*views[0].depth, *v.depth);
    EXPECT_LT((views[0].pose->rotation - v.pose->rotation).norm(), 1e-12);
    for (double x : views[0].image.data()) {
        EXPECT_NEAR(x, 0.25, 0.5 / 255.0);
    }
    fs::remove_all(dir);
}

} // namespace
} // namespace canonsplat
