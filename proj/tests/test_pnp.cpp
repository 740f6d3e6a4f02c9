// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "canonsplat/pnp.hpp"

#include "support/suites.hpp"
#include "support/test_util.hpp"

#include <gtest/gtest.h>

#include <random>

namespace canonsplat {
namespace {

TEST(Quartic, KnownRoots) {
    // (x - 1)(x + 2)(x - 0.5)(x + 3) = x^4 + 3.5x^3 - x^2 - 6.5x + 3
    auto roots = pnp::solve_quartic({1.0, 3.5, -1.0, -6.5, 3.0});
    std::sort(roots.begin(), roots.end());
    ASSERT_EQ(roots.size(), 4U);
    EXPECT_NEAR(roots[0], -3.0, 1e-12);
    EXPECT_NEAR(roots[1], -2.0, 1e-12);
    EXPECT_NEAR(roots[2], 0.5, 1e-12);
    EXPECT_NEAR(roots[3], 1.0, 1e-12);
    // x^4 + 1 has no real roots
    EXPECT_TRUE(pnp::solve_quartic({1, 0, 0, 0, 1}).empty());
}

TEST(AlignPoints, RecoversRigidMotion) {
    std::mt19937_64 rng(1);
    const auto pose = testing::random_pose(rng, 170, 3);
    std::vector<Vec3> a, b;
    for (int i = 0; i < 10; ++i) {
        a.push_back(Vec3::Random());
        b.push_back(pose.apply(a.back()));
    }
    const auto est = pnp::align_points(a, b);
    EXPECT_LT((est.rotation - pose.rotation).norm(), 1e-10);
    EXPECT_LT((est.translation - pose.translation).norm(), 1e-10);
}

TEST(P3p, OneSolutionIsExact) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pose = testing::random_pose(rng, 90, 1);
        std::array<Vec3, 3> x, f;
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (std::size_t i = 0; i < 3; ++i) {
            const Vec3 cam(u(rng), u(rng), 2.0 + u(rng));
            x[i] = pose.inverse().apply(cam);
            f[i] = cam.normalized();
        }
        double best = 1e9;
        for (const auto &s : pnp::solve_p3p(x, f)) {
            best = std::min(best, (s.rotation - pose.rotation).norm() + (s.translation - pose.translation).norm());
        }
        EXPECT_LT(best, 1e-6) << "trial " << trial;
    }
}

TEST(PnP, NoiselessRecovery) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto c = testing::run_pnp_case(seed, 0.0);
        EXPECT_LT(c.error.rotation_deg, 0.05);
        EXPECT_LT(c.translation_rel, 1e-3);
        EXPECT_EQ(c.inliers, 100);
    }
}

TEST(PnP, ThirtyPercentOutliers) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto c = testing::run_pnp_case(seed, 0.3);
        EXPECT_LT(c.error.rotation_deg, 0.2) << "seed " << seed;
        EXPECT_GE(c.inliers, 70);
    }
}

TEST(PnP, DeterministicGivenSeed) {
    const auto a = testing::run_pnp_case(5, 0.3);
    const auto b = testing::run_pnp_case(5, 0.3);
    EXPECT_EQ(a.error.rotation_deg, b.error.rotation_deg);
    EXPECT_EQ(a.translation_rel, b.translation_rel);
}

TEST(PnP, CollinearIsDegenerate) {
    const auto &k = testing::kPnpIntrinsics;
    std::vector<Vec3> pts;
    std::vector<Vec2> px;
    for (int i = 0; i < 20; ++i) {
        pts.emplace_back(0.1 * i, 0.05 * i, 2.0 + 0.02 * i);
        px.push_back(project(pts.back(), k));
    }
    try {
        pnp::solve_pnp_ransac(pts, px, k, {});
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::Geometry);
        EXPECT_NE(std::string(e.what()).find("degenerate geometry"), std::string::npos);
    }
}

TEST(PnP, TooFewInliersIsDegenerate) {
    const auto &k = testing::kPnpIntrinsics;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.5, 0.5), ux(0, 640), uy(0, 480);
    std::vector<Vec3> pts;
    std::vector<Vec2> px;
    for (int i = 0; i < 30; ++i) {
        pts.emplace_back(u(rng), u(rng), 2.0 + u(rng));
        px.emplace_back(ux(rng), uy(rng)); // no consistent pose
    }
    pnp::PnPConfig cfg;
    cfg.min_inliers = 20;
    try {
        pnp::solve_pnp_ransac(pts, px, k, cfg);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::Geometry);
    }
    EXPECT_THROW(pnp::solve_pnp_ransac({pts.begin(), pts.begin() + 5}, {px.begin(), px.begin() + 5}, k, {}), Error);
}

TEST(PnP, ConfigValidation) {
    pnp::PnPConfig cfg;
    EXPECT_EQ(cfg.ransac_iterations, 2048);
    EXPECT_EQ(cfg.reprojection_threshold, 1.5);
    EXPECT_EQ(cfg.sample_size, 4);
    cfg.sample_size = 3;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.reprojection_threshold = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(CoarsePose, OracleSceneGivesExactPose) {
    synth::SyntheticConfig sc;
    sc.width = sc.height = 24;
    const auto pair = synth::make_pair(3, sc);
    const auto scene = oracle_canonical_predict(pair.views);
    const auto gt = synth::relative_pose(pair.views[0], pair.views[1]);
    const auto r = pnp::coarse_pose_pnp(scene, 2, pair.views[1].intrinsics);
    EXPECT_LT(metrics::pose_error(r.pose, gt).combined_deg, 0.01);
    // view 1 recovers the anchor
    const auto r1 = pnp::coarse_pose_pnp(scene, 1, pair.views[0].intrinsics);
    EXPECT_LT(so3::angle(r1.pose.rotation), 1e-6);
    EXPECT_LT(r1.pose.translation.norm(), 1e-6);
}

} // namespace
} // namespace canonsplat
