// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/lifting.hpp"
#include "canonsplat/scene.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace canonsplat::pnp {

struct PnPConfig {
    int ransac_iterations = 2048;
    double reprojection_threshold = 1.5; // pixels
    int min_inliers = 6;
    int sample_size = 4;
    std::uint64_t seed = 0;
    int refine_iterations = 20;

    void
    validate() const {
        if (ransac_iterations < 1 || !(reprojection_threshold > 0.0) || sample_size < 4 || min_inliers < 4 ||
            refine_iterations < 0) {
            fail(ErrorKind::Config, "PnPConfig: need iterations >= 1, threshold > 0, sample_size >= 4, "
                                    "min_inliers >= 4");
        }
    }
};

struct PnPResult {
    CameraPose pose;
    int inliers = 0;
    std::vector<char> inlier_mask;
    double rms_error = 0.0; // pixels, over the final inliers
};

/// Real roots of c[0] x^4 + c[1] x^3 + c[2] x^2 + c[3] x + c[4], polished
/// with a few Newton steps.
inline std::vector<double>
solve_quartic(const std::array<double, 5> &c) {
    std::vector<double> roots;
    if (std::abs(c[0]) < 1e-14 * (std::abs(c[1]) + std::abs(c[2]) + std::abs(c[3]) + std::abs(c[4]) + 1e-300)) {
        return roots;
    }
    Eigen::Matrix4d companion = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 4; ++i) {
        companion(0, i) = -c[static_cast<std::size_t>(i) + 1] / c[0];
    }
    companion(1, 0) = companion(2, 1) = companion(3, 2) = 1.0;
    Eigen::EigenSolver<Eigen::Matrix4d> es(companion, false);
    const auto ev = es.eigenvalues();
    auto poly = [&](double x) { return (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4]; };
    auto dpoly = [&](double x) { return ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3]; };
    for (int i = 0; i < 4; ++i) {
        if (std::abs(ev[i].imag()) > 1e-6 * std::max(1.0, std::abs(ev[i].real()))) {
            continue;
        }
        double x = ev[i].real();
        for (int it = 0; it < 3; ++it) {
            const double d = dpoly(x);
            if (d == 0.0) {
                break;
            }
            x -= poly(x) / d;
        }
        roots.push_back(x);
    }
    return roots;
}

/// Least-squares rigid transform with dst ~ R src + t (Kabsch).
inline CameraPose
align_points(const std::vector<Vec3> &src, const std::vector<Vec3> &dst) {
    const std::size_t n = src.size();
    Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        ms += src[i];
        md += dst[i];
    }
    ms /= static_cast<double>(n);
    md /= static_cast<double>(n);
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        h += (dst[i] - md) * (src[i] - ms).transpose();
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
    return {r, md - r * ms};
}

/// Grunert's P3P: up to four poses mapping the world points onto the unit
/// bearing rays.
inline std::vector<CameraPose>
solve_p3p(const std::array<Vec3, 3> &x, const std::array<Vec3, 3> &f) {
    std::vector<CameraPose> out;
    const double a = (x[1] - x[2]).norm();
    const double b = (x[0] - x[2]).norm();
    const double c = (x[0] - x[1]).norm();
    if (a < 1e-12 || b < 1e-12 || c < 1e-12) {
        return out;
    }
    const double ca = f[1].dot(f[2]);
    const double cb = f[0].dot(f[2]);
    const double cg = f[0].dot(f[1]);
    const double a2 = a * a, b2 = b * b, c2 = c * c;
    const double k = (a2 - c2) / b2;
    const double p = (a2 + c2) / b2;

    std::array<double, 5> coef;
    coef[0] = (k - 1.0) * (k - 1.0) - 4.0 * c2 / b2 * ca * ca;
    coef[1] = 4.0 * (k * (1.0 - k) * cb - (1.0 - p) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    coef[2] = 2.0 * (k * k - 1.0 + 2.0 * k * k * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca -
                     4.0 * p * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg);
    coef[3] = 4.0 * (-k * (1.0 + k) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - p) * ca * cg);
    coef[4] = (1.0 + k) * (1.0 + k) - 4.0 * a2 / b2 * cg * cg;

    for (double v : solve_quartic(coef)) {
        if (v <= 0.0) {
            continue;
        }
        const double den = 2.0 * (cg - v * ca);
        if (std::abs(den) < 1e-12) {
            continue;
        }
        const double u = ((-1.0 + k) * v * v - 2.0 * k * cb * v + 1.0 + k) / den;
        if (u <= 0.0) {
            continue;
        }
        const double s1sq = b2 / (1.0 + v * v - 2.0 * v * cb);
        if (!(s1sq > 0.0)) {
            continue;
        }
        const double s1 = std::sqrt(s1sq);
        const std::vector<Vec3> cam = {s1 * f[0], u * s1 * f[1], v * s1 * f[2]};
        out.push_back(align_points({x[0], x[1], x[2]}, cam));
    }
    return out;
}

namespace detail {

inline double
reprojection_sq(const CameraPose &pose, const Vec3 &x, const Vec2 &uv, const CameraIntrinsics &k) {
    const Vec3 p = pose.apply(x);
    if (p.z() <= 1e-9) {
        return std::numeric_limits<double>::infinity();
    }
    return (project(p, k) - uv).squaredNorm();
}

/// Rank of the centered point cloud below 2 means every solve is ill-posed.
inline bool
collinear(const std::vector<Vec3> &pts) {
    Vec3 mean = Vec3::Zero();
    for (const auto &p : pts) {
        mean += p;
    }
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const auto &p : pts) {
        cov += (p - mean) * (p - mean).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 ev = es.eigenvalues(); // ascending
    return ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2];
}

} // namespace detail

/// Gauss-Newton with Levenberg damping on the reprojection error of the
/// selected correspondences, left increments on the pose.
inline CameraPose
refine_reprojection(const std::vector<Vec3> &pts, const std::vector<Vec2> &px, const std::vector<char> &mask,
                    const CameraIntrinsics &k, CameraPose pose, int iterations) {
    auto cost = [&](const CameraPose &c) {
        double s = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (mask[i]) {
                s += detail::reprojection_sq(c, pts[i], px[i], k);
            }
        }
        return s;
    };
    double lambda = 1e-4;
    double current = cost(pose);
    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Vec6 jtr = Vec6::Zero();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (!mask[i]) {
                continue;
            }
            const Vec3 p = pose.apply(pts[i]);
            if (p.z() <= 1e-9) {
                continue;
            }
            const auto jac = projection_pose_jacobian(p, k);
            const Vec2 r = project(p, k) - px[i];
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * r;
        }
        bool improved = false;
        for (int tries = 0; tries < 10; ++tries) {
            Eigen::Matrix<double, 6, 6> a = jtj;
            a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-9);
            const Vec6 step = -a.ldlt().solve(jtr);
            if (!step.allFinite()) {
                break;
            }
            // small-step SE(3) update: rotation by exp(phi), translation by rho
            CameraPose next{so3::exp(step.tail<3>()) * pose.rotation,
                            so3::exp(step.tail<3>()) * pose.translation + step.head<3>()};
            const double c = cost(next);
            if (c < current) {
                pose = next;
                lambda = std::max(lambda / 10.0, 1e-12);
                improved = current - c > 1e-14 * current;
                current = c;
                break;
            }
            lambda *= 10.0;
        }
        if (!improved) {
            break;
        }
    }
    return pose;
}

/// Robust pose from 3D-2D correspondences.
inline PnPResult
solve_pnp_ransac(const std::vector<Vec3> &pts, const std::vector<Vec2> &px, const CameraIntrinsics &k,
                 const PnPConfig &cfg) {
    cfg.validate();
    k.validate();
    require(pts.size() == px.size(), "solve_pnp_ransac: correspondence arrays differ in size");
    const std::size_t n = pts.size();
    if (n < static_cast<std::size_t>(std::max(cfg.sample_size, 6))) {
        fail(ErrorKind::Geometry, "degenerate geometry: insufficient correspondences (" + std::to_string(n) + ")");
    }
    if (detail::collinear(pts)) {
        fail(ErrorKind::Geometry, "degenerate geometry: 3D points are collinear");
    }

    std::vector<Vec3> bearings(n);
    for (std::size_t i = 0; i < n; ++i) {
        bearings[i] = Vec3((px[i].x() - k.cx) / k.fx, (px[i].y() - k.cy) / k.fy, 1.0).normalized();
    }
    const double thr2 = cfg.reprojection_threshold * cfg.reprojection_threshold;
    auto count_inliers = [&](const CameraPose &pose, std::vector<char> *mask) {
        int count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool in = detail::reprojection_sq(pose, pts[i], px[i], k) < thr2;
            count += in ? 1 : 0;
            if (mask != nullptr) {
                (*mask)[i] = in ? 1 : 0;
            }
        }
        return count;
    };

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    CameraPose best;
    int best_count = -1;
    std::vector<std::size_t> sample(static_cast<std::size_t>(cfg.sample_size));
    for (int it = 0; it < cfg.ransac_iterations; ++it) {
        for (std::size_t s = 0; s < sample.size(); ++s) {
            std::size_t idx;
            do {
                idx = pick(rng);
            } while (std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(s), idx) !=
                     sample.begin() + static_cast<std::ptrdiff_t>(s));
            sample[s] = idx;
        }
        const auto candidates = solve_p3p({pts[sample[0]], pts[sample[1]], pts[sample[2]]},
                                          {bearings[sample[0]], bearings[sample[1]], bearings[sample[2]]});
        // the remaining sample points pick among the P3P solutions
        const CameraPose *chosen = nullptr;
        double chosen_err = std::numeric_limits<double>::infinity();
        for (const auto &cand : candidates) {
            double e = 0.0;
            for (std::size_t s = 3; s < sample.size(); ++s) {
                e = std::max(e, detail::reprojection_sq(cand, pts[sample[s]], px[sample[s]], k));
            }
            if (e < chosen_err) {
                chosen_err = e;
                chosen = &cand;
            }
        }
        if (chosen == nullptr || !(chosen_err < thr2)) {
            continue;
        }
        const int c = count_inliers(*chosen, nullptr);
        if (c > best_count) {
            best_count = c;
            best = *chosen;
        }
    }
    if (best_count < cfg.min_inliers) {
        fail(ErrorKind::Geometry, "degenerate geometry: " + std::to_string(std::max(best_count, 0)) +
                                      " inliers, need " + std::to_string(cfg.min_inliers));
    }

    PnPResult res;
    res.inlier_mask.assign(n, 0);
    count_inliers(best, &res.inlier_mask);
    // refit on the inliers, then once more on the refreshed inlier set
    for (int round = 0; round < 2; ++round) {
        best = refine_reprojection(pts, px, res.inlier_mask, k, best, cfg.refine_iterations);
        const int c = count_inliers(best, &res.inlier_mask);
        if (c < cfg.min_inliers) {
            fail(ErrorKind::Geometry, "degenerate geometry: refit lost its inliers");
        }
    }
    res.pose = {so3::orthonormalize(best.rotation), best.translation};
    res.inliers = count_inliers(res.pose, &res.inlier_mask);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (res.inlier_mask[i]) {
            sq += detail::reprojection_sq(res.pose, pts[i], px[i], k);
        }
    }
    res.rms_error = res.inliers > 0 ? std::sqrt(sq / res.inliers) : 0.0;
    return res;
}

/// Pose of `query_view` in the canonical frame from its own pixel-aligned
/// primitives: pixel centers against the predicted canonical centers.
inline PnPResult
coarse_pose_pnp(const CanonicalScene &scene, int query_view, const CameraIntrinsics &k, const PnPConfig &cfg = {}) {
    require(scene.pixel_aligned(), "coarse_pose_pnp: scene is not pixel-aligned");
    require(scene.view_width > 0, "coarse_pose_pnp: scene has no view shape");
    std::vector<Vec3> pts;
    std::vector<Vec2> px;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (scene.source_view[i] != query_view) {
            continue;
        }
        const int j = scene.source_pixel[i];
        pts.push_back(scene.primitives[i].center);
        px.push_back(pixel_center(j % scene.view_width, j / scene.view_width));
    }
    return solve_pnp_ransac(pts, px, k, cfg);
}

} // namespace canonsplat::pnp
