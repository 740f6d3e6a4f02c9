// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/metrics.hpp"
#include "canonsplat/rasterizer.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace canonsplat {

inline metrics::LossConfig
default_refine_loss() {
    metrics::LossConfig cfg;
    cfg.ssim_structural_weight = 0.2;
    return cfg;
}

struct RefineConfig {
    int steps = 200;
    double learning_rate = 5e-3;
    metrics::LossConfig loss = default_refine_loss();
    double convergence_eps = 1e-7; // on the tangent step norm
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Vec3 background = Vec3::Zero();
    raster::RenderSettings render;
    // Adam runs on eta with xi = A eta, A = (H + mu I)^(-1/2) normalized to
    // unit gain along the stiffest direction. H is the Gauss-Newton matrix of
    // the image residual at the initial pose, mu = H_max / max_gain^2.
    bool whiten = true;
    double max_gain = 30.0;

    void
    validate() const {
        if (steps < 0 || !(learning_rate > 0.0) || !(convergence_eps >= 0.0)) {
            fail(ErrorKind::Config, "RefineConfig: need steps >= 0 and learning_rate > 0");
        }
        loss.validate();
    }
};

namespace detail {

/// Chart matrix A of RefineConfig::whiten from central differences of the
/// rendered image along the six tangent directions.
inline Mat6
whitening_chart(const CanonicalScene &scene, const Camera &cam, const RefineConfig &cfg) {
    constexpr double h = 1e-3;
    std::array<Image, 6> cols;
    for (int i = 0; i < 6; ++i) {
        Vec6 xi = Vec6::Zero();
        xi[i] = h;
        const auto plus = raster::render(scene, {cam.intrinsics, raster::retract_left(cam.pose, xi)},
                                         cfg.background, cfg.render);
        const auto minus = raster::render(scene, {cam.intrinsics, raster::retract_left(cam.pose, -xi)},
                                          cfg.background, cfg.render);
        cols[static_cast<std::size_t>(i)] = plus.color;
        for (std::size_t p = 0; p < plus.color.size(); ++p) {
            cols[static_cast<std::size_t>(i)].data()[p] = (plus.color.data()[p] - minus.color.data()[p]) / (2.0 * h);
        }
    }
    Mat6 hm;
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j <= i; ++j) {
            double d = 0.0;
            const auto &a = cols[static_cast<std::size_t>(i)].data();
            const auto &b = cols[static_cast<std::size_t>(j)].data();
            for (std::size_t p = 0; p < a.size(); ++p) {
                d += a[p] * b[p];
            }
            hm(i, j) = hm(j, i) = d;
        }
    }
    Eigen::SelfAdjointEigenSolver<Mat6> es(hm);
    const double top = es.eigenvalues().maxCoeff();
    if (!(top > 0.0) || !std::isfinite(top)) {
        return Mat6::Identity();
    }
    const double mu = top / (cfg.max_gain * cfg.max_gain);
    Vec6 gain;
    for (int i = 0; i < 6; ++i) {
        gain[i] = std::sqrt((top + mu) / (std::max(es.eigenvalues()[i], 0.0) + mu));
    }
    return es.eigenvectors() * gain.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace detail

struct RefineResult {
    CameraPose pose;             // best-so-far by loss
    std::vector<double> trace;   // loss at every evaluated pose
    int steps_run = 0;
    double best_loss = 0.0;
};

/// First-order adaptive-moment descent on the SE(3) tangent of the camera;
/// the primitives stay frozen.
inline RefineResult
refine_pose(const CanonicalScene &scene, const Image &target, const CameraIntrinsics &k, const CameraPose &init,
            const RefineConfig &cfg = {}) {
    cfg.validate();
    init.validate();
    require(target.width() == k.width && target.height() == k.height && target.channels() == 3,
            "refine_pose: target shape does not match intrinsics");
    RefineResult res;
    res.pose = init;
    res.best_loss = std::numeric_limits<double>::infinity();

    const Mat6 chart = cfg.whiten && cfg.steps > 0 ? detail::whitening_chart(scene, {k, init}, cfg) : Mat6::Identity();

    CameraPose pose = init;
    Vec6 m = Vec6::Zero();
    Vec6 v = Vec6::Zero();
    for (int step = 0;; ++step) {
        const Camera cam{k, pose};
        const auto fwd = raster::render_cached(scene, cam, cfg.background, cfg.render);
        const auto loss = metrics::reconstruction_loss(fwd.render.color, target, cfg.loss, step < cfg.steps);
        res.trace.push_back(loss.value);
        if (loss.value < res.best_loss) {
            res.best_loss = loss.value;
            res.pose = pose;
        }
        if (step >= cfg.steps) {
            break;
        }
        // chart is symmetric: d/d eta = A^T d/d xi
        const Vec6 g = chart * raster::pose_gradient(scene, fwd, loss.grad);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(cfg.beta1, step + 1);
        const double c2 = 1.0 - std::pow(cfg.beta2, step + 1);
        const Vec6 eta_step =
            -cfg.learning_rate * (m / c1).array() / ((v / c2).array().sqrt() + cfg.adam_eps);
        const Vec6 delta = chart * eta_step;
        res.steps_run = step + 1;
        if (delta.norm() < cfg.convergence_eps) {
            break;
        }
        pose = raster::retract_left(pose, delta);
    }
    return res;
}

/// Evaluation-time target-pose alignment against the frozen reconstruction.
inline RefineResult
align_target_pose(const CanonicalScene &scene, const Image &target, const CameraIntrinsics &k,
                  const CameraPose &init, const RefineConfig &cfg = {}) {
    return refine_pose(scene, target, k, init, cfg);
}

/// Runs the alignment from every candidate init and keeps the one with the
/// lowest final loss; ties go to the earlier candidate.
inline RefineResult
align_target_pose(const CanonicalScene &scene, const Image &target, const CameraIntrinsics &k,
                  const std::vector<CameraPose> &inits, const RefineConfig &cfg = {}) {
    require(!inits.empty(), "align_target_pose: no initial pose");
    RefineResult best;
    bool have = false;
    for (const auto &init : inits) {
        auto r = refine_pose(scene, target, k, init, cfg);
        if (!have || r.best_loss < best.best_loss) {
            best = std::move(r);
            have = true;
        }
    }
    return best;
}

} // namespace canonsplat
