// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Finite-difference oracle for the rasterizer backward passes. The default
// loss is the linear functional L = <upstream, render(scene, cam).color>,
// whose gradient with respect to the color image is exactly `upstream`; the
// MSE variant differentiates mse(render, target) end to end.

#include "canonsplat/metrics.hpp"

#include "support/test_util.hpp"

#include <functional>
#include <string>

namespace canonsplat::testing {

struct GradientCheck {
    double max_param_error = 0.0;
    double max_pose_error = 0.0;
    std::string worst; // description of the worst parameter
};

inline double
linear_loss(const CanonicalScene &scene, const Camera &cam, const Image &upstream, const Vec3 &bg,
            const raster::RenderSettings &rs) {
    return dot(raster::render(scene, cam, bg, rs).color, upstream);
}

using ImageLoss = std::function<double(const Image &)>;

/// `upstream` must be the gradient of `loss` at the unperturbed render.
/// Relative error floor: gradients far below the typical magnitude are
/// compared in absolute terms against floor_fraction * typical.
inline GradientCheck
check_loss_gradients(const CanonicalScene &scene, const Camera &cam, const ImageLoss &loss, const Image &upstream,
                     const Vec3 &bg, const raster::RenderSettings &rs, double param_step, double pose_step,
                     double floor_fraction) {
    GradientCheck out;
    auto eval = [&](const CanonicalScene &s, const Camera &c) { return loss(raster::render(s, c, bg, rs).color); };
    const auto analytic = raster::render_with_param_gradients(scene, cam, upstream, bg, rs).grads;

    // typical magnitude per parameter group sets the comparison floor
    double typical = 0.0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        typical = std::max({typical, analytic.center[i].cwiseAbs().maxCoeff(), std::abs(analytic.opacity[i]),
                            analytic.rotation[i].cwiseAbs().maxCoeff(), analytic.scale[i].cwiseAbs().maxCoeff()});
    }
    const double floor = std::max(1e-12, floor_fraction * typical);

    auto check = [&](double a, const std::function<void(CanonicalScene &, double)> &perturb, const std::string &name) {
        const double fd = central_difference(
            [&](double h) {
                CanonicalScene s = scene;
                perturb(s, h);
                return eval(s, cam);
            },
            0.0, param_step);
        const double err = relative_error(a, fd, floor);
        if (err > out.max_param_error) {
            out.max_param_error = err;
            out.worst = name + " analytic=" + std::to_string(a) + " fd=" + std::to_string(fd);
        }
    };

    for (std::size_t i = 0; i < scene.size(); ++i) {
        const std::string tag = "#" + std::to_string(i);
        for (int k = 0; k < 3; ++k) {
            check(analytic.center[i][k], [&](CanonicalScene &s, double h) { s.primitives[i].center[k] += h; },
                  "center" + tag);
            check(analytic.scale[i][k], [&](CanonicalScene &s, double h) { s.primitives[i].scale[k] += h; },
                  "scale" + tag);
        }
        check(analytic.opacity[i], [&](CanonicalScene &s, double h) { s.primitives[i].opacity += h; }, "opacity" + tag);
        for (int k = 0; k < 4; ++k) {
            check(analytic.rotation[i][k], [&](CanonicalScene &s, double h) { s.primitives[i].rotation[k] += h; },
                  "rotation" + tag);
        }
        for (std::size_t k = 0; k < scene.primitives[i].sh.size(); ++k) {
            check(analytic.sh[i][k], [&](CanonicalScene &s, double h) { s.primitives[i].sh[k] += h; }, "sh" + tag);
        }
    }

    const Vec6 pose_grad = raster::render_with_pose_gradient(scene, cam, upstream, bg, rs).grad;
    const double pose_floor = std::max(1e-12, floor_fraction * pose_grad.cwiseAbs().maxCoeff());
    for (int k = 0; k < 6; ++k) {
        const double fd = central_difference(
            [&](double h) {
                Vec6 xi = Vec6::Zero();
                xi[k] = h;
                Camera c = cam;
                c.pose = raster::retract_left(cam.pose, xi);
                return eval(scene, c);
            },
            0.0, pose_step);
        out.max_pose_error = std::max(out.max_pose_error, relative_error(pose_grad[k], fd, pose_floor));
    }
    return out;
}

inline GradientCheck
check_gradients(const CanonicalScene &scene, const Camera &cam, const Image &upstream, const Vec3 &bg,
                const raster::RenderSettings &rs, double param_step = 1e-4, double pose_step = 1e-5,
                double floor_fraction = 1e-3) {
    return check_loss_gradients(
        scene, cam, [&](const Image &color) { return dot(color, upstream); }, upstream, bg, rs, param_step, pose_step,
        floor_fraction);
}

inline GradientCheck
check_mse_gradients(const CanonicalScene &scene, const Camera &cam, const Image &target, const Vec3 &bg,
                    const raster::RenderSettings &rs, double param_step = 1e-4, double pose_step = 1e-5,
                    double floor_fraction = 1e-3) {
    const metrics::LossConfig cfg; // no scorer plugged: pure MSE
    const auto base = raster::render(scene, cam, bg, rs).color;
    const Image upstream = metrics::reconstruction_loss(base, target, cfg).grad;
    return check_loss_gradients(
        scene, cam, [&](const Image &color) { return metrics::mse(color, target); }, upstream, bg, rs, param_step,
        pose_step, floor_fraction);
}

} // namespace canonsplat::testing
