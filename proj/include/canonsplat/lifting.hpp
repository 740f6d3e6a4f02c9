// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/scene.hpp"
#include "canonsplat/sh.hpp"

#include <cmath>
#include <variant>
#include <vector>

namespace canonsplat {

/// Per-pixel prediction head output before activation.
///
/// The center is either taken from the view's depth map (monostate), given as
/// a predicted depth along the pixel ray (double), or given directly as a
/// point in the view's local camera frame (Vec3).
struct RawGaussianParams {
    std::variant<std::monostate, double, Vec3> center;
    double raw_opacity = 0.0;
    Vec4 raw_rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    Vec3 raw_scale = Vec3::Zero(); // log domain
    std::vector<double> raw_sh = std::vector<double>(3, 0.0);
};

enum class IntrinsicMode { GlobalAdd, GlobalToken, DenseRay };

/// Input of one of the three intrinsic-embedding strategies. The global
/// kinds carry the normalized 4-vector; the dense kind an H x W x (L+1)^2
/// grid of SH-encoded ray directions.
struct IntrinsicFeature {
    IntrinsicMode kind = IntrinsicMode::GlobalToken;
    Vec4 global = Vec4::Zero();
    Image dense;
};

/// sigmoid opacity, exp scale, normalized quaternion with w >= 0.
/// The center is left at the origin; lifting places it.
inline GaussianPrimitive
activate(const RawGaussianParams &raw) {
    require(std::isfinite(raw.raw_opacity) && raw.raw_rotation.allFinite() && raw.raw_scale.allFinite(),
            "activate: raw parameters must be finite");
    const double n = raw.raw_rotation.norm();
    require(n > 0.0, "activate: zero-norm raw rotation");
    require(raw.raw_sh.size() % 3 == 0 && sh::degree_for_count(static_cast<int>(raw.raw_sh.size() / 3)) >= 0,
            "activate: unsupported SH coefficient count");
    GaussianPrimitive g;
    g.opacity = 1.0 / (1.0 + std::exp(-raw.raw_opacity));
    g.scale = raw.raw_scale.array().exp();
    g.rotation = so3::canonical(raw.raw_rotation / n);
    g.sh = raw.raw_sh;
    return g;
}

/// Continuous pixel coordinates of pixel (col, row): its center.
inline Vec2
pixel_center(int col, int row) {
    return {col + 0.5, row + 0.5};
}

/// depth * K^-1 (u, v, 1).
inline Vec3
unproject(const Vec2 &pixel, double depth, const CameraIntrinsics &k) {
    require(depth > 0.0, "unproject: depth must be positive");
    return {depth * (pixel.x() - k.cx) / k.fx, depth * (pixel.y() - k.cy) / k.fy, depth};
}

/// Pinhole forward map of a camera-frame point.
inline Vec2
project(const Vec3 &x, const CameraIntrinsics &k) {
    return {k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

/// d(pixel)/d(xi) for a camera-frame point under the left increment
/// exp(xi) * pose, xi = (translation, rotation).
inline Eigen::Matrix<double, 2, 6>
projection_pose_jacobian(const Vec3 &p, const CameraIntrinsics &k) {
    const double x = p.x(), y = p.y(), z = p.z();
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);
    Eigen::Matrix<double, 3, 6> dp;
    dp << Mat3::Identity(), -so3::skew(p);
    return dproj * dp;
}

/// One primitive per pixel (row-major), expressed in the canonical frame via
/// `pose_to_canonical` (view-local camera frame -> canonical frame).
inline CanonicalScene
lift_view(const ViewBundle &view, const CameraPose &pose_to_canonical, const std::vector<RawGaussianParams> &raw,
          int view_index = 1) {
    const int w = view.width();
    const int h = view.height();
    require(raw.size() == static_cast<std::size_t>(w) * h, "lift_view: raw grid shape does not match view");
    CanonicalScene local;
    local.num_views = 1;
    local.view_height = h;
    local.view_width = w;
    local.primitives.reserve(raw.size());
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const int j = row * w + col;
            const auto &r = raw[static_cast<std::size_t>(j)];
            GaussianPrimitive g = activate(r);
            if (std::holds_alternative<Vec3>(r.center)) {
                g.center = std::get<Vec3>(r.center);
            } else {
                double depth = 0.0;
                if (std::holds_alternative<double>(r.center)) {
                    depth = std::get<double>(r.center);
                } else {
                    require(view.depth.has_value(), "lift_view: view has no depth map");
                    depth = (*view.depth)(col, row);
                }
                g.center = unproject(pixel_center(col, row), depth, view.intrinsics);
            }
            local.primitives.push_back(std::move(g));
            local.source_view.push_back(view_index);
            local.source_pixel.push_back(j);
        }
    }
    return transform_scene(local, pose_to_canonical);
}

/// (fx / W, fy / H, cx / W, cy / H).
inline Vec4
intrinsic_feature_global(const CameraIntrinsics &k) {
    k.validate();
    return {k.fx / k.width, k.fy / k.height, k.cx / k.width, k.cy / k.height};
}

/// Unit ray K^-1 p of the center of pixel (col, row).
inline Vec3
pixel_ray(const CameraIntrinsics &k, int col, int row) {
    const Vec2 p = pixel_center(col, row);
    return Vec3((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0).normalized();
}

/// Per-pixel real SH basis (degree <= L) of the unit camera ray.
inline Image
dense_ray_embedding(const CameraIntrinsics &k, int degree = 3) {
    require(degree >= 0 && degree <= sh::kMaxDegree, "dense_ray_embedding: degree must be in [0, 3]");
    k.validate();
    const int n = sh::num_coeffs(degree);
    Image out(k.width, k.height, n);
    for (int row = 0; row < k.height; ++row) {
        for (int col = 0; col < k.width; ++col) {
            const sh::Basis y = sh::eval(degree, pixel_ray(k, col, row));
            for (int m = 0; m < n; ++m) {
                out(col, row, m) = y[m];
            }
        }
    }
    return out;
}

inline IntrinsicFeature
intrinsic_feature(IntrinsicMode mode, const CameraIntrinsics &k, int dense_degree = 3) {
    IntrinsicFeature f;
    f.kind = mode;
    if (mode == IntrinsicMode::DenseRay) {
        f.dense = dense_ray_embedding(k, dense_degree);
    } else {
        f.global = intrinsic_feature_global(k);
    }
    return f;
}

} // namespace canonsplat
