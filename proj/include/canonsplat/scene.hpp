// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"
#include "canonsplat/sh.hpp"
#include "canonsplat/so3.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace canonsplat {

/// One splat. SH coefficients are stored coefficient-major:
/// sh[m * 3 + channel], m in [0, (L+1)^2).
struct GaussianPrimitive {
    Vec3 center = Vec3::Zero();
    double opacity = 1.0;
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // (w, x, y, z), w >= 0
    Vec3 scale = Vec3::Ones();
    std::vector<double> sh = std::vector<double>(3, 0.0);

    [[nodiscard]] int
    sh_count() const noexcept {
        return static_cast<int>(sh.size() / 3);
    }

    /// -1 when the coefficient array does not describe a supported degree.
    [[nodiscard]] int
    sh_degree() const noexcept {
        return sh.size() % 3 == 0 ? sh::degree_for_count(sh_count()) : -1;
    }

    bool operator==(const GaussianPrimitive &) const = default;
};

/// DC coefficient producing `rgb` under the 0.5 + c * Y_00 color convention.
inline std::vector<double>
sh_from_rgb(const Vec3 &rgb, int degree = 0) {
    std::vector<double> out(3 * sh::num_coeffs(degree), 0.0);
    for (int c = 0; c < 3; ++c) {
        out[c] = (rgb[c] - 0.5) / sh::kC0;
    }
    return out;
}

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.5;
    double cy = 0.5;
    int width = 1;
    int height = 1;

    [[nodiscard]] Mat3
    matrix() const {
        Mat3 k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }

    [[nodiscard]] bool
    valid() const noexcept {
        return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx > 0.0 && cx < width &&
               cy > 0.0 && cy < height && std::isfinite(fx) && std::isfinite(fy);
    }

    void
    validate() const {
        require(valid(), "invalid intrinsics: need fx, fy > 0, 0 < cx < width, 0 < cy < height");
    }

    /// Focal (H + W) / 2 with the principal point at the image center; used
    /// when no calibration is available.
    static CameraIntrinsics
    from_heuristic(int width, int height) {
        const double f = 0.5 * (width + height);
        return {f, f, 0.5 * width, 0.5 * height, width, height};
    }

    bool operator==(const CameraIntrinsics &) const = default;
};

/// Rigid world-to-camera transform x_cam = R x_world + t.
struct CameraPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static CameraPose
    identity() {
        return {};
    }

    static CameraPose
    from_quat(const Vec4 &q, const Vec3 &t) {
        return {so3::quat_to_matrix(q.normalized()), t};
    }

    [[nodiscard]] Vec4
    quat() const {
        return so3::matrix_to_quat(rotation);
    }

    [[nodiscard]] Vec3
    apply(const Vec3 &x) const {
        return rotation * x + translation;
    }

    /// Camera center in world coordinates.
    [[nodiscard]] Vec3
    center() const {
        return -rotation.transpose() * translation;
    }

    [[nodiscard]] CameraPose
    inverse() const {
        return {rotation.transpose(), -rotation.transpose() * translation};
    }

    /// (a * b)(x) == a(b(x)).
    friend CameraPose
    operator*(const CameraPose &a, const CameraPose &b) {
        return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
    }

    [[nodiscard]] bool
    is_identity() const {
        return rotation == Mat3::Identity() && translation == Vec3::Zero();
    }

    [[nodiscard]] bool
    valid(double tol = 1e-6) const {
        if (!rotation.allFinite() || !translation.allFinite()) {
            return false;
        }
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }

    void
    validate() const {
        require(valid(), "invalid pose: rotation is not orthonormal with det 1");
    }

    bool operator==(const CameraPose &) const = default;
};

struct Camera {
    CameraIntrinsics intrinsics;
    CameraPose pose;
};

/// Union of per-view pixel-aligned primitives in view 1's camera frame.
/// source_view is 1-based; source_pixel is row * W + col within that view.
/// Both index arrays are either empty (non-pixel-aligned scene) or have one
/// entry per primitive.
struct CanonicalScene {
    std::vector<GaussianPrimitive> primitives;
    std::vector<int> source_view;
    std::vector<int> source_pixel;
    int num_views = 0;
    int view_height = 0;
    int view_width = 0;

    [[nodiscard]] std::size_t
    size() const noexcept {
        return primitives.size();
    }

    [[nodiscard]] bool
    pixel_aligned() const noexcept {
        return !source_view.empty();
    }

    bool operator==(const CanonicalScene &) const = default;
};

struct ViewBundle {
    Image image; // H x W x 3 in [0, 1]
    CameraIntrinsics intrinsics;
    std::optional<Image> depth;     // H x W x 1, oracle only
    std::optional<CameraPose> pose; // world-to-camera, oracle/eval only

    [[nodiscard]] int width() const noexcept { return image.width(); }
    [[nodiscard]] int height() const noexcept { return image.height(); }

    void
    validate() const {
        require(image.channels() == 3, "view image must have 3 channels");
        for (double v : image.data()) {
            require(v >= 0.0 && v <= 1.0, "view image values must lie in [0, 1]");
        }
        intrinsics.validate();
        if (depth) {
            require(depth->width() == image.width() && depth->height() == image.height() &&
                        depth->channels() == 1,
                    "view depth shape does not match image");
            for (double d : depth->data()) {
                require(std::isfinite(d) && d > 0.0, "view depth must be positive and finite");
            }
        }
        if (pose) {
            pose->validate();
        }
    }
};

struct Violation {
    std::string invariant;
    std::size_t index = 0;
};

struct ValidationReport {
    std::vector<Violation> violations;

    [[nodiscard]] bool
    ok() const noexcept {
        return violations.empty();
    }

    [[nodiscard]] bool
    mentions(const std::string &invariant) const {
        return std::any_of(violations.begin(), violations.end(),
                           [&](const Violation &v) { return v.invariant == invariant; });
    }
};

inline ValidationReport
validate_scene(const CanonicalScene &scene) {
    ValidationReport report;
    auto flag = [&](const char *what, std::size_t i) { report.violations.push_back({what, i}); };

    const int degree = scene.primitives.empty() ? 0 : scene.primitives.front().sh_degree();
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto &g = scene.primitives[i];
        if (!g.center.allFinite()) {
            flag("finite center", i);
        }
        if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
            flag("opacity range", i);
        }
        if (!(std::abs(g.rotation.norm() - 1.0) <= 1e-6)) {
            flag("quaternion norm", i);
        }
        if (!(g.scale.minCoeff() > 0.0) || !g.scale.allFinite()) {
            flag("scale positivity", i);
        }
        if (g.sh_degree() < 0 || g.sh_degree() != degree) {
            flag("sh coefficient count", i);
        }
    }
    if (scene.pixel_aligned()) {
        if (scene.source_view.size() != scene.size() || scene.source_pixel.size() != scene.size()) {
            flag("index arrays size", 0);
            return report;
        }
        const auto pixels = static_cast<long>(scene.view_height) * scene.view_width;
        if (static_cast<long>(scene.size()) != scene.num_views * pixels) {
            flag("pixel-aligned count", 0);
        }
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (scene.source_view[i] < 1 || scene.source_view[i] > scene.num_views) {
                flag("source view range", i);
            }
            if (scene.source_pixel[i] < 0 || scene.source_pixel[i] >= pixels) {
                flag("source pixel range", i);
            }
        }
    }
    return report;
}

/// Applies x -> R x + t to every primitive: centers move, orientations are
/// left-composed with R and SH bands of degree >= 1 are rotated.
inline CanonicalScene
transform_scene(const CanonicalScene &scene, const CameraPose &pose) {
    pose.validate();
    if (pose.is_identity()) {
        return scene;
    }
    const Vec4 qr = so3::matrix_to_quat(pose.rotation);
    std::vector<Eigen::MatrixXd> bands;
    const int degree = scene.primitives.empty() ? 0 : scene.primitives.front().sh_degree();
    for (int l = 1; l <= degree; ++l) {
        bands.push_back(sh::band_rotation(l, pose.rotation));
    }

    CanonicalScene out = scene;
    for (auto &g : out.primitives) {
        g.center = pose.apply(g.center);
        g.rotation = so3::canonical(so3::multiply(qr, g.rotation));
        for (int l = 1; l <= g.sh_degree() && l <= degree; ++l) {
            const auto &d = bands[l - 1];
            const int first = l * l;
            const int n = 2 * l + 1;
            for (int c = 0; c < 3; ++c) {
                Eigen::VectorXd coeffs(n);
                for (int m = 0; m < n; ++m) {
                    coeffs[m] = g.sh[(first + m) * 3 + c];
                }
                const Eigen::VectorXd rotated = d * coeffs;
                for (int m = 0; m < n; ++m) {
                    g.sh[(first + m) * 3 + c] = rotated[m];
                }
            }
        }
    }
    return out;
}

/// Concatenates pixel-aligned fragments that share view shape. Fragments keep
/// their own source_view indices; num_views becomes the largest index seen.
inline CanonicalScene
concat_scenes(const std::vector<CanonicalScene> &parts) {
    CanonicalScene out;
    bool first = true;
    for (const auto &p : parts) {
        if (first) {
            out.view_height = p.view_height;
            out.view_width = p.view_width;
            first = false;
        }
        require(p.view_height == out.view_height && p.view_width == out.view_width,
                "concat_scenes: view shapes differ");
        out.primitives.insert(out.primitives.end(), p.primitives.begin(), p.primitives.end());
        out.source_view.insert(out.source_view.end(), p.source_view.begin(), p.source_view.end());
        out.source_pixel.insert(out.source_pixel.end(), p.source_pixel.begin(), p.source_pixel.end());
        for (int v : p.source_view) {
            out.num_views = std::max(out.num_views, v);
        }
    }
    return out;
}

} // namespace canonsplat
