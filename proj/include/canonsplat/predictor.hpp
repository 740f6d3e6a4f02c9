// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/lifting.hpp"
#include "canonsplat/ply.hpp"
#include "canonsplat/scene.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace canonsplat {

/// Maps V posed-or-unposed views to one pixel-aligned scene in view 1's
/// camera frame. Neural implementations would carry their weights here;
/// the oracles below carry configuration only.
class GaussianPredictor {
  public:
    virtual ~GaussianPredictor() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual CanonicalScene predict(const std::vector<ViewBundle> &views,
                                                 IntrinsicMode intrinsic_mode = IntrinsicMode::GlobalToken) const = 0;
};

/// Checks the shared predict preconditions: V >= 2 and one (H, W).
inline void
check_views(const std::vector<ViewBundle> &views) {
    require(views.size() >= 2, "predict: need at least two views, got " + std::to_string(views.size()));
    for (const auto &v : views) {
        v.validate();
        require(v.width() == views.front().width() && v.height() == views.front().height(),
                "predict: views have mismatched shapes");
    }
}

/// Smooth per-pixel displacement applied to the local centers of views after
/// the first, in units of depth. Models an imperfect geometry head; zero
/// amplitude leaves the oracle exact.
struct GeometryNoise {
    double amplitude = 0.0; // displacement / depth
    std::uint64_t seed = 0;
};

struct OracleConfig {
    double opacity = 0.9;
    double scale_factor = 1.0; // isotropic scale = scale_factor * depth / fx
    GeometryNoise geometry;
};

/// Pose perturbation for the transform-then-fuse baseline: every view after
/// the first gets an extra rotation of exactly `rotation_deg` about a random
/// axis and a translation offset of `translation_frac` times its baseline.
struct PoseNoise {
    double rotation_deg = 0.0;
    double translation_frac = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<RawGaussianParams>
oracle_raw(const ViewBundle &view, const OracleConfig &cfg) {
    require(view.depth.has_value(), "oracle predictor: view has no depth map");
    const int w = view.width(), h = view.height();
    std::vector<RawGaussianParams> raw(static_cast<std::size_t>(w) * h);
    const double logit = std::log(cfg.opacity / (1.0 - cfg.opacity));
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            auto &r = raw[static_cast<std::size_t>(row) * w + col];
            const double d = (*view.depth)(col, row);
            r.raw_opacity = logit;
            r.raw_scale = Vec3::Constant(std::log(cfg.scale_factor * d / view.intrinsics.fx));
            r.raw_sh = sh_from_rgb({view.image(col, row, 0), view.image(col, row, 1), view.image(col, row, 2)});
        }
    }
    return raw;
}

/// Low-frequency vector field over normalized pixel coordinates.
inline void
displace(std::vector<RawGaussianParams> &raw, const ViewBundle &view, const GeometryNoise &noise, int view_index) {
    if (noise.amplitude == 0.0) {
        return;
    }
    std::mt19937_64 rng(noise.seed * 1000003ULL + static_cast<std::uint64_t>(view_index));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<std::array<double, 4>, 6> waves; // per axis, two waves: fx, fy, phase, weight
    for (auto &wv : waves) {
        wv = {2.0 * (u(rng) - 0.5), 2.0 * (u(rng) - 0.5), 2.0 * kPi * u(rng), 0.5 + 0.5 * u(rng)};
    }
    const int w = view.width(), h = view.height();
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const double x = (col + 0.5) / w, y = (row + 0.5) / h;
            const double d = (*view.depth)(col, row);
            Vec3 off;
            for (int a = 0; a < 3; ++a) {
                off[a] = 0.0;
                for (int k = 0; k < 2; ++k) {
                    const auto &wv = waves[static_cast<std::size_t>(a * 2 + k)];
                    off[a] += wv[3] * std::sin(kPi * (wv[0] * x + wv[1] * y) + wv[2]);
                }
            }
            auto &r = raw[static_cast<std::size_t>(row) * w + col];
            r.center = unproject(pixel_center(col, row), d, view.intrinsics) + noise.amplitude * d * off;
        }
    }
}

inline CameraPose
to_canonical(const ViewBundle &anchor, const ViewBundle &view) {
    require(anchor.pose.has_value() && view.pose.has_value(), "oracle predictor: view has no pose");
    return *anchor.pose * view.pose->inverse();
}

} // namespace detail

/// Lifts every view straight into the canonical frame with its oracle depth
/// and relative pose. Colors are degree-0 SH of the source pixels.
inline CanonicalScene
oracle_canonical_predict(const std::vector<ViewBundle> &views, const OracleConfig &cfg = {}) {
    check_views(views);
    std::vector<CanonicalScene> parts;
    for (std::size_t v = 0; v < views.size(); ++v) {
        auto raw = detail::oracle_raw(views[v], cfg);
        if (v > 0) {
            detail::displace(raw, views[v], cfg.geometry, static_cast<int>(v) + 1);
        }
        const CameraPose to1 = v == 0 ? CameraPose{} : detail::to_canonical(views[0], views[v]);
        parts.push_back(lift_view(views[v], to1, raw, static_cast<int>(v) + 1));
    }
    return concat_scenes(parts);
}

/// Right-multiplies a perturbation onto the view-to-canonical transform.
inline CameraPose
perturb_pose(const CameraPose &to1, const PoseNoise &noise, int view_index) {
    if (noise.rotation_deg == 0.0 && noise.translation_frac == 0.0) {
        return to1;
    }
    std::mt19937_64 rng(noise.seed * 1000003ULL + static_cast<std::uint64_t>(view_index));
    std::normal_distribution<double> n(0.0, 1.0);
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const Vec3 tdir = Vec3(n(rng), n(rng), n(rng)).normalized();
    const Mat3 r = so3::axis_angle(axis, deg2rad(noise.rotation_deg));
    return {r * to1.rotation, to1.translation + noise.translation_frac * to1.translation.norm() * tdir};
}

/// Baseline: lift each view in its own camera frame, then move the fragment
/// with the (possibly perturbed) pose and concatenate.
inline CanonicalScene
transform_then_fuse_predict(const std::vector<ViewBundle> &views, const PoseNoise &noise = {},
                            const OracleConfig &cfg = {}) {
    check_views(views);
    std::vector<CanonicalScene> parts;
    for (std::size_t v = 0; v < views.size(); ++v) {
        auto raw = detail::oracle_raw(views[v], cfg);
        if (v > 0) {
            detail::displace(raw, views[v], cfg.geometry, static_cast<int>(v) + 1);
        }
        const CanonicalScene local = lift_view(views[v], CameraPose{}, raw, static_cast<int>(v) + 1);
        if (v == 0) {
            parts.push_back(local);
            continue;
        }
        const CameraPose to1 = perturb_pose(detail::to_canonical(views[0], views[v]), noise, static_cast<int>(v) + 1);
        parts.push_back(transform_scene(local, to1));
    }
    return concat_scenes(parts);
}

class OracleCanonicalPredictor final : public GaussianPredictor {
  public:
    explicit OracleCanonicalPredictor(OracleConfig cfg = {}) : cfg_(cfg) {}
    [[nodiscard]] std::string name() const override { return "oracle-canonical"; }
    [[nodiscard]] CanonicalScene
    predict(const std::vector<ViewBundle> &views,
            IntrinsicMode /*intrinsic_mode*/ = IntrinsicMode::GlobalToken) const override {
        return oracle_canonical_predict(views, cfg_);
    }

  private:
    OracleConfig cfg_;
};

class TransformFusePredictor final : public GaussianPredictor {
  public:
    explicit TransformFusePredictor(PoseNoise noise = {}, OracleConfig cfg = {}) : noise_(noise), cfg_(cfg) {}
    [[nodiscard]] std::string name() const override { return "oracle-transform-fuse"; }
    [[nodiscard]] CanonicalScene
    predict(const std::vector<ViewBundle> &views,
            IntrinsicMode /*intrinsic_mode*/ = IntrinsicMode::GlobalToken) const override {
        return transform_then_fuse_predict(views, noise_, cfg_);
    }

  private:
    PoseNoise noise_;
    OracleConfig cfg_;
};

/// Returns a stored scene regardless of the views.
class FilePredictor final : public GaussianPredictor {
  public:
    explicit FilePredictor(std::filesystem::path path) : path_(std::move(path)) {}
    [[nodiscard]] std::string name() const override { return "from-file:" + path_.string(); }
    [[nodiscard]] CanonicalScene
    predict(const std::vector<ViewBundle> & /*views*/,
            IntrinsicMode /*intrinsic_mode*/ = IntrinsicMode::GlobalToken) const override {
        return ply::read_scene(path_);
    }

  private:
    std::filesystem::path path_;
};

/// "oracle-canonical", "oracle-transform-fuse" or "from-file:<path>".
inline std::unique_ptr<GaussianPredictor>
make_predictor(const std::string &name, const OracleConfig &cfg = {}, const PoseNoise &noise = {}) {
    if (name == "oracle-canonical") {
        return std::make_unique<OracleCanonicalPredictor>(cfg);
    }
    if (name == "oracle-transform-fuse") {
        return std::make_unique<TransformFusePredictor>(noise, cfg);
    }
    const std::string prefix = "from-file:";
    if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size()) {
        return std::make_unique<FilePredictor>(name.substr(prefix.size()));
    }
    fail(ErrorKind::Config, "unknown predictor '" + name + "'");
}

} // namespace canonsplat
