// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Ray-cast test scenes with smooth procedural Lambertian texture. Used by the
// recover suites and the fusion ablation.

#include "canonsplat/lifting.hpp"
#include "canonsplat/scene.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace canonsplat::synth {

struct Texture {
    std::array<Vec3, 3> freq;
    std::array<Vec3, 3> phase; // per wave, per channel
    Vec3 base = Vec3::Constant(0.5);

    [[nodiscard]] Vec3
    at(const Vec3 &x) const {
        Vec3 c = base;
        const std::array<double, 3> amp = {0.18, 0.12, 0.08};
        for (std::size_t w = 0; w < 3; ++w) {
            const double s = freq[w].dot(x);
            for (int ch = 0; ch < 3; ++ch) {
                c[ch] += amp[w] * std::sin(s + phase[w][ch]);
            }
        }
        return c;
    }
};

struct Plane {
    Vec3 normal; // unit, facing the cameras
    double offset = 0.0; // normal . x + offset = 0
    Texture texture;
};

struct Sphere {
    Vec3 center;
    double radius = 0.5;
    Texture texture;
};

struct World {
    std::vector<Plane> planes;
    std::vector<Sphere> spheres;
    Vec3 light = Vec3(0.3, -0.8, -0.5).normalized(); // direction towards the light
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 point;
    Vec3 normal;
    const Texture *texture = nullptr;
};

inline std::optional<Hit>
intersect(const World &w, const Vec3 &origin, const Vec3 &dir) {
    Hit best;
    for (const auto &p : w.planes) {
        const double den = p.normal.dot(dir);
        if (std::abs(den) < 1e-12) {
            continue;
        }
        const double t = -(p.normal.dot(origin) + p.offset) / den;
        if (t > 1e-6 && t < best.t) {
            best = {t, origin + t * dir, p.normal, &p.texture};
        }
    }
    for (const auto &s : w.spheres) {
        const Vec3 oc = origin - s.center;
        const double b = oc.dot(dir);
        const double c = oc.squaredNorm() - s.radius * s.radius;
        const double disc = b * b - c;
        if (disc < 0.0) {
            continue;
        }
        const double t = -b - std::sqrt(disc);
        if (t > 1e-6 && t < best.t) {
            const Vec3 x = origin + t * dir;
            best = {t, x, (x - s.center).normalized(), &s.texture};
        }
    }
    if (best.texture == nullptr) {
        return std::nullopt;
    }
    return best;
}

inline Vec3
shade(const World &w, const Hit &h) {
    const double lambert = 0.85 + 0.15 * std::max(0.0, h.normal.dot(w.light));
    return (lambert * h.texture->at(h.point)).cwiseMax(0.0).cwiseMin(1.0);
}

/// Texture frequencies keep wavelengths at roughly 20 px or more for the
/// default cameras so that per-pixel splats reproduce the images.
inline Texture
random_texture(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Texture t;
    for (std::size_t w = 0; w < 3; ++w) {
        const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
        t.freq[w] = (0.8 + 0.8 * u(rng)) * dir;
        t.phase[w] = Vec3(u(rng), u(rng), u(rng)) * 2.0 * kPi;
    }
    t.base = Vec3(0.35 + 0.3 * u(rng), 0.35 + 0.3 * u(rng), 0.35 + 0.3 * u(rng));
    return t;
}

/// Concave corner of two textured walls behind z = 3.5 in a scene frame with
/// y down. Seen from the orbit cameras nothing is occluded.
inline World
random_world(std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    World w;
    const Vec3 corner(0.3 * u(rng), 0.0, 5.0 + 0.3 * u(rng));
    // one solid texture keeps the color continuous across the crease
    const Texture texture = random_texture(rng);
    for (double side : {-1.0, 1.0}) {
        // wall receding towards the corner from the left (side -1) or right
        const double angle = deg2rad(40.0 + 10.0 * u(rng));
        const Vec3 n = Vec3(-side * std::sin(angle), 0.0, -std::cos(angle)).normalized();
        w.planes.push_back({n, -n.dot(corner), texture});
    }
    return w;
}

/// World-to-camera pose of a camera at `eye` looking at `target` (y down).
inline CameraPose
look_at(const Vec3 &eye, const Vec3 &target) {
    const Vec3 f = (target - eye).normalized();
    Vec3 r = Vec3(0, 1, 0).cross(f);
    r.normalize();
    const Vec3 d = f.cross(r);
    Mat3 rot;
    rot.row(0) = r;
    rot.row(1) = d;
    rot.row(2) = f;
    return {rot, -rot * eye};
}

/// Ray-traced image and z-depth. Rays that miss get depth `far` and the
/// base color of the back wall.
inline ViewBundle
render_view(const World &w, const Camera &cam) {
    const auto &k = cam.intrinsics;
    ViewBundle v;
    v.intrinsics = k;
    v.pose = cam.pose;
    v.image = Image(k.width, k.height, 3);
    Image depth(k.width, k.height, 1);
    const Mat3 rt = cam.pose.rotation.transpose();
    const Vec3 eye = cam.pose.center();
    for (int row = 0; row < k.height; ++row) {
        for (int col = 0; col < k.width; ++col) {
            const Vec2 p = pixel_center(col, row);
            const Vec3 ray_cam((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy, 1.0);
            const Vec3 dir = (rt * ray_cam).normalized();
            const auto hit = intersect(w, eye, dir);
            if (hit) {
                const Vec3 c = shade(w, *hit);
                for (int ch = 0; ch < 3; ++ch) {
                    v.image(col, row, ch) = c[ch];
                }
                depth(col, row) = cam.pose.apply(hit->point).z();
            } else {
                for (int ch = 0; ch < 3; ++ch) {
                    v.image(col, row, ch) = 0.5;
                }
                depth(col, row) = 100.0;
            }
        }
    }
    v.depth = std::move(depth);
    return v;
}

struct SyntheticConfig {
    int width = 64;
    int height = 64;
    double min_baseline_deg = 15.0; // yaw between the outer views
    double max_baseline_deg = 30.0;
    double orbit_radius = 3.5;
    int num_views = 2;
    int held_out = 1; // extra evaluation views between the outer views
};

struct SyntheticPair {
    World world;
    std::vector<ViewBundle> views;    // inputs, view 1 first
    std::vector<ViewBundle> held_out; // novel views, interpolated poses
};

/// Cameras orbit the scene center; input views span the baseline and the
/// held-out views sit at interior yaw angles. The scene frame is moved by a
/// random rigid transform so view 1 is not the world origin.
inline SyntheticPair
make_pair(std::uint64_t seed, const SyntheticConfig &cfg = {}) {
    require(cfg.num_views >= 2, "make_pair: need at least two views");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SyntheticPair out;
    out.world = random_world(rng);

    const double baseline = deg2rad(cfg.min_baseline_deg + (cfg.max_baseline_deg - cfg.min_baseline_deg) * u(rng));
    const double pitch = deg2rad(-8.0 + 6.0 * u(rng));
    const double start = -0.5 * baseline + deg2rad(4.0 * (u(rng) - 0.5));
    const Vec3 target(0.0, 0.3, 3.5);
    auto eye_at = [&](double yaw) -> Vec3 {
        const Vec3 back(-std::sin(yaw) * std::cos(pitch), -std::sin(pitch), -std::cos(yaw) * std::cos(pitch));
        return target + cfg.orbit_radius * back;
    };

    // scene frame -> world frame
    const Vec3 axis(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    const CameraPose to_world{so3::axis_angle(axis, deg2rad(40.0) * u(rng)), Vec3(u(rng), u(rng), u(rng)) - Vec3::Constant(0.5)};
    World w = out.world;
    for (auto &p : w.planes) {
        p.normal = to_world.rotation * p.normal;
        p.offset -= p.normal.dot(to_world.translation);
        for (auto &f : p.texture.freq) {
            f = to_world.rotation * f;
        }
        // keep the texture attached to the surface
        for (std::size_t i = 0; i < 3; ++i) {
            p.texture.phase[i] -= Vec3::Constant(p.texture.freq[i].dot(to_world.translation));
        }
    }
    for (auto &s : w.spheres) {
        s.center = to_world.apply(s.center);
        for (std::size_t i = 0; i < 3; ++i) {
            s.texture.freq[i] = to_world.rotation * s.texture.freq[i];
            s.texture.phase[i] -= Vec3::Constant(s.texture.freq[i].dot(to_world.translation));
        }
    }
    w.light = to_world.rotation * w.light;
    out.world = w;

    const CameraIntrinsics k{0.5 * (cfg.width + cfg.height), 0.5 * (cfg.width + cfg.height), 0.5 * cfg.width,
                             0.5 * cfg.height, cfg.width, cfg.height};
    auto camera_at = [&](double yaw) -> Camera {
        const CameraPose scene_pose = look_at(eye_at(yaw), target);
        return Camera{k, scene_pose * to_world.inverse()};
    };
    // view 1 and view 2 are the outer views; extra inputs go in between
    std::vector<double> yaws = {start, start + baseline};
    for (int i = 2; i < cfg.num_views; ++i) {
        yaws.push_back(start + baseline * (i - 1.0) / (cfg.num_views - 1.0));
    }
    for (double yaw : yaws) {
        out.views.push_back(render_view(w, camera_at(yaw)));
    }
    for (int i = 0; i < cfg.held_out; ++i) {
        const double frac = (i + 1.0) / (cfg.held_out + 1.0);
        out.held_out.push_back(render_view(w, camera_at(start + frac * baseline)));
    }
    return out;
}

/// Pose of view `v` relative to view 1: canonical frame to view-v camera.
inline CameraPose
relative_pose(const ViewBundle &view1, const ViewBundle &view) {
    require(view1.pose && view.pose, "relative_pose: views need poses");
    return *view.pose * view1.pose->inverse();
}

} // namespace canonsplat::synth
