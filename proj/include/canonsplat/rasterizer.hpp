// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/parallel.hpp"
#include "canonsplat/scene.hpp"
#include "canonsplat/sh.hpp"
#include "canonsplat/so3.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

// Software tiled splatting rasterizer with analytic backward passes.
//
// Projection follows EWA splatting: a primitive with center mu, rotation q and
// scale s maps to a 2D Gaussian with mean = pinhole(R mu + t) and covariance
// J W Sigma W^T J^T + eps I. Pixels (pixel-center convention) composite the
// depth-sorted splats front to back.
namespace canonsplat::raster {

struct RenderSettings {
    double cov_epsilon = 0.3;              // px^2 added to cov2d
    double near_plane = 0.01;              // camera z below this is culled
    double min_alpha = 1.0 / 255.0;        // contributions below are skipped
    double min_transmittance = 1e-4;       // compositing stops below this
    int tile_size = 16;
    unsigned jobs = 1;                     // tile-level threads
};

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

enum class ProjectStatus { Visible, BehindCamera };

struct ProjectionResult {
    ProjectStatus status = ProjectStatus::BehindCamera;
    Splat2D splat;

    explicit operator bool() const noexcept { return status == ProjectStatus::Visible; }
};

struct RenderOutput {
    Image color; // W x H x 3
    Image alpha; // W x H x 1
    Image depth; // W x H x 1, alpha-normalized expected depth (0 where empty)
};

/// Gradients with respect to the stored primitive fields. Rotation gradients
/// are taken with respect to the (possibly unnormalized) quaternion, which the
/// renderer normalizes before use.
struct ParamGradients {
    std::vector<Vec3> center;
    std::vector<double> opacity;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<std::vector<double>> sh;

    /// Converts to gradients w.r.t. logit(opacity) and log(scale).
    [[nodiscard]] ParamGradients
    to_raw(const CanonicalScene &scene) const {
        ParamGradients out = *this;
        for (std::size_t i = 0; i < scene.size(); ++i) {
            const auto &g = scene.primitives[i];
            out.opacity[i] *= g.opacity * (1.0 - g.opacity);
            out.scale[i] = out.scale[i].cwiseProduct(g.scale);
        }
        return out;
    }
};

namespace detail {

// Per-primitive projection intermediates reused by the backward pass.
struct Projected {
    bool visible = false;
    Vec3 p = Vec3::Zero();      // camera-space center
    Mat3 rot_q = Mat3::Identity();
    Mat3 cov_cam = Mat3::Zero();
    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    Vec2 mean = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Mat2 conic = Mat2::Identity();
    Vec3 color = Vec3::Zero();
    std::array<bool, 3> clamped{};
    Vec3 dir = Vec3::UnitZ();
    double dist = 1.0;
    int degree = 0;
    sh::Basis basis{};
    double opacity = 0.0;
    double power_cut = 0.0; // power below which alpha < min_alpha
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

inline Projected
project(const GaussianPrimitive &g, const Camera &cam, const RenderSettings &rs) {
    Projected out;
    const auto &k = cam.intrinsics;
    const Mat3 &w = cam.pose.rotation;
    out.p = w * g.center + cam.pose.translation;
    if (!(out.p.z() > rs.near_plane)) {
        return out;
    }
    out.visible = true;
    const double x = out.p.x(), y = out.p.y(), z = out.p.z();
    out.mean = {k.fx * x / z + k.cx, k.fy * y / z + k.cy};
    out.jac << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);

    out.rot_q = so3::quat_to_matrix(g.rotation.normalized());
    const Mat3 m = out.rot_q * g.scale.asDiagonal();
    out.cov_cam = w * (m * m.transpose()) * w.transpose();
    out.cov2d = out.jac * out.cov_cam * out.jac.transpose() + rs.cov_epsilon * Mat2::Identity();
    out.cov2d(1, 0) = out.cov2d(0, 1);
    const double det = out.cov2d.determinant();
    out.conic << out.cov2d(1, 1) / det, -out.cov2d(0, 1) / det, -out.cov2d(0, 1) / det, out.cov2d(0, 0) / det;

    // View direction in world coordinates: mu - camera_center == W^T p.
    const Vec3 v = w.transpose() * out.p;
    out.dist = v.norm();
    out.dir = v / out.dist;
    out.degree = std::max(0, g.sh_degree());
    out.basis = sh::eval(out.degree, out.dir);
    const int n = sh::num_coeffs(out.degree);
    for (int c = 0; c < 3; ++c) {
        double col = 0.5;
        for (int i = 0; i < n; ++i) {
            col += g.sh[i * 3 + c] * out.basis[i];
        }
        out.clamped[c] = col < 0.0 || col > 1.0;
        out.color[c] = std::clamp(col, 0.0, 1.0);
    }
    out.opacity = g.opacity;

    // Axis-aligned extent of the ellipse where opacity * exp(power) >= min_alpha.
    if (rs.min_alpha > 0.0) {
        if (g.opacity < rs.min_alpha) {
            out.x1 = -1;
            return out;
        }
        out.power_cut = std::log(rs.min_alpha / g.opacity);
        const double q = -2.0 * out.power_cut;
        const double rx = std::sqrt(q * out.cov2d(0, 0));
        const double ry = std::sqrt(q * out.cov2d(1, 1));
        out.x0 = std::max(0, static_cast<int>(std::ceil(out.mean.x() - rx - 0.5)));
        out.x1 = std::min(k.width - 1, static_cast<int>(std::floor(out.mean.x() + rx - 0.5)));
        out.y0 = std::max(0, static_cast<int>(std::ceil(out.mean.y() - ry - 0.5)));
        out.y1 = std::min(k.height - 1, static_cast<int>(std::floor(out.mean.y() + ry - 0.5)));
    } else {
        out.power_cut = -std::numeric_limits<double>::infinity();
        out.x0 = 0;
        out.x1 = k.width - 1;
        out.y0 = 0;
        out.y1 = k.height - 1;
    }
    return out;
}

// Backward accumulator per (tile, splat) pair, in screen space.
struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    Vec3 conic = Vec3::Zero(); // d/d(Q00, Q01, Q11), Q01 counted once
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

struct Contribution {
    int splat = 0;
    double alpha = 0.0;
    double gauss = 0.0;
    double trans = 0.0; // transmittance before this splat
    Vec2 d = Vec2::Zero();
};

struct TileBins {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> lists; // depth-sorted splat indices per tile
};

inline TileBins
bin_tiles(const std::vector<Projected> &proj, const CameraIntrinsics &k, int tile) {
    TileBins bins;
    bins.tiles_x = (k.width + tile - 1) / tile;
    bins.tiles_y = (k.height + tile - 1) / tile;
    bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y);
    for (int i = 0; i < static_cast<int>(proj.size()); ++i) {
        const auto &s = proj[i];
        if (!s.visible || s.x1 < s.x0 || s.y1 < s.y0) {
            continue;
        }
        for (int ty = s.y0 / tile; ty <= s.y1 / tile; ++ty) {
            for (int tx = s.x0 / tile; tx <= s.x1 / tile; ++tx) {
                bins.lists[static_cast<std::size_t>(ty) * bins.tiles_x + tx].push_back(i);
            }
        }
    }
    for (auto &list : bins.lists) {
        std::sort(list.begin(), list.end(), [&](int a, int b) {
            const double za = proj[a].p.z(), zb = proj[b].p.z();
            return za < zb || (za == zb && a < b);
        });
    }
    return bins;
}

// Compact copy of the fields the per-pixel loop reads, in tile order.
struct HotSplat {
    double mx, my;
    double q00, q01, q11;
    double opacity;
    double power_cut;
    double bx0, bx1, by0, by1; // pixel-center bounds of the footprint
};

inline void
gather_hot(const std::vector<Projected> &proj, const std::vector<int> &list, std::vector<HotSplat> &hot) {
    hot.clear();
    hot.reserve(list.size());
    for (int idx : list) {
        const auto &s = proj[static_cast<std::size_t>(idx)];
        hot.push_back({s.mean.x(), s.mean.y(), s.conic(0, 0), s.conic(0, 1), s.conic(1, 1), s.opacity, s.power_cut,
                       s.x0 + 0.5, s.x1 + 0.5, s.y0 + 0.5, s.y1 + 0.5});
    }
}

constexpr int kBlock = 4;

// Per kBlock x kBlock block of a tile, the tile-list positions whose
// footprint touches the block, still in depth order.
inline void
block_lists(const std::vector<HotSplat> &hot, int x0, int y0, int bw, int bh,
            std::vector<std::vector<std::uint32_t>> &blocks) {
    const int nbx = (bw + kBlock - 1) / kBlock;
    const int nby = (bh + kBlock - 1) / kBlock;
    blocks.assign(static_cast<std::size_t>(nbx) * nby, {});
    for (std::uint32_t j = 0; j < hot.size(); ++j) {
        const auto &s = hot[j];
        // pixel index range covered by the footprint, relative to the tile
        const int sx0 = std::max(0, static_cast<int>(s.bx0 - 0.5) - x0);
        const int sx1 = std::min(bw - 1, static_cast<int>(s.bx1 - 0.5) - x0);
        const int sy0 = std::max(0, static_cast<int>(s.by0 - 0.5) - y0);
        const int sy1 = std::min(bh - 1, static_cast<int>(s.by1 - 0.5) - y0);
        if (sx1 < sx0 || sy1 < sy0) {
            continue;
        }
        for (int by = sy0 / kBlock; by <= sy1 / kBlock; ++by) {
            for (int bx = sx0 / kBlock; bx <= sx1 / kBlock; ++bx) {
                blocks[static_cast<std::size_t>(by) * nbx + bx].push_back(j);
            }
        }
    }
}

// Walks the depth-sorted tile list for one pixel and records every
// contributor; Contribution::splat is the position in the tile list.
template <typename Visit>
double
composite_pixel(const std::vector<HotSplat> &hot, const std::vector<std::uint32_t> &order, const Vec2 &pix,
                const RenderSettings &rs, Visit &&visit) {
    double trans = 1.0;
    const double px = pix.x(), py = pix.y();
    for (const std::uint32_t j : order) {
        const auto &s = hot[j];
        if (px < s.bx0 || px > s.bx1 || py < s.by0 || py > s.by1) {
            continue;
        }
        const double dx = px - s.mx, dy = py - s.my;
        const double power = -0.5 * (s.q00 * dx * dx + 2.0 * s.q01 * dx * dy + s.q11 * dy * dy);
        if (power < s.power_cut) {
            continue;
        }
        const double gauss = std::exp(power);
        const double alpha = s.opacity * gauss;
        if (alpha < rs.min_alpha) {
            continue;
        }
        visit(Contribution{static_cast<int>(j), alpha, gauss, trans, Vec2(dx, dy)});
        trans *= 1.0 - alpha;
        if (trans < rs.min_transmittance) {
            break;
        }
    }
    return trans;
}

struct BackwardResult {
    std::vector<Vec3> d_p;        // dL/d(camera-space center), incl. J dependence
    std::vector<Mat3> d_cov_cam;  // dL/d(camera-space covariance), symmetric
    std::vector<Vec3> d_color;    // dL/d(clamped color)
    std::vector<double> d_opacity;
};

// Screen-space to camera-space chain rule for one splat.
inline void
splat_backward(const Projected &s, const SplatGrad &sg, const CameraIntrinsics &k, Vec3 &d_p, Mat3 &d_cov) {
    // conic -> cov2d:  dL/dC = -Q G Q  (matrix form, G symmetric)
    Mat2 gq;
    gq << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
    const Mat2 gc = -s.conic * gq * s.conic;
    // cov2d = J Sigma J^T + eps I
    d_cov = s.jac.transpose() * gc * s.jac;
    const Eigen::Matrix<double, 2, 3> gj = 2.0 * gc * s.jac * s.cov_cam;

    const double x = s.p.x(), y = s.p.y(), z = s.p.z();
    const double z2 = z * z, z3 = z2 * z;
    d_p.x() = sg.mean.x() * k.fx / z + gj(0, 2) * (-k.fx / z2);
    d_p.y() = sg.mean.y() * k.fy / z + gj(1, 2) * (-k.fy / z2);
    d_p.z() = sg.mean.x() * (-k.fx * x / z2) + sg.mean.y() * (-k.fy * y / z2) + gj(0, 0) * (-k.fx / z2) +
              gj(0, 2) * (2.0 * k.fx * x / z3) + gj(1, 1) * (-k.fy / z2) + gj(1, 2) * (2.0 * k.fy * y / z3);
}

/// Everything the backward pass needs from a forward render: the projected
/// splats, the tile lists and every pixel's contributors in compositing order.
struct ForwardCache {
    Camera camera;
    Vec3 background = Vec3::Zero();
    RenderSettings settings;
    std::vector<Projected> proj;
    TileBins bins;
    std::vector<std::vector<Contribution>> contribs; // per tile, pixels in row-major tile order
    std::vector<std::vector<std::uint32_t>> offsets; // per tile, start of each pixel's run (+ end)
};

/// Forward render; with a cache, records the contributors of every pixel.
inline RenderOutput
render_forward(const CanonicalScene &scene, const Camera &cam, const Vec3 &background, const RenderSettings &rs,
               std::vector<Projected> &proj, TileBins &bins, ForwardCache *cache) {
    const auto &k = cam.intrinsics;
    k.validate();
    RenderOutput out{Image(k.width, k.height, 3), Image(k.width, k.height, 1), Image(k.width, k.height, 1)};

    proj.resize(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        proj[i] = project(scene.primitives[i], cam, rs);
    }
    const int tile = std::max(1, rs.tile_size);
    bins = bin_tiles(proj, k, tile);
    const std::size_t ntiles = bins.lists.size();
    if (cache) {
        cache->contribs.assign(ntiles, {});
        cache->offsets.assign(ntiles, {});
    }

    parallel_for(
        ntiles,
        [&](std::size_t t) {
            const auto &list = bins.lists[t];
            const int tx = static_cast<int>(t % bins.tiles_x);
            const int ty = static_cast<int>(t / bins.tiles_x);
            std::vector<HotSplat> hot;
            gather_hot(proj, list, hot);
            const int x0 = tx * tile, y0 = ty * tile;
            const int bw = std::min(k.width, x0 + tile) - x0;
            const int bh = std::min(k.height, y0 + tile) - y0;
            std::vector<std::vector<std::uint32_t>> blocks;
            block_lists(hot, x0, y0, bw, bh, blocks);
            const int nbx = (bw + kBlock - 1) / kBlock;
            std::vector<Contribution> *contribs = cache ? &cache->contribs[t] : nullptr;
            std::vector<std::uint32_t> *offsets = cache ? &cache->offsets[t] : nullptr;
            for (int py = ty * tile; py < std::min(k.height, (ty + 1) * tile); ++py) {
                for (int px = tx * tile; px < std::min(k.width, (tx + 1) * tile); ++px) {
                    if (offsets) {
                        offsets->push_back(static_cast<std::uint32_t>(contribs->size()));
                    }
                    Vec3 acc = Vec3::Zero();
                    double depth_acc = 0.0;
                    const auto &order =
                        blocks[static_cast<std::size_t>((py - y0) / kBlock) * nbx + (px - x0) / kBlock];
                    const double trans =
                        composite_pixel(hot, order, Vec2(px + 0.5, py + 0.5), rs, [&](const Contribution &c) {
                            const auto &s = proj[static_cast<std::size_t>(list[static_cast<std::size_t>(c.splat)])];
                            const double w = c.alpha * c.trans;
                            acc += w * s.color;
                            depth_acc += w * s.p.z();
                            if (contribs) {
                                contribs->push_back(c);
                            }
                        });
                    const Vec3 color = acc + trans * background;
                    for (int c = 0; c < 3; ++c) {
                        out.color(px, py, c) = color[c];
                    }
                    out.alpha(px, py) = 1.0 - trans;
                    out.depth(px, py) = trans < 1.0 ? depth_acc / (1.0 - trans) : 0.0;
                }
            }
            if (offsets) {
                offsets->push_back(static_cast<std::uint32_t>(contribs->size()));
            }
        },
        rs.jobs);
    return out;
}

/// Backpropagates dL/dcolor to camera-space per-splat gradients.
inline void
render_backward(const ForwardCache &cache, const Image &upstream, BackwardResult &back) {
    const auto &k = cache.camera.intrinsics;
    require(upstream.width() == k.width && upstream.height() == k.height && upstream.channels() == 3,
            "render backward: upstream gradient shape mismatch");
    const auto &bins = cache.bins;
    const auto &proj = cache.proj;
    const std::size_t ntiles = bins.lists.size();
    const int tile = std::max(1, cache.settings.tile_size);
    std::vector<std::vector<SplatGrad>> tile_grads(ntiles);

    parallel_for(
        ntiles,
        [&](std::size_t t) {
            const auto &list = bins.lists[t];
            const auto &contribs = cache.contribs[t];
            const auto &offsets = cache.offsets[t];
            const int tx = static_cast<int>(t % bins.tiles_x);
            const int ty = static_cast<int>(t / bins.tiles_x);
            auto &grads = tile_grads[t];
            grads.assign(list.size(), SplatGrad{});
            std::size_t pixel = 0;
            for (int py = ty * tile; py < std::min(k.height, (ty + 1) * tile); ++py) {
                for (int px = tx * tile; px < std::min(k.width, (tx + 1) * tile); ++px, ++pixel) {
                    const std::uint32_t begin = offsets[pixel], end = offsets[pixel + 1];
                    if (begin == end) {
                        continue;
                    }
                    const Vec3 up(upstream(px, py, 0), upstream(px, py, 1), upstream(px, py, 2));
                    // Light arriving from behind contributor i, normalized by the
                    // transmittance just after it.
                    Vec3 behind = cache.background;
                    for (std::uint32_t r = end; r-- > begin;) {
                        const auto &c = contribs[r];
                        const auto &s = proj[static_cast<std::size_t>(list[static_cast<std::size_t>(c.splat)])];
                        auto &g = grads[static_cast<std::size_t>(c.splat)];
                        const double w = c.alpha * c.trans;
                        g.color += w * up;
                        const double d_alpha = c.trans * up.dot(s.color - behind);
                        g.opacity += d_alpha * c.gauss;
                        const double d_power = d_alpha * c.alpha;
                        // power = -1/2 d^T Q d with d = pix - mean
                        g.mean += d_power * (s.conic * c.d);
                        g.conic += d_power * Vec3(-0.5 * c.d.x() * c.d.x(), -c.d.x() * c.d.y(), -0.5 * c.d.y() * c.d.y());
                        behind = s.color * c.alpha + (1.0 - c.alpha) * behind;
                    }
                }
            }
        },
        cache.settings.jobs);

    // Deterministic reduction in tile order.
    const std::size_t n = proj.size();
    std::vector<SplatGrad> total(n);
    for (std::size_t t = 0; t < ntiles; ++t) {
        const auto &list = bins.lists[t];
        for (std::size_t j = 0; j < list.size(); ++j) {
            const auto &g = tile_grads[t][j];
            auto &a = total[static_cast<std::size_t>(list[j])];
            a.mean += g.mean;
            a.conic += g.conic;
            a.opacity += g.opacity;
            a.color += g.color;
        }
    }
    back.d_p.assign(n, Vec3::Zero());
    back.d_cov_cam.assign(n, Mat3::Zero());
    back.d_color.assign(n, Vec3::Zero());
    back.d_opacity.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!proj[i].visible) {
            continue;
        }
        splat_backward(proj[i], total[i], k, back.d_p[i], back.d_cov_cam[i]);
        for (int c = 0; c < 3; ++c) {
            back.d_color[i][c] = proj[i].clamped[c] ? 0.0 : total[i].color[c];
        }
        back.d_opacity[i] = total[i].opacity;
    }
}

// dL/d(world view direction vector mu - C), through the SH color.
inline Vec3
d_view_vector(const Projected &s, const GaussianPrimitive &g, const Vec3 &d_color) {
    if (s.degree < 1) {
        return Vec3::Zero();
    }
    const auto grads = sh::eval_gradient(s.degree, s.dir);
    Vec3 d_dir = Vec3::Zero();
    const int n = sh::num_coeffs(s.degree);
    for (int i = 1; i < n; ++i) {
        double w = 0.0;
        for (int c = 0; c < 3; ++c) {
            w += d_color[c] * g.sh[i * 3 + c];
        }
        d_dir += w * grads[i];
    }
    return (d_dir - s.dir * s.dir.dot(d_dir)) / s.dist;
}

// dL/dq for R(q / |q|) given the matrix gradient G = dL/dR.
inline Vec4
d_quaternion(const Vec4 &q_raw, const Mat3 &gr) {
    const double n = q_raw.norm();
    const Vec4 q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 dq;
    dq[0] = 2.0 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    dq[1] = 2.0 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2) + z * gr(2, 0) +
                   w * gr(2, 1) - 2.0 * x * gr(2, 2));
    dq[2] = 2.0 * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0) +
                   z * gr(2, 1) - 2.0 * y * gr(2, 2));
    dq[3] = 2.0 * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - 2.0 * z * gr(1, 1) +
                   y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1));
    return (dq - q * q.dot(dq)) / n;
}

} // namespace detail

/// Projects one primitive; BehindCamera when camera-space z <= near plane.
inline ProjectionResult
project_gaussian(const GaussianPrimitive &g, const Camera &cam, const RenderSettings &rs = {}) {
    const auto p = detail::project(g, cam, rs);
    ProjectionResult r;
    if (!p.visible) {
        return r;
    }
    r.status = ProjectStatus::Visible;
    r.splat = {p.mean, p.cov2d, p.p.z(), p.color, p.opacity};
    return r;
}

inline RenderOutput
render(const CanonicalScene &scene, const Camera &cam, const Vec3 &background = Vec3::Zero(),
       const RenderSettings &rs = {}) {
    std::vector<detail::Projected> proj;
    detail::TileBins bins;
    return detail::render_forward(scene, cam, background, rs, proj, bins, nullptr);
}

/// A forward render plus the state a later backward pass consumes, so the
/// upstream gradient can depend on the rendered image.
struct CachedRender {
    RenderOutput render;
    detail::ForwardCache cache;
};

inline CachedRender
render_cached(const CanonicalScene &scene, const Camera &cam, const Vec3 &background = Vec3::Zero(),
              const RenderSettings &rs = {}) {
    CachedRender r;
    r.cache.camera = cam;
    r.cache.background = background;
    r.cache.settings = rs;
    r.render = detail::render_forward(scene, cam, background, rs, r.cache.proj, r.cache.bins, &r.cache);
    return r;
}

struct ParamGradientResult {
    RenderOutput render;
    ParamGradients grads;
};

/// Backpropagates `upstream` (dL/dcolor, W x H x 3) to every primitive field.
inline ParamGradientResult
render_with_param_gradients(const CanonicalScene &scene, const Camera &cam, const Image &upstream,
                            const Vec3 &background = Vec3::Zero(), const RenderSettings &rs = {}) {
    const auto fwd = render_cached(scene, cam, background, rs);
    detail::BackwardResult back;
    detail::render_backward(fwd.cache, upstream, back);
    const auto &proj = fwd.cache.proj;
    ParamGradientResult res;
    res.render = fwd.render;

    const std::size_t n = scene.size();
    auto &pg = res.grads;
    pg.center.assign(n, Vec3::Zero());
    pg.opacity.assign(n, 0.0);
    pg.rotation.assign(n, Vec4::Zero());
    pg.scale.assign(n, Vec3::Zero());
    pg.sh.resize(n);
    const Mat3 &w = cam.pose.rotation;
    for (std::size_t i = 0; i < n; ++i) {
        const auto &g = scene.primitives[i];
        const auto &s = proj[i];
        pg.sh[i].assign(g.sh.size(), 0.0);
        if (!s.visible) {
            continue;
        }
        pg.opacity[i] = back.d_opacity[i];
        const int ncoef = sh::num_coeffs(s.degree);
        for (int m = 0; m < ncoef; ++m) {
            for (int c = 0; c < 3; ++c) {
                pg.sh[i][m * 3 + c] = back.d_color[i][c] * s.basis[m];
            }
        }
        pg.center[i] = w.transpose() * back.d_p[i] + detail::d_view_vector(s, g, back.d_color[i]);

        // Sigma_cam = W M M^T W^T,  M = R(q) diag(s)
        const Mat3 d_sigma = w.transpose() * back.d_cov_cam[i] * w;
        const Mat3 m = s.rot_q * g.scale.asDiagonal();
        const Mat3 d_m = 2.0 * d_sigma * m;
        for (int j = 0; j < 3; ++j) {
            pg.scale[i][j] = d_m.col(j).dot(s.rot_q.col(j));
        }
        const Mat3 d_r = d_m * g.scale.asDiagonal();
        pg.rotation[i] = detail::d_quaternion(g.rotation, d_r);
    }
    return res;
}

struct PoseGradientResult {
    RenderOutput render;
    Vec6 grad = Vec6::Zero(); // (translation, rotation) tangent, left increment
};

/// dL/dxi for the camera exp(xi) * pose, xi = (rho, phi), at the pose of a
/// cached render of `scene`.
inline Vec6
pose_gradient(const CanonicalScene &scene, const CachedRender &fwd, const Image &upstream) {
    detail::BackwardResult back;
    detail::render_backward(fwd.cache, upstream, back);
    const auto &proj = fwd.cache.proj;
    const Mat3 &w = fwd.cache.camera.pose.rotation;
    Vec3 d_rho = Vec3::Zero();
    Vec3 d_phi = Vec3::Zero();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto &s = proj[i];
        if (!s.visible) {
            continue;
        }
        // p' = p + rho + phi x p
        d_rho += back.d_p[i];
        d_phi += s.p.cross(back.d_p[i]);
        // Sigma' = Sigma + [phi]x Sigma - Sigma [phi]x
        const Mat3 &gs = back.d_cov_cam[i];
        const Mat3 a = s.cov_cam * gs - gs * s.cov_cam;
        d_phi += 2.0 * Vec3(a(1, 2), -a(0, 2), a(0, 1));
        // The camera center moves by -W^T rho; the view vector by +W^T rho.
        d_rho += w * detail::d_view_vector(s, scene.primitives[i], back.d_color[i]);
    }
    Vec6 g;
    g << d_rho, d_phi;
    return g;
}

inline PoseGradientResult
render_with_pose_gradient(const CanonicalScene &scene, const Camera &cam, const Image &upstream,
                          const Vec3 &background = Vec3::Zero(), const RenderSettings &rs = {}) {
    const auto fwd = render_cached(scene, cam, background, rs);
    return {fwd.render, pose_gradient(scene, fwd, upstream)};
}

/// exp(xi) * pose with xi = (rho, phi) and the full SE(3) exponential.
inline CameraPose
retract_left(const CameraPose &pose, const Vec6 &xi) {
    const Vec3 rho = xi.head<3>();
    const Vec3 phi = xi.tail<3>();
    const double theta = phi.norm();
    const Mat3 k = so3::skew(phi);
    Mat3 v = Mat3::Identity() + 0.5 * k;
    if (theta > 1e-10) {
        v = Mat3::Identity() + ((1.0 - std::cos(theta)) / (theta * theta)) * k +
            ((theta - std::sin(theta)) / (theta * theta * theta)) * k * k;
    }
    const Mat3 r = so3::exp(phi);
    return {r * pose.rotation, r * pose.translation + v * rho};
}

} // namespace canonsplat::raster
