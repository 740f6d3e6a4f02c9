// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"

#include <Eigen/SVD>

#include <cmath>

// Rotation helpers. Quaternions are Vec4 in (w, x, y, z) order.
namespace canonsplat::so3 {

inline Mat3
skew(const Vec3 &v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

/// Flips sign so that w >= 0. Quaternions q and -q encode the same rotation.
inline Vec4
canonical(const Vec4 &q) {
    return q[0] < 0.0 ? Vec4(-q) : q;
}

inline Vec4
multiply(const Vec4 &a, const Vec4 &b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// Rotation matrix of a unit quaternion (no normalization performed).
inline Mat3
quat_to_matrix(const Vec4 &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Shepperd's method; result canonicalized to w >= 0.
inline Vec4
matrix_to_quat(const Mat3 &r) {
    const double tr = r.trace();
    Vec4 q;
    if (tr > r(0, 0) && tr > r(1, 1) && tr > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + tr);
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return canonical(q.normalized());
}

/// Rodrigues' formula.
inline Mat3
exp(const Vec3 &phi) {
    const double theta = phi.norm();
    const Mat3 k = skew(phi);
    if (theta < 1e-10) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    return Mat3::Identity() + (std::sin(theta) / theta) * k +
           ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

/// Rotation angle of R in radians, in [0, pi].
inline double
angle(const Mat3 &r) {
    const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    return std::acos(c);
}

inline Mat3
axis_angle(const Vec3 &axis, double radians) {
    return exp(axis.normalized() * radians);
}

/// Projects an arbitrary 3x3 matrix onto SO(3) (closest rotation, Frobenius).
inline Mat3
orthonormalize(const Mat3 &m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

} // namespace canonsplat::so3
