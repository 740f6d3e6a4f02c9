// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"

#include <Eigen/QR>

#include <array>
#include <cmath>

// Real spherical harmonics up to degree 3, using the basis and sign
// convention of the 3DGS ecosystem so stored coefficients render the same
// in third-party viewers. Coefficients are ordered by band, then m, as in
// (l=0), (l=1: y, z, x), (l=2: ...), (l=3: ...).
namespace canonsplat::sh {

inline constexpr int kMaxDegree = 3;
inline constexpr int kMaxCoeffs = 16;

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792,
                                              0.31539156525252005, -1.0925484305920792,
                                              0.5462742152960396};
inline constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554,
                                              -0.4570457994644658, 0.3731763325901154,
                                              -0.4570457994644658, 1.445305721320277,
                                              -0.5900435899266435};

constexpr int
num_coeffs(int degree) {
    return (degree + 1) * (degree + 1);
}

/// Degree L with (L+1)^2 == count, or -1 when count is not a supported size.
constexpr int
degree_for_count(int count) {
    for (int l = 0; l <= kMaxDegree; ++l) {
        if (num_coeffs(l) == count) {
            return l;
        }
    }
    return -1;
}

using Basis = std::array<double, kMaxCoeffs>;

/// Evaluates Y_0..Y_{(L+1)^2-1} at a unit direction. Entries past the
/// requested degree are zero.
inline Basis
eval(int degree, const Vec3 &d) {
    Basis y{};
    const double x = d.x(), yy = d.y(), z = d.z();
    y[0] = kC0;
    if (degree < 1) {
        return y;
    }
    y[1] = -kC1 * yy;
    y[2] = kC1 * z;
    y[3] = -kC1 * x;
    if (degree < 2) {
        return y;
    }
    const double xx = x * x, y2 = yy * yy, zz = z * z;
    y[4] = kC2[0] * x * yy;
    y[5] = kC2[1] * yy * z;
    y[6] = kC2[2] * (2.0 * zz - xx - y2);
    y[7] = kC2[3] * x * z;
    y[8] = kC2[4] * (xx - y2);
    if (degree < 3) {
        return y;
    }
    y[9] = kC3[0] * yy * (3.0 * xx - y2);
    y[10] = kC3[1] * x * yy * z;
    y[11] = kC3[2] * yy * (4.0 * zz - xx - y2);
    y[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
    y[13] = kC3[4] * x * (4.0 * zz - xx - y2);
    y[14] = kC3[5] * z * (xx - y2);
    y[15] = kC3[6] * x * (xx - 3.0 * y2);
    return y;
}

/// Gradient of each basis polynomial with respect to (x, y, z), evaluated
/// at d. Callers project through the normalization of d themselves.
inline std::array<Vec3, kMaxCoeffs>
eval_gradient(int degree, const Vec3 &d) {
    std::array<Vec3, kMaxCoeffs> g;
    g.fill(Vec3::Zero());
    if (degree < 1) {
        return g;
    }
    const double x = d.x(), y = d.y(), z = d.z();
    g[1] = {0.0, -kC1, 0.0};
    g[2] = {0.0, 0.0, kC1};
    g[3] = {-kC1, 0.0, 0.0};
    if (degree < 2) {
        return g;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    g[4] = {kC2[0] * y, kC2[0] * x, 0.0};
    g[5] = {0.0, kC2[1] * z, kC2[1] * y};
    g[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
    g[7] = {kC2[3] * z, 0.0, kC2[3] * x};
    g[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    if (degree < 3) {
        return g;
    }
    g[9] = {6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
    g[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
    g[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
    g[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    g[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
    g[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
    g[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
    return g;
}

/// Matrix D_l acting on the 2l+1 coefficients of band l such that the
/// rotated function f'(d) = f(R^T d) has coefficients D_l c.
///
/// Each band spans a rotation-invariant space, so D_l is recovered exactly
/// by fitting the rotated basis at a fixed set of generic sample directions.
inline Eigen::MatrixXd
band_rotation(int band, const Mat3 &rotation) {
    const int n = 2 * band + 1;
    constexpr int kSamples = 32;
    Eigen::MatrixXd a(kSamples, n);
    Eigen::MatrixXd b(kSamples, n);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < kSamples; ++k) {
        const double z = 1.0 - (2.0 * k + 1.0) / kSamples;
        const double r = std::sqrt(1.0 - z * z);
        const Vec3 d(r * std::cos(golden * k), r * std::sin(golden * k), z);
        const Basis ya = eval(band, d);
        const Basis yb = eval(band, rotation.transpose() * d);
        for (int m = 0; m < n; ++m) {
            a(k, m) = ya[band * band + m];
            b(k, m) = yb[band * band + m];
        }
    }
    return a.colPivHouseholderQr().solve(b);
}

} // namespace canonsplat::sh
