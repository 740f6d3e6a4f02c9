// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace canonsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Failure categories. The CLI maps these onto its exit-code contract.
enum class ErrorKind {
    InvalidArgument, // precondition violated by the caller
    Config,          // bad or missing configuration
    Io,              // file missing / unreadable / unwritable
    Parse,           // file readable but malformed
    Geometry,        // degenerate geometry in pose estimation
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind
    kind() const noexcept {
        return kind_;
    }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void
fail(ErrorKind kind, const std::string &what) {
    throw Error(kind, what);
}

inline void
require(bool cond, const std::string &what) {
    if (!cond) {
        fail(ErrorKind::InvalidArgument, what);
    }
}

/// Dense row-major H x W x C grid of doubles. Used for color images
/// (C = 3), depth/alpha maps (C = 1) and per-pixel feature grids.
class Image {
  public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {
        require(width >= 0 && height >= 0 && channels > 0, "Image: invalid shape");
    }

    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::size_t
    index(int x, int y, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    double &operator()(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
    double operator()(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

    [[nodiscard]] std::vector<double> &data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double> &data() const noexcept { return data_; }

    [[nodiscard]] bool
    same_shape(const Image &o) const noexcept {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    bool operator==(const Image &) const = default;

  private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 1;
    std::vector<double> data_;
};

inline constexpr double kPi = 3.14159265358979323846;

inline double
deg2rad(double d) {
    return d * kPi / 180.0;
}

inline double
rad2deg(double r) {
    return r * 180.0 / kPi;
}

} // namespace canonsplat
