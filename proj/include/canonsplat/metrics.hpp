// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/scene.hpp"
#include "canonsplat/so3.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace canonsplat::metrics {

inline void
require_same_shape(const Image &a, const Image &b, const char *what) {
    require(a.same_shape(b), std::string(what) + ": image shapes differ");
}

inline double
mse(const Image &a, const Image &b) {
    require_same_shape(a, b, "mse");
    require(!a.empty(), "mse: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / mse) for images in [0, 1], capped at 99 dB.
inline double
psnr(const Image &a, const Image &b) {
    const double m = mse(a, b);
    if (m < 1e-10) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

// SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated at every
// position where the window fits entirely inside the image.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kSsimC3 = kSsimC2 / 2.0;

inline std::array<double, kSsimWindow>
ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - kSsimWindow / 2;
        k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (auto &v : k) {
        v /= sum;
    }
    return k;
}

namespace detail {

// Valid-mode separable filtering of one channel; output (W-10) x (H-10).
inline std::vector<double>
filter_valid(const std::vector<double> &in, int w, int h) {
    const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) {
                s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
            }
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) {
                s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            }
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters an output-sized map back to input size.
inline std::vector<double>
filter_valid_adjoint(const std::vector<double> &g, int w, int h) {
    const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = g[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) {
                tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) {
                out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
            }
        }
    }
    return out;
}

inline std::vector<double>
channel(const Image &img, int c) {
    std::vector<double> out(static_cast<std::size_t>(img.width()) * img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            out[static_cast<std::size_t>(y) * img.width() + x] = img(x, y, c);
        }
    }
    return out;
}

struct WindowStats {
    std::vector<double> mu_a, mu_b, var_a, var_b, cov;
};

inline WindowStats
window_stats(const std::vector<double> &a, const std::vector<double> &b, int w, int h) {
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    WindowStats s;
    s.mu_a = filter_valid(a, w, h);
    s.mu_b = filter_valid(b, w, h);
    s.var_a = filter_valid(aa, w, h);
    s.var_b = filter_valid(bb, w, h);
    s.cov = filter_valid(ab, w, h);
    for (std::size_t i = 0; i < s.mu_a.size(); ++i) {
        s.var_a[i] -= s.mu_a[i] * s.mu_a[i];
        s.var_b[i] -= s.mu_b[i] * s.mu_b[i];
        s.cov[i] -= s.mu_a[i] * s.mu_b[i];
    }
    return s;
}

inline void
check_ssim_input(const Image &a, const Image &b) {
    require_same_shape(a, b, "ssim");
    require(a.width() >= kSsimWindow && a.height() >= kSsimWindow, "ssim: image smaller than the 11x11 window");
}

} // namespace detail

/// Full SSIM, averaged over window positions and channels.
inline double
ssim(const Image &a, const Image &b) {
    detail::check_ssim_input(a, b);
    double total = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels(); ++c) {
        const auto s = detail::window_stats(detail::channel(a, c), detail::channel(b, c), a.width(), a.height());
        for (std::size_t i = 0; i < s.mu_a.size(); ++i) {
            const double num = (2.0 * s.mu_a[i] * s.mu_b[i] + kSsimC1) * (2.0 * s.cov[i] + kSsimC2);
            const double den = (s.mu_a[i] * s.mu_a[i] + s.mu_b[i] * s.mu_b[i] + kSsimC1) * (s.var_a[i] + s.var_b[i] + kSsimC2);
            total += num / den;
        }
        count += s.mu_a.size();
    }
    return total / static_cast<double>(count);
}

struct StructuralResult {
    double value = 0.0;
    Image grad; // d value / d a
};

/// Mean of the SSIM structure factor (sigma_ab + C3) / (sigma_a sigma_b + C3),
/// optionally with its gradient with respect to `a`.
inline StructuralResult
ssim_structural_with_grad(const Image &a, const Image &b, bool with_grad = true) {
    detail::check_ssim_input(a, b);
    StructuralResult res;
    const int w = a.width(), h = a.height();
    const std::size_t count =
        static_cast<std::size_t>(w - kSsimWindow + 1) * (h - kSsimWindow + 1) * static_cast<std::size_t>(a.channels());
    if (with_grad) {
        res.grad = Image(w, h, a.channels());
    }
    constexpr double kSigmaFloor = 1e-4; // derivative of sqrt near flat windows
    for (int c = 0; c < a.channels(); ++c) {
        const auto ca = detail::channel(a, c);
        const auto cb = detail::channel(b, c);
        const auto s = detail::window_stats(ca, cb, w, h);
        const std::size_t m = s.mu_a.size();
        std::vector<double> g_mu(m), g_eaa(m), g_eab(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double sa = std::sqrt(std::max(s.var_a[i], 0.0));
            const double sb = std::sqrt(std::max(s.var_b[i], 0.0));
            const double num = s.cov[i] + kSsimC3;
            const double den = sa * sb + kSsimC3;
            res.value += num / den;
            // value depends on mu_a, E[a^2] (via var_a) and E[ab] (via cov)
            const double d_var = -num * sb / (2.0 * std::max(sa, kSigmaFloor) * den * den);
            g_eab[i] = 1.0 / den;
            g_eaa[i] = d_var;
            g_mu[i] = -s.mu_b[i] / den - 2.0 * s.mu_a[i] * d_var;
        }
        if (!with_grad) {
            continue;
        }
        const auto a_mu = detail::filter_valid_adjoint(g_mu, w, h);
        const auto a_eaa = detail::filter_valid_adjoint(g_eaa, w, h);
        const auto a_eab = detail::filter_valid_adjoint(g_eab, w, h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                res.grad(x, y, c) = (a_mu[p] + 2.0 * ca[p] * a_eaa[p] + cb[p] * a_eab[p]) / static_cast<double>(count);
            }
        }
    }
    res.value /= static_cast<double>(count);
    return res;
}

inline double
ssim_structural(const Image &a, const Image &b) {
    return ssim_structural_with_grad(a, b, false).value;
}

/// Pluggable perceptual distance (e.g. a learned metric). Scorers that cannot
/// differentiate return std::nullopt from gradient() and are evaluation-only.
class PerceptualScorer {
  public:
    virtual ~PerceptualScorer() = default;
    virtual double score(const Image &render, const Image &target) const = 0;
    virtual std::optional<Image>
    gradient(const Image & /*render*/, const Image & /*target*/) const {
        return std::nullopt;
    }
};

struct LossConfig {
    double mse_weight = 1.0;
    double perceptual_weight = 0.05;
    double ssim_structural_weight = 0.0;
    std::shared_ptr<const PerceptualScorer> perceptual_scorer;
    bool require_scorer = false; // error instead of dropping the perceptual term

    void
    validate() const {
        require(mse_weight >= 0.0 && perceptual_weight >= 0.0 && ssim_structural_weight >= 0.0,
                "LossConfig: weights must be non-negative");
    }
};

struct LossResult {
    double value = 0.0;
    double mse = 0.0;
    double perceptual = 0.0;
    double structural = 1.0;
    Image grad; // d value / d render
};

/// mse_weight * MSE + perceptual_weight * scorer + ssim_structural_weight * (1 - S).
inline LossResult
reconstruction_loss(const Image &render, const Image &target, const LossConfig &cfg, bool with_grad = true) {
    cfg.validate();
    require_same_shape(render, target, "reconstruction_loss");
    if (cfg.require_scorer && !cfg.perceptual_scorer) {
        fail(ErrorKind::Config, "reconstruction_loss: perceptual scorer requested but none is plugged");
    }
    LossResult res;
    if (with_grad) {
        res.grad = Image(render.width(), render.height(), render.channels());
    }
    res.mse = mse(render, target);
    res.value = cfg.mse_weight * res.mse;
    if (with_grad && cfg.mse_weight > 0.0) {
        const double scale = 2.0 * cfg.mse_weight / static_cast<double>(render.size());
        for (std::size_t i = 0; i < render.size(); ++i) {
            res.grad.data()[i] = scale * (render.data()[i] - target.data()[i]);
        }
    }
    if (cfg.perceptual_scorer && cfg.perceptual_weight > 0.0) {
        res.perceptual = cfg.perceptual_scorer->score(render, target);
        res.value += cfg.perceptual_weight * res.perceptual;
        if (with_grad) {
            const auto g = cfg.perceptual_scorer->gradient(render, target);
            if (!g) {
                fail(ErrorKind::Config, "reconstruction_loss: perceptual scorer is evaluation-only");
            }
            require(g->same_shape(render), "reconstruction_loss: scorer gradient shape mismatch");
            for (std::size_t i = 0; i < render.size(); ++i) {
                res.grad.data()[i] += cfg.perceptual_weight * g->data()[i];
            }
        }
    }
    if (cfg.ssim_structural_weight > 0.0) {
        const auto s = ssim_structural_with_grad(render, target, with_grad);
        res.structural = s.value;
        res.value += cfg.ssim_structural_weight * (1.0 - s.value);
        if (with_grad) {
            for (std::size_t i = 0; i < render.size(); ++i) {
                res.grad.data()[i] -= cfg.ssim_structural_weight * s.grad.data()[i];
            }
        }
    }
    return res;
}

struct PoseError {
    double rotation_deg = 0.0;
    double translation_dir_deg = 0.0;
    double combined_deg = 0.0;
};

/// Angle between vectors in degrees; 0 when the reference is degenerate and
/// 90 when only the estimate is.
inline double
direction_angle_deg(const Vec3 &est, const Vec3 &ref) {
    if (ref.norm() < 1e-8) {
        return 0.0;
    }
    if (est.norm() < 1e-8) {
        return 90.0;
    }
    const double c = std::clamp(est.normalized().dot(ref.normalized()), -1.0, 1.0);
    return rad2deg(std::acos(c));
}

inline PoseError
pose_error(const CameraPose &est, const CameraPose &gt) {
    PoseError e;
    e.rotation_deg = rad2deg(so3::angle(est.rotation * gt.rotation.transpose()));
    e.translation_dir_deg = direction_angle_deg(est.translation, gt.translation);
    e.combined_deg = std::max(e.rotation_deg, e.translation_dir_deg);
    return e;
}

inline const std::vector<double> kDefaultAucThresholds = {5.0, 10.0, 20.0};

/// (1/tau) * integral_0^tau F(e) de for the empirical CDF F of `errors`.
/// For a step CDF this is the mean of max(0, 1 - e_i / tau).
inline std::vector<double>
pose_auc(const std::vector<double> &errors, const std::vector<double> &thresholds = kDefaultAucThresholds) {
    require(!errors.empty(), "pose_auc: empty error list");
    for (double e : errors) {
        require(e >= 0.0, "pose_auc: errors must be non-negative");
    }
    std::vector<double> out;
    for (double tau : thresholds) {
        require(tau > 0.0, "pose_auc: thresholds must be positive");
        double area = 0.0;
        for (double e : errors) {
            area += std::max(0.0, tau - e);
        }
        out.push_back(area / (tau * static_cast<double>(errors.size())));
    }
    return out;
}

} // namespace canonsplat::metrics
