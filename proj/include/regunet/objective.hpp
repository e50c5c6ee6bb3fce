// Binary cross-entropy and the L1/L2 weight penalties with their gradients.
#pragma once

#include <cmath>
#include <vector>

#include "regunet/matrix.hpp"

namespace regunet {

enum class RegMode { none, l1, l2 };

inline const char* reg_mode_name(RegMode m) {
    switch (m) {
        case RegMode::none: return "none";
        case RegMode::l1: return "l1";
        case RegMode::l2: return "l2";
    }
    return "?";
}

struct RegularizationConfig {
    RegMode mode = RegMode::none;
    double alpha = 0.01;

    RegularizationConfig() = default;
    RegularizationConfig(RegMode mode_, double alpha_) : mode(mode_), alpha(alpha_) {
        if (alpha < 0.0) throw std::invalid_argument("RegularizationConfig: alpha must be >= 0");
    }
};

struct LossReport {
    double data_loss = 0.0;
    double penalty = 0.0;
    double total_loss = 0.0;
};

inline constexpr double kBceClip = 1e-7;

namespace detail {

inline void check_bce_args(const Matrix& pred, const Matrix& target) {
    if (!pred.same_shape(target))
        throw ShapeError("bce: prediction shape " + pred.shape_str() +
                         " does not match target " + target.shape_str());
    for (std::size_t i = 0, n = target.size(); i < n; ++i) {
        const double y = target.data()[i];
        if (y != 0.0 && y != 1.0)
            throw std::invalid_argument("bce: target entry " + std::to_string(i) +
                                        " is not in {0,1}");
    }
}

} // namespace detail

/// Mean over samples of -[y*ln(p) + (1-y)*ln(1-p)] with p clipped into
/// [kBceClip, 1 - kBceClip] before the logs.
inline double bce(const Matrix& pred, const Matrix& target) {
    detail::check_bce_args(pred, target);
    const std::size_t n = pred.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = pred.data()[i];
        p = std::min(std::max(p, kBceClip), 1.0 - kBceClip);
        const double y = target.data()[i];
        total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    return total / static_cast<double>(n);
}

/// Gradient of the mean clipped BCE with respect to pred. Inside the clip
/// interval this is (p - y) / (p (1-p) n); outside it the clipped loss is
/// flat in p, so the gradient is zero there.
inline Matrix bce_grad(const Matrix& pred, const Matrix& target) {
    detail::check_bce_args(pred, target);
    const std::size_t n = pred.size();
    Matrix g(pred.rows(), pred.cols());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred.data()[i];
        if (p < kBceClip || p > 1.0 - kBceClip) {
            g.data()[i] = 0.0;
            continue;
        }
        const double y = target.data()[i];
        g.data()[i] = (p - y) / (p * (1.0 - p)) * inv_n;
    }
    return g;
}

/// Unscaled penalty over the given weight matrices: sum of squares for l2,
/// sum of absolute values for l1. Biases and BN buffers must not be passed.
inline double penalty(const std::vector<const Matrix*>& weights, const RegularizationConfig& cfg) {
    if (cfg.mode == RegMode::none) return 0.0;
    double total = 0.0;
    for (const Matrix* w : weights) {
        const double* p = w->data();
        const std::size_t n = w->size();
        if (cfg.mode == RegMode::l2) {
            for (std::size_t i = 0; i < n; ++i) total += p[i] * p[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) total += std::abs(p[i]);
        }
    }
    return total;
}

/// l2 scales the penalty by alpha/2, l1 by plain alpha; the asymmetry is
/// intentional and preserved.
inline LossReport regularized_loss(double data_loss, const std::vector<const Matrix*>& weights,
                                   const RegularizationConfig& cfg) {
    LossReport report;
    report.data_loss = data_loss;
    switch (cfg.mode) {
        case RegMode::none: report.penalty = 0.0; break;
        case RegMode::l2: report.penalty = 0.5 * cfg.alpha * penalty(weights, cfg); break;
        case RegMode::l1: report.penalty = cfg.alpha * penalty(weights, cfg); break;
    }
    report.total_loss = report.data_loss + report.penalty;
    return report;
}

/// Per-matrix gradient of the scaled penalty: alpha*W for l2,
/// alpha*sign(W) for l1 with sign(0) = 0, zeros for none.
inline std::vector<Matrix> penalty_grad(const std::vector<const Matrix*>& weights,
                                        const RegularizationConfig& cfg) {
    std::vector<Matrix> grads;
    grads.reserve(weights.size());
    for (const Matrix* w : weights) {
        Matrix g(w->rows(), w->cols());
        if (cfg.mode == RegMode::l2) {
            for (std::size_t i = 0, n = w->size(); i < n; ++i)
                g.data()[i] = cfg.alpha * w->data()[i];
        } else if (cfg.mode == RegMode::l1) {
            for (std::size_t i = 0, n = w->size(); i < n; ++i) {
                const double v = w->data()[i];
                g.data()[i] = v > 0.0 ? cfg.alpha : (v < 0.0 ? -cfg.alpha : 0.0);
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

} // namespace regunet
