#pragma once

// Soft-label losses for a binary (sigmoid) segmentation head.
//
// Every per-pixel loss takes the predicted foreground probability p and a label
// t in [0, 1]. Quantities inside a logarithm are clipped to [p_min, 1 - p_min].
// Map-level losses are the arithmetic mean over pixels; gradients are with
// respect to the prediction map and already include the 1/N of the mean.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg::losses {

enum class Family { cross_entropy, reverse_cross_entropy, mean_absolute };

inline const char* to_string(Family f) {
    switch (f) {
    case Family::cross_entropy: return "ce";
    case Family::reverse_cross_entropy: return "rce";
    case Family::mean_absolute: return "mae";
    }
    return "?";
}

inline constexpr double default_p_min = 1e-20;

/// Loss weights for one configuration: active terms (binarized CE, soft CE) and the passive soft RCE.
struct LossConfig {
    double w_bce = 1.0;
    double w_sce = 0.0;
    double w_rce = 0.0;
    bool normalize_terms = false;
    double p_min = default_p_min;
    int num_classes = 2;

    void validate() const {
        for (double w : {w_bce, w_sce, w_rce})
            if (!(w >= 0.0) || !std::isfinite(w))
                throw ConfigError("loss weights must be finite and >= 0");
        if (!(w_bce > 0.0 || w_sce > 0.0 || w_rce > 0.0))
            throw ConfigError("at least one loss weight must be positive");
        if (!(p_min > 0.0 && p_min < 0.5))
            throw ConfigError("p_min must lie in (0, 0.5)");
        if (num_classes < 2)
            throw ConfigError("num_classes must be >= 2");
    }

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossValueAndGrad {
    double value = 0.0;
    Extent extent{};
    std::vector<double> grad;
    /// Pixels whose normalization denominator vanished (value 1/K, zero gradient).
    std::size_t degenerate_pixels = 0;
};

inline double clip(double v, double p_min) noexcept { return std::min(std::max(v, p_min), 1.0 - p_min); }

/// Value and derivative with respect to the prediction for one pixel.
struct Pointwise {
    double value = 0.0;
    double grad = 0.0;
};

namespace pixel {

/// -[t ln p + (1-t) ln(1-p)]. The derivative is (p - t) / (p (1 - p)), evaluated
/// with each factor floored at p_min so it stays finite at p in {0, 1}.
inline Pointwise ce(double p, double t, double p_min) noexcept {
    const double q = 1.0 - p;
    const double value = -(t * std::log(clip(p, p_min)) + (1.0 - t) * std::log(clip(q, p_min)));
    const double grad = -t / std::max(p, p_min) + (1.0 - t) / std::max(q, p_min);
    return {value, grad};
}

/// -[p ln t + (1-p) ln(1-t)]; linear in p.
inline Pointwise rce(double p, double t, double p_min) noexcept {
    const double log_t = std::log(clip(t, p_min));
    const double log_1mt = std::log(clip(1.0 - t, p_min));
    return {-(p * log_t + (1.0 - p) * log_1mt), -log_t + log_1mt};
}

/// |p - t| with subgradient sign(p - t), 0 at ties.
inline Pointwise mae(double p, double t) noexcept {
    const double d = p - t;
    return {std::abs(d), d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)};
}

inline Pointwise evaluate(Family f, double p, double t, double p_min) noexcept {
    switch (f) {
    case Family::cross_entropy: return ce(p, t, p_min);
    case Family::reverse_cross_entropy: return rce(p, t, p_min);
    case Family::mean_absolute: return mae(p, t);
    }
    return {};
}

struct Normalized {
    Pointwise loss;
    bool degenerate = false;
};

/// L(p, t) / (L(p, 0) + L(p, 1)), differentiated by the quotient rule.
/// A vanishing denominator yields 1/2 with zero gradient.
inline Normalized normalized(Family f, double p, double t, double p_min) noexcept {
    const Pointwise num = evaluate(f, p, t, p_min);
    const Pointwise d0 = evaluate(f, p, 0.0, p_min);
    const Pointwise d1 = evaluate(f, p, 1.0, p_min);
    const double den = d0.value + d1.value;
    if (!(den > 0.0) || !std::isfinite(den))
        return {{0.5, 0.0}, true};
    const double dden = d0.grad + d1.grad;
    return {{num.value / den, (num.grad * den - num.value * dden) / (den * den)}, false};
}

} // namespace pixel

namespace detail {

template <class T>
void check_inputs(Extent extent, std::span<const T> pred, std::span<const float> target) {
    if (pred.size() != extent.size() || target.size() != extent.size())
        throw ShapeError("loss: prediction has " + std::to_string(pred.size()) + " pixels, target " +
                         std::to_string(target.size()) + ", extent " + to_string(extent));
    if (extent.size() == 0)
        throw ShapeError("loss: empty pixel set");
}

template <class T, class Kernel>
LossValueAndGrad reduce_mean(Extent extent, std::span<const T> pred, std::span<const float> target,
                             Kernel&& kernel) {
    check_inputs(extent, pred, target);
    const double n = static_cast<double>(extent.size());
    LossValueAndGrad out;
    out.extent = extent;
    out.grad.resize(extent.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < extent.size(); ++i) {
        const pixel::Normalized r = kernel(static_cast<double>(pred[i]), static_cast<double>(target[i]));
        sum += r.loss.value;
        out.grad[i] = r.loss.grad / n;
        out.degenerate_pixels += r.degenerate ? 1 : 0;
    }
    out.value = sum / n;
    return out;
}

} // namespace detail

/// Family `f` against `target`, optionally normalized over the two class labels.
template <class T>
LossValueAndGrad term(Family f, bool normalize, Extent extent, std::span<const T> pred,
                      std::span<const float> target, double p_min = default_p_min) {
    if (normalize)
        return detail::reduce_mean(extent, pred, target,
                                   [&](double p, double t) { return pixel::normalized(f, p, t, p_min); });
    return detail::reduce_mean(extent, pred, target, [&](double p, double t) {
        return pixel::Normalized{pixel::evaluate(f, p, t, p_min), false};
    });
}

inline LossValueAndGrad soft_ce(const PredMap& pred, const SoftMask& target, double p_min = default_p_min) {
    require_same_extent(pred, target, "soft_ce");
    return term(Family::cross_entropy, false, pred.extent(), pred.values(), target.values(), p_min);
}

inline LossValueAndGrad soft_rce(const PredMap& pred, const SoftMask& target, double p_min = default_p_min) {
    require_same_extent(pred, target, "soft_rce");
    return term(Family::reverse_cross_entropy, false, pred.extent(), pred.values(), target.values(), p_min);
}

inline LossValueAndGrad mae(const PredMap& pred, const SoftMask& target) {
    require_same_extent(pred, target, "mae");
    return term(Family::mean_absolute, false, pred.extent(), pred.values(), target.values());
}

inline LossValueAndGrad normalize(Family f, const PredMap& pred, const SoftMask& target,
                                  double p_min = default_p_min) {
    require_same_extent(pred, target, "normalize");
    return term(f, true, pred.extent(), pred.values(), target.values(), p_min);
}

/// Normalized loss against the hard class label `label` (0 or 1) at every pixel.
inline LossValueAndGrad normalize(Family f, const PredMap& pred, int label, double p_min = default_p_min) {
    if (label != 0 && label != 1)
        throw ValueError("binary normalize: class label must be 0 or 1");
    return normalize(f, pred, SoftMask(pred.extent(), static_cast<float>(label)), p_min);
}

/// Active-passive combination:
///   w_bce * CE(p, binarize(t)) + w_sce * CE(p, t) + w_rce * RCE(p, t),
/// each term normalized when `normalize_terms` is set. Zero-weight terms are skipped.
template <class T>
LossValueAndGrad apl(const LossConfig& config, Extent extent, std::span<const T> pred,
                     std::span<const float> target) {
    config.validate();
    if (config.num_classes != 2)
        throw ConfigError("pixel-map losses model a binary head; num_classes must be 2");
    detail::check_inputs(extent, pred, target);

    LossValueAndGrad out;
    out.extent = extent;
    out.grad.assign(extent.size(), 0.0);
    auto accumulate = [&](double weight, const LossValueAndGrad& t) {
        out.value += weight * t.value;
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            out.grad[i] += weight * t.grad[i];
        out.degenerate_pixels += t.degenerate_pixels;
    };
    if (config.w_bce > 0.0) {
        std::vector<float> hard(target.size());
        for (std::size_t i = 0; i < hard.size(); ++i)
            hard[i] = target[i] >= 0.5f ? 1.0f : 0.0f;
        accumulate(config.w_bce, term(Family::cross_entropy, config.normalize_terms, extent, pred,
                                      std::span<const float>(hard), config.p_min));
    }
    if (config.w_sce > 0.0)
        accumulate(config.w_sce,
                   term(Family::cross_entropy, config.normalize_terms, extent, pred, target, config.p_min));
    if (config.w_rce > 0.0)
        accumulate(config.w_rce, term(Family::reverse_cross_entropy, config.normalize_terms, extent, pred,
                                      target, config.p_min));
    return out;
}

inline LossValueAndGrad apl(const LossConfig& config, const PredMap& pred, const SoftMask& target) {
    require_same_extent(pred, target, "apl");
    return apl(config, pred.extent(), pred.values(), target.values());
}

} // namespace noisyseg::losses
