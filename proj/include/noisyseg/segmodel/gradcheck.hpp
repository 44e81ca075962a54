#pragma once

// Central finite-difference checks of the hand-written gradients, run in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/tensor.hpp"
#include "noisyseg/losses/losses.hpp"
#include "noisyseg/segmodel/model.hpp"

namespace noisyseg::segmodel {

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Parameters skipped because a ReLU changed state inside the difference stencil even at the
    /// reduced step; the one-sided derivatives differ there.
    std::size_t kink_skipped = 0;
    std::string worst_parameter;
};

namespace detail {

inline std::vector<bool> relu_pattern(const ForwardCache<double>& c) {
    std::vector<bool> out;
    out.reserve(c.act1.size() + c.act2.size());
    for (double v : c.act1)
        out.push_back(v > 0.0);
    for (double v : c.act2)
        out.push_back(v > 0.0);
    return out;
}

} // namespace detail

/// Analytic dL/dtheta of `apl(config)` through the network versus central differences, for every parameter.
/// A parameter whose stencil crosses a ReLU kink is retried with step h/100 before being skipped.
inline GradCheckReport network_gradcheck(const ModelParams& params, const std::vector<double>& input, Extent extent,
                                         std::span<const float> label, const losses::LossConfig& config,
                                         double h = 1e-4) {
    Params<double> p = cast_params<double>(params);
    auto loss_at = [&](const Params<double>& q, ForwardCache<double>& cache) {
        forward<double>(q, input, extent, cache);
        return losses::apl<double>(config, extent, cache.output, label);
    };

    ForwardCache<double> base;
    const auto base_loss = loss_at(p, base);
    const Params<double> analytic = backward<double>(p, base, base_loss.grad);
    const auto base_pattern = detail::relu_pattern(base);

    GradCheckReport report;
    ForwardCache<double> cache;
    auto check_tensor = [&](const char* name, std::vector<double>& values, const std::vector<double>& grads) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            double numeric = 0.0;
            bool smooth = false;
            for (double step : {h, h / 100.0}) {
                values[i] = original + step;
                const double up = loss_at(p, cache).value;
                const bool up_same = detail::relu_pattern(cache) == base_pattern;
                values[i] = original - step;
                const double down = loss_at(p, cache).value;
                const bool down_same = detail::relu_pattern(cache) == base_pattern;
                values[i] = original;
                numeric = (up - down) / (2.0 * step);
                if (up_same && down_same) {
                    smooth = true;
                    break;
                }
            }
            if (!smooth) {
                ++report.kink_skipped;
                continue;
            }
            ++report.checked;
            const double err = relative_error(grads[i], numeric);
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_parameter = std::string(name) + "[" + std::to_string(i) + "]";
            }
        }
    };
    check_tensor("conv1.weight", p.conv1.weight, analytic.conv1.weight);
    check_tensor("conv1.bias", p.conv1.bias, analytic.conv1.bias);
    check_tensor("conv2.weight", p.conv2.weight, analytic.conv2.weight);
    check_tensor("conv2.bias", p.conv2.bias, analytic.conv2.bias);
    check_tensor("conv3.weight", p.conv3.weight, analytic.conv3.weight);
    check_tensor("conv3.bias", p.conv3.bias, analytic.conv3.bias);
    return report;
}

/// Analytic dL/dprediction of `apl(config)` versus central differences at every pixel. Each pixel is
/// differenced on its own (a 1x1 plane) so the other pixels' terms add no rounding noise; the analytic
/// gradient is rescaled by the pixel count to match. The step is relative (h * min(p, 1 - p)) so points
/// next to the clipping bounds stay inside them.
inline GradCheckReport loss_gradcheck(const losses::LossConfig& config, std::vector<double> pred, Extent extent,
                                      std::span<const float> label, double h = 1e-6) {
    const auto analytic = losses::apl<double>(config, extent, pred, label);
    const double n = static_cast<double>(pred.size());
    const Extent one{1, 1};
    GradCheckReport report;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        const double step = h * std::min({1.0, p, 1.0 - p});
        const std::vector<double> up{p + step}, down{p - step};
        const auto t = label.subspan(i, 1);
        const double numeric =
            (losses::apl<double>(config, one, up, t).value - losses::apl<double>(config, one, down, t).value) /
            (2.0 * step);
        const double err = relative_error(analytic.grad[i] * n, numeric);
        ++report.checked;
        if (err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_parameter = "pixel[" + std::to_string(i) + "]";
        }
    }
    return report;
}

} // namespace noisyseg::segmodel
