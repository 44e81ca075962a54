#pragma once

// K-class forms of the loss family over full probability vectors. The binary
// pixel kernels are the K = 2 case with p = (1 - y, y).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/losses/losses.hpp"

namespace noisyseg::losses::categorical {

struct ValueAndGrad {
    double value = 0.0;
    std::vector<double> grad; // d value / d p_k
    bool degenerate = false;
};

inline ValueAndGrad loss(Family f, std::span<const double> p, std::span<const double> q,
                         double p_min = default_p_min) {
    if (p.size() != q.size() || p.size() < 2)
        throw ShapeError("categorical loss: need matching distributions with K >= 2");
    ValueAndGrad out;
    out.grad.resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        switch (f) {
        case Family::cross_entropy:
            out.value -= q[k] * std::log(clip(p[k], p_min));
            out.grad[k] = -q[k] / std::max(p[k], p_min);
            break;
        case Family::reverse_cross_entropy: {
            const double lq = std::log(clip(q[k], p_min));
            out.value -= p[k] * lq;
            out.grad[k] = -lq;
            break;
        }
        case Family::mean_absolute: {
            const double d = p[k] - q[k];
            out.value += 0.5 * std::abs(d);
            out.grad[k] = d > 0.0 ? 0.5 : (d < 0.0 ? -0.5 : 0.0);
            break;
        }
        }
    }
    return out;
}

inline std::vector<double> one_hot(std::size_t k, std::size_t j) {
    std::vector<double> e(k, 0.0);
    e.at(j) = 1.0;
    return e;
}

/// L(p, q) / sum_j L(p, e_j); the denominator runs over one-hot targets e_j.
inline ValueAndGrad normalized(Family f, std::span<const double> p, std::span<const double> q,
                               double p_min = default_p_min) {
    const std::size_t k = p.size();
    ValueAndGrad num = loss(f, p, q, p_min);
    double den = 0.0;
    std::vector<double> dden(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        const auto e = one_hot(k, j);
        const ValueAndGrad lj = loss(f, p, e, p_min);
        den += lj.value;
        for (std::size_t i = 0; i < k; ++i)
            dden[i] += lj.grad[i];
    }
    ValueAndGrad out;
    out.grad.assign(k, 0.0);
    if (!(den > 0.0) || !std::isfinite(den)) {
        out.value = 1.0 / static_cast<double>(k);
        out.degenerate = true;
        return out;
    }
    out.value = num.value / den;
    for (std::size_t i = 0; i < k; ++i)
        out.grad[i] = (num.grad[i] * den - num.value * dden[i]) / (den * den);
    return out;
}

inline ValueAndGrad normalized(Family f, std::span<const double> p, std::size_t label,
                               double p_min = default_p_min) {
    if (label >= p.size())
        throw ValueError("categorical normalize: label " + std::to_string(label) + " >= K");
    const auto e = one_hot(p.size(), label);
    return normalized(f, p, e, p_min);
}

} // namespace noisyseg::losses::categorical
