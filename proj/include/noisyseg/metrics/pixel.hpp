#pragma once

#include <cstdint>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg::metrics {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_extent(pred, gt, "confusion");
    ConfusionCounts c;
    const auto p = pred.values();
    const auto g = gt.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool a = p[i] != 0.0f, b = g[i] != 0.0f;
        if (a && b)
            ++c.tp;
        else if (a)
            ++c.fp;
        else if (b)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

// 0/0: Dice and IoU are 1 (both masks empty), precision and recall are 0.

inline double dice(const ConfusionCounts& c) {
    const auto den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double iou(const ConfusionCounts& c) {
    const auto den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double precision(const ConfusionCounts& c) {
    const auto den = c.tp + c.fp;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double recall(const ConfusionCounts& c) {
    const auto den = c.tp + c.fn;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline nlohmann::json to_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

inline ConfusionCounts counts_from_json(const nlohmann::json& j) {
    return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(), j.at("fn").get<std::uint64_t>(),
            j.at("tn").get<std::uint64_t>()};
}

} // namespace noisyseg::metrics
