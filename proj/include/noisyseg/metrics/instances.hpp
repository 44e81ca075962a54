#pragma once

// Instances are 8-connected components of a thresholded map, one set per image (slice).
// Detections across a corpus are ranked by confidence and greedily matched to ground truth.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg::metrics {

struct Instance {
    std::vector<std::uint32_t> pixels; // sorted linear indices
    double confidence = 1.0;
};

struct InstanceSet {
    Extent extent{};
    std::vector<Instance> instances;

    std::size_t size() const { return instances.size(); }
    bool empty() const { return instances.empty(); }
};

inline BinaryMask threshold_map(const PredMap& prob, double threshold = 0.5) {
    std::vector<float> v(prob.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<double>(prob[i]) >= threshold ? 1.0f : 0.0f;
    return BinaryMask(prob.extent(), std::move(v));
}

namespace detail {

/// Components of `on` in raster order of their first pixel; 8-connected flood fill.
inline std::vector<std::vector<std::uint32_t>> components(Extent e, const std::vector<bool>& on) {
    std::vector<std::vector<std::uint32_t>> out;
    std::vector<bool> seen(on.size(), false);
    std::vector<std::uint32_t> stack;
    const auto h = static_cast<long>(e.height), w = static_cast<long>(e.width);
    for (std::size_t start = 0; start < on.size(); ++start) {
        if (!on[start] || seen[start])
            continue;
        std::vector<std::uint32_t> comp;
        seen[start] = true;
        stack.push_back(static_cast<std::uint32_t>(start));
        while (!stack.empty()) {
            const std::uint32_t idx = stack.back();
            stack.pop_back();
            comp.push_back(idx);
            const long y = idx / w, x = idx % w;
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    const long ny = y + dy, nx = x + dx;
                    if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= h || nx >= w)
                        continue;
                    const auto n = static_cast<std::size_t>(ny * w + nx);
                    if (on[n] && !seen[n]) {
                        seen[n] = true;
                        stack.push_back(static_cast<std::uint32_t>(n));
                    }
                }
        }
        std::sort(comp.begin(), comp.end());
        out.push_back(std::move(comp));
    }
    return out;
}

} // namespace detail

inline InstanceSet extract_instances(const PredMap& prob, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValueError("extract_instances: threshold must lie in (0, 1)");
    std::vector<bool> on(prob.size());
    for (std::size_t i = 0; i < on.size(); ++i)
        on[i] = static_cast<double>(prob[i]) >= threshold;
    InstanceSet set{prob.extent(), {}};
    for (auto& comp : detail::components(prob.extent(), on)) {
        double sum = 0.0;
        for (auto idx : comp)
            sum += static_cast<double>(prob[idx]);
        const double conf = sum / static_cast<double>(comp.size());
        set.instances.push_back({std::move(comp), conf});
    }
    return set;
}

/// Ground-truth instances; confidence 1.
inline InstanceSet extract_instances(const BinaryMask& mask) {
    std::vector<bool> on(mask.size());
    for (std::size_t i = 0; i < on.size(); ++i)
        on[i] = mask[i] != 0.0f;
    InstanceSet set{mask.extent(), {}};
    for (auto& comp : detail::components(mask.extent(), on))
        set.instances.push_back({std::move(comp), 1.0});
    return set;
}

inline double instance_iou(const Instance& a, const Instance& b) {
    std::size_t inter = 0;
    auto i = a.pixels.begin(), j = b.pixels.begin();
    while (i != a.pixels.end() && j != b.pixels.end()) {
        if (*i < *j)
            ++i;
        else if (*j < *i)
            ++j;
        else {
            ++inter;
            ++i;
            ++j;
        }
    }
    const std::size_t uni = a.pixels.size() + b.pixels.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// One prediction after matching: its confidence and the IoU with its matched GT (matched == false if none).
struct Detection {
    double confidence = 0.0;
    bool matched = false;
    double iou = 0.0;
};

struct MatchResult {
    std::vector<Detection> detections; // in ranking order
    std::size_t n_gt = 0;
};

/// Ranks all predictions by confidence (ties: image order, then instance order) and matches each to the
/// unmatched GT instance of the same image with the highest IoU >= `iou_threshold`.
inline MatchResult match_instances(std::span<const InstanceSet> preds, std::span<const InstanceSet> gts,
                                   double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw ValueError("match_instances: IoU threshold must lie in (0, 1)");
    if (preds.size() != gts.size())
        throw ShapeError("match_instances: prediction and GT image counts differ");

    struct Ref {
        std::size_t image, index;
        double confidence;
    };
    std::vector<Ref> order;
    MatchResult result;
    for (std::size_t im = 0; im < preds.size(); ++im) {
        if (preds[im].extent != gts[im].extent && !preds[im].empty() && !gts[im].empty())
            throw ShapeError("match_instances: image " + std::to_string(im) + " extents differ");
        result.n_gt += gts[im].size();
        for (std::size_t k = 0; k < preds[im].size(); ++k)
            order.push_back({im, k, preds[im].instances[k].confidence});
    }
    std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.confidence > b.confidence; });

    std::vector<std::vector<bool>> taken(gts.size());
    for (std::size_t im = 0; im < gts.size(); ++im)
        taken[im].assign(gts[im].size(), false);

    for (const Ref& r : order) {
        const Instance& p = preds[r.image].instances[r.index];
        Detection d{r.confidence, false, 0.0};
        std::size_t best = 0;
        for (std::size_t g = 0; g < gts[r.image].size(); ++g) {
            if (taken[r.image][g])
                continue;
            const double v = instance_iou(p, gts[r.image].instances[g]);
            if (v >= iou_threshold && v > d.iou) {
                d.iou = v;
                d.matched = true;
                best = g;
            }
        }
        if (d.matched)
            taken[r.image][best] = true;
        else
            d.iou = 0.0;
        result.detections.push_back(d);
    }
    return result;
}

/// Area under the all-point interpolated precision-recall curve. With no GT at all, AP is 1 when
/// there are also no predictions and 0 otherwise.
inline double average_precision(const MatchResult& m) {
    if (m.n_gt == 0)
        return m.detections.empty() ? 1.0 : 0.0;
    const std::size_t n = m.detections.size();
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (m.detections[k].matched)
            ++tp;
        prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        rec[k] = static_cast<double>(tp) / static_cast<double>(m.n_gt);
    }
    for (std::size_t k = n; k-- > 1;)
        prec[k - 1] = std::max(prec[k - 1], prec[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (rec[k] > prev_recall) {
            ap += (rec[k] - prev_recall) * prec[k];
            prev_recall = rec[k];
        }
    }
    return ap;
}

inline double average_precision(std::span<const InstanceSet> preds, std::span<const InstanceSet> gts,
                                double iou_threshold) {
    return average_precision(match_instances(preds, gts, iou_threshold));
}

} // namespace noisyseg::metrics
