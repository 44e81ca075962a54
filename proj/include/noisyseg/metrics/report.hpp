#pragma once

// Report JSON:
//   {"config": {...}, "per_volume": [{"id", "metrics": {...}, "pixels": {...}, "instances": {...}}],
//    "aggregate": {"ap50", "ap75", "iou", "recall", "precision", "dice"}, "aggregate_counts": {...}}
// Fractions are in [0, 1]. "iou" is the mean IoU of predictions matched at IoU >= 0.5; "dice" is pixel-level
// over pooled counts; recall/precision are instance-level at IoU >= 0.5.

#include <cstddef>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"
#include "noisyseg/core/volume.hpp"
#include "noisyseg/metrics/instances.hpp"
#include "noisyseg/metrics/pixel.hpp"

namespace noisyseg::metrics {

struct VolumePrediction {
    std::string id;
    std::vector<PredMap> slices;
};

struct MetricSummary {
    double ap50 = 0.0;
    double ap75 = 0.0;
    double iou = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double dice = 0.0;

    bool operator==(const MetricSummary&) const = default;
};

struct InstanceCounts {
    std::size_t predicted = 0, ground_truth = 0, matched = 0;
    bool operator==(const InstanceCounts&) const = default;
};

struct VolumeMetrics {
    std::string id;
    MetricSummary metrics;
    ConfusionCounts pixels;
    InstanceCounts instances;
    bool operator==(const VolumeMetrics&) const = default;
};

struct MetricReport {
    nlohmann::json config = nlohmann::json::object();
    std::vector<VolumeMetrics> per_volume;
    MetricSummary aggregate;
    ConfusionCounts aggregate_pixels;
    InstanceCounts aggregate_instances;
    bool operator==(const MetricReport&) const = default;
};

struct EvalConfig {
    double threshold = 0.5;
};

namespace detail {

struct Collected {
    std::vector<InstanceSet> preds, gts;
    ConfusionCounts pixels;
};

inline void collect(Collected& c, const VolumePrediction& pred, const Volume& gt, double threshold) {
    if (gt.gt.size() != gt.depth() || gt.gt.empty())
        throw DataError("evaluate_run: volume " + gt.id + " has no ground truth");
    if (pred.slices.size() != gt.gt.size())
        throw DataError("evaluate_run: volume " + gt.id + " has " + std::to_string(pred.slices.size()) +
                        " predicted slices, expected " + std::to_string(gt.gt.size()));
    for (std::size_t z = 0; z < gt.gt.size(); ++z) {
        if (pred.slices[z].extent() != gt.gt[z].extent())
            throw DataError("evaluate_run: volume " + gt.id + " slice " + std::to_string(z) + " extent mismatch");
        c.pixels += confusion(threshold_map(pred.slices[z], threshold), gt.gt[z]);
        c.preds.push_back(extract_instances(pred.slices[z], threshold));
        c.gts.push_back(extract_instances(gt.gt[z]));
    }
}

inline void summarize(const Collected& c, MetricSummary& s, InstanceCounts& n) {
    const MatchResult m50 = match_instances(c.preds, c.gts, 0.5);
    s.ap50 = average_precision(m50);
    s.ap75 = average_precision(c.preds, c.gts, 0.75);
    n.predicted = m50.detections.size();
    n.ground_truth = m50.n_gt;
    n.matched = 0;
    double iou_sum = 0.0;
    for (const auto& d : m50.detections)
        if (d.matched) {
            ++n.matched;
            iou_sum += d.iou;
        }
    s.iou = n.matched == 0 ? 0.0 : iou_sum / static_cast<double>(n.matched);
    s.recall = n.ground_truth == 0 ? 0.0 : static_cast<double>(n.matched) / static_cast<double>(n.ground_truth);
    s.precision = n.predicted == 0 ? 0.0 : static_cast<double>(n.matched) / static_cast<double>(n.predicted);
    s.dice = dice(c.pixels);
}

} // namespace detail

/// Ground-truth volumes define the order; each must have exactly one prediction with the same id.
inline MetricReport evaluate_run(std::span<const VolumePrediction> preds, std::span<const Volume> gts,
                                 const EvalConfig& config = {}) {
    if (!(config.threshold > 0.0 && config.threshold < 1.0))
        throw ConfigError("evaluate_run: threshold must lie in (0, 1)");
    std::map<std::string, const VolumePrediction*> by_id;
    for (const auto& p : preds)
        if (!by_id.emplace(p.id, &p).second)
            throw DataError("evaluate_run: duplicate prediction id " + p.id);
    if (preds.size() != gts.size())
        throw DataError("evaluate_run: " + std::to_string(preds.size()) + " predicted volumes for " +
                        std::to_string(gts.size()) + " ground-truth volumes");

    MetricReport report;
    report.config = {{"threshold", config.threshold},
                     {"connectivity", 8},
                     {"detection_iou", 0.5},
                     {"iou", "mean matched-instance IoU at IoU >= 0.5"},
                     {"dice", "pixel-level, pooled counts"},
                     {"ap", "all-point interpolation"}};
    detail::Collected all;
    for (const Volume& gt : gts) {
        const auto it = by_id.find(gt.id);
        if (it == by_id.end())
            throw DataError("evaluate_run: no prediction for volume " + gt.id);
        detail::Collected one;
        detail::collect(one, *it->second, gt, config.threshold);
        VolumeMetrics vm{gt.id, {}, one.pixels, {}};
        detail::summarize(one, vm.metrics, vm.instances);
        report.per_volume.push_back(vm);
        all.pixels += one.pixels;
        std::move(one.preds.begin(), one.preds.end(), std::back_inserter(all.preds));
        std::move(one.gts.begin(), one.gts.end(), std::back_inserter(all.gts));
    }
    report.aggregate_pixels = all.pixels;
    detail::summarize(all, report.aggregate, report.aggregate_instances);
    return report;
}

inline nlohmann::json to_json(const MetricSummary& s) {
    return {{"ap50", s.ap50},     {"ap75", s.ap75},           {"iou", s.iou},
            {"recall", s.recall}, {"precision", s.precision}, {"dice", s.dice}};
}

inline MetricSummary summary_from_json(const nlohmann::json& j) {
    return {j.at("ap50").get<double>(),   j.at("ap75").get<double>(),      j.at("iou").get<double>(),
            j.at("recall").get<double>(), j.at("precision").get<double>(), j.at("dice").get<double>()};
}

inline nlohmann::json to_json(const InstanceCounts& n) {
    return {{"predicted", n.predicted}, {"ground_truth", n.ground_truth}, {"matched", n.matched}};
}

inline InstanceCounts instance_counts_from_json(const nlohmann::json& j) {
    return {j.at("predicted").get<std::size_t>(), j.at("ground_truth").get<std::size_t>(),
            j.at("matched").get<std::size_t>()};
}

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : r.per_volume)
        per.push_back({{"id", v.id},
                       {"metrics", to_json(v.metrics)},
                       {"pixels", to_json(v.pixels)},
                       {"instances", to_json(v.instances)}});
    return {{"config", r.config},
            {"per_volume", per},
            {"aggregate", to_json(r.aggregate)},
            {"aggregate_counts", {{"pixels", to_json(r.aggregate_pixels)}, {"instances", to_json(r.aggregate_instances)}}}};
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport r;
    try {
        r.config = j.at("config");
        for (const auto& v : j.at("per_volume"))
            r.per_volume.push_back({v.at("id").get<std::string>(), summary_from_json(v.at("metrics")),
                                    counts_from_json(v.at("pixels")), instance_counts_from_json(v.at("instances"))});
        r.aggregate = summary_from_json(j.at("aggregate"));
        r.aggregate_pixels = counts_from_json(j.at("aggregate_counts").at("pixels"));
        r.aggregate_instances = instance_counts_from_json(j.at("aggregate_counts").at("instances"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metric report: ") + e.what());
    }
    return r;
}

} // namespace noisyseg::metrics
