#pragma once

// Median deltas of every row against "Baseline", plus the ordering checks of the results table:
// the soft baseline beats the baseline, and APL+soft (1,1,1) leads on recall and precision.

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/metrics/report.hpp"

namespace noisyseg::bench {

inline constexpr const char* baseline_row = "Baseline";
inline constexpr const char* soft_baseline_row = "Soft Baseline";
inline constexpr const char* apl_soft_row = "APL+soft (1 1 1)";

struct RowComparison {
    std::string name;
    metrics::MetricSummary median;
    metrics::MetricSummary delta; // row - baseline
};

struct Comparison {
    std::vector<RowComparison> rows;
    bool soft_baseline_dice_above_baseline = false;
    bool soft_baseline_recall_above_baseline = false;
    bool soft_baseline_precision_above_baseline = false;
    std::size_t apl_soft_recall_rank = 0; // 1 = best among all rows
    std::size_t apl_soft_precision_rank = 0;
    std::size_t apl_soft_dice_rank = 0;

    bool ordering_holds() const {
        return soft_baseline_dice_above_baseline && apl_soft_recall_rank == 1 && apl_soft_precision_rank == 1;
    }
};

inline metrics::MetricSummary operator-(const metrics::MetricSummary& a, const metrics::MetricSummary& b) {
    return {a.ap50 - b.ap50, a.ap75 - b.ap75, a.iou - b.iou, a.recall - b.recall, a.precision - b.precision,
            a.dice - b.dice};
}

/// Reads row names and medians from a run manifest. Fails without a partial result when a row lacks
/// its median or a required row is missing.
inline Comparison compare_rows(const nlohmann::json& manifest) {
    std::vector<RowComparison> rows;
    try {
        for (const auto& r : manifest.at("rows")) {
            const auto name = r.at("name").get<std::string>();
            if (!r.contains("median"))
                throw DataError("compare_rows: row '" + name + "' has no median metrics");
            if (r.contains("runs") && r.at("runs").empty())
                throw DataError("compare_rows: row '" + name + "' has no runs");
            rows.push_back({name, metrics::summary_from_json(r.at("median")), {}});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("compare_rows: incomplete manifest: ") + e.what());
    }
    auto find = [&](const char* name) -> const RowComparison& {
        for (const auto& r : rows)
            if (r.name == name)
                return r;
        throw DataError(std::string("compare_rows: missing row '") + name + "'");
    };
    const metrics::MetricSummary base = find(baseline_row).median;
    const metrics::MetricSummary soft = find(soft_baseline_row).median;
    const metrics::MetricSummary apl = find(apl_soft_row).median;

    Comparison c;
    for (auto& r : rows)
        r.delta = r.median - base;
    c.soft_baseline_dice_above_baseline = soft.dice > base.dice;
    c.soft_baseline_recall_above_baseline = soft.recall > base.recall;
    c.soft_baseline_precision_above_baseline = soft.precision > base.precision;
    auto rank = [&](double metrics::MetricSummary::*field) {
        std::size_t k = 1;
        for (const auto& r : rows)
            if (r.median.*field > apl.*field)
                ++k;
        return k;
    };
    c.apl_soft_recall_rank = rank(&metrics::MetricSummary::recall);
    c.apl_soft_precision_rank = rank(&metrics::MetricSummary::precision);
    c.apl_soft_dice_rank = rank(&metrics::MetricSummary::dice);
    c.rows = std::move(rows);
    return c;
}

inline nlohmann::json to_json(const Comparison& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : c.rows)
        rows.push_back({{"name", r.name}, {"median", metrics::to_json(r.median)}, {"delta", metrics::to_json(r.delta)}});
    return {{"baseline", baseline_row},
            {"rows", rows},
            {"flags",
             {{"soft_baseline_dice_above_baseline", c.soft_baseline_dice_above_baseline},
              {"soft_baseline_recall_above_baseline", c.soft_baseline_recall_above_baseline},
              {"soft_baseline_precision_above_baseline", c.soft_baseline_precision_above_baseline},
              {"apl_soft_recall_rank", c.apl_soft_recall_rank},
              {"apl_soft_precision_rank", c.apl_soft_precision_rank},
              {"apl_soft_dice_rank", c.apl_soft_dice_rank},
              {"ordering_holds", c.ordering_holds()}}}};
}

} // namespace noisyseg::bench
