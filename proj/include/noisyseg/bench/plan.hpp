#pragma once

// Ablation plan JSON:
//   {"dataset": {"path": "<dir>"} | {"spec": {...dataset spec}},
//    "train": {...train config, loss ignored}, "seeds": [1, 2, 3, 4, 5],
//    "rows": [{"name", "loss": {"w_bce", "w_sce", "w_rce", "normalize"}, "label": "binary" | "soft"}]}
// Omitted "rows" means the default eight; omitted "dataset" means the default synthetic spec.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/losses/losses.hpp"
#include "noisyseg/segmodel/train.hpp"
#include "noisyseg/synthgen/dataset.hpp"

namespace noisyseg::bench {

enum class LabelMode { binary, soft };

inline const char* to_string(LabelMode m) { return m == LabelMode::binary ? "binary" : "soft"; }

/// The short form used in the results table.
inline const char* table_label(LabelMode m) { return m == LabelMode::binary ? "bin" : "soft"; }

inline LabelMode label_mode_from_string(const std::string& s) {
    if (s == "binary" || s == "bin")
        return LabelMode::binary;
    if (s == "soft")
        return LabelMode::soft;
    throw ConfigError("unknown label mode '" + s + "' (expected binary or soft)");
}

struct AblationRow {
    std::string name;
    losses::LossConfig loss;
    LabelMode label = LabelMode::binary;
};

struct DatasetRef {
    std::optional<std::string> path;          // existing dataset directory
    synthgen::DatasetSpec spec;               // used when path is empty
};

struct AblationPlan {
    std::vector<AblationRow> rows;
    segmodel::TrainConfig train;
    DatasetRef dataset;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    void validate() const {
        if (rows.empty())
            throw ConfigError("ablation plan has no rows");
        std::set<std::string> names;
        for (const auto& r : rows) {
            if (r.name.empty())
                throw ConfigError("ablation row without a name");
            if (!names.insert(r.name).second)
                throw ConfigError("duplicate ablation row name '" + r.name + "'");
            r.loss.validate();
        }
        if (seeds.empty())
            throw ConfigError("ablation plan has no seeds");
        train.validate();
        if (!dataset.path)
            dataset.spec.validate();
    }
};

inline losses::LossConfig row_loss(double bce, double sce, double rce, bool normalize) {
    losses::LossConfig c;
    c.w_bce = bce;
    c.w_sce = sce;
    c.w_rce = rce;
    c.normalize_terms = normalize;
    return c;
}

/// The eight configurations of the results table. The two baselines train plain (unnormalized)
/// cross-entropy; every APL row normalizes its terms.
inline std::vector<AblationRow> default_rows() {
    return {
        {"Baseline", row_loss(1, 0, 0, false), LabelMode::binary},
        {"APL binary (1 0 1)", row_loss(1, 0, 1, true), LabelMode::binary},
        {"APL binary (2 0 1)", row_loss(2, 0, 1, true), LabelMode::binary},
        {"Soft Baseline", row_loss(0, 1, 0, false), LabelMode::soft},
        {"APL+soft (0 1 1)", row_loss(0, 1, 1, true), LabelMode::soft},
        {"APL+soft (0 2 1)", row_loss(0, 2, 1, true), LabelMode::soft},
        {"APL+soft (1 1 1)", row_loss(1, 1, 1, true), LabelMode::soft},
        {"APL+soft (2 2 1)", row_loss(2, 2, 1, true), LabelMode::soft},
    };
}

inline AblationPlan default_plan() {
    AblationPlan p;
    p.rows = default_rows();
    return p;
}

inline nlohmann::json to_json(const AblationRow& r) {
    return {{"name", r.name}, {"loss", segmodel::to_json(r.loss)}, {"label", to_string(r.label)}};
}

inline nlohmann::json to_json(const AblationPlan& p) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : p.rows)
        rows.push_back(to_json(r));
    nlohmann::json train = segmodel::to_json(p.train);
    train.erase("loss");
    nlohmann::json dataset = p.dataset.path ? nlohmann::json{{"path", *p.dataset.path}}
                                            : nlohmann::json{{"spec", synthgen::to_json(p.dataset.spec)}};
    return {{"rows", rows}, {"train", train}, {"dataset", dataset}, {"seeds", p.seeds}};
}

inline AblationPlan plan_from_json(const nlohmann::json& j) {
    AblationPlan p;
    try {
        if (j.contains("rows")) {
            for (const auto& r : j.at("rows"))
                p.rows.push_back({r.at("name").get<std::string>(), segmodel::loss_config_from_json(r.at("loss")),
                                  label_mode_from_string(r.at("label").get<std::string>())});
        } else {
            p.rows = default_rows();
        }
        if (j.contains("train")) {
            nlohmann::json train = j.at("train");
            train.erase("loss");
            p.train = segmodel::train_config_from_json(train);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.contains("path"))
                p.dataset.path = d.at("path").get<std::string>();
            else if (d.contains("spec"))
                p.dataset.spec = synthgen::dataset_spec_from_json(d.at("spec"));
            else
                throw ConfigError("plan dataset needs 'path' or 'spec'");
        }
        if (j.contains("seeds"))
            p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ablation plan: ") + e.what());
    }
    p.validate();
    return p;
}

} // namespace noisyseg::bench
