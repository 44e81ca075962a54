#pragma once

// JSON form of rater annotations:
//   {"template": {"origin": [x, y], "cell": c, "rows": r, "cols": c},
//    "n_raters": n,
//    "slices": [{"slice": z, "raters": [{"id": i, "cells": [[row, col], ...]}, ...]}, ...]}

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "noisyseg/core/error.hpp"
#include "noisyseg/softlabel/pipeline.hpp"

namespace noisyseg::softlabel {

inline nlohmann::json to_json(const GridTemplate& g) {
    return {{"origin", {g.origin_x, g.origin_y}}, {"cell", g.cell}, {"rows", g.rows}, {"cols", g.cols}};
}

inline GridTemplate template_from_json(const nlohmann::json& j) {
    try {
        GridTemplate g;
        g.origin_x = j.at("origin").at(0).get<int>();
        g.origin_y = j.at("origin").at(1).get<int>();
        g.cell = j.at("cell").get<int>();
        g.rows = j.at("rows").get<int>();
        g.cols = j.at("cols").get<int>();
        g.validate();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("grid template: ") + e.what());
    }
}

inline nlohmann::json to_json(const RaterGrid& r) {
    nlohmann::json cells = nlohmann::json::array();
    for (int row = 0; row < r.grid.rows; ++row)
        for (int col = 0; col < r.grid.cols; ++col)
            if (r.at(row, col))
                cells.push_back({row, col});
    return {{"id", r.rater_id}, {"cells", cells}};
}

inline RaterGrid rater_from_json(const nlohmann::json& j, const GridTemplate& g) {
    try {
        RaterGrid r(j.at("id").get<int>(), g);
        for (const auto& cell : j.at("cells"))
            r.set(cell.at(0).get<int>(), cell.at(1).get<int>(), true);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("rater grid: ") + e.what());
    } catch (const ShapeError& e) {
        throw DataError(std::string("rater grid: ") + e.what());
    }
}

inline nlohmann::json to_json(const VolumeRatings& v) {
    nlohmann::json slices = nlohmann::json::array();
    for (std::size_t z = 0; z < v.slices.size(); ++z) {
        nlohmann::json raters = nlohmann::json::array();
        for (const auto& r : v.slices[z])
            raters.push_back(to_json(r));
        slices.push_back({{"slice", z}, {"raters", raters}});
    }
    return {{"template", to_json(v.grid)}, {"n_raters", v.n_raters}, {"slices", slices}};
}

inline VolumeRatings ratings_from_json(const nlohmann::json& j) {
    try {
        VolumeRatings v;
        v.grid = template_from_json(j.at("template"));
        v.n_raters = j.at("n_raters").get<int>();
        const auto& slices = j.at("slices");
        v.slices.resize(slices.size());
        for (const auto& s : slices) {
            const auto z = s.at("slice").get<std::size_t>();
            if (z >= v.slices.size())
                throw DataError("ratings: slice index " + std::to_string(z) + " out of range");
            for (const auto& r : s.at("raters"))
                v.slices[z].push_back(rater_from_json(r, v.grid));
        }
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ratings: ") + e.what());
    }
}

inline nlohmann::json to_json(const SoftLabelParams& p) { return {{"z_threshold", p.z_threshold}, {"lambda", p.lambda}}; }

inline SoftLabelParams params_from_json(const nlohmann::json& j) {
    try {
        SoftLabelParams p;
        p.z_threshold = j.value("z_threshold", p.z_threshold);
        p.lambda = j.value("lambda", p.lambda);
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("soft label params: ") + e.what());
    }
}

} // namespace noisyseg::softlabel
