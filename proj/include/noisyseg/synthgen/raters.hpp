#pragma once

// Noisy grid annotations. Each rater independently misses lesion cells, marks
// random non-lesion cells, and occasionally shifts a selection to a neighbouring
// cell. Faint lesions and the first slice of a lesion are missed more often.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/softlabel/grid.hpp"
#include "noisyseg/softlabel/pipeline.hpp"
#include "noisyseg/synthgen/phantom.hpp"
#include "noisyseg/synthgen/rng.hpp"

namespace noisyseg::synthgen {

struct RaterNoiseSpec {
    int n_raters = 3;
    double miss_rate = 0.5;
    double false_positive_rate = 0.05;
    double jitter_rate = 0.1;
    double hard_miss_increase = 0.2;
    double hard_miss_cap = 0.95;
    int cell_size = 8;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_raters < 1 || n_raters > 7)
            throw ConfigError("rater noise: n_raters must lie in [1, 7]");
        for (double p : {miss_rate, false_positive_rate, jitter_rate, hard_miss_increase, hard_miss_cap})
            if (!(p >= 0.0 && p <= 1.0))
                throw ConfigError("rater noise: probabilities must lie in [0, 1]");
        if (cell_size < 1)
            throw ConfigError("rater noise: cell_size must be >= 1");
    }

    friend bool operator==(const RaterNoiseSpec&, const RaterNoiseSpec&) = default;
};

inline nlohmann::json to_json(const RaterNoiseSpec& s) {
    return {{"n_raters", s.n_raters},
            {"miss_rate", s.miss_rate},
            {"false_positive_rate", s.false_positive_rate},
            {"jitter_rate", s.jitter_rate},
            {"hard_miss_increase", s.hard_miss_increase},
            {"hard_miss_cap", s.hard_miss_cap},
            {"cell_size", s.cell_size},
            {"seed", s.seed}};
}

inline RaterNoiseSpec noise_spec_from_json(const nlohmann::json& j) {
    RaterNoiseSpec s;
    try {
        s.n_raters = j.value("n_raters", s.n_raters);
        s.miss_rate = j.value("miss_rate", s.miss_rate);
        s.false_positive_rate = j.value("false_positive_rate", s.false_positive_rate);
        s.jitter_rate = j.value("jitter_rate", s.jitter_rate);
        s.hard_miss_increase = j.value("hard_miss_increase", s.hard_miss_increase);
        s.hard_miss_cap = j.value("hard_miss_cap", s.hard_miss_cap);
        s.cell_size = j.value("cell_size", s.cell_size);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("rater noise spec: ") + e.what());
    }
    s.validate();
    return s;
}

/// Grid over the bounding box of the bone (union over slices).
inline softlabel::GridTemplate template_for_bone(const Volume& v, int cell) {
    std::size_t y0 = std::numeric_limits<std::size_t>::max(), x0 = y0, y1 = 0, x1 = 0;
    for (const auto& b : v.bone)
        for (std::size_t y = 0; y < b.height(); ++y)
            for (std::size_t x = 0; x < b.width(); ++x)
                if (b(y, x) != 0.0f) {
                    y0 = std::min(y0, y);
                    x0 = std::min(x0, x);
                    y1 = std::max(y1, y + 1);
                    x1 = std::max(x1, x + 1);
                }
    if (y1 == 0)
        throw DataError("template_for_bone: volume " + v.id + " has no bone");
    softlabel::GridTemplate g;
    g.origin_x = static_cast<int>(x0);
    g.origin_y = static_cast<int>(y0);
    g.cell = cell;
    g.rows = static_cast<int>((y1 - y0 + static_cast<std::size_t>(cell) - 1) / static_cast<std::size_t>(cell));
    g.cols = static_cast<int>((x1 - x0 + static_cast<std::size_t>(cell) - 1) / static_cast<std::size_t>(cell));
    return g;
}

/// A lesion is hard when its boost lies in the lowest quartile of the spec's boost range.
inline bool is_faint(const Lesion& l, const PhantomSpec& spec) noexcept {
    return l.boost < spec.lesion_boost_min + 0.25 * (spec.lesion_boost_max - spec.lesion_boost_min);
}

/// Miss probability of lesion `l` on slice z. Raised for faint lesions and first slices;
/// a base rate of exactly 0 stays 0.
inline double lesion_miss_probability(const Lesion& l, std::size_t z, const PhantomSpec& spec,
                                      const RaterNoiseSpec& noise) noexcept {
    const bool hard = is_faint(l, spec) || z == l.first_slice;
    if (!hard || noise.miss_rate <= 0.0)
        return noise.miss_rate;
    return std::max(noise.miss_rate, std::min(noise.miss_rate + noise.hard_miss_increase, noise.hard_miss_cap));
}

/// Per cell of one slice: NaN when no lesion touches the cell, otherwise the lowest miss
/// probability among the lesions touching it.
inline std::vector<double> cell_miss_probabilities(const Phantom& phantom, const softlabel::GridTemplate& grid,
                                                   std::size_t z, const RaterNoiseSpec& noise) {
    std::vector<double> out(grid.cell_count(), std::numeric_limits<double>::quiet_NaN());
    const Extent e = phantom.volume.extent();
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const auto rect = softlabel::cell_rect(grid, r, c, e);
            double& slot = out[static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) +
                               static_cast<std::size_t>(c)];
            for (const auto& l : phantom.lesions) {
                bool touches = false;
                for (std::size_t y = rect.y0; y < rect.y1 && !touches; ++y)
                    for (std::size_t x = rect.x0; x < rect.x1 && !touches; ++x)
                        touches = l.covers(z, static_cast<double>(x), static_cast<double>(y));
                if (!touches)
                    continue;
                const double m = lesion_miss_probability(l, z, phantom.spec, noise);
                slot = std::isnan(slot) ? m : std::min(slot, m);
            }
        }
    return out;
}

/// Draws consume one stream in (rater, slice, cell) order: one uniform per cell, plus for a
/// selected lesion cell one uniform for the jitter decision and one index for its direction.
inline softlabel::VolumeRatings simulate_raters(const Phantom& phantom, const softlabel::GridTemplate& grid,
                                                const RaterNoiseSpec& noise) {
    noise.validate();
    grid.validate();
    const std::size_t depth = phantom.volume.depth();
    std::vector<std::vector<double>> miss(depth);
    for (std::size_t z = 0; z < depth; ++z)
        miss[z] = cell_miss_probabilities(phantom, grid, z, noise);

    softlabel::VolumeRatings out;
    out.grid = grid;
    out.n_raters = noise.n_raters;
    out.slices.assign(depth, {});

    Rng rng(noise.seed);
    static constexpr int dr[4] = {-1, 1, 0, 0};
    static constexpr int dc[4] = {0, 0, -1, 1};
    for (int rater = 0; rater < noise.n_raters; ++rater)
        for (std::size_t z = 0; z < depth; ++z) {
            softlabel::RaterGrid g(rater, grid);
            for (int r = 0; r < grid.rows; ++r)
                for (int c = 0; c < grid.cols; ++c) {
                    const double m = miss[z][static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) +
                                             static_cast<std::size_t>(c)];
                    const double u = rng.uniform();
                    if (std::isnan(m)) {
                        if (u < noise.false_positive_rate)
                            g.set(r, c, true);
                        continue;
                    }
                    if (u < m)
                        continue;
                    int tr = r, tc = c;
                    if (rng.uniform() < noise.jitter_rate) {
                        const auto d = rng.below(4);
                        tr = std::clamp(r + dr[d], 0, grid.rows - 1);
                        tc = std::clamp(c + dc[d], 0, grid.cols - 1);
                    }
                    g.set(tr, tc, true);
                }
            out.slices[z].push_back(std::move(g));
        }
    return out;
}

} // namespace noisyseg::synthgen
