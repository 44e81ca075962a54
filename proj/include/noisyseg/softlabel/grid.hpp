#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg::softlabel {

/// Rectangular grid laid over an image. Cell (r, c) covers
/// x in [origin_x + c*cell, origin_x + (c+1)*cell) and likewise for y.
struct GridTemplate {
    int origin_x = 0;
    int origin_y = 0;
    int cell = 8;
    int rows = 1;
    int cols = 1;

    void validate() const {
        if (cell < 1)
            throw ConfigError("grid template: cell size must be >= 1");
        if (rows < 1 || cols < 1)
            throw ConfigError("grid template: rows and cols must be >= 1");
    }

    [[nodiscard]] std::size_t cell_count() const noexcept {
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    friend bool operator==(const GridTemplate&, const GridTemplate&) = default;
};

/// Pixel rectangle [y0, y1) x [x0, x1) of a cell, clipped to the image. Empty when y0 >= y1 or x0 >= x1.
struct CellRect {
    std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
    [[nodiscard]] bool empty() const noexcept { return y0 >= y1 || x0 >= x1; }
};

inline CellRect cell_rect(const GridTemplate& g, int row, int col, Extent image) {
    auto clamp_to = [](long v, std::size_t hi) {
        return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(hi)));
    };
    const long y0 = static_cast<long>(g.origin_y) + static_cast<long>(row) * g.cell;
    const long x0 = static_cast<long>(g.origin_x) + static_cast<long>(col) * g.cell;
    return {clamp_to(y0, image.height), clamp_to(y0 + g.cell, image.height), clamp_to(x0, image.width),
            clamp_to(x0 + g.cell, image.width)};
}

/// One rater's selections on one slice.
struct RaterGrid {
    int rater_id = 0;
    GridTemplate grid;
    std::vector<std::uint8_t> selected; // rows*cols, row-major

    RaterGrid() = default;
    RaterGrid(int id, const GridTemplate& g) : rater_id(id), grid(g), selected(g.cell_count(), 0) {}

    [[nodiscard]] bool at(int r, int c) const { return selected.at(index(r, c)) != 0; }
    void set(int r, int c, bool v) { selected.at(index(r, c)) = v ? 1 : 0; }

    [[nodiscard]] std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), std::uint8_t{1}));
    }

    void validate() const {
        grid.validate();
        if (selected.size() != grid.cell_count())
            throw ShapeError("rater grid: selection size differs from grid dims");
    }

    friend bool operator==(const RaterGrid&, const RaterGrid&) = default;

private:
    [[nodiscard]] std::size_t index(int r, int c) const {
        if (r < 0 || c < 0 || r >= grid.rows || c >= grid.cols)
            throw ShapeError("rater grid: cell (" + std::to_string(r) + "," + std::to_string(c) + ") out of range");
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(c);
    }
};

/// Per-cell probability aligned to a template.
struct CellProbabilities {
    GridTemplate grid;
    std::vector<float> p;

    [[nodiscard]] float at(int r, int c) const {
        return p.at(static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(c));
    }
};

/// Fraction of the `n_raters` raters of the scan that selected each cell.
inline CellProbabilities aggregate_raters(const GridTemplate& grid, std::span<const RaterGrid> grids, int n_raters) {
    grid.validate();
    if (n_raters < 1)
        throw DataError("aggregate_raters: n_raters must be >= 1");
    std::set<int> ids;
    for (const auto& g : grids) {
        g.validate();
        if (g.grid != grid)
            throw DataError("aggregate_raters: rater " + std::to_string(g.rater_id) + " uses a different template");
        if (!ids.insert(g.rater_id).second)
            throw DataError("aggregate_raters: duplicate rater id " + std::to_string(g.rater_id));
    }
    if (static_cast<std::size_t>(n_raters) < ids.size())
        throw DataError("aggregate_raters: " + std::to_string(ids.size()) + " distinct raters but n_raters = " +
                        std::to_string(n_raters));

    CellProbabilities out{grid, std::vector<float>(grid.cell_count(), 0.0f)};
    std::vector<int> counts(grid.cell_count(), 0);
    for (const auto& g : grids)
        for (std::size_t i = 0; i < counts.size(); ++i)
            counts[i] += g.selected[i];
    for (std::size_t i = 0; i < counts.size(); ++i)
        out.p[i] = static_cast<float>(static_cast<double>(counts[i]) / static_cast<double>(n_raters));
    return out;
}

inline CellProbabilities aggregate_raters(std::span<const RaterGrid> grids, int n_raters) {
    if (grids.empty())
        throw DataError("aggregate_raters: no grids and no template given");
    return aggregate_raters(grids.front().grid, grids, n_raters);
}

/// Paints each cell's probability over its (clipped) pixel rectangle; pixels outside the grid stay 0.
inline SoftMask rasterize(const CellProbabilities& cells, Extent image) {
    cells.grid.validate();
    if (cells.p.size() != cells.grid.cell_count())
        throw ShapeError("rasterize: probability count differs from grid dims");
    std::vector<float> v(image.size(), 0.0f);
    for (int r = 0; r < cells.grid.rows; ++r)
        for (int c = 0; c < cells.grid.cols; ++c) {
            const CellRect rect = cell_rect(cells.grid, r, c, image);
            const float p = cells.at(r, c);
            for (std::size_t y = rect.y0; y < rect.y1; ++y)
                std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(y * image.width + rect.x0), rect.x1 - rect.x0, p);
        }
    return SoftMask(image, std::move(v));
}

/// Cells whose rectangle contains at least one positive pixel of `mask`.
inline std::vector<std::uint8_t> cells_touching(const GridTemplate& grid, const BinaryMask& mask) {
    std::vector<std::uint8_t> out(grid.cell_count(), 0);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const CellRect rect = cell_rect(grid, r, c, mask.extent());
            bool hit = false;
            for (std::size_t y = rect.y0; y < rect.y1 && !hit; ++y)
                for (std::size_t x = rect.x0; x < rect.x1 && !hit; ++x)
                    hit = mask(y, x) != 0.0f;
            out[static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(c)] = hit;
        }
    return out;
}

} // namespace noisyseg::softlabel
