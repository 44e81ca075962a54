#pragma once

// Soft pseudo ground truth from grid annotations:
//   1. aggregate rater selections into per-cell probabilities,
//   2. drop everything outside the bone mask,
//   3. raise selected, unusually bright bone pixels to 1,
//   4. borrow evidence from the neighbouring slices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"
#include "noisyseg/softlabel/grid.hpp"

namespace noisyseg::softlabel {

struct SoftLabelParams {
    double z_threshold = 1.0; // pixel is "bright" when intensity > mean + z * std over bone
    double lambda = 0.5;      // weight of neighbouring-slice evidence

    void validate() const {
        if (!std::isfinite(z_threshold))
            throw ConfigError("soft label params: z_threshold must be finite");
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw ConfigError("soft label params: lambda must lie in [0, 1]");
    }

    friend bool operator==(const SoftLabelParams&, const SoftLabelParams&) = default;
};

/// All rater grids of one scan, slice by slice. `n_raters` counts everyone who read the scan,
/// including raters who selected nothing on a slice.
struct VolumeRatings {
    GridTemplate grid;
    int n_raters = 1;
    std::vector<std::vector<RaterGrid>> slices;

    friend bool operator==(const VolumeRatings&, const VolumeRatings&) = default;
};

inline SoftMask apply_bone_mask(const SoftMask& soft, const BinaryMask& bone) {
    require_same_extent(soft, bone, "apply_bone_mask");
    std::vector<float> v(soft.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = bone[i] != 0.0f ? soft[i] : 0.0f;
    return SoftMask(soft.extent(), std::move(v));
}

struct BoneStatistics {
    double mean = 0.0;
    double stddev = 0.0; // population
    std::size_t count = 0;
};

inline BoneStatistics bone_statistics(const Image& image, const BinaryMask& bone) {
    require_same_extent(image, bone, "bone_statistics");
    BoneStatistics s;
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i)
        if (bone[i] != 0.0f) {
            sum += image[i];
            ++s.count;
        }
    if (s.count == 0)
        throw DataError("bone mask is empty");
    s.mean = sum / static_cast<double>(s.count);
    double ss = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i)
        if (bone[i] != 0.0f) {
            const double d = image[i] - s.mean;
            ss += d * d;
        }
    s.stddev = std::sqrt(ss / static_cast<double>(s.count));
    return s;
}

/// Selected pixels brighter than mean + z*std of the bone set to probability 1.
inline SoftMask intensity_boost(const SoftMask& soft, const Image& image, const BinaryMask& bone,
                                const SoftLabelParams& params) {
    params.validate();
    require_same_extent(soft, image, "intensity_boost");
    const BoneStatistics s = bone_statistics(image, bone);
    const double threshold = s.mean + params.z_threshold * s.stddev;
    std::vector<float> v(soft.values().begin(), soft.values().end());
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] > 0.0f && static_cast<double>(image[i]) > threshold)
            v[i] = 1.0f;
    return SoftMask(soft.extent(), std::move(v));
}

/// Interior slices: p'_i = max(p_i, lambda * min(p_{i-1}, p_{i+1})). End slices are copied.
/// Reads only the input volume, so the update does not depend on sweep order.
inline std::vector<SoftMask> propagate_slices(std::span<const SoftMask> slices, const SoftLabelParams& params) {
    params.validate();
    std::vector<SoftMask> out(slices.begin(), slices.end());
    for (std::size_t i = 1; i + 1 < slices.size(); ++i) {
        require_same_extent(slices[i - 1], slices[i], "propagate_slices");
        require_same_extent(slices[i + 1], slices[i], "propagate_slices");
        std::vector<float> v(slices[i].size());
        for (std::size_t k = 0; k < v.size(); ++k) {
            const float neighbour = std::min(slices[i - 1][k], slices[i + 1][k]);
            const auto borrowed = static_cast<float>(params.lambda * static_cast<double>(neighbour));
            v[k] = std::max(slices[i][k], borrowed);
        }
        out[i] = SoftMask(slices[i].extent(), std::move(v));
    }
    return out;
}

/// Steps 1-3 for a single slice.
inline SoftMask slice_soft_label(const GridTemplate& grid, std::span<const RaterGrid> raters, int n_raters,
                                 const BinaryMask& bone, const Image& image, const SoftLabelParams& params) {
    const CellProbabilities cells = aggregate_raters(grid, raters, n_raters);
    const SoftMask masked = apply_bone_mask(rasterize(cells, image.extent()), bone);
    const bool has_bone = std::any_of(bone.values().begin(), bone.values().end(), [](float b) { return b != 0.0f; });
    return has_bone ? intensity_boost(masked, image, bone, params) : masked;
}

/// Full pipeline for one scan. Propagated labels are re-masked by the bone so nothing leaks outside it.
inline std::vector<SoftMask> build_soft_labels(const VolumeRatings& ratings, std::span<const BinaryMask> bone,
                                               std::span<const Image> images, const SoftLabelParams& params) {
    params.validate();
    const std::size_t depth = images.size();
    if (depth == 0)
        throw ShapeError("build_soft_labels: empty volume");
    if (bone.size() != depth || ratings.slices.size() != depth)
        throw ShapeError("build_soft_labels: ratings, bone masks and images disagree on slice count");

    std::vector<SoftMask> per_slice;
    per_slice.reserve(depth);
    for (std::size_t z = 0; z < depth; ++z)
        per_slice.push_back(
            slice_soft_label(ratings.grid, ratings.slices[z], ratings.n_raters, bone[z], images[z], params));

    auto propagated = propagate_slices(per_slice, params);
    for (std::size_t z = 0; z < depth; ++z)
        propagated[z] = apply_bone_mask(propagated[z], bone[z]);
    return propagated;
}

} // namespace noisyseg::softlabel
