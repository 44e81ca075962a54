#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"

namespace noisyseg {

/// Stacked 2D slices of one scan. `gt` is empty for volumes that only carry weak labels.
struct Volume {
    std::string id;
    std::vector<Image> intensity;
    std::vector<BinaryMask> bone;
    std::vector<BinaryMask> gt;

    [[nodiscard]] std::size_t depth() const noexcept { return intensity.size(); }
    [[nodiscard]] Extent extent() const { return intensity.empty() ? Extent{} : intensity.front().extent(); }

    void validate() const {
        if (intensity.empty())
            throw ShapeError("volume " + id + " has no slices");
        const Extent e = extent();
        for (const auto& s : intensity)
            if (s.extent() != e)
                throw ShapeError("volume " + id + ": slices differ in extent");
        if (bone.size() != depth())
            throw ShapeError("volume " + id + ": bone mask count differs from depth");
        for (const auto& b : bone)
            if (b.extent() != e)
                throw ShapeError("volume " + id + ": bone mask extent mismatch");
        if (!gt.empty()) {
            if (gt.size() != depth())
                throw ShapeError("volume " + id + ": gt mask count differs from depth");
            for (const auto& g : gt)
                if (g.extent() != e)
                    throw ShapeError("volume " + id + ": gt mask extent mismatch");
        }
    }
};

/// Three neighbouring slices used as input channels (previous, centre, next).
using InputStack = std::array<Image, 3>;

/// Indices of the slices forming the 2.5D stack around `slice_index`.
/// Missing neighbours at the volume ends repeat the centre slice.
inline std::array<std::size_t, 3> stack_indices(std::size_t depth, std::size_t slice_index) {
    if (depth == 0 || slice_index >= depth)
        throw ShapeError("slice index " + std::to_string(slice_index) + " out of range for depth " +
                         std::to_string(depth));
    const std::size_t prev = slice_index == 0 ? slice_index : slice_index - 1;
    const std::size_t next = slice_index + 1 == depth ? slice_index : slice_index + 1;
    return {prev, slice_index, next};
}

inline InputStack stack_25d(std::span<const Image> slices, std::size_t slice_index) {
    const auto idx = stack_indices(slices.size(), slice_index);
    return {slices[idx[0]], slices[idx[1]], slices[idx[2]]};
}

inline InputStack stack_25d(const Volume& volume, std::size_t slice_index) {
    return stack_25d(std::span<const Image>(volume.intensity), slice_index);
}

inline InputStack mirror_horizontal(const InputStack& stack) {
    return {mirror_horizontal(stack[0]), mirror_horizontal(stack[1]), mirror_horizontal(stack[2])};
}

/// One training/evaluation example.
struct SampleRecord {
    std::string volume_id;
    std::size_t slice_index = 0;
    InputStack input;
    SoftMask soft_label;
    std::optional<BinaryMask> gt_label;
    BinaryMask bone;

    void validate() const {
        const Extent e = input[1].extent();
        for (const auto& p : input)
            if (p.extent() != e)
                throw ShapeError("sample " + volume_id + ": input planes differ in extent");
        if (soft_label.extent() != e || bone.extent() != e || (gt_label && gt_label->extent() != e))
            throw ShapeError("sample " + volume_id + ": label planes differ from input extent");
    }
};

} // namespace noisyseg
