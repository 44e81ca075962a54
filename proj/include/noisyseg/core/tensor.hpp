#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noisyseg/core/error.hpp"

namespace noisyseg {

/// Height/width of a 2D plane in pixels.
struct Extent {
    std::size_t height = 0;
    std::size_t width = 0;

    [[nodiscard]] constexpr std::size_t size() const noexcept { return height * width; }
    friend constexpr bool operator==(const Extent&, const Extent&) = default;
};

inline std::string to_string(Extent e) {
    return std::to_string(e.height) + "x" + std::to_string(e.width);
}

/// Rank-n float tensor, row-major (slice-major for rank 3). This is the unit of file I/O.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    [[nodiscard]] std::size_t element_count() const noexcept {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               [](std::size_t acc, std::uint32_t d) { return acc * d; });
    }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace policy {

struct Finite {
    static constexpr const char* name = "Tensor2D";
    static bool accepts(float v) noexcept { return std::isfinite(v); }
};
struct Probability {
    static constexpr const char* name = "SoftMask";
    static bool accepts(float v) noexcept { return v >= 0.0f && v <= 1.0f; }
};
struct Prediction {
    static constexpr const char* name = "PredMap";
    static bool accepts(float v) noexcept { return v >= 0.0f && v <= 1.0f; }
};
struct Binary {
    static constexpr const char* name = "BinaryMask";
    static bool accepts(float v) noexcept { return v == 0.0f || v == 1.0f; }
};

} // namespace policy

/// A 2D row-major float plane whose values all satisfy `Policy::accepts`.
/// Construction validates; there is no unchecked mutable access.
template <class Policy>
class Plane {
public:
    Plane() = default;

    explicit Plane(Extent extent, float fill = 0.0f) : extent_(extent), data_(extent.size(), fill) {
        if (!Policy::accepts(fill))
            throw ValueError(std::string(Policy::name) + ": fill value rejected");
    }

    Plane(Extent extent, std::vector<float> values) : extent_(extent), data_(std::move(values)) {
        if (data_.size() != extent_.size())
            throw ShapeError(std::string(Policy::name) + ": " + std::to_string(data_.size()) +
                             " values for extent " + to_string(extent_));
        for (float v : data_)
            if (!Policy::accepts(v))
                throw ValueError(std::string(Policy::name) + ": value " + std::to_string(v) +
                                 " violates invariant");
    }

    /// Builds a plane by evaluating `f(y, x)` at every pixel.
    template <class F>
    static Plane generate(Extent extent, F&& f) {
        std::vector<float> values(extent.size());
        for (std::size_t y = 0; y < extent.height; ++y)
            for (std::size_t x = 0; x < extent.width; ++x)
                values[y * extent.width + x] = static_cast<float>(f(y, x));
        return Plane(extent, std::move(values));
    }

    [[nodiscard]] Extent extent() const noexcept { return extent_; }
    [[nodiscard]] std::size_t height() const noexcept { return extent_.height; }
    [[nodiscard]] std::size_t width() const noexcept { return extent_.width; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] float operator()(std::size_t y, std::size_t x) const noexcept {
        return data_[y * extent_.width + x];
    }
    [[nodiscard]] float operator[](std::size_t i) const noexcept { return data_[i]; }
    [[nodiscard]] std::span<const float> values() const noexcept { return data_; }

    /// Moves the payload out, leaving an empty plane.
    [[nodiscard]] std::vector<float> release() && {
        extent_ = {};
        return std::move(data_);
    }

    friend bool operator==(const Plane&, const Plane&) = default;

private:
    Extent extent_{};
    std::vector<float> data_;
};

using Image = Plane<policy::Finite>;         // Tensor2D: intensities, any finite value
using SoftMask = Plane<policy::Probability>; // per-pixel label probability in [0, 1]
using PredMap = Plane<policy::Prediction>;   // post-sigmoid model output
using BinaryMask = Plane<policy::Binary>;    // exactly 0 or 1

template <class A, class B>
void require_same_extent(const Plane<A>& a, const Plane<B>& b, const char* what) {
    if (a.extent() != b.extent())
        throw ShapeError(std::string(what) + ": extent mismatch " + to_string(a.extent()) + " vs " +
                         to_string(b.extent()));
}

template <class P>
Tensor to_tensor(const Plane<P>& plane) {
    auto values = plane.values();
    return Tensor{{static_cast<std::uint32_t>(plane.height()), static_cast<std::uint32_t>(plane.width())},
                  {values.begin(), values.end()}};
}

template <class P>
Plane<P> plane_from_tensor(Tensor t) {
    if (t.dims.size() != 2)
        throw ShapeError("expected rank-2 tensor, got rank " + std::to_string(t.dims.size()));
    return Plane<P>(Extent{t.dims[0], t.dims[1]}, std::move(t.data));
}

/// Stacks equally sized planes into a rank-3 (depth, height, width) tensor.
template <class P>
Tensor stack_to_tensor(std::span<const Plane<P>> planes) {
    if (planes.empty())
        throw ShapeError("cannot stack zero planes");
    const Extent e = planes.front().extent();
    Tensor t{{static_cast<std::uint32_t>(planes.size()), static_cast<std::uint32_t>(e.height),
              static_cast<std::uint32_t>(e.width)},
             {}};
    t.data.reserve(planes.size() * e.size());
    for (const auto& p : planes) {
        if (p.extent() != e)
            throw ShapeError("stack_to_tensor: planes differ in extent");
        t.data.insert(t.data.end(), p.values().begin(), p.values().end());
    }
    return t;
}

template <class P>
std::vector<Plane<P>> planes_from_tensor(const Tensor& t) {
    if (t.dims.size() != 3)
        throw ShapeError("expected rank-3 tensor, got rank " + std::to_string(t.dims.size()));
    const Extent e{t.dims[1], t.dims[2]};
    std::vector<Plane<P>> out;
    out.reserve(t.dims[0]);
    for (std::size_t z = 0; z < t.dims[0]; ++z) {
        auto first = t.data.begin() + static_cast<std::ptrdiff_t>(z * e.size());
        out.emplace_back(e, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(e.size())));
    }
    return out;
}

/// Label >= threshold becomes 1.
inline BinaryMask binarize(const SoftMask& soft, float threshold = 0.5f) {
    std::vector<float> v(soft.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = soft[i] >= threshold ? 1.0f : 0.0f;
    return BinaryMask(soft.extent(), std::move(v));
}

inline SoftMask as_soft(const BinaryMask& mask) {
    auto v = mask.values();
    return SoftMask(mask.extent(), std::vector<float>(v.begin(), v.end()));
}

/// Reverses every row.
template <class P>
Plane<P> mirror_horizontal(const Plane<P>& plane) {
    std::vector<float> v(plane.size());
    const std::size_t w = plane.width();
    for (std::size_t y = 0; y < plane.height(); ++y)
        for (std::size_t x = 0; x < w; ++x)
            v[y * w + x] = plane(y, w - 1 - x);
    return Plane<P>(plane.extent(), std::move(v));
}

} // namespace noisyseg
