#pragma once

// Synthetic scans: an elliptical bone on a dark background with bright Gaussian
// lesions. A lesion's ground truth is its half-maximum disk on each slice it spans.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"
#include "noisyseg/core/volume.hpp"
#include "noisyseg/synthgen/rng.hpp"

namespace noisyseg::synthgen {

struct PhantomSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t depth = 12;

    double bone_center_x = 32.0;
    double bone_center_y = 32.0;
    double bone_radius_x = 26.0;
    double bone_radius_y = 20.0;

    int lesion_count_min = 2;
    int lesion_count_max = 5;
    double lesion_radius_min = 2.5;
    double lesion_radius_max = 6.0;
    double lesion_boost_min = 0.15; // peak intensity added at the lesion centre
    double lesion_boost_max = 0.45;
    int lesion_span_max = 3; // consecutive slices

    double background_intensity = 0.08;
    double bone_intensity = 0.40;
    double noise_std = 0.05;

    std::uint64_t seed = 42;

    void validate() const {
        if (height < 4 || width < 4 || depth < 1)
            throw ConfigError("phantom: volume must be at least 4x4x1");
        if (!(bone_radius_x > 0 && bone_radius_y > 0))
            throw ConfigError("phantom: bone radii must be positive");
        if (lesion_count_min < 0 || lesion_count_max < lesion_count_min)
            throw ConfigError("phantom: invalid lesion count range");
        if (!(lesion_radius_min > 0 && lesion_radius_max >= lesion_radius_min))
            throw ConfigError("phantom: invalid lesion radius range");
        if (!(lesion_boost_min >= 0 && lesion_boost_max >= lesion_boost_min))
            throw ConfigError("phantom: invalid lesion boost range");
        if (lesion_span_max < 1)
            throw ConfigError("phantom: lesion_span_max must be >= 1");
        for (double v : {background_intensity, bone_intensity})
            if (!(v >= 0.0 && v <= 1.0))
                throw ConfigError("phantom: base intensities must lie in [0, 1]");
        if (!(noise_std >= 0.0))
            throw ConfigError("phantom: noise_std must be >= 0");
        if (lesion_count_max > 0 && lesion_radius_max + 1.0 >= std::min(bone_radius_x, bone_radius_y))
            throw ConfigError("phantom: lesion radius exceeds bone");
    }

    friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

inline nlohmann::json to_json(const PhantomSpec& s) {
    return {{"height", s.height},
            {"width", s.width},
            {"depth", s.depth},
            {"bone_center", {s.bone_center_x, s.bone_center_y}},
            {"bone_radius", {s.bone_radius_x, s.bone_radius_y}},
            {"lesion_count", {s.lesion_count_min, s.lesion_count_max}},
            {"lesion_radius", {s.lesion_radius_min, s.lesion_radius_max}},
            {"lesion_boost", {s.lesion_boost_min, s.lesion_boost_max}},
            {"lesion_span_max", s.lesion_span_max},
            {"background_intensity", s.background_intensity},
            {"bone_intensity", s.bone_intensity},
            {"noise_std", s.noise_std},
            {"seed", s.seed}};
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    PhantomSpec s;
    try {
        s.height = j.value("height", s.height);
        s.width = j.value("width", s.width);
        s.depth = j.value("depth", s.depth);
        if (j.contains("bone_center")) {
            s.bone_center_x = j["bone_center"].at(0).get<double>();
            s.bone_center_y = j["bone_center"].at(1).get<double>();
        }
        if (j.contains("bone_radius")) {
            s.bone_radius_x = j["bone_radius"].at(0).get<double>();
            s.bone_radius_y = j["bone_radius"].at(1).get<double>();
        }
        if (j.contains("lesion_count")) {
            s.lesion_count_min = j["lesion_count"].at(0).get<int>();
            s.lesion_count_max = j["lesion_count"].at(1).get<int>();
        }
        if (j.contains("lesion_radius")) {
            s.lesion_radius_min = j["lesion_radius"].at(0).get<double>();
            s.lesion_radius_max = j["lesion_radius"].at(1).get<double>();
        }
        if (j.contains("lesion_boost")) {
            s.lesion_boost_min = j["lesion_boost"].at(0).get<double>();
            s.lesion_boost_max = j["lesion_boost"].at(1).get<double>();
        }
        s.lesion_span_max = j.value("lesion_span_max", s.lesion_span_max);
        s.background_intensity = j.value("background_intensity", s.background_intensity);
        s.bone_intensity = j.value("bone_intensity", s.bone_intensity);
        s.noise_std = j.value("noise_std", s.noise_std);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("phantom spec: ") + e.what());
    }
    s.validate();
    return s;
}

struct Lesion {
    double center_x = 0;
    double center_y = 0;
    double radius = 0; // half-maximum radius on the central slice(s)
    double boost = 0;  // peak intensity increase
    std::size_t first_slice = 0;
    std::size_t last_slice = 0; // inclusive

    [[nodiscard]] bool spans(std::size_t z) const noexcept { return z >= first_slice && z <= last_slice; }

    /// Half-maximum radius on slice z; the end slices of a multi-slice lesion are 25% smaller.
    [[nodiscard]] double radius_on(std::size_t z) const noexcept {
        if (!spans(z))
            return 0.0;
        const bool end = first_slice != last_slice && (z == first_slice || z == last_slice);
        return end ? 0.75 * radius : radius;
    }

    [[nodiscard]] bool covers(std::size_t z, double x, double y) const noexcept {
        const double r = radius_on(z);
        const double dx = x - center_x, dy = y - center_y;
        return r > 0.0 && dx * dx + dy * dy <= r * r;
    }
};

struct Phantom {
    Volume volume;
    std::vector<Lesion> lesions;
    PhantomSpec spec;
};

inline bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry) noexcept {
    const double u = (x - cx) / rx, v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
}

inline Phantom generate_volume(const PhantomSpec& spec, std::string id = "vol") {
    spec.validate();
    Rng rng(spec.seed);
    const Extent extent{spec.height, spec.width};

    const int n_lesions = static_cast<int>(rng.uniform_int(spec.lesion_count_min, spec.lesion_count_max));
    std::vector<Lesion> lesions;
    for (int i = 0; i < n_lesions; ++i) {
        Lesion l;
        l.radius = rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
        l.boost = rng.uniform(spec.lesion_boost_min, spec.lesion_boost_max);
        // rejection-sample a centre whose disk (plus one pixel) stays in the bone
        const double rx = spec.bone_radius_x - l.radius - 1.0, ry = spec.bone_radius_y - l.radius - 1.0;
        do {
            l.center_x = spec.bone_center_x + rng.uniform(-rx, rx);
            l.center_y = spec.bone_center_y + rng.uniform(-ry, ry);
        } while (!inside_ellipse(l.center_x, l.center_y, spec.bone_center_x, spec.bone_center_y, rx, ry));
        const auto span = static_cast<std::size_t>(rng.uniform_int(1, spec.lesion_span_max));
        l.first_slice = static_cast<std::size_t>(rng.below(spec.depth));
        l.last_slice = std::min(spec.depth - 1, l.first_slice + span - 1);
        lesions.push_back(l);
    }

    Phantom out;
    out.spec = spec;
    out.volume.id = std::move(id);
    const BinaryMask bone = BinaryMask::generate(extent, [&](std::size_t y, std::size_t x) {
        return inside_ellipse(static_cast<double>(x), static_cast<double>(y), spec.bone_center_x, spec.bone_center_y,
                              spec.bone_radius_x, spec.bone_radius_y)
                   ? 1.0
                   : 0.0;
    });

    for (std::size_t z = 0; z < spec.depth; ++z) {
        std::vector<float> intensity(extent.size());
        std::vector<float> gt(extent.size(), 0.0f);
        for (std::size_t y = 0; y < extent.height; ++y)
            for (std::size_t x = 0; x < extent.width; ++x) {
                const std::size_t i = y * extent.width + x;
                const bool in_bone = bone[i] != 0.0f;
                double v = in_bone ? spec.bone_intensity : spec.background_intensity;
                if (in_bone)
                    for (const auto& l : lesions) {
                        const double r = l.radius_on(z);
                        if (r <= 0.0)
                            continue;
                        const double dx = static_cast<double>(x) - l.center_x;
                        const double dy = static_cast<double>(y) - l.center_y;
                        const double d2 = dx * dx + dy * dy;
                        // half maximum at distance r: sigma^2 = r^2 / (2 ln 2)
                        v += l.boost * std::exp(-d2 * std::log(2.0) / (r * r));
                        if (d2 <= r * r)
                            gt[i] = 1.0f;
                    }
                v += spec.noise_std * rng.normal();
                intensity[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        out.volume.intensity.emplace_back(extent, std::move(intensity));
        out.volume.gt.emplace_back(extent, std::move(gt));
        out.volume.bone.push_back(bone);
    }
    out.lesions = std::move(lesions);
    return out;
}

} // namespace noisyseg::synthgen
