#pragma once

// On-disk corpus:
//   <dir>/manifest.json              {"splits": {"train": "train/manifest.json", ...}, "specs": {...}}
//   <dir>/<split>/manifest.json      {"split", "volumes": [{"id", "seed", "files": {...}}], "specs"}
//   <dir>/<split>/<id>_<kind>.stf    rank-3 STF1 tensors (depth, height, width)
//   <dir>/train/<id>_raters.json     rater grids
// Train volumes carry only weak labels (raters + derived soft labels); val/test carry clean GT.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/json_io.hpp"
#include "noisyseg/core/stf.hpp"
#include "noisyseg/core/volume.hpp"
#include "noisyseg/softlabel/json.hpp"
#include "noisyseg/softlabel/pipeline.hpp"
#include "noisyseg/synthgen/phantom.hpp"
#include "noisyseg/synthgen/raters.hpp"

namespace noisyseg::synthgen {

inline constexpr std::array<std::string_view, 3> split_names{"train", "val", "test"};

struct DatasetSpec {
    PhantomSpec phantom;
    RaterNoiseSpec noise;
    softlabel::SoftLabelParams softlabel;
    std::size_t n_volumes = 20;
    std::array<double, 3> split{0.8, 0.05, 0.15};

    void validate() const {
        phantom.validate();
        noise.validate();
        softlabel.validate();
        if (n_volumes == 0)
            throw ConfigError("dataset: n_volumes must be >= 1");
        double sum = 0.0;
        for (double r : split) {
            if (!(r >= 0.0))
                throw ConfigError("dataset: split ratios must be >= 0");
            sum += r;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("dataset: split ratios must sum to 1");
    }
};

inline nlohmann::json to_json(const DatasetSpec& s) {
    return {{"phantom", to_json(s.phantom)},
            {"noise", to_json(s.noise)},
            {"softlabel", softlabel::to_json(s.softlabel)},
            {"n_volumes", s.n_volumes},
            {"split", s.split}};
}

inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
    DatasetSpec s;
    try {
        if (j.contains("phantom"))
            s.phantom = phantom_spec_from_json(j["phantom"]);
        if (j.contains("noise"))
            s.noise = noise_spec_from_json(j["noise"]);
        if (j.contains("softlabel"))
            s.softlabel = softlabel::params_from_json(j["softlabel"]);
        s.n_volumes = j.value("n_volumes", s.n_volumes);
        if (j.contains("split"))
            s.split = j["split"].get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset spec: ") + e.what());
    }
    s.validate();
    return s;
}

/// Volume counts per split: floors of n * ratio, remainder handed out by largest fractional part
/// (earlier split wins ties).
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * ratios[i];
        // guard against 16.000000000000004-style products
        const double rounded = std::round(exact);
        const double base = std::abs(exact - rounded) < 1e-9 ? rounded : std::floor(exact);
        counts[i] = static_cast<std::size_t>(base);
        frac[i] = exact - base;
        assigned += counts[i];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (frac[i] > frac[best])
                best = i;
        ++counts[best];
        frac[best] = -1.0;
        ++assigned;
    }
    return counts;
}

struct DatasetVolume {
    Volume volume;
    std::uint64_t seed = 0;
    std::vector<SoftMask> soft;                         // train only
    std::optional<softlabel::VolumeRatings> ratings;    // train only
};

struct Split {
    std::string name;
    std::vector<DatasetVolume> volumes;
};

inline std::string volume_id(std::size_t index) {
    std::string digits = std::to_string(index);
    return "vol" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

/// Phantom, ratings and soft labels for volume `index` of the corpus.
struct GeneratedVolume {
    Phantom phantom;
    softlabel::VolumeRatings ratings;
    std::vector<SoftMask> soft;
};

inline GeneratedVolume generate_corpus_volume(const DatasetSpec& spec, std::size_t index) {
    PhantomSpec ps = spec.phantom;
    ps.seed = derive_seed(spec.phantom.seed, index);
    RaterNoiseSpec ns = spec.noise;
    ns.seed = derive_seed(spec.noise.seed, index);
    GeneratedVolume g{generate_volume(ps, volume_id(index)), {}, {}};
    g.ratings = simulate_raters(g.phantom, template_for_bone(g.phantom.volume, ns.cell_size), ns);
    g.soft = softlabel::build_soft_labels(g.ratings, g.phantom.volume.bone, g.phantom.volume.intensity, spec.softlabel);
    return g;
}

inline void make_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    spec.validate();
    const auto counts = split_counts(spec.n_volumes, spec.split);
    const nlohmann::json specs = to_json(spec);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::json top = {{"specs", specs}, {"splits", nlohmann::json::object()}};
    std::size_t index = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::string name(split_names[s]);
        const fs::path sdir = dir / name;
        fs::create_directories(sdir, ec);
        if (ec)
            throw IoError("cannot create " + sdir.string() + ": " + ec.message());
        nlohmann::json volumes = nlohmann::json::array();
        for (std::size_t k = 0; k < counts[s]; ++k, ++index) {
            const GeneratedVolume g = generate_corpus_volume(spec, index);
            const Volume& v = g.phantom.volume;
            nlohmann::json files;
            auto put = [&](const std::string& kind, const Tensor& t) {
                const std::string file = v.id + "_" + kind + ".stf";
                stf::write_tensor(sdir / file, t);
                files[kind] = file;
            };
            put("intensity", stack_to_tensor<policy::Finite>(v.intensity));
            put("bone", stack_to_tensor<policy::Binary>(v.bone));
            if (name == "train") {
                put("soft", stack_to_tensor<policy::Probability>(g.soft));
                const std::string file = v.id + "_raters.json";
                write_json(sdir / file, softlabel::to_json(g.ratings));
                files["raters"] = file;
            } else {
                put("gt", stack_to_tensor<policy::Binary>(v.gt));
            }
            volumes.push_back({{"id", v.id}, {"seed", g.phantom.spec.seed}, {"files", files}});
        }
        write_json(sdir / "manifest.json", {{"split", name}, {"volumes", volumes}, {"specs", specs}});
        top["splits"][name] = name + "/manifest.json";
    }
    write_json(dir / "manifest.json", top);
}

inline Split load_split(const std::filesystem::path& dir, std::string_view name) {
    const auto sdir = dir / std::string(name);
    const nlohmann::json manifest = read_json(sdir / "manifest.json");
    Split split;
    split.name = std::string(name);
    try {
        for (const auto& entry : manifest.at("volumes")) {
            DatasetVolume dv;
            dv.volume.id = entry.at("id").get<std::string>();
            dv.seed = entry.at("seed").get<std::uint64_t>();
            const auto& files = entry.at("files");
            auto load = [&](const char* kind) { return stf::read_tensor(sdir / files.at(kind).get<std::string>()); };
            dv.volume.intensity = planes_from_tensor<policy::Finite>(load("intensity"));
            dv.volume.bone = planes_from_tensor<policy::Binary>(load("bone"));
            if (files.contains("gt"))
                dv.volume.gt = planes_from_tensor<policy::Binary>(load("gt"));
            if (files.contains("soft"))
                dv.soft = planes_from_tensor<policy::Probability>(load("soft"));
            if (files.contains("raters"))
                dv.ratings = softlabel::ratings_from_json(read_json(sdir / files.at("raters").get<std::string>()));
            dv.volume.validate();
            if (!dv.soft.empty() && dv.soft.size() != dv.volume.depth())
                throw DataError("volume " + dv.volume.id + ": soft label depth mismatch");
            split.volumes.push_back(std::move(dv));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(sdir.string() + "/manifest.json: " + e.what());
    } catch (const ShapeError& e) {
        throw DataError(sdir.string() + ": " + e.what());
    }
    return split;
}

/// Recomputes the train split's soft labels from its rater grids with new parameters.
inline void rebuild_soft_labels(const std::filesystem::path& dir, const softlabel::SoftLabelParams& params) {
    params.validate();
    const auto sdir = dir / "train";
    nlohmann::json manifest = read_json(sdir / "manifest.json");
    const Split train = load_split(dir, "train");
    for (std::size_t i = 0; i < train.volumes.size(); ++i) {
        const auto& dv = train.volumes[i];
        if (!dv.ratings)
            throw DataError("volume " + dv.volume.id + " has no rater grids");
        const auto soft = softlabel::build_soft_labels(*dv.ratings, dv.volume.bone, dv.volume.intensity, params);
        const std::string file = manifest["volumes"][i]["files"]["soft"].get<std::string>();
        stf::write_tensor(sdir / file, stack_to_tensor<policy::Probability>(soft));
    }
    manifest["specs"]["softlabel"] = softlabel::to_json(params);
    write_json(sdir / "manifest.json", manifest);
    nlohmann::json top = read_json(dir / "manifest.json");
    top["specs"]["softlabel"] = softlabel::to_json(params);
    write_json(dir / "manifest.json", top);
}

} // namespace noisyseg::synthgen
