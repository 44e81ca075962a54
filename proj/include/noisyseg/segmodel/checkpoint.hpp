#pragma once

// Checkpoint directory: one STF1 tensor per parameter plus index.json {"layers": {name: file}}.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/json_io.hpp"
#include "noisyseg/core/stf.hpp"
#include "noisyseg/segmodel/model.hpp"

namespace noisyseg::segmodel {

namespace detail {

inline std::vector<std::uint32_t> tensor_dims(const ConvLayer<float>& l, bool weight) {
    if (!weight)
        return {static_cast<std::uint32_t>(l.out)};
    return {static_cast<std::uint32_t>(l.out), static_cast<std::uint32_t>(l.in), static_cast<std::uint32_t>(l.kernel),
            static_cast<std::uint32_t>(l.kernel)};
}

} // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    params.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json layers = nlohmann::json::object();
    auto save = [&](const std::string& name, const ConvLayer<float>& l, bool weight) {
        const std::string file = name + ".stf";
        stf::write_tensor(dir / file, Tensor{detail::tensor_dims(l, weight), weight ? l.weight : l.bias});
        layers[name] = file;
    };
    save("conv1.weight", params.conv1, true);
    save("conv1.bias", params.conv1, false);
    save("conv2.weight", params.conv2, true);
    save("conv2.bias", params.conv2, false);
    save("conv3.weight", params.conv3, true);
    save("conv3.bias", params.conv3, false);
    write_json(dir / "index.json", {{"layers", layers}, {"metadata", metadata}});
}

inline ModelParams load_checkpoint(const std::filesystem::path& dir) {
    const nlohmann::json index = read_json(dir / "index.json");
    ModelParams p;
    auto load = [&](const std::string& name, ConvLayer<float>& l, bool weight) {
        std::string file;
        try {
            file = index.at("layers").at(name).get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("checkpoint index lacks " + name + ": " + e.what());
        }
        Tensor t = stf::read_tensor(dir / file);
        if (t.dims != detail::tensor_dims(l, weight))
            throw DataError("checkpoint tensor " + name + " has the wrong shape");
        (weight ? l.weight : l.bias) = std::move(t.data);
    };
    load("conv1.weight", p.conv1, true);
    load("conv1.bias", p.conv1, false);
    load("conv2.weight", p.conv2, true);
    load("conv2.bias", p.conv2, false);
    load("conv3.weight", p.conv3, true);
    load("conv3.bias", p.conv3, false);
    p.validate();
    return p;
}

} // namespace noisyseg::segmodel
