#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"
#include "noisyseg/core/volume.hpp"
#include "noisyseg/losses/losses.hpp"
#include "noisyseg/segmodel/model.hpp"
#include "noisyseg/synthgen/rng.hpp"

namespace noisyseg::segmodel {

struct TrainConfig {
    losses::LossConfig loss;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 30;
    int batch_size = 4;
    std::uint64_t seed = 1;
    bool mirror_augment = true;

    void validate() const {
        loss.validate();
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("train: learning rate must be finite and >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
            throw ConfigError("train: invalid Adam hyper-parameters");
        if (epochs < 1)
            throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1)
            throw ConfigError("train: batch_size must be >= 1");
    }
};

inline nlohmann::json to_json(const losses::LossConfig& c) {
    return {{"w_bce", c.w_bce},     {"w_sce", c.w_sce},   {"w_rce", c.w_rce},
            {"normalize", c.normalize_terms}, {"p_min", c.p_min}, {"num_classes", c.num_classes}};
}

inline losses::LossConfig loss_config_from_json(const nlohmann::json& j) {
    losses::LossConfig c;
    try {
        c.w_bce = j.value("w_bce", c.w_bce);
        c.w_sce = j.value("w_sce", c.w_sce);
        c.w_rce = j.value("w_rce", c.w_rce);
        c.normalize_terms = j.value("normalize", c.normalize_terms);
        c.p_min = j.value("p_min", c.p_min);
        c.num_classes = j.value("num_classes", c.num_classes);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"loss", to_json(c.loss)}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
            {"beta2", c.beta2},       {"epsilon", c.epsilon},             {"epochs", c.epochs},
            {"batch_size", c.batch_size}, {"seed", c.seed},               {"mirror_augment", c.mirror_augment}};
}

/// Reads everything but the loss, which comes from the ablation row.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    try {
        if (j.contains("loss"))
            c.loss = loss_config_from_json(j["loss"]);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.mirror_augment = j.value("mirror_augment", c.mirror_augment);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Adam moments for every parameter, in double.
struct OptimizerState {
    Params<double> m = zero_like<double>();
    Params<double> v = zero_like<double>();
    std::uint64_t step = 0;
};

inline void adam_step(ModelParams& params, const Params<float>& grad, OptimizerState& state, const TrainConfig& config) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    auto update = [&](std::vector<float>& p, const std::vector<float>& g, std::vector<double>& m, std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            const double step = config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
            p[i] = static_cast<float>(static_cast<double>(p[i]) - step);
        }
    };
    update(params.conv1.weight, grad.conv1.weight, state.m.conv1.weight, state.v.conv1.weight);
    update(params.conv1.bias, grad.conv1.bias, state.m.conv1.bias, state.v.conv1.bias);
    update(params.conv2.weight, grad.conv2.weight, state.m.conv2.weight, state.v.conv2.weight);
    update(params.conv2.bias, grad.conv2.bias, state.m.conv2.bias, state.v.conv2.bias);
    update(params.conv3.weight, grad.conv3.weight, state.m.conv3.weight, state.v.conv3.weight);
    update(params.conv3.bias, grad.conv3.bias, state.m.conv3.bias, state.v.conv3.bias);
}

/// A training example with its input and label pre-flattened, plus the mirrored copy.
struct TrainingSample {
    Extent extent{};
    std::vector<float> input;    // 3 x H x W
    std::vector<float> label;    // H x W
    std::vector<float> input_mirrored;
    std::vector<float> label_mirrored;
};

inline TrainingSample make_training_sample(const InputStack& input, const SoftMask& label) {
    const Extent e = input[1].extent();
    if (label.extent() != e)
        throw ShapeError("training sample: label extent differs from input");
    TrainingSample s;
    s.extent = e;
    s.input = flatten_stack<float>(input);
    s.label.assign(label.values().begin(), label.values().end());
    s.input_mirrored = flatten_stack<float>(mirror_horizontal(input));
    const SoftMask ml = mirror_horizontal(label);
    s.label_mirrored.assign(ml.values().begin(), ml.values().end());
    return s;
}

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_curve; // mean training loss per epoch
};

/// Deterministic for a seed: initialization, shuffling and mirroring all draw from streams derived from it.
inline TrainResult train(std::span<const TrainingSample> samples, const TrainConfig& config,
                         const std::function<void(int, double)>& on_epoch = {}) {
    config.validate();
    if (samples.empty())
        throw DataError("train: empty training split");

    TrainResult result;
    result.params = init_params(synthgen::derive_seed(config.seed, 0));
    synthgen::Rng rng(synthgen::derive_seed(config.seed, 1));
    OptimizerState state;
    ForwardCache<float> cache;
    BackwardWorkspace<float> ws;
    std::vector<double> d_pred;
    std::vector<std::size_t> order(samples.size());
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const double scale = 1.0 / static_cast<double>(end - start);
            Params<float> grad = zero_like<float>();
            for (std::size_t k = start; k < end; ++k) {
                const TrainingSample& s = samples[order[k]];
                const bool mirrored = config.mirror_augment && rng.bernoulli(0.5);
                forward<float>(result.params, mirrored ? s.input_mirrored : s.input, s.extent, cache);
                const auto loss = losses::apl<float>(config.loss, s.extent, cache.output,
                                                     mirrored ? s.label_mirrored : s.label);
                if (!std::isfinite(loss.value))
                    throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                          std::to_string(order[k]));
                epoch_loss += loss.value;
                d_pred.resize(loss.grad.size());
                for (std::size_t i = 0; i < d_pred.size(); ++i)
                    d_pred[i] = loss.grad[i] * scale;
                backward<float>(result.params, cache, d_pred, grad, ws);
            }
            adam_step(result.params, grad, state, config);
        }
        const double mean = epoch_loss / static_cast<double>(samples.size());
        if (!std::isfinite(mean))
            throw DivergenceError("train: non-finite epoch loss at epoch " + std::to_string(epoch));
        result.loss_curve.push_back(mean);
        if (on_epoch)
            on_epoch(epoch, mean);
    }
    result.params.validate();
    return result;
}

} // namespace noisyseg::segmodel
