#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "noisyseg/core/stf.hpp"
#include "noisyseg/segmodel/checkpoint.hpp"
#include "noisyseg/segmodel/gradcheck.hpp"
#include "noisyseg/segmodel/model.hpp"
#include "noisyseg/segmodel/train.hpp"
#include "noisyseg/synthgen/phantom.hpp"
#include "noisyseg/synthgen/rng.hpp"

#include "test_util.hpp"

using namespace noisyseg;
using namespace noisyseg::segmodel;

namespace {

InputStack random_stack(Extent e, std::uint64_t seed) {
    synthgen::Rng rng(seed);
    auto plane = [&] { return Image::generate(e, [&](std::size_t, std::size_t) { return rng.uniform(); }); };
    return {plane(), plane(), plane()};
}

std::vector<double> random_input(Extent e, std::uint64_t seed) {
    synthgen::Rng rng(seed);
    std::vector<double> v(in_channels * e.size());
    for (auto& x : v)
        x = rng.uniform();
    return v;
}

std::vector<float> random_label(Extent e, std::uint64_t seed) {
    synthgen::Rng rng(seed);
    std::vector<float> v(e.size());
    for (auto& x : v)
        x = rng.bernoulli(0.3) ? static_cast<float>(rng.uniform()) : 0.0f;
    return v;
}

losses::LossConfig row(double b, double s, double r, bool norm) {
    losses::LossConfig c;
    c.w_bce = b;
    c.w_sce = s;
    c.w_rce = r;
    c.normalize_terms = norm;
    return c;
}

const std::vector<losses::LossConfig>& table_rows() {
    static const std::vector<losses::LossConfig> rows{row(1, 0, 0, false), row(1, 0, 1, true), row(2, 0, 1, true),
                                                       row(0, 1, 0, false), row(0, 1, 1, true), row(0, 2, 1, true),
                                                       row(1, 1, 1, true),  row(2, 2, 1, true)};
    return rows;
}

bool all_zero(const Params<double>& g) {
    bool zero = true;
    g.for_each_tensor([&](const char*, const std::vector<double>& v) {
        for (double x : v)
            zero = zero && x == 0.0;
    });
    return zero;
}

std::vector<TrainingSample> clean_samples(std::size_t volumes) {
    std::vector<TrainingSample> out;
    for (std::size_t k = 0; k < volumes; ++k) {
        synthgen::PhantomSpec spec;
        spec.seed = 100 + k;
        const auto p = synthgen::generate_volume(spec);
        for (std::size_t z = 0; z < p.volume.depth(); ++z)
            out.push_back(make_training_sample(stack_25d(p.volume, z), as_soft(p.volume.gt[z])));
    }
    return out;
}

} // namespace

TEST(Forward, ZeroWeightsGiveOneHalf) {
    const Params<float> zero = zero_like<float>();
    const PredMap out = forward(zero, random_stack(Extent{64, 64}, 1));
    EXPECT_EQ(out.extent(), (Extent{64, 64}));
    for (float v : out.values())
        EXPECT_EQ(v, 0.5f);
}

TEST(Forward, DeterministicAndInOpenInterval) {
    const auto params = init_params(3);
    const auto stack = random_stack(Extent{20, 24}, 2);
    const PredMap a = forward(params, stack), b = forward(params, stack);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.extent(), (Extent{20, 24}));
    for (float v : a.values()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Forward, BiasOnlyNetwork) {
    Params<double> p = zero_like<double>();
    p.conv3.bias[0] = std::log(3.0); // sigmoid = 0.75
    ForwardCache<double> cache;
    forward<double>(p, random_input(Extent{4, 4}, 1), Extent{4, 4}, cache);
    for (double v : cache.output)
        EXPECT_NEAR(v, 0.75, 1e-15);
}

TEST(Forward, ShapeErrors) {
    ForwardCache<double> cache;
    EXPECT_THROW(forward<double>(cast_params<double>(init_params(1)), std::vector<double>(10), Extent{2, 2}, cache),
                 ShapeError);
    InputStack bad = random_stack(Extent{4, 4}, 1);
    bad[2] = Image(Extent{4, 5}, 0.0f);
    EXPECT_THROW(forward(init_params(1), bad), ShapeError);
}

TEST(Backward, ZeroUpstreamGradientGivesZeroGradients) {
    const auto p = cast_params<double>(init_params(4));
    const Extent e{8, 8};
    ForwardCache<double> cache;
    forward<double>(p, random_input(e, 2), e, cache);
    EXPECT_TRUE(all_zero(backward<double>(p, cache, std::vector<double>(e.size(), 0.0))));
}

TEST(Backward, LinearInUpstreamGradient) {
    const auto p = cast_params<double>(init_params(5));
    const Extent e{8, 8};
    ForwardCache<double> cache;
    forward<double>(p, random_input(e, 3), e, cache);
    std::vector<double> g(e.size()), g2(e.size());
    synthgen::Rng rng(6);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = rng.uniform(-1, 1);
        g2[i] = 2 * g[i];
    }
    const auto a = backward<double>(p, cache, g);
    const auto b = backward<double>(p, cache, g2);
    std::vector<std::vector<double>> ta, tb;
    a.for_each_tensor([&](const char*, const std::vector<double>& v) { ta.push_back(v); });
    b.for_each_tensor([&](const char*, const std::vector<double>& v) { tb.push_back(v); });
    for (std::size_t t = 0; t < ta.size(); ++t)
        for (std::size_t i = 0; i < ta[t].size(); ++i)
            EXPECT_NEAR(tb[t][i], 2 * ta[t][i], 1e-12 * std::max(1.0, std::abs(ta[t][i])));
}

TEST(Backward, StaleCacheRejected) {
    auto p = cast_params<double>(init_params(6));
    const Extent e{4, 4};
    ForwardCache<double> cache;
    forward<double>(p, random_input(e, 4), e, cache);
    p.conv2.weight[0] += 0.5;
    EXPECT_THROW(backward<double>(p, cache, std::vector<double>(e.size(), 1.0)), ValueError);
    EXPECT_THROW(backward<double>(cast_params<double>(init_params(6)), cache, std::vector<double>(3, 1.0)),
                 ShapeError);
    EXPECT_THROW(backward<double>(p, ForwardCache<double>{}, std::vector<double>(e.size(), 1.0)), ShapeError);
}

TEST(GradCheck, NetworkGradientsForEveryRow) {
    const Extent e{16, 16};
    const auto input = random_input(e, 7);
    const auto label = random_label(e, 8);
    const auto params = init_params(9);
    for (const auto& cfg : table_rows()) {
        const auto r = network_gradcheck(params, input, e, label, cfg);
        EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
        EXPECT_EQ(r.checked + r.kink_skipped, params.parameter_count());
        EXPECT_LT(r.kink_skipped, params.parameter_count() / 20);
    }
}

TEST(GradCheck, LossGradientsForEveryRow) {
    const Extent e{16, 16};
    const auto label = random_label(e, 10);
    synthgen::Rng rng(11);
    std::vector<double> pred(e.size());
    for (auto& v : pred)
        v = rng.uniform(0.01, 0.99);
    for (const auto& cfg : table_rows()) {
        const auto r = loss_gradcheck(cfg, pred, e, label);
        EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
        EXPECT_EQ(r.checked, e.size());
    }
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
    const auto samples = clean_samples(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.seed = 12;
    const auto r = train(samples, cfg);
    EXPECT_EQ(r.params, init_params(synthgen::derive_seed(12, 0)));
    ASSERT_EQ(r.loss_curve.size(), 1u);
}

TEST(Train, ZeroLearningRateLossIsMeanSampleLoss) {
    const auto samples = clean_samples(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.mirror_augment = false;
    const auto r = train(samples, cfg);
    double sum = 0.0;
    ForwardCache<float> cache;
    for (const auto& s : samples) {
        forward<float>(r.params, s.input, s.extent, cache);
        sum += losses::apl<float>(cfg.loss, s.extent, cache.output, s.label).value;
    }
    EXPECT_NEAR(r.loss_curve[0], sum / samples.size(), 1e-12);
}

TEST(Train, MirroredCopiesGiveMirroredLoss) {
    auto samples = clean_samples(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.mirror_augment = false;
    const auto params = init_params(synthgen::derive_seed(cfg.seed, 0));
    for (auto& s : samples) {
        std::swap(s.input, s.input_mirrored);
        std::swap(s.label, s.label_mirrored);
    }
    double sum = 0.0;
    ForwardCache<float> cache;
    for (const auto& s : samples) {
        forward<float>(params, s.input, s.extent, cache);
        sum += losses::apl<float>(cfg.loss, s.extent, cache.output, s.label).value;
    }
    EXPECT_NEAR(train(samples, cfg).loss_curve[0], sum / samples.size(), 1e-12);
}

TEST(Train, SameSeedSameParams) {
    const auto samples = clean_samples(1);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 21;
    const auto a = train(samples, cfg), b = train(samples, cfg);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    cfg.seed = 22;
    EXPECT_NE(train(samples, cfg).params, a.params);
}

TEST(Train, LossMostlyDecreasesOnCleanCorpus) {
    const auto samples = clean_samples(2);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 3;
    const auto r = train(samples, cfg);
    ASSERT_EQ(r.loss_curve.size(), 30u);
    int non_increasing = 0;
    for (std::size_t i = 1; i < r.loss_curve.size(); ++i)
        non_increasing += r.loss_curve[i] <= r.loss_curve[i - 1];
    EXPECT_GE(non_increasing, 27) << "of 29 epoch transitions";
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Train, Errors) {
    TrainConfig cfg;
    EXPECT_THROW(train({}, cfg), DataError);
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.epochs = 1;
    cfg.learning_rate = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.learning_rate = 0.001;
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, NonFiniteLossIsDivergence) {
    auto samples = clean_samples(1);
    samples.resize(1);
    samples[0].input[0] = std::numeric_limits<float>::quiet_NaN();
    samples[0].input_mirrored = samples[0].input;
    TrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(train(samples, cfg), DivergenceError);
}

TEST(Train, ConfigJsonRoundTrip) {
    TrainConfig cfg;
    cfg.loss = row(1, 1, 1, true);
    cfg.epochs = 7;
    cfg.seed = 99;
    cfg.mirror_augment = false;
    const auto back = train_config_from_json(to_json(cfg));
    EXPECT_EQ(back.loss, cfg.loss);
    EXPECT_EQ(back.epochs, 7);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_FALSE(back.mirror_augment);
    EXPECT_THROW(train_config_from_json({{"epochs", "many"}}), ConfigError);
}

TEST(Predict, SingleSliceAndStateless) {
    const auto params = init_params(13);
    synthgen::PhantomSpec spec;
    spec.depth = 1;
    const auto one = synthgen::generate_volume(spec).volume;
    const auto out = predict_volume(params, one);
    ASSERT_EQ(out.size(), 1u);
    const InputStack dup{one.intensity[0], one.intensity[0], one.intensity[0]};
    EXPECT_EQ(out[0], forward(params, dup));

    spec.depth = 12;
    spec.seed = 1;
    const auto a = synthgen::generate_volume(spec).volume;
    spec.seed = 2;
    const auto b = synthgen::generate_volume(spec).volume;
    const auto pa = predict_volume(params, a);
    predict_volume(params, b);
    EXPECT_EQ(predict_volume(params, a), pa);
    for (const auto& m : pa)
        for (float v : m.values()) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
        }
}

TEST(Checkpoint, RoundTrip) {
    test::TempDir dir("ckpt");
    const auto params = init_params(14);
    save_checkpoint(dir / "c", params, {{"note", "x"}});
    EXPECT_EQ(load_checkpoint(dir / "c"), params);
}

TEST(Checkpoint, WrongShapeIsDataError) {
    test::TempDir dir("ckpt");
    save_checkpoint(dir / "c", init_params(15));
    stf::write_tensor(dir / "c" / "conv3.bias.stf", Tensor{{2}, {0.0f, 0.0f}});
    EXPECT_THROW(load_checkpoint(dir / "c"), DataError);
}

TEST(Params, InitIsHeScaled) {
    const auto p = init_params(16);
    double ss = 0.0;
    for (float w : p.conv2.weight)
        ss += static_cast<double>(w) * w;
    const double var = ss / static_cast<double>(p.conv2.weight.size());
    EXPECT_NEAR(var, 2.0 / 72.0, 0.01);
    for (float b : p.conv1.bias)
        EXPECT_EQ(b, 0.0f);
    EXPECT_EQ(p.parameter_count(), 8u * 3 * 9 + 8 + 8 * 8 * 9 + 8 + 8 + 1);
}
