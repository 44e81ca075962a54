#pragma once

// Fixed per-pixel segmenter:
//   conv 3x3 (3 -> 8) + ReLU, conv 3x3 (8 -> 8) + ReLU, conv 1x1 (8 -> 1) + sigmoid.
// Convolutions are zero-padded "same". Everything is templated on the scalar type so
// the gradient checker can run a double-precision copy of the float model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "noisyseg/core/error.hpp"
#include "noisyseg/core/tensor.hpp"
#include "noisyseg/core/volume.hpp"
#include "noisyseg/synthgen/rng.hpp"

namespace noisyseg::segmodel {

inline constexpr std::size_t in_channels = 3;
inline constexpr std::size_t hidden = 8;
/// Sigmoid outputs are kept this far from 0 and 1 so downstream losses see p(1 - p) > 0.
inline constexpr double output_margin = 1e-7;

/// One layer: weights laid out [out][in][ky][kx].
template <class T>
struct ConvLayer {
    std::size_t out = 0, in = 0, kernel = 1;
    std::vector<T> weight;
    std::vector<T> bias;

    ConvLayer() = default;
    ConvLayer(std::size_t o, std::size_t i, std::size_t k) : out(o), in(i), kernel(k), weight(o * i * k * k), bias(o) {}

    [[nodiscard]] T w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
        return weight[((o * in + i) * kernel + ky) * kernel + kx];
    }
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <class T>
struct Params {
    ConvLayer<T> conv1{hidden, in_channels, 3};
    ConvLayer<T> conv2{hidden, hidden, 3};
    ConvLayer<T> conv3{1, hidden, 1};

    /// Every weight and bias tensor in a fixed order, with its name.
    template <class F>
    void for_each_tensor(F&& f) {
        f("conv1.weight", conv1.weight);
        f("conv1.bias", conv1.bias);
        f("conv2.weight", conv2.weight);
        f("conv2.bias", conv2.bias);
        f("conv3.weight", conv3.weight);
        f("conv3.bias", conv3.bias);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        f("conv1.weight", conv1.weight);
        f("conv1.bias", conv1.bias);
        f("conv2.weight", conv2.weight);
        f("conv2.bias", conv2.bias);
        f("conv3.weight", conv3.weight);
        f("conv3.bias", conv3.bias);
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](const char*, const std::vector<T>& v) { n += v.size(); });
        return n;
    }

    void validate() const {
        auto check = [](const ConvLayer<T>& l, std::size_t o, std::size_t i, std::size_t k) {
            if (l.out != o || l.in != i || l.kernel != k || l.weight.size() != o * i * k * k || l.bias.size() != o)
                throw ShapeError("model parameters do not match the fixed architecture");
        };
        check(conv1, hidden, in_channels, 3);
        check(conv2, hidden, hidden, 3);
        check(conv3, 1, hidden, 1);
        for_each_tensor([](const char* name, const std::vector<T>& v) {
            for (T x : v)
                if (!std::isfinite(static_cast<double>(x)))
                    throw ValueError(std::string("non-finite parameter in ") + name);
        });
    }

    friend bool operator==(const Params&, const Params&) = default;
};

using ModelParams = Params<float>;

template <class To, class From>
Params<To> cast_params(const Params<From>& p) {
    auto cast_layer = [](const ConvLayer<From>& l) {
        ConvLayer<To> out(l.out, l.in, l.kernel);
        std::transform(l.weight.begin(), l.weight.end(), out.weight.begin(), [](From v) { return static_cast<To>(v); });
        std::transform(l.bias.begin(), l.bias.end(), out.bias.begin(), [](From v) { return static_cast<To>(v); });
        return out;
    };
    return {cast_layer(p.conv1), cast_layer(p.conv2), cast_layer(p.conv3)};
}

/// He initialization (normal, std sqrt(2 / fan_in)), zero biases.
inline ModelParams init_params(std::uint64_t seed) {
    synthgen::Rng rng(seed);
    ModelParams p;
    auto init = [&](ConvLayer<float>& l) {
        const double scale = std::sqrt(2.0 / static_cast<double>(l.in * l.kernel * l.kernel));
        for (auto& w : l.weight)
            w = static_cast<float>(scale * rng.normal());
        std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    };
    init(p.conv1);
    init(p.conv2);
    init(p.conv3);
    return p;
}

namespace kernels {

// 3x3 layers read from zero-padded planes of (h + 2) x (w + 2), so every tap covers a
// full row and the nine taps fuse into one pass per output row.

template <class T>
void pad_planes(std::span<const T> in, std::size_t channels, std::size_t h, std::size_t w, std::vector<T>& out) {
    const std::size_t pw = w + 2, pplane = (h + 2) * pw;
    out.assign(channels * pplane, T{0});
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(in.data() + (c * h + y) * w, w, out.data() + c * pplane + (y + 1) * pw + 1);
}

/// out[o][y][x] = bias[o] + sum_{i,ky,kx} k[o][i][ky][kx] * in_pad[i][y + ky][x + kx].
/// `bias` may be empty (treated as zero).
template <class T>
void conv3x3(std::span<const T> k, std::span<const T> bias, std::size_t n_out, std::size_t n_in,
             std::span<const T> in_pad, std::span<T> out, std::size_t h, std::size_t w) {
    const std::size_t pw = w + 2, pplane = (h + 2) * pw;
    for (std::size_t o = 0; o < n_out; ++o) {
        const T b = bias.empty() ? T{0} : bias[o];
        for (std::size_t y = 0; y < h; ++y) {
            T* __restrict__ d = out.data() + (o * h + y) * w;
            std::fill(d, d + w, b);
            for (std::size_t i = 0; i < n_in; ++i) {
                const T* kk = k.data() + (o * n_in + i) * 9;
                const T* __restrict__ r0 = in_pad.data() + i * pplane + y * pw;
                const T* __restrict__ r1 = r0 + pw;
                const T* __restrict__ r2 = r1 + pw;
                const T k0 = kk[0], k1 = kk[1], k2 = kk[2], k3 = kk[3], k4 = kk[4], k5 = kk[5], k6 = kk[6],
                        k7 = kk[7], k8 = kk[8];
                for (std::size_t x = 0; x < w; ++x)
                    d[x] += k0 * r0[x] + k1 * r0[x + 1] + k2 * r0[x + 2] + k3 * r1[x] + k4 * r1[x + 1] +
                            k5 * r1[x + 2] + k6 * r2[x] + k7 * r2[x + 1] + k8 * r2[x + 2];
            }
        }
    }
}

/// dk[o][i][ky][kx] += sum_{y,x} g[o][y][x] * in_pad[i][y + ky][x + kx];  db[o] += sum g[o].
/// A column-wise accumulator keeps the inner loop elementwise.
template <class T>
void conv3x3_weight_grad(std::span<const T> g, std::span<const T> in_pad, std::size_t n_out, std::size_t n_in,
                         std::span<T> dk, std::span<T> db, std::size_t h, std::size_t w, std::vector<T>& scratch) {
    const std::size_t pw = w + 2, pplane = (h + 2) * pw;
    scratch.assign(w, T{0});
    for (std::size_t o = 0; o < n_out; ++o) {
        const T* go = g.data() + o * h * w;
        T* __restrict__ acc = scratch.data();
        std::fill(acc, acc + w, T{0});
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                acc[x] += go[y * w + x];
        db[o] += std::accumulate(acc, acc + w, T{0});

        for (std::size_t i = 0; i < n_in; ++i) {
            T* dst = dk.data() + (o * n_in + i) * 9;
            for (std::size_t t = 0; t < 9; ++t) {
                std::fill(acc, acc + w, T{0});
                const T* base = in_pad.data() + i * pplane + (t / 3) * pw + t % 3;
                for (std::size_t y = 0; y < h; ++y) {
                    const T* __restrict__ gr = go + y * w;
                    const T* __restrict__ r = base + y * pw;
                    for (std::size_t x = 0; x < w; ++x)
                        acc[x] += gr[x] * r[x];
                }
                dst[t] += std::accumulate(acc, acc + w, T{0});
            }
        }
    }
}

/// Kernel for the input gradient of a 3x3 layer: kt[i][o][ky][kx] = k[o][i][2 - ky][2 - kx].
template <class T>
std::vector<T> flip_transpose(std::span<const T> k, std::size_t n_out, std::size_t n_in) {
    std::vector<T> kt(k.size());
    for (std::size_t o = 0; o < n_out; ++o)
        for (std::size_t i = 0; i < n_in; ++i)
            for (std::size_t t = 0; t < 9; ++t)
                kt[(i * n_out + o) * 9 + t] = k[(o * n_in + i) * 9 + (8 - t)];
    return kt;
}

/// out[o][p] = bias[o] + sum_i k[o][i] * in[i][p].
template <class T>
void conv1x1(std::span<const T> k, std::span<const T> bias, std::size_t n_out, std::size_t n_in,
             std::span<const T> in, std::span<T> out, std::size_t plane) {
    for (std::size_t o = 0; o < n_out; ++o) {
        T* __restrict__ d = out.data() + o * plane;
        std::fill(d, d + plane, bias[o]);
        for (std::size_t i = 0; i < n_in; ++i) {
            const T kv = k[o * n_in + i];
            const T* __restrict__ s = in.data() + i * plane;
            for (std::size_t p = 0; p < plane; ++p)
                d[p] += kv * s[p];
        }
    }
}

} // namespace kernels

/// FNV-1a over the parameter bytes; lets `backward` detect a cache from other weights.
template <class T>
std::uint64_t fingerprint(const Params<T>& p) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::vector<T>& v) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto* l : {&p.conv1, &p.conv2, &p.conv3}) {
        mix(l->weight);
        mix(l->bias);
    }
    return h;
}

/// Activations kept by `forward` for `backward`.
template <class T>
struct ForwardCache {
    Extent extent{};
    std::vector<T> input_pad; // 3 padded planes
    std::vector<T> act1;      // post-ReLU
    std::vector<T> act1_pad;
    std::vector<T> act2;      // post-ReLU
    std::vector<T> output;    // post-sigmoid, clamped
    std::uint64_t params_fingerprint = 0;
};

template <class T>
std::vector<T> flatten_stack(const InputStack& stack) {
    const Extent e = stack[1].extent();
    for (const auto& p : stack)
        if (p.extent() != e)
            throw ShapeError("forward: input planes differ in extent");
    std::vector<T> out;
    out.reserve(3 * e.size());
    for (const auto& p : stack)
        for (float v : p.values())
            out.push_back(static_cast<T>(v));
    return out;
}

/// Forward pass on a flattened 3 x H x W input.
template <class T>
void forward(const Params<T>& params, std::span<const T> input, Extent extent, ForwardCache<T>& cache) {
    if (input.size() != in_channels * extent.size() || extent.size() == 0)
        throw ShapeError("forward: input must be 3 x H x W");
    const std::size_t h = extent.height, w = extent.width, plane = extent.size();
    cache.extent = extent;
    cache.params_fingerprint = fingerprint(params);
    cache.act1.resize(hidden * plane);
    cache.act2.resize(hidden * plane);
    cache.output.resize(plane);

    kernels::pad_planes<T>(input, in_channels, h, w, cache.input_pad);
    kernels::conv3x3<T>(params.conv1.weight, params.conv1.bias, hidden, in_channels, cache.input_pad, cache.act1, h, w);
    for (auto& v : cache.act1)
        v = std::max(v, T{0});
    kernels::pad_planes<T>(cache.act1, hidden, h, w, cache.act1_pad);
    kernels::conv3x3<T>(params.conv2.weight, params.conv2.bias, hidden, hidden, cache.act1_pad, cache.act2, h, w);
    for (auto& v : cache.act2)
        v = std::max(v, T{0});
    kernels::conv1x1<T>(params.conv3.weight, params.conv3.bias, 1, hidden, cache.act2, cache.output, plane);
    const T lo = static_cast<T>(output_margin), hi = static_cast<T>(1.0 - output_margin);
    for (auto& v : cache.output)
        v = std::clamp(static_cast<T>(1) / (static_cast<T>(1) + std::exp(-v)), lo, hi);
}

template <class T>
void forward(const Params<T>& params, const InputStack& stack, ForwardCache<T>& cache) {
    const auto flat = flatten_stack<T>(stack);
    forward<T>(params, flat, stack[1].extent(), cache);
}

inline PredMap forward(const ModelParams& params, const InputStack& stack) {
    ForwardCache<float> cache;
    forward(params, stack, cache);
    return PredMap(cache.extent, std::move(cache.output));
}

template <class T>
Params<T> zero_like() {
    Params<T> g;
    g.for_each_tensor([](const char*, std::vector<T>& v) { std::fill(v.begin(), v.end(), T{0}); });
    return g;
}

/// Scratch buffers reused across backward calls.
template <class T>
struct BackwardWorkspace {
    std::vector<T> d_out, d_act2, d_act2_pad, d_act1, scratch;
};

/// Accumulates dL/dparams into `grad` given dL/d(prediction) per pixel. The output clamp is
/// treated as the identity, so dL/dz = dL/dp * p(1 - p).
template <class T>
void backward(const Params<T>& params, const ForwardCache<T>& cache, std::span<const double> d_pred, Params<T>& grad,
              BackwardWorkspace<T>& ws) {
    const std::size_t h = cache.extent.height, w = cache.extent.width, plane = cache.extent.size();
    if (plane == 0 || cache.output.size() != plane || cache.act2.size() != hidden * plane)
        throw ShapeError("backward: cache does not hold a forward pass");
    if (cache.params_fingerprint != fingerprint(params))
        throw ValueError("backward: stale cache (parameters changed since forward)");
    if (d_pred.size() != plane)
        throw ShapeError("backward: upstream gradient has " + std::to_string(d_pred.size()) + " pixels, expected " +
                         std::to_string(plane));

    ws.d_out.resize(plane);
    for (std::size_t k = 0; k < plane; ++k) {
        const double p = static_cast<double>(cache.output[k]);
        ws.d_out[k] = static_cast<T>(d_pred[k] * p * (1.0 - p));
    }

    // 1x1 output layer
    for (std::size_t i = 0; i < hidden; ++i) {
        const T* a = cache.act2.data() + i * plane;
        T dw{0};
        for (std::size_t k = 0; k < plane; ++k)
            dw += ws.d_out[k] * a[k];
        grad.conv3.weight[i] += dw;
    }
    grad.conv3.bias[0] += std::accumulate(ws.d_out.begin(), ws.d_out.end(), T{0});
    ws.d_act2.resize(hidden * plane);
    for (std::size_t i = 0; i < hidden; ++i) {
        const T kv = params.conv3.weight[i];
        for (std::size_t k = 0; k < plane; ++k)
            ws.d_act2[i * plane + k] = cache.act2[i * plane + k] > T{0} ? kv * ws.d_out[k] : T{0};
    }

    kernels::conv3x3_weight_grad<T>(ws.d_act2, cache.act1_pad, hidden, hidden, grad.conv2.weight, grad.conv2.bias, h, w,
                                    ws.scratch);
    kernels::pad_planes<T>(ws.d_act2, hidden, h, w, ws.d_act2_pad);
    const auto kt = kernels::flip_transpose<T>(params.conv2.weight, hidden, hidden);
    ws.d_act1.resize(hidden * plane);
    kernels::conv3x3<T>(kt, {}, hidden, hidden, ws.d_act2_pad, ws.d_act1, h, w);
    for (std::size_t k = 0; k < ws.d_act1.size(); ++k)
        if (cache.act1[k] <= T{0})
            ws.d_act1[k] = T{0};

    kernels::conv3x3_weight_grad<T>(ws.d_act1, cache.input_pad, hidden, in_channels, grad.conv1.weight,
                                    grad.conv1.bias, h, w, ws.scratch);
}

template <class T>
Params<T> backward(const Params<T>& params, const ForwardCache<T>& cache, std::span<const double> d_pred) {
    Params<T> grad = zero_like<T>();
    BackwardWorkspace<T> ws;
    backward(params, cache, d_pred, grad, ws);
    return grad;
}

inline std::vector<PredMap> predict_volume(const ModelParams& params, const Volume& volume) {
    volume.validate();
    std::vector<PredMap> out;
    out.reserve(volume.depth());
    ForwardCache<float> cache;
    for (std::size_t z = 0; z < volume.depth(); ++z) {
        forward(params, stack_25d(volume, z), cache);
        out.emplace_back(cache.extent, cache.output);
    }
    return out;
}

} // namespace noisyseg::segmodel
