#pragma once

// Temporal convolution block: L x (dilated conv -> batch norm -> ReLU), a
// residual connection around the stack, and stride-2 temporal max pooling
// used between blocks. Every layer has an explicit forward that fills a
// cache and a backward that consumes it; parameter gradients accumulate.

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsmt/tensor.hpp"

namespace wsmt {

enum class Mode { train, eval };

class MissingCacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Dilated 1-D convolution
// ---------------------------------------------------------------------------

// Centered kernel of odd width k. Tap j (0..k-1) corresponds to offset
// i = j - (k-1)/2 and reads x[t - d*i]; samples outside [0, T) are zero.
template <typename Scalar>
struct Conv1dParams {
    BasicParam<Scalar> weight;  // [out, in, k]
    BasicParam<Scalar> bias;    // [out]
    std::size_t dilation = 1;

    std::size_t out_channels() const { return weight.value.dim(0); }
    std::size_t in_channels() const { return weight.value.dim(1); }
    std::size_t kernel_size() const { return weight.value.dim(2); }

    template <typename Other>
    Conv1dParams<Other> cast() const {
        return {weight.template cast<Other>(), bias.template cast<Other>(), dilation};
    }
};

inline void validate_conv_geometry(std::size_t kernel, std::size_t dilation) {
    if (kernel == 0 || kernel % 2 == 0) {
        throw std::invalid_argument("conv kernel width must be odd, got " + std::to_string(kernel));
    }
    if (dilation < 1) throw std::invalid_argument("conv dilation must be >= 1");
}

template <typename Scalar>
Conv1dParams<Scalar> make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                               std::size_t dilation) {
    validate_conv_geometry(kernel, dilation);
    if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("conv channel counts must be positive");
    return {BasicParam<Scalar>(BasicTensor<Scalar>({out_channels, in_channels, kernel})),
            BasicParam<Scalar>(BasicTensor<Scalar>({out_channels})), dilation};
}

template <typename Scalar>
struct ConvCache {
    BasicTensor<Scalar> input;
    bool filled = false;
};

template <typename Scalar>
struct ConvGrads {
    BasicTensor<Scalar> input;
    BasicTensor<Scalar> weight;
    BasicTensor<Scalar> bias;
};

template <typename Scalar>
BasicTensor<Scalar> dilated_conv_forward(const BasicTensor<Scalar>& x, const Conv1dParams<Scalar>& p,
                                         ConvCache<Scalar>* cache = nullptr) {
    validate_conv_geometry(p.kernel_size(), p.dilation);
    if (x.rank() != 3) throw ShapeError("conv input must be [batch, channels, time]");
    if (x.dim(1) != p.in_channels()) {
        throw ShapeError("conv expects " + std::to_string(p.in_channels()) + " input channels, got " +
                         std::to_string(x.dim(1)));
    }
    const std::size_t batch = x.dim(0), in_ch = x.dim(1), len = x.dim(2);
    if (len < 1) throw ShapeError("conv input has empty time axis");
    const std::size_t out_ch = p.out_channels(), k = p.kernel_size();
    const long half = long(k - 1) / 2;
    const long d = long(p.dilation);
    const long T = long(len);

    BasicTensor<Scalar> y({batch, out_ch, len});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_ch; ++o) {
            Scalar* yr = y.data() + (b * out_ch + o) * len;
            std::fill(yr, yr + len, p.bias.value[o]);
            for (std::size_t c = 0; c < in_ch; ++c) {
                const Scalar* xr = x.data() + (b * in_ch + c) * len;
                const Scalar* wr = p.weight.value.data() + (o * in_ch + c) * k;
                for (std::size_t j = 0; j < k; ++j) {
                    const Scalar w = wr[j];
                    if (w == Scalar(0)) continue;
                    const long shift = d * (half - long(j));  // y[t] += w * x[t + shift]
                    const long t0 = std::max(0L, -shift);
                    const long t1 = std::min(T, T - shift);
                    for (long t = t0; t < t1; ++t) yr[t] += w * xr[t + shift];
                }
            }
        }
    }
    if (cache) {
        cache->input = x;
        cache->filled = true;
    }
    return y;
}

template <typename Scalar>
ConvGrads<Scalar> dilated_conv_backward(const ConvCache<Scalar>& cache, const Conv1dParams<Scalar>& p,
                                        const BasicTensor<Scalar>& grad_out) {
    if (!cache.filled) throw MissingCacheError("dilated_conv_backward called without a forward cache");
    const auto& x = cache.input;
    const std::size_t batch = x.dim(0), in_ch = x.dim(1), len = x.dim(2);
    const std::size_t out_ch = p.out_channels(), k = p.kernel_size();
    if (grad_out.shape() != Shape{batch, out_ch, len}) {
        throw ShapeError("conv backward: grad_out " + shape_string(grad_out.shape()));
    }
    const long half = long(k - 1) / 2;
    const long d = long(p.dilation);
    const long T = long(len);

    ConvGrads<Scalar> g{BasicTensor<Scalar>(x.shape()), BasicTensor<Scalar>(p.weight.value.shape()),
                        BasicTensor<Scalar>(p.bias.value.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < out_ch; ++o) {
            const Scalar* gr = grad_out.data() + (b * out_ch + o) * len;
            Scalar bsum = 0;
            for (std::size_t t = 0; t < len; ++t) bsum += gr[t];
            g.bias[o] += bsum;
            for (std::size_t c = 0; c < in_ch; ++c) {
                const Scalar* xr = x.data() + (b * in_ch + c) * len;
                Scalar* gxr = g.input.data() + (b * in_ch + c) * len;
                const Scalar* wr = p.weight.value.data() + (o * in_ch + c) * k;
                Scalar* gwr = g.weight.data() + (o * in_ch + c) * k;
                for (std::size_t j = 0; j < k; ++j) {
                    const long shift = d * (half - long(j));
                    const long t0 = std::max(0L, -shift);
                    const long t1 = std::min(T, T - shift);
                    const Scalar w = wr[j];
                    Scalar acc = 0;
                    for (long t = t0; t < t1; ++t) {
                        acc += gr[t] * xr[t + shift];
                        gxr[t + shift] += w * gr[t];
                    }
                    gwr[j] += acc;
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time) per channel
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNormState {
    BasicParam<Scalar> gamma;
    BasicParam<Scalar> beta;
    BasicTensor<Scalar> running_mean;
    BasicTensor<Scalar> running_var;
    Scalar momentum = Scalar(0.9);
    Scalar eps = Scalar(1e-5);

    std::size_t channels() const { return gamma.value.size(); }

    template <typename Other>
    BatchNormState<Other> cast() const {
        return {gamma.template cast<Other>(), beta.template cast<Other>(), running_mean.template cast<Other>(),
                running_var.template cast<Other>(), Other(momentum), Other(eps)};
    }
};

template <typename Scalar>
BatchNormState<Scalar> make_batchnorm(std::size_t channels) {
    return {BasicParam<Scalar>(BasicTensor<Scalar>({channels}, Scalar(1))),
            BasicParam<Scalar>(BasicTensor<Scalar>({channels}, Scalar(0))),
            BasicTensor<Scalar>({channels}, Scalar(0)), BasicTensor<Scalar>({channels}, Scalar(1))};
}

template <typename Scalar>
struct BatchNormCache {
    BasicTensor<Scalar> normalized;  // x_hat
    std::vector<Scalar> inv_std;
    Mode mode = Mode::eval;
    bool filled = false;
};

template <typename Scalar>
BasicTensor<Scalar> batchnorm_forward(const BasicTensor<Scalar>& x, BatchNormState<Scalar>& s, Mode mode,
                                      BatchNormCache<Scalar>* cache = nullptr) {
    if (x.rank() != 3) throw ShapeError("batchnorm input must be [batch, channels, time]");
    if (x.empty()) throw ShapeError("batchnorm on empty input");
    const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
    if (ch != s.channels()) throw ShapeError("batchnorm channel mismatch");
    const double count = double(batch * len);

    std::vector<Scalar> mean(ch), inv_std(ch);
    for (std::size_t c = 0; c < ch; ++c) {
        if (mode == Mode::train) {
            double sum = 0;
            for (std::size_t b = 0; b < batch; ++b)
                for (Scalar v : x.series(b, c)) sum += v;
            const double mu = sum / count;
            double sq = 0;
            for (std::size_t b = 0; b < batch; ++b)
                for (Scalar v : x.series(b, c)) sq += (v - mu) * (v - mu);
            const double var = sq / count;
            mean[c] = Scalar(mu);
            inv_std[c] = Scalar(1.0 / std::sqrt(var + double(s.eps)));
            s.running_mean[c] = s.momentum * s.running_mean[c] + (Scalar(1) - s.momentum) * Scalar(mu);
            s.running_var[c] = s.momentum * s.running_var[c] + (Scalar(1) - s.momentum) * Scalar(var);
        } else {
            mean[c] = s.running_mean[c];
            inv_std[c] = Scalar(1.0 / std::sqrt(double(s.running_var[c]) + double(s.eps)));
        }
    }

    BasicTensor<Scalar> xhat(x.shape());
    BasicTensor<Scalar> y(x.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            auto xs = x.series(b, c);
            auto hs = xhat.series(b, c);
            auto ys = y.series(b, c);
            const Scalar g = s.gamma.value[c], sh = s.beta.value[c];
            for (std::size_t t = 0; t < len; ++t) {
                hs[t] = (xs[t] - mean[c]) * inv_std[c];
                ys[t] = g * hs[t] + sh;
            }
        }
    }
    if (cache) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
        cache->filled = true;
    }
    return y;
}

// Returns dx; accumulates dgamma and dbeta into the state's parameters.
template <typename Scalar>
BasicTensor<Scalar> batchnorm_backward(const BatchNormCache<Scalar>& cache, BatchNormState<Scalar>& s,
                                       const BasicTensor<Scalar>& grad_out) {
    if (!cache.filled) throw MissingCacheError("batchnorm_backward called without a forward cache");
    const auto& xhat = cache.normalized;
    if (grad_out.shape() != xhat.shape()) throw ShapeError("batchnorm backward: grad_out shape mismatch");
    const std::size_t batch = xhat.dim(0), ch = xhat.dim(1), len = xhat.dim(2);
    const double count = double(batch * len);

    BasicTensor<Scalar> gx(xhat.shape());
    for (std::size_t c = 0; c < ch; ++c) {
        double sum_g = 0, sum_gx = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            auto gs = grad_out.series(b, c);
            auto hs = xhat.series(b, c);
            for (std::size_t t = 0; t < len; ++t) {
                sum_g += gs[t];
                sum_gx += gs[t] * hs[t];
            }
        }
        s.beta.grad[c] += Scalar(sum_g);
        s.gamma.grad[c] += Scalar(sum_gx);

        const Scalar gamma = s.gamma.value[c];
        const Scalar istd = cache.inv_std[c];
        for (std::size_t b = 0; b < batch; ++b) {
            auto gs = grad_out.series(b, c);
            auto hs = xhat.series(b, c);
            auto out = gx.series(b, c);
            if (cache.mode == Mode::train) {
                // dx = gamma * istd / N * (N g - sum(g) - xhat * sum(g xhat))
                const Scalar mean_g = Scalar(sum_g / count);
                const Scalar mean_gx = Scalar(sum_gx / count);
                for (std::size_t t = 0; t < len; ++t) out[t] = gamma * istd * (gs[t] - mean_g - hs[t] * mean_gx);
            } else {
                for (std::size_t t = 0; t < len; ++t) out[t] = gamma * istd * gs[t];
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> relu_forward(const BasicTensor<Scalar>& x) {
    BasicTensor<Scalar> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Scalar(0) ? x[i] : Scalar(0);
    return y;
}

// Gradient passes where the forward output was positive.
template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& output, const BasicTensor<Scalar>& grad_out) {
    if (output.shape() != grad_out.shape()) throw ShapeError("relu backward: shape mismatch");
    BasicTensor<Scalar> gx(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) gx[i] = output[i] > Scalar(0) ? grad_out[i] : Scalar(0);
    return gx;
}

// ---------------------------------------------------------------------------
// Residual combine: o = h + p, or h + conv1x1(p) when channel counts differ
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> residual_combine(const BasicTensor<Scalar>& h_last, const BasicTensor<Scalar>& block_input,
                                     const Conv1dParams<Scalar>* projection,
                                     ConvCache<Scalar>* projection_cache = nullptr) {
    if (h_last.rank() != 3 || block_input.rank() != 3) throw ShapeError("residual expects rank-3 tensors");
    if (h_last.dim(2) != block_input.dim(2)) {
        throw ShapeError("residual time-length mismatch: " + shape_string(h_last.shape()) + " vs " +
                         shape_string(block_input.shape()));
    }
    if (projection) {
        if (projection->kernel_size() != 1) throw ShapeError("residual projection must be a 1x1 convolution");
        return elementwise(ElementwiseOp::add, h_last,
                           dilated_conv_forward(block_input, *projection, projection_cache));
    }
    if (h_last.shape() != block_input.shape()) {
        throw ShapeError("identity residual needs equal shapes; a 1x1 projection is required");
    }
    return elementwise(ElementwiseOp::add, h_last, block_input);
}

// ---------------------------------------------------------------------------
// Temporal max pooling, width 2 stride 2; an odd trailing sample is dropped
// ---------------------------------------------------------------------------

struct PoolCache {
    Shape input_shape;
    std::vector<std::size_t> argmax;  // flat input index per output element
    bool filled = false;
};

template <typename Scalar>
BasicTensor<Scalar> temporal_max_pool(const BasicTensor<Scalar>& x, PoolCache* cache = nullptr) {
    if (x.rank() != 3) throw ShapeError("max pool input must be [batch, channels, time]");
    const std::size_t len = x.dim(2);
    if (len < 2) throw ShapeError("max pool needs at least 2 time steps, got " + std::to_string(len));
    const std::size_t rows = x.dim(0) * x.dim(1), out_len = len / 2;
    BasicTensor<Scalar> y({x.dim(0), x.dim(1), out_len});
    if (cache) {
        cache->input_shape = x.shape();
        cache->argmax.assign(y.size(), 0);
        cache->filled = true;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < out_len; ++t) {
            const std::size_t i0 = r * len + 2 * t;
            const std::size_t pick = x[i0 + 1] > x[i0] ? i0 + 1 : i0;
            y[r * out_len + t] = x[pick];
            if (cache) cache->argmax[r * out_len + t] = pick;
        }
    }
    return y;
}

template <typename Scalar>
BasicTensor<Scalar> temporal_max_pool_backward(const PoolCache& cache, const BasicTensor<Scalar>& grad_out) {
    if (!cache.filled) throw MissingCacheError("max pool backward called without a forward cache");
    if (grad_out.size() != cache.argmax.size()) throw ShapeError("max pool backward: grad_out size mismatch");
    BasicTensor<Scalar> gx(cache.input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) gx[cache.argmax[i]] += grad_out[i];
    return gx;
}

// ---------------------------------------------------------------------------
// TCN block
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TcnLayer {
    Conv1dParams<Scalar> conv;
    BatchNormState<Scalar> norm;

    template <typename Other>
    TcnLayer<Other> cast() const {
        return {conv.template cast<Other>(), norm.template cast<Other>()};
    }
};

template <typename Scalar>
struct TcnBlockParams {
    std::vector<TcnLayer<Scalar>> layers;
    std::optional<Conv1dParams<Scalar>> residual_projection;

    std::size_t in_channels() const { return layers.front().conv.in_channels(); }
    std::size_t out_channels() const { return layers.back().conv.out_channels(); }

    template <typename Other>
    TcnBlockParams<Other> cast() const {
        TcnBlockParams<Other> out;
        for (const auto& l : layers) out.layers.push_back(l.template cast<Other>());
        if (residual_projection) out.residual_projection = residual_projection->template cast<Other>();
        return out;
    }
};

// One layer per entry of `dilations`; a 1x1 projection is added iff in != out.
template <typename Scalar>
TcnBlockParams<Scalar> make_tcn_block(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                                      const std::vector<std::size_t>& dilations) {
    if (dilations.empty()) throw std::invalid_argument("a TCN block needs at least one conv layer");
    TcnBlockParams<Scalar> block;
    std::size_t ch = in_channels;
    for (std::size_t d : dilations) {
        block.layers.push_back({make_conv<Scalar>(ch, out_channels, kernel, d), make_batchnorm<Scalar>(out_channels)});
        ch = out_channels;
    }
    if (in_channels != out_channels) block.residual_projection = make_conv<Scalar>(in_channels, out_channels, 1, 1);
    return block;
}

template <typename Scalar>
struct TcnLayerCache {
    ConvCache<Scalar> conv;
    BatchNormCache<Scalar> norm;
    BasicTensor<Scalar> activated;
};

template <typename Scalar>
struct TcnBlockCache {
    std::vector<TcnLayerCache<Scalar>> layers;
    ConvCache<Scalar> projection;
    bool filled = false;
};

template <typename Scalar>
BasicTensor<Scalar> tcn_block_forward(const BasicTensor<Scalar>& x, TcnBlockParams<Scalar>& params, Mode mode,
                                      TcnBlockCache<Scalar>* cache = nullptr) {
    if (x.rank() != 3 || x.dim(1) != params.in_channels()) {
        throw ShapeError("TCN block expects " + std::to_string(params.in_channels()) + " input channels, got " +
                         shape_string(x.shape()));
    }
    if (cache) {
        cache->layers.assign(params.layers.size(), {});
        cache->filled = true;
    }
    BasicTensor<Scalar> h = x;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        TcnLayerCache<Scalar>* lc = cache ? &cache->layers[l] : nullptr;
        auto conv_out = dilated_conv_forward(h, layer.conv, lc ? &lc->conv : nullptr);
        auto normed = batchnorm_forward(conv_out, layer.norm, mode, lc ? &lc->norm : nullptr);
        h = relu_forward(normed);
        if (lc) lc->activated = h;
    }
    const Conv1dParams<Scalar>* proj = params.residual_projection ? &*params.residual_projection : nullptr;
    return residual_combine(h, x, proj, cache ? &cache->projection : nullptr);
}

template <typename Scalar>
BasicTensor<Scalar> tcn_block_backward(const TcnBlockCache<Scalar>& cache, TcnBlockParams<Scalar>& params,
                                       const BasicTensor<Scalar>& grad_out) {
    if (!cache.filled) throw MissingCacheError("tcn_block_backward called without a forward cache");

    BasicTensor<Scalar> grad_input;
    if (params.residual_projection) {
        auto pg = dilated_conv_backward(cache.projection, *params.residual_projection, grad_out);
        params.residual_projection->weight.accumulate(pg.weight);
        params.residual_projection->bias.accumulate(pg.bias);
        grad_input = std::move(pg.input);
    } else {
        grad_input = grad_out;
    }

    BasicTensor<Scalar> g = grad_out;
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        auto& layer = params.layers[l];
        const auto& lc = cache.layers[l];
        g = relu_backward(lc.activated, g);
        g = batchnorm_backward(lc.norm, layer.norm, g);
        auto cg = dilated_conv_backward(lc.conv, layer.conv, g);
        layer.conv.weight.accumulate(cg.weight);
        layer.conv.bias.accumulate(cg.bias);
        g = std::move(cg.input);
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad_input[i] += g[i];
    return grad_input;
}

// Samples influencing one output of a conv stack with these dilations.
inline std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations) {
    std::size_t span = 1;
    for (std::size_t d : dilations) span += (kernel - 1) * d;
    return span;
}

}  // namespace wsmt
