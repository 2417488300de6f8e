// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "scpainter/errors.hpp"

namespace scpainter {

namespace {

constexpr std::uint64_t kEncoderSeed = 0xe2c0de5eedULL;
constexpr std::size_t kKernel = 3;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

// Tensor order inside DenoiserParams.
enum ParamIndex : std::size_t {
    kConv1W, kConv1B, kTime1W, kEmbed1W, kConv2W, kConv2B, kTime2W, kConv3W, kConv3B, kParamCount
};

using EncoderMatrix = Eigen::Matrix<double, static_cast<int>(kLatentChannels), static_cast<int>(kBlockInputs)>;

void require_latent_aligned(const Tensor4& x, const char* what) {
    if (x.height() % kLatentStride != 0 || x.width() % kLatentStride != 0 || x.height() == 0 || x.width() == 0) {
        throw DimensionMismatch(std::string(what) + ": " + x.shape().str() + " is not divisible by 8");
    }
}

/// 3x3 zero-padded convolution accumulated into `out` (channels_out x h x w).
void conv3x3_accumulate(const double* weights, const double* in, std::size_t channels_in, std::size_t channels_out,
                        std::size_t h, std::size_t w, double* out) {
    for (std::size_t o = 0; o < channels_out; ++o) {
        for (std::size_t i = 0; i < channels_in; ++i) {
            const double* k = weights + (o * channels_in + i) * kKernel * kKernel;
            const double* src = in + i * h * w;
            double* dst = out + o * h * w;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (std::size_t ky = 0; ky < kKernel; ++ky) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < kKernel; ++kx) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) {
                                continue;
                            }
                            acc += k[ky * kKernel + kx] * src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
                        }
                    }
                    dst[y * w + x] += acc;
                }
            }
        }
    }
}

/// Gradients of a 3x3 conv: accumulates dW from (grad_out, in) and, when
/// grad_in is non-null, the input gradient.
void conv3x3_backward(const double* weights, const double* in, const double* grad_out, std::size_t channels_in,
                      std::size_t channels_out, std::size_t h, std::size_t w, double* grad_weights, double* grad_in) {
    for (std::size_t o = 0; o < channels_out; ++o) {
        const double* g = grad_out + o * h * w;
        for (std::size_t i = 0; i < channels_in; ++i) {
            const double* k = weights + (o * channels_in + i) * kKernel * kKernel;
            double* gk = grad_weights + (o * channels_in + i) * kKernel * kKernel;
            const double* src = in + i * h * w;
            double* gsrc = grad_in != nullptr ? grad_in + i * h * w : nullptr;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double gv = g[y * w + x];
                    for (std::size_t ky = 0; ky < kKernel; ++ky) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < kKernel; ++kx) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) {
                                continue;
                            }
                            const std::size_t s = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
                            gk[ky * kKernel + kx] += gv * src[s];
                            if (gsrc != nullptr) {
                                gsrc[s] += gv * k[ky * kKernel + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-frame activations kept for the backward pass.
struct FrameActivations {
    std::vector<double> h1; // kHidden1 x h x w, post-tanh
    std::vector<double> h2; // kHidden2 x h x w, post-tanh
    std::vector<double> out;
};

void check_denoiser_input(const Tensor4& x_in, std::span<const double> embed) {
    if (x_in.channels() != kDenoiserInputChannels) {
        throw DimensionMismatch("denoiser input needs " + std::to_string(kDenoiserInputChannels) +
                                " channels, got " + x_in.shape().str());
    }
    if (embed.size() != kEmbedDim) {
        throw DimensionMismatch("denoiser embedding must have " + std::to_string(kEmbedDim) + " entries");
    }
}

FrameActivations forward_frame(const DenoiserParams& params, const double* x, std::size_t h, std::size_t w,
                               const std::array<double, kTimeFeatures>& phi, std::span<const double> embed) {
    const auto& t = params.tensors();
    const std::size_t hw = h * w;
    FrameActivations act;

    act.h1.assign(kHidden1 * hw, 0.0);
    for (std::size_t o = 0; o < kHidden1; ++o) {
        double shift = t[kConv1B].values[o];
        for (std::size_t k = 0; k < kTimeFeatures; ++k) {
            shift += t[kTime1W].values[o * kTimeFeatures + k] * phi[k];
        }
        const double* we = t[kEmbed1W].values.data() + o * kEmbedDim;
        for (std::size_t e = 0; e < kEmbedDim; ++e) {
            shift += we[e] * embed[e];
        }
        std::fill_n(act.h1.begin() + static_cast<std::ptrdiff_t>(o * hw), hw, shift);
    }
    conv3x3_accumulate(t[kConv1W].values.data(), x, kDenoiserInputChannels, kHidden1, h, w, act.h1.data());
    for (double& v : act.h1) {
        v = std::tanh(v);
    }

    act.h2.assign(kHidden2 * hw, 0.0);
    for (std::size_t o = 0; o < kHidden2; ++o) {
        double shift = t[kConv2B].values[o];
        for (std::size_t k = 0; k < kTimeFeatures; ++k) {
            shift += t[kTime2W].values[o * kTimeFeatures + k] * phi[k];
        }
        std::fill_n(act.h2.begin() + static_cast<std::ptrdiff_t>(o * hw), hw, shift);
    }
    conv3x3_accumulate(t[kConv2W].values.data(), act.h1.data(), kHidden1, kHidden2, h, w, act.h2.data());
    for (double& v : act.h2) {
        v = std::tanh(v);
    }

    act.out.assign(kLatentChannels * hw, 0.0);
    for (std::size_t c = 0; c < kLatentChannels; ++c) {
        double* dst = act.out.data() + c * hw;
        std::fill_n(dst, hw, t[kConv3B].values[c]);
        for (std::size_t j = 0; j < kHidden2; ++j) {
            const double wcj = t[kConv3W].values[c * kHidden2 + j];
            const double* src = act.h2.data() + j * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                dst[p] += wcj * src[p];
            }
        }
    }
    return act;
}

void fill_normal(std::vector<double>& values, double stddev, Rng& rng) {
    for (double& v : values) {
        v = stddev * rng.normal();
    }
}

} // namespace

// ---- schedule ----------------------------------------------------------------

double NoiseSchedule::alpha(double tau) {
    if (tau <= 0.0) {
        return 1.0;
    }
    if (tau >= 1.0) {
        return 0.0;
    }
    return std::cos(0.5 * std::numbers::pi * tau);
}

double NoiseSchedule::sigma(double tau) {
    if (tau <= 0.0) {
        return 0.0;
    }
    if (tau >= 1.0) {
        return 1.0;
    }
    return std::sin(0.5 * std::numbers::pi * tau);
}

Tensor4 add_noise(const Tensor4& x0, double tau, const Tensor4& eps) {
    require_same_shape(x0, eps, "add_noise");
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ConfigError("add_noise: tau must lie in [0, 1]");
    }
    const double a = NoiseSchedule::alpha(tau);
    const double s = NoiseSchedule::sigma(tau);
    Tensor4 out(x0.shape());
    for (std::size_t i = 0; i < out.values().size(); ++i) {
        out.values()[i] = a * x0.values()[i] + s * eps.values()[i];
    }
    return out;
}

double diffusion_loss(const Tensor4& pred, const Tensor4& target) {
    require_same_shape(pred, target, "diffusion_loss");
    if (pred.values().empty()) {
        throw DimensionMismatch("diffusion_loss: empty tensors");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.values().size(); ++i) {
        const double d = pred.values()[i] - target.values()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.values().size());
}

DropDecision drop_condition(DiffusionCondition& condition, double p, Rng& rng, DropoutMode mode) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("drop_condition: probability must lie in [0, 1]");
    }
    const double u_latent = rng.uniform();
    const double u_embed = rng.uniform();
    DropDecision decision;
    decision.latent_dropped = u_latent < p;
    decision.embed_dropped = mode == DropoutMode::joint ? decision.latent_dropped : u_embed < p;
    if (decision.latent_dropped) {
        std::ranges::fill(condition.latent.values(), 0.0);
    }
    if (decision.embed_dropped) {
        std::ranges::fill(condition.embed, 0.0);
    }
    return decision;
}

// ---- stand-in autoencoder ----------------------------------------------------

const EncoderMatrix& encoder_matrix() {
    static const EncoderMatrix matrix = [] {
        EncoderMatrix m = EncoderMatrix::Zero();
        constexpr double kMean = 1.0 / 8.0; // 64 entries of 1/8 have unit norm
        for (std::size_t c = 0; c < kEncoderInputChannels; ++c) {
            for (std::size_t p = 0; p < kBlockPixels; ++p) {
                m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c * kBlockPixels + p)) = kMean;
            }
        }
        Rng rng(kEncoderSeed);
        constexpr Eigen::Index kRgbInputs = 3 * kBlockPixels;
        for (Eigen::Index r = 4; r < m.rows(); ++r) {
            Eigen::VectorXd v(kRgbInputs);
            for (Eigen::Index i = 0; i < kRgbInputs; ++i) {
                v[i] = rng.normal();
            }
            // Two Gram-Schmidt passes against the previous RGB rows.
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index q = 0; q < r; ++q) {
                    if (q == 3) {
                        continue;
                    }
                    const auto prev = m.row(q).head(kRgbInputs).transpose();
                    v -= prev.dot(v) * prev;
                }
            }
            m.row(r).head(kRgbInputs) = v.normalized().transpose();
        }
        return m;
    }();
    return matrix;
}

Tensor4 encode(const Tensor4& x) {
    if (x.channels() != kEncoderInputChannels) {
        throw DimensionMismatch("encode: expected T x 4 x H x W, got " + x.shape().str());
    }
    require_latent_aligned(x, "encode");
    const EncoderMatrix& m = encoder_matrix();
    const std::size_t s = kLatentStride;
    Tensor4 z({x.frames(), kLatentChannels, x.height() / s, x.width() / s});
    Eigen::Matrix<double, static_cast<int>(kBlockInputs), 1> block;
    for (std::size_t t = 0; t < x.frames(); ++t) {
        for (std::size_t by = 0; by < z.height(); ++by) {
            for (std::size_t bx = 0; bx < z.width(); ++bx) {
                for (std::size_t c = 0; c < kEncoderInputChannels; ++c) {
                    for (std::size_t py = 0; py < s; ++py) {
                        for (std::size_t px = 0; px < s; ++px) {
                            block[static_cast<Eigen::Index>(c * kBlockPixels + py * s + px)] =
                                x(t, c, by * s + py, bx * s + px);
                        }
                    }
                }
                const auto latent = (m * block).eval();
                for (std::size_t c = 0; c < kLatentChannels; ++c) {
                    z(t, c, by, bx) = latent[static_cast<Eigen::Index>(c)];
                }
            }
        }
    }
    return z;
}

Tensor4 decode(const Tensor4& z) {
    if (z.channels() != kLatentChannels) {
        throw DimensionMismatch("decode: expected T x 8 x h x w, got " + z.shape().str());
    }
    const EncoderMatrix& m = encoder_matrix();
    const std::size_t s = kLatentStride;
    Tensor4 x({z.frames(), 3, z.height() * s, z.width() * s});
    Eigen::Matrix<double, static_cast<int>(kLatentChannels), 1> latent;
    for (std::size_t t = 0; t < z.frames(); ++t) {
        for (std::size_t by = 0; by < z.height(); ++by) {
            for (std::size_t bx = 0; bx < z.width(); ++bx) {
                for (std::size_t c = 0; c < kLatentChannels; ++c) {
                    latent[static_cast<Eigen::Index>(c)] = z(t, c, by, bx);
                }
                // Rows are orthonormal, so the transpose is the pseudo-inverse.
                const auto block = (m.transpose() * latent).eval();
                for (std::size_t c = 0; c < 3; ++c) {
                    for (std::size_t py = 0; py < s; ++py) {
                        for (std::size_t px = 0; px < s; ++px) {
                            x(t, c, by * s + py, bx * s + px) =
                                block[static_cast<Eigen::Index>(c * kBlockPixels + py * s + px)];
                        }
                    }
                }
            }
        }
    }
    return x;
}

Tensor4 encode_rgb(const Tensor4& rgb) {
    if (rgb.channels() != 3) {
        throw DimensionMismatch("encode_rgb: expected 3 channels, got " + rgb.shape().str());
    }
    return encode(concat_channels(rgb, Tensor4({rgb.frames(), 1, rgb.height(), rgb.width()})));
}

// ---- denoiser ----------------------------------------------------------------

DenoiserParams DenoiserParams::zeros() {
    DenoiserParams p;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            n *= d;
        }
        p.tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
    };
    add("conv1.weight", {kHidden1, kDenoiserInputChannels, kKernel, kKernel});
    add("conv1.bias", {kHidden1});
    add("time1.weight", {kHidden1, kTimeFeatures});
    add("embed1.weight", {kHidden1, kEmbedDim});
    add("conv2.weight", {kHidden2, kHidden1, kKernel, kKernel});
    add("conv2.bias", {kHidden2});
    add("time2.weight", {kHidden2, kTimeFeatures});
    add("conv3.weight", {kLatentChannels, kHidden2});
    add("conv3.bias", {kLatentChannels});
    return p;
}

DenoiserParams DenoiserParams::initialize(std::uint64_t seed) {
    DenoiserParams p = zeros();
    Rng rng(seed);
    auto& t = p.tensors_;
    fill_normal(t[kConv1W].values, 1.0 / std::sqrt(static_cast<double>(kDenoiserInputChannels * 9)), rng);
    fill_normal(t[kTime1W].values, 0.5, rng);
    fill_normal(t[kEmbed1W].values, 0.5, rng);
    fill_normal(t[kConv2W].values, 1.0 / std::sqrt(static_cast<double>(kHidden1 * 9)), rng);
    fill_normal(t[kTime2W].values, 0.5, rng);
    fill_normal(t[kConv3W].values, 1.0 / std::sqrt(static_cast<double>(kHidden2)), rng);
    return p;
}

ParamTensor& DenoiserParams::get(const std::string& name) {
    for (ParamTensor& t : tensors_) {
        if (t.name == name) {
            return t;
        }
    }
    throw ConfigError("unknown denoiser parameter '" + name + "'");
}

const ParamTensor& DenoiserParams::get(const std::string& name) const {
    return const_cast<DenoiserParams*>(this)->get(name);
}

std::size_t DenoiserParams::parameter_count() const {
    std::size_t n = 0;
    for (const ParamTensor& t : tensors_) {
        n += t.values.size();
    }
    return n;
}

std::uint64_t DenoiserParams::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const ParamTensor& t : tensors_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.values.data());
        for (std::size_t i = 0; i < t.values.size() * sizeof(double); ++i) {
            h = (h ^ bytes[i]) * 0x100000001b3ULL;
        }
    }
    return h;
}

std::array<double, kTimeFeatures> time_features(double tau) {
    const double half = 0.5 * std::numbers::pi * tau;
    return {std::cos(half), std::sin(half), std::cos(2.0 * half), std::sin(2.0 * half)};
}

Tensor4 denoiser_forward(const DenoiserParams& params, const Tensor4& x_in, double tau,
                         std::span<const double> embed) {
    check_denoiser_input(x_in, embed);
    const std::size_t h = x_in.height();
    const std::size_t w = x_in.width();
    const auto phi = time_features(tau);
    Tensor4 out({x_in.frames(), kLatentChannels, h, w});
    for (std::size_t t = 0; t < x_in.frames(); ++t) {
        const FrameActivations act = forward_frame(params, x_in.plane(t, 0).data(), h, w, phi, embed);
        std::ranges::copy(act.out, out.plane(t, 0).begin());
    }
    return out;
}

LossAndGradient denoiser_backward(const DenoiserParams& params, std::span<const DenoiserSample> batch) {
    if (batch.empty()) {
        throw ConfigError("denoiser_backward: empty batch");
    }
    LossAndGradient result{0.0, DenoiserParams::zeros()};
    auto& g = result.gradient.tensors();
    const auto& p = params.tensors();
    const double batch_scale = 1.0 / static_cast<double>(batch.size());

    for (const DenoiserSample& sample : batch) {
        check_denoiser_input(sample.input, sample.embed);
        const Shape4 out_shape{sample.input.frames(), kLatentChannels, sample.input.height(), sample.input.width()};
        if (sample.target.shape() != out_shape) {
            throw DimensionMismatch("denoiser_backward: target " + sample.target.shape().str() + " vs output " +
                                    out_shape.str());
        }
        const std::size_t h = out_shape.height;
        const std::size_t w = out_shape.width;
        const std::size_t hw = h * w;
        const double grad_scale = 2.0 * batch_scale / static_cast<double>(out_shape.numel());
        const auto phi = time_features(sample.tau);

        for (std::size_t t = 0; t < out_shape.frames; ++t) {
            const double* x = sample.input.plane(t, 0).data();
            const FrameActivations act = forward_frame(params, x, h, w, phi, sample.embed);
            const auto target = sample.target.plane(t, 0);

            std::vector<double> g_out(kLatentChannels * hw);
            for (std::size_t i = 0; i < g_out.size(); ++i) {
                const double d = act.out[i] - target[i];
                result.loss += batch_scale * d * d / static_cast<double>(out_shape.numel());
                g_out[i] = grad_scale * d;
            }

            // Output 1x1 layer.
            std::vector<double> g_pre2(kHidden2 * hw, 0.0);
            for (std::size_t c = 0; c < kLatentChannels; ++c) {
                const double* go = g_out.data() + c * hw;
                for (std::size_t pix = 0; pix < hw; ++pix) {
                    g[kConv3B].values[c] += go[pix];
                }
                for (std::size_t j = 0; j < kHidden2; ++j) {
                    const double wcj = p[kConv3W].values[c * kHidden2 + j];
                    const double* h2 = act.h2.data() + j * hw;
                    double* gp = g_pre2.data() + j * hw;
                    double acc = 0.0;
                    for (std::size_t pix = 0; pix < hw; ++pix) {
                        acc += go[pix] * h2[pix];
                        gp[pix] += wcj * go[pix];
                    }
                    g[kConv3W].values[c * kHidden2 + j] += acc;
                }
            }
            for (std::size_t i = 0; i < g_pre2.size(); ++i) {
                g_pre2[i] *= 1.0 - act.h2[i] * act.h2[i];
            }

            // Second hidden layer.
            std::vector<double> g_pre1(kHidden1 * hw, 0.0);
            for (std::size_t o = 0; o < kHidden2; ++o) {
                double sum = 0.0;
                for (std::size_t pix = 0; pix < hw; ++pix) {
                    sum += g_pre2[o * hw + pix];
                }
                g[kConv2B].values[o] += sum;
                for (std::size_t k = 0; k < kTimeFeatures; ++k) {
                    g[kTime2W].values[o * kTimeFeatures + k] += sum * phi[k];
                }
            }
            conv3x3_backward(p[kConv2W].values.data(), act.h1.data(), g_pre2.data(), kHidden1, kHidden2, h, w,
                             g[kConv2W].values.data(), g_pre1.data());
            for (std::size_t i = 0; i < g_pre1.size(); ++i) {
                g_pre1[i] *= 1.0 - act.h1[i] * act.h1[i];
            }

            // First hidden layer.
            for (std::size_t o = 0; o < kHidden1; ++o) {
                double sum = 0.0;
                for (std::size_t pix = 0; pix < hw; ++pix) {
                    sum += g_pre1[o * hw + pix];
                }
                g[kConv1B].values[o] += sum;
                for (std::size_t k = 0; k < kTimeFeatures; ++k) {
                    g[kTime1W].values[o * kTimeFeatures + k] += sum * phi[k];
                }
                double* ge = g[kEmbed1W].values.data() + o * kEmbedDim;
                for (std::size_t e = 0; e < kEmbedDim; ++e) {
                    ge[e] += sum * sample.embed[e];
                }
            }
            conv3x3_backward(p[kConv1W].values.data(), x, g_pre1.data(), kDenoiserInputChannels, kHidden1, h, w,
                             g[kConv1W].values.data(), nullptr);
        }
    }
    return result;
}

// ---- training / sampling -----------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 1 || iterations < 1) {
        throw ConfigError("train: batch size and iterations must be at least 1");
    }
    if (!(dropout >= 0.0 && dropout <= 1.0)) {
        throw ConfigError("train: dropout probability must lie in [0, 1]");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning rate must be finite and non-negative");
    }
    if (!(tau_min >= 0.0 && tau_min < tau_max && tau_max <= 1.0)) {
        throw ConfigError("train: tau range must satisfy 0 <= tau_min < tau_max <= 1");
    }
}

Tensor4 masked_condition_latent(const ConditioningBundle& bundle) {
    bundle.validate();
    const Tensor4 latent = encode(assemble_encoder_input(bundle.rgb, bundle.asset_alpha));
    const Tensor4 mask = downsample_mask(composite_masks(bundle.coverage, bundle.asset_mask));
    return mask_latent(latent, mask);
}

PairLatents prepare_pair(const TrainingPair& pair) {
    if (pair.target.shape() != pair.bundle.rgb.shape()) {
        throw DimensionMismatch("training pair target " + pair.target.shape().str() + " vs bundle " +
                                pair.bundle.rgb.shape().str());
    }
    return {encode_rgb(pair.target), masked_condition_latent(pair.bundle), pair.first_frame_embed};
}

TrainResult train(std::span<const TrainingPair> pairs, const TrainConfig& config) {
    config.validate();
    if (pairs.empty()) {
        throw ConfigError("train: no training pairs");
    }
    std::vector<PairLatents> data;
    data.reserve(pairs.size());
    for (const TrainingPair& pair : pairs) {
        data.push_back(prepare_pair(pair));
    }

    TrainResult result{DenoiserParams::initialize(combine_seeds({config.seed, 0x1217ULL})), {}};
    result.losses.reserve(static_cast<std::size_t>(config.iterations));
    DenoiserParams first_moment = DenoiserParams::zeros();
    DenoiserParams second_moment = DenoiserParams::zeros();
    Rng rng(config.seed);

    std::vector<DenoiserSample> batch;
    for (int it = 1; it <= config.iterations; ++it) {
        batch.clear();
        for (int b = 0; b < config.batch_size; ++b) {
            const PairLatents& pair = data[static_cast<std::size_t>(rng.below(data.size()))];
            const double tau = rng.uniform(config.tau_min, config.tau_max);
            Tensor4 eps(pair.clean.shape());
            for (double& v : eps.values()) {
                v = rng.normal();
            }
            DiffusionCondition condition{pair.masked_condition, pair.embed};
            drop_condition(condition, config.dropout, rng, config.dropout_mode);
            const Tensor4 noisy = add_noise(pair.clean, tau, eps);
            batch.push_back({assemble_diffusion_input(condition.latent, noisy), tau, std::move(condition.embed),
                             std::move(eps)});
        }

        const LossAndGradient step = denoiser_backward(result.params, batch);
        result.losses.push_back(step.loss);

        const double correction1 = 1.0 - std::pow(kAdamBeta1, it);
        const double correction2 = 1.0 - std::pow(kAdamBeta2, it);
        auto& params = result.params.tensors();
        for (std::size_t ti = 0; ti < params.size(); ++ti) {
            auto& value = params[ti].values;
            const auto& grad = step.gradient.tensors()[ti].values;
            auto& m = first_moment.tensors()[ti].values;
            auto& v = second_moment.tensors()[ti].values;
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * grad[i];
                v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
                value[i] -= config.learning_rate * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + kAdamEpsilon);
            }
        }
    }
    return result;
}

Tensor4 sample_latent(const DenoiserFn& denoiser, const Tensor4& masked_condition, std::span<const double> embed,
                      int steps, Rng& rng) {
    if (steps < 1) {
        throw ConfigError("sample: steps must be at least 1");
    }
    Tensor4 z(masked_condition.shape());
    for (double& v : z.values()) {
        v = rng.normal();
    }
    for (int i = 0; i < steps; ++i) {
        const double tau = kSamplerTauMax * (1.0 - static_cast<double>(i) / steps);
        const double tau_next = kSamplerTauMax * (1.0 - static_cast<double>(i + 1) / steps);
        const double a = NoiseSchedule::alpha(tau);
        const double s = NoiseSchedule::sigma(tau);
        const double a_next = NoiseSchedule::alpha(tau_next);
        const double s_next = NoiseSchedule::sigma(tau_next);

        const Tensor4 eps = denoiser(assemble_diffusion_input(masked_condition, z), tau, embed);
        require_same_shape(eps, z, "sample");
        for (std::size_t k = 0; k < z.values().size(); ++k) {
            const double x0 = (z.values()[k] - s * eps.values()[k]) / a;
            z.values()[k] = a_next * x0 + s_next * eps.values()[k];
        }
    }
    return z;
}

Tensor4 sample(const DenoiserParams& params, const ConditioningBundle& bundle, std::span<const double> embed,
               int steps, std::uint64_t seed) {
    const Tensor4 condition = masked_condition_latent(bundle);
    Rng rng(seed);
    const DenoiserFn denoiser = [&params](const Tensor4& x_in, double tau, std::span<const double> e) {
        return denoiser_forward(params, x_in, tau, e);
    };
    return decode(sample_latent(denoiser, condition, embed, steps, rng));
}

} // namespace scpainter
