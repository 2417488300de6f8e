// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scpainter/conditioning.hpp"
#include "scpainter/dataset.hpp"
#include "scpainter/rng.hpp"
#include "scpainter/tensor.hpp"

namespace scpainter {

// ---- schedule ----------------------------------------------------------------

/// Variance-preserving cosine schedule: alpha = cos(pi tau / 2), sigma = sin(pi tau / 2),
/// with the endpoints pinned to exact 0/1.
struct NoiseSchedule {
    [[nodiscard]] static double alpha(double tau);
    [[nodiscard]] static double sigma(double tau);
};

/// alpha(tau) x0 + sigma(tau) eps.
[[nodiscard]] Tensor4 add_noise(const Tensor4& x0, double tau, const Tensor4& eps);

/// Mean squared error over all elements.
[[nodiscard]] double diffusion_loss(const Tensor4& pred, const Tensor4& target);

// ---- condition dropout -------------------------------------------------------

enum class DropoutMode {
    independent, ///< separate draws for the rendered conditioning and the embedding
    joint,       ///< one draw drops both
};

struct DiffusionCondition {
    Tensor4 latent;             ///< masked conditioning latent
    std::vector<double> embed;  ///< first-frame embedding
};

struct DropDecision {
    bool latent_dropped = false;
    bool embed_dropped = false;
};

/// Zeroes the rendered conditioning and/or the embedding with probability p.
/// Always consumes exactly two uniforms from `rng`.
DropDecision drop_condition(DiffusionCondition& condition, double p, Rng& rng,
                            DropoutMode mode = DropoutMode::independent);

// ---- stand-in autoencoder ----------------------------------------------------

inline constexpr std::size_t kLatentChannels = 8;
inline constexpr std::size_t kEncoderInputChannels = 4;
inline constexpr std::size_t kBlockPixels = 64;
inline constexpr std::size_t kBlockInputs = kEncoderInputChannels * kBlockPixels;

/// 8 x 256 map with orthonormal rows applied to each 8 x 8 block. Block inputs are
/// ordered channel-major then row-major within the block. Rows 0-2 are the RGB block
/// means (scaled to unit norm), row 3 the mask mean, rows 4-7 seeded directions in the
/// RGB subspace orthogonal to the means.
[[nodiscard]] const Eigen::Matrix<double, static_cast<int>(kLatentChannels), static_cast<int>(kBlockInputs)>&
encoder_matrix();

/// T x 4 x H x W -> T x 8 x H/8 x W/8.
[[nodiscard]] Tensor4 encode(const Tensor4& x);
/// T x 8 x h x w -> T x 3 x 8h x 8w: least-squares RGB reconstruction.
[[nodiscard]] Tensor4 decode(const Tensor4& z);
/// Encodes an RGB video with an all-zero mask channel.
[[nodiscard]] Tensor4 encode_rgb(const Tensor4& rgb);

// ---- denoiser ----------------------------------------------------------------

inline constexpr std::size_t kDenoiserInputChannels = 2 * kLatentChannels;
inline constexpr std::size_t kHidden1 = 16;
inline constexpr std::size_t kHidden2 = 16;
inline constexpr std::size_t kTimeFeatures = 4;

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

/// Weights of the toy denoiser:
///   h1  = tanh(conv3x3(x; 16->16) + b1 + Wt1 phi(tau) + We1 embed)
///   h2  = tanh(conv3x3(h1; 16->16) + b2 + Wt2 phi(tau))
///   out = conv1x1(h2; 16->8) + b3
/// with phi(tau) = (cos(pi tau/2), sin(pi tau/2), cos(pi tau), sin(pi tau)).
class DenoiserParams {
public:
    /// Seeded fan-in scaled normal initialization; biases start at zero.
    [[nodiscard]] static DenoiserParams initialize(std::uint64_t seed);
    [[nodiscard]] static DenoiserParams zeros();

    [[nodiscard]] std::vector<ParamTensor>& tensors() { return tensors_; }
    [[nodiscard]] const std::vector<ParamTensor>& tensors() const { return tensors_; }
    [[nodiscard]] ParamTensor& get(const std::string& name);
    [[nodiscard]] const ParamTensor& get(const std::string& name) const;
    [[nodiscard]] std::size_t parameter_count() const;
    /// FNV-1a over the raw bytes of every value.
    [[nodiscard]] std::uint64_t hash() const;

private:
    std::vector<ParamTensor> tensors_;
};

[[nodiscard]] std::array<double, kTimeFeatures> time_features(double tau);

/// x_in: T x 16 x h x w -> T x 8 x h x w.
[[nodiscard]] Tensor4 denoiser_forward(const DenoiserParams& params, const Tensor4& x_in, double tau,
                                       std::span<const double> embed);

struct DenoiserSample {
    Tensor4 input;
    double tau = 0.0;
    std::vector<double> embed;
    Tensor4 target;
};

struct LossAndGradient {
    double loss = 0.0;
    DenoiserParams gradient;
};

/// Exact gradient of the mean over samples of diffusion_loss(forward(sample), target).
[[nodiscard]] LossAndGradient denoiser_backward(const DenoiserParams& params,
                                                std::span<const DenoiserSample> batch);

// ---- training / sampling -----------------------------------------------------

struct TrainConfig {
    int batch_size = 4;
    int iterations = 500;
    double learning_rate = 3e-3;
    double dropout = 0.15;
    DropoutMode dropout_mode = DropoutMode::independent;
    double tau_min = 0.002;
    double tau_max = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    DenoiserParams params;
    std::vector<double> losses;
};

/// Latents a pair contributes to training and sampling.
struct PairLatents {
    Tensor4 clean;          ///< encoded target video
    Tensor4 masked_condition;
    std::vector<double> embed;
};

/// encode([I, M_a]) masked by the downsampled composite of coverage and M_a.
[[nodiscard]] Tensor4 masked_condition_latent(const ConditioningBundle& bundle);
[[nodiscard]] PairLatents prepare_pair(const TrainingPair& pair);

/// Adam on the noise-prediction loss. Output depends only on (pairs, config).
[[nodiscard]] TrainResult train(std::span<const TrainingPair> pairs, const TrainConfig& config);

using DenoiserFn = std::function<Tensor4(const Tensor4& x_in, double tau, std::span<const double> embed)>;

/// Top of the sampling grid. At tau = 1 alpha vanishes and an epsilon prediction
/// carries no information about x0, so the grid starts just below it.
inline constexpr double kSamplerTauMax = 0.98;

/// Deterministic DDIM update on tau_i = kSamplerTauMax (1 - i / steps), starting from
/// unit Gaussian noise drawn from `rng`. Returns the final latent.
[[nodiscard]] Tensor4 sample_latent(const DenoiserFn& denoiser, const Tensor4& masked_condition,
                                    std::span<const double> embed, int steps, Rng& rng);

/// Full sampler: conditioning from `bundle`, decoded T x 3 x H x W video.
[[nodiscard]] Tensor4 sample(const DenoiserParams& params, const ConditioningBundle& bundle,
                             std::span<const double> embed, int steps, std::uint64_t seed);

// ---- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int iteration = 0;
};

/// "SCPK", u32 header length, JSON header (tensor names/shapes, seed, iteration),
/// then every tensor as little-endian float32 in header order.
void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params, const CheckpointMeta& meta);
[[nodiscard]] DenoiserParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);

} // namespace scpainter
