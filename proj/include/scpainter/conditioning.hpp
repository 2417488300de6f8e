// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "scpainter/geometry.hpp"
#include "scpainter/splat.hpp"
#include "scpainter/tensor.hpp"

namespace scpainter {

/// Splat alpha at or above this marks an asset pixel.
inline constexpr double kAssetMaskThreshold = 0.5;

struct CameraView {
    CameraIntrinsics intrinsics;
    RigidPose pose;
};

/// Ordered cameras sharing one latent-aligned image size.
class Trajectory {
public:
    explicit Trajectory(std::vector<CameraView> cameras);

    [[nodiscard]] std::size_t size() const { return cameras_.size(); }
    [[nodiscard]] int width() const { return cameras_.front().intrinsics.width(); }
    [[nodiscard]] int height() const { return cameras_.front().intrinsics.height(); }
    [[nodiscard]] const CameraView& operator[](std::size_t i) const { return cameras_[i]; }
    [[nodiscard]] const std::vector<CameraView>& cameras() const { return cameras_; }

private:
    std::vector<CameraView> cameras_;
};

/// Conditioning tensors for one trajectory. Masks use coverage polarity:
/// 1 means the pixel received points or asset splats (the hole mask is 1 - coverage).
struct ConditioningBundle {
    Tensor4 rgb;         ///< T x 3 x H x W
    Tensor4 coverage;    ///< T x 1 x H x W, binary
    Tensor4 asset_alpha; ///< T x 1 x H x W, continuous splat alpha
    Tensor4 asset_mask;  ///< T x 1 x H x W, asset_alpha >= 0.5
    std::vector<CameraView> cameras;

    [[nodiscard]] std::size_t frames() const { return rgb.frames(); }
    [[nodiscard]] std::size_t height() const { return rgb.height(); }
    [[nodiscard]] std::size_t width() const { return rgb.width(); }
    void validate() const;
};

/// Renders points and asset splats into every camera and merges them by depth.
/// `assets` holds already-aligned world-space splat lists shared by all frames.
[[nodiscard]] ConditioningBundle render_joint(const ColorPointCloud& cloud,
                                              std::span<const std::vector<Gaussian3D>> assets,
                                              const Trajectory& trajectory,
                                              int tile_size = 16);

/// Same merge with a separate world-space splat list per trajectory frame.
[[nodiscard]] ConditioningBundle render_joint_per_frame(const ColorPointCloud& cloud,
                                                        std::span<const std::vector<Gaussian3D>> frame_splats,
                                                        const Trajectory& trajectory,
                                                        int tile_size = 16);

/// Pixelwise OR of two binary T x 1 x H x W masks.
[[nodiscard]] Tensor4 composite_masks(const Tensor4& coverage, const Tensor4& asset_mask);

/// 8 x 8 max-pool: a latent cell is 1 iff any pixel in its block is nonzero.
[[nodiscard]] Tensor4 downsample_mask(const Tensor4& mask);

/// Multiplies every latent channel by the T x 1 x h x w mask.
[[nodiscard]] Tensor4 mask_latent(const Tensor4& latent, const Tensor4& latent_mask);

/// [I (3 channels), M_a (1 channel)] -> T x 4 x H x W.
[[nodiscard]] Tensor4 assemble_encoder_input(const Tensor4& rgb, const Tensor4& asset_alpha);

/// [masked conditioning latent, noisy target latent] along channels.
[[nodiscard]] Tensor4 assemble_diffusion_input(const Tensor4& masked_latent, const Tensor4& noisy_latent);

} // namespace scpainter
