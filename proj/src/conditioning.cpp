// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/conditioning.hpp"

#include <cmath>
#include <string>

#include "scpainter/errors.hpp"
#include "scpainter/parallel.hpp"

namespace scpainter {

namespace {

void require_binary(const Tensor4& mask, const char* what) {
    for (double v : mask.values()) {
        if (v != 0.0 && v != 1.0) {
            throw ConfigError(std::string(what) + ": mask must be binary");
        }
    }
}

void require_single_channel(const Tensor4& mask, const char* what) {
    if (mask.channels() != 1) {
        throw DimensionMismatch(std::string(what) + ": expected T x 1 x H x W, got " + mask.shape().str());
    }
}

} // namespace

Trajectory::Trajectory(std::vector<CameraView> cameras) : cameras_(std::move(cameras)) {
    if (cameras_.empty()) {
        throw ConfigError("trajectory needs at least one camera");
    }
    const auto& first = cameras_.front().intrinsics;
    if (!first.latent_aligned()) {
        throw ConfigError("trajectory image size " + std::to_string(first.width()) + "x" +
                          std::to_string(first.height()) + " is not a multiple of 8");
    }
    for (const CameraView& view : cameras_) {
        if (view.intrinsics.width() != first.width() || view.intrinsics.height() != first.height()) {
            throw DimensionMismatch("trajectory cameras must share one image size");
        }
    }
}

void ConditioningBundle::validate() const {
    const Shape4 mask_shape{rgb.frames(), 1, rgb.height(), rgb.width()};
    if (rgb.channels() != 3 || coverage.shape() != mask_shape || asset_alpha.shape() != mask_shape ||
        asset_mask.shape() != mask_shape) {
        throw DimensionMismatch("conditioning bundle tensors disagree: I " + rgb.shape().str() + ", coverage " +
                                coverage.shape().str() + ", M_a " + asset_alpha.shape().str());
    }
    if (cameras.size() != rgb.frames()) {
        throw DimensionMismatch("conditioning bundle camera count differs from its frame count");
    }
    for (std::size_t i = 0; i < coverage.values().size(); ++i) {
        if (asset_mask.values()[i] != 0.0 && coverage.values()[i] == 0.0) {
            throw InvariantError("asset mask pixel outside coverage");
        }
    }
}

ConditioningBundle render_joint_per_frame(const ColorPointCloud& cloud,
                                          std::span<const std::vector<Gaussian3D>> frame_splats,
                                          const Trajectory& trajectory,
                                          int tile_size) {
    cloud.validate();
    if (frame_splats.size() != trajectory.size()) {
        throw ConfigError("render_joint: " + std::to_string(frame_splats.size()) + " splat lists for " +
                          std::to_string(trajectory.size()) + " cameras");
    }
    const std::size_t frames = trajectory.size();
    const auto height = static_cast<std::size_t>(trajectory.height());
    const auto width = static_cast<std::size_t>(trajectory.width());

    ConditioningBundle bundle;
    bundle.rgb = Tensor4({frames, 3, height, width});
    bundle.coverage = Tensor4({frames, 1, height, width});
    bundle.asset_alpha = Tensor4({frames, 1, height, width});
    bundle.asset_mask = Tensor4({frames, 1, height, width});
    bundle.cameras = trajectory.cameras();

    parallel_for(frames, [&](std::size_t t) {
        const CameraView& view = trajectory[t];
        const SplatRender splats = rasterize(frame_splats[t], view.intrinsics, view.pose, tile_size);
        const PointProjection points = project_points(cloud, view.intrinsics, view.pose);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const int xi = static_cast<int>(x);
                const int yi = static_cast<int>(y);
                const double alpha = splats.alpha(xi, yi);
                const bool asset_pixel = alpha >= kAssetMaskThreshold;
                const bool point_pixel = points.coverage(xi, yi) != 0;

                Rgb color;
                if (!point_pixel) {
                    color = splats.rgb(xi, yi);
                } else if (asset_pixel && splats.depth(xi, yi) < points.zbuf(xi, yi)) {
                    // Premultiplied splat over the point.
                    color = splats.rgb(xi, yi) + (1.0 - alpha) * points.rgb(xi, yi);
                } else {
                    color = points.rgb(xi, yi);
                }
                for (std::size_t c = 0; c < 3; ++c) {
                    bundle.rgb(t, c, y, x) = color[static_cast<Eigen::Index>(c)];
                }
                bundle.coverage(t, 0, y, x) = (point_pixel || asset_pixel) ? 1.0 : 0.0;
                bundle.asset_alpha(t, 0, y, x) = alpha;
                bundle.asset_mask(t, 0, y, x) = asset_pixel ? 1.0 : 0.0;
            }
        }
    });
    return bundle;
}

ConditioningBundle render_joint(const ColorPointCloud& cloud,
                                std::span<const std::vector<Gaussian3D>> assets,
                                const Trajectory& trajectory,
                                int tile_size) {
    std::vector<Gaussian3D> merged;
    for (const auto& asset : assets) {
        merged.insert(merged.end(), asset.begin(), asset.end());
    }
    const std::vector<std::vector<Gaussian3D>> per_frame(trajectory.size(), merged);
    return render_joint_per_frame(cloud, per_frame, trajectory, tile_size);
}

Tensor4 composite_masks(const Tensor4& coverage, const Tensor4& asset_mask) {
    require_same_shape(coverage, asset_mask, "composite_masks");
    require_single_channel(coverage, "composite_masks");
    require_binary(coverage, "composite_masks");
    require_binary(asset_mask, "composite_masks");
    Tensor4 out(coverage.shape());
    for (std::size_t i = 0; i < out.values().size(); ++i) {
        out.values()[i] = (coverage.values()[i] != 0.0 || asset_mask.values()[i] != 0.0) ? 1.0 : 0.0;
    }
    return out;
}

Tensor4 downsample_mask(const Tensor4& mask) {
    require_single_channel(mask, "downsample_mask");
    const std::size_t stride = kLatentStride;
    if (mask.height() % stride != 0 || mask.width() % stride != 0) {
        throw DimensionMismatch("downsample_mask: " + mask.shape().str() + " is not divisible by 8");
    }
    Tensor4 out({mask.frames(), 1, mask.height() / stride, mask.width() / stride});
    for (std::size_t t = 0; t < mask.frames(); ++t) {
        for (std::size_t y = 0; y < mask.height(); ++y) {
            for (std::size_t x = 0; x < mask.width(); ++x) {
                if (mask(t, 0, y, x) != 0.0) {
                    out(t, 0, y / stride, x / stride) = 1.0;
                }
            }
        }
    }
    return out;
}

Tensor4 mask_latent(const Tensor4& latent, const Tensor4& latent_mask) {
    require_single_channel(latent_mask, "mask_latent");
    if (latent_mask.frames() != latent.frames() || latent_mask.height() != latent.height() ||
        latent_mask.width() != latent.width()) {
        throw DimensionMismatch("mask_latent: latent " + latent.shape().str() + " vs mask " +
                                latent_mask.shape().str());
    }
    Tensor4 out = latent;
    for (std::size_t t = 0; t < latent.frames(); ++t) {
        const auto m = latent_mask.plane(t, 0);
        for (std::size_t c = 0; c < latent.channels(); ++c) {
            auto plane = out.plane(t, c);
            for (std::size_t i = 0; i < plane.size(); ++i) {
                plane[i] *= m[i];
            }
        }
    }
    return out;
}

Tensor4 assemble_encoder_input(const Tensor4& rgb, const Tensor4& asset_alpha) {
    if (rgb.channels() != 3) {
        throw DimensionMismatch("assemble_encoder_input: I must have 3 channels, got " + rgb.shape().str());
    }
    require_single_channel(asset_alpha, "assemble_encoder_input");
    return concat_channels(rgb, asset_alpha);
}

Tensor4 assemble_diffusion_input(const Tensor4& masked_latent, const Tensor4& noisy_latent) {
    return concat_channels(masked_latent, noisy_latent);
}

} // namespace scpainter
