// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "scpainter/geometry.hpp"

namespace scpainter {

using Mat2 = Eigen::Matrix2d;

// Compositing constants shared with common splatting renderers.
inline constexpr double kMaxSplatAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kScreenCovarianceFloor = 0.3;
/// A splat touches only pixels whose centers lie in the bounding box of its 3-sigma ellipse.
inline constexpr double kSupportSigmas = 3.0;
inline constexpr int kMaxShDegree = 3;

inline constexpr double kShC0 = 0.28209479177387814;

/// Number of SH basis functions for `degree`.
[[nodiscard]] constexpr int sh_coefficient_count(int degree) { return (degree + 1) * (degree + 1); }

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    /// Standard deviations along the local axes, in meters.
    Vec3 scale = Vec3::Ones();
    /// Local-to-world rotation.
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    double opacity = 1.0;
    /// One RGB triple per basis function, in the usual band order (l, m = -l..l).
    std::vector<Rgb> sh = {Rgb::Zero()};

    /// Degree inferred from the coefficient count; throws ConfigError when not 1, 4, 9 or 16.
    [[nodiscard]] int sh_degree() const;
    void validate() const;
};

/// Sigma = R S S^T R^T.
[[nodiscard]] Mat3 covariance_of(const Gaussian3D& g);

/// Real SH basis for `degree` at unit direction `dir`; entries beyond the degree are zero.
[[nodiscard]] std::array<double, 16> sh_basis(int degree, const Vec3& dir);

/// View-dependent color: SH contraction plus 0.5, clamped to [0, 1].
[[nodiscard]] Rgb sh_color(const Gaussian3D& g, const Vec3& view_dir);

struct ProjectedGaussian {
    Vec2 mean = Vec2::Zero();
    /// Screen covariance in px^2, including the 0.3 I floor.
    Mat2 cov = Mat2::Zero();
    double depth = 0.0;
    bool culled = true;
};

/// EWA projection: cov2d = J W Sigma W^T J^T + 0.3 I.
[[nodiscard]] ProjectedGaussian project_gaussian(const Gaussian3D& g,
                                                 const CameraIntrinsics& intrinsics,
                                                 const RigidPose& pose);

struct SplatRender {
    /// Premultiplied color over a black background.
    RgbImage rgb;
    ScalarMap alpha;
    /// Alpha-weighted mean splat depth; +inf where alpha is zero.
    ScalarMap depth;
};

/// Tile-binned front-to-back alpha compositing. Output does not depend on
/// tile_size or the worker count.
[[nodiscard]] SplatRender rasterize(std::span<const Gaussian3D> gaussians,
                                    const CameraIntrinsics& intrinsics,
                                    const RigidPose& pose,
                                    int tile_size = 16);

/// Gaussians in an object frame plus the canonical box they were built in.
class GaussianAsset {
public:
    /// Throws ConfigError if a gaussian is invalid or lies outside 1.5x the box extents.
    GaussianAsset(std::vector<Gaussian3D> gaussians, const Vec3& canonical_dims);

    [[nodiscard]] const std::vector<Gaussian3D>& gaussians() const { return gaussians_; }
    [[nodiscard]] const Vec3& canonical_dims() const { return canonical_dims_; }
    [[nodiscard]] OrientedBox3D canonical_box() const {
        return {Vec3::Zero(), canonical_dims_, Mat3::Identity()};
    }

private:
    std::vector<Gaussian3D> gaussians_;
    Vec3 canonical_dims_;
};

/// Largest allowed ratio between per-axis box scale factors in align_asset.
inline constexpr double kMaxAlignAnisotropy = 1.25;

/// Maps the canonical box onto `target`: per-axis scale target.dims / canonical.dims,
/// then the target rotation, then the target center. Throws DimensionMismatch when
/// the per-axis scales differ by more than 25%.
[[nodiscard]] std::vector<Gaussian3D> align_asset(const GaussianAsset& asset, const OrientedBox3D& target);

} // namespace scpainter
