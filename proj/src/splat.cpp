// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/splat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "scpainter/errors.hpp"
#include "scpainter/parallel.hpp"

namespace scpainter {

namespace {

constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                            -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

constexpr double kQuaternionTolerance = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

/// Everything the per-pixel loop needs about one visible splat.
struct ScreenSplat {
    Vec2 mean;
    Mat2 conic;
    double depth;
    double opacity;
    Rgb color;
    // Inclusive pixel range whose centers fall inside the 3-sigma box.
    int x0, x1, y0, y1;
};

} // namespace

int Gaussian3D::sh_degree() const {
    for (int degree = 0; degree <= kMaxShDegree; ++degree) {
        if (sh.size() == static_cast<std::size_t>(sh_coefficient_count(degree))) {
            return degree;
        }
    }
    throw ConfigError("gaussian has " + std::to_string(sh.size()) + " SH coefficients; expected 1, 4, 9 or 16");
}

void Gaussian3D::validate() const {
    if (!position.allFinite() || !scale.allFinite()) {
        throw ConfigError("gaussian position and scale must be finite");
    }
    if (!(scale.array() > 0.0).all()) {
        throw ConfigError("gaussian scale must be positive");
    }
    if (std::abs(rotation.norm() - 1.0) > kQuaternionTolerance) {
        throw ConfigError("gaussian rotation must be a unit quaternion");
    }
    if (!(opacity >= 0.0 && opacity <= 1.0)) {
        throw ConfigError("gaussian opacity must lie in [0, 1]");
    }
    (void)sh_degree();
    for (const Rgb& c : sh) {
        if (!c.allFinite()) {
            throw ConfigError("gaussian SH coefficients must be finite");
        }
    }
}

Mat3 covariance_of(const Gaussian3D& g) {
    const Mat3 r = g.rotation.toRotationMatrix();
    const Mat3 rs = r * g.scale.asDiagonal();
    return rs * rs.transpose();
}

std::array<double, 16> sh_basis(int degree, const Vec3& dir) {
    std::array<double, 16> b{};
    const double x = dir.x();
    const double y = dir.y();
    const double z = dir.z();
    b[0] = kShC0;
    if (degree >= 1) {
        b[1] = -kShC1 * y;
        b[2] = kShC1 * z;
        b[3] = -kShC1 * x;
    }
    if (degree >= 2) {
        const double xx = x * x, yy = y * y, zz = z * z;
        b[4] = kShC2[0] * x * y;
        b[5] = kShC2[1] * y * z;
        b[6] = kShC2[2] * (2.0 * zz - xx - yy);
        b[7] = kShC2[3] * x * z;
        b[8] = kShC2[4] * (xx - yy);
        if (degree >= 3) {
            b[9] = kShC3[0] * y * (3.0 * xx - yy);
            b[10] = kShC3[1] * x * y * z;
            b[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
            b[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
            b[14] = kShC3[5] * z * (xx - yy);
            b[15] = kShC3[6] * x * (xx - 3.0 * yy);
        }
    }
    return b;
}

Rgb sh_color(const Gaussian3D& g, const Vec3& view_dir) {
    const int degree = g.sh_degree();
    const auto basis = sh_basis(degree, view_dir);
    Rgb color = Rgb::Constant(0.5);
    for (int k = 0; k < sh_coefficient_count(degree); ++k) {
        color += basis[static_cast<std::size_t>(k)] * g.sh[static_cast<std::size_t>(k)];
    }
    return color.cwiseMax(0.0).cwiseMin(1.0);
}

ProjectedGaussian project_gaussian(const Gaussian3D& g, const CameraIntrinsics& intrinsics, const RigidPose& pose) {
    ProjectedGaussian out;
    const Vec3 p = pose.apply_inverse(g.position);
    out.depth = p.z();
    if (!(p.z() > kNearClip)) {
        return out;
    }
    const double inv_z = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> jacobian;
    jacobian << intrinsics.fx() * inv_z, 0.0, -intrinsics.fx() * p.x() * inv_z * inv_z,
        0.0, intrinsics.fy() * inv_z, -intrinsics.fy() * p.y() * inv_z * inv_z;
    const Mat3 world_to_cam = pose.rotation().transpose();
    const Eigen::Matrix<double, 2, 3> jw = jacobian * world_to_cam;
    Mat2 cov = jw * covariance_of(g) * jw.transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += kScreenCovarianceFloor * Mat2::Identity();

    out.mean = intrinsics.project(p);
    out.cov = cov;
    out.culled = false;
    return out;
}

SplatRender rasterize(std::span<const Gaussian3D> gaussians,
                      const CameraIntrinsics& intrinsics,
                      const RigidPose& pose,
                      int tile_size) {
    if (tile_size <= 0) {
        throw ConfigError("tile size must be positive");
    }
    const int w = intrinsics.width();
    const int h = intrinsics.height();
    SplatRender out{RgbImage(w, h, Rgb::Zero()), ScalarMap(w, h, 0.0), ScalarMap(w, h, kInf)};

    // Screen-space preprocessing, one slot per input gaussian.
    std::vector<std::optional<ScreenSplat>> screen(gaussians.size());
    const Vec3 eye = pose.translation();
    parallel_for(gaussians.size(), [&](std::size_t i) {
        const Gaussian3D& g = gaussians[i];
        const ProjectedGaussian proj = project_gaussian(g, intrinsics, pose);
        if (proj.culled) {
            return;
        }
        const double rx = kSupportSigmas * std::sqrt(proj.cov(0, 0));
        const double ry = kSupportSigmas * std::sqrt(proj.cov(1, 1));
        // Pixel x has its center at x + 0.5.
        const double x0 = std::max(0.0, std::ceil(proj.mean.x() - rx - 0.5));
        const double x1 = std::min(w - 1.0, std::floor(proj.mean.x() + rx - 0.5));
        const double y0 = std::max(0.0, std::ceil(proj.mean.y() - ry - 0.5));
        const double y1 = std::min(h - 1.0, std::floor(proj.mean.y() + ry - 0.5));
        if (!(x0 <= x1) || !(y0 <= y1)) {
            return;
        }
        const Vec3 view = (g.position - eye).normalized();
        screen[i] = ScreenSplat{proj.mean,
                                proj.cov.inverse(),
                                proj.depth,
                                g.opacity,
                                sh_color(g, view),
                                static_cast<int>(x0),
                                static_cast<int>(x1),
                                static_cast<int>(y0),
                                static_cast<int>(y1)};
    });

    const int tiles_x = (w + tile_size - 1) / tile_size;
    const int tiles_y = (h + tile_size - 1) / tile_size;
    std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t i = 0; i < screen.size(); ++i) {
        if (!screen[i]) {
            continue;
        }
        const ScreenSplat& s = *screen[i];
        for (int ty = s.y0 / tile_size; ty <= s.y1 / tile_size; ++ty) {
            for (int tx = s.x0 / tile_size; tx <= s.x1 / tile_size; ++tx) {
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }

    parallel_for(bins.size(), [&](std::size_t tile) {
        auto& list = bins[tile];
        // Depth is per splat, so one sort per tile gives every pixel its exact order.
        std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double da = screen[a]->depth;
            const double db = screen[b]->depth;
            return da < db || (da == db && a < b);
        });

        const int tx = static_cast<int>(tile % static_cast<std::size_t>(tiles_x));
        const int ty = static_cast<int>(tile / static_cast<std::size_t>(tiles_x));
        const int px_end = std::min(w, (tx + 1) * tile_size);
        const int py_end = std::min(h, (ty + 1) * tile_size);
        for (int py = ty * tile_size; py < py_end; ++py) {
            for (int px = tx * tile_size; px < px_end; ++px) {
                const Vec2 center(px + 0.5, py + 0.5);
                double transmittance = 1.0;
                Rgb color = Rgb::Zero();
                double depth_sum = 0.0;
                for (std::uint32_t idx : list) {
                    const ScreenSplat& s = *screen[idx];
                    if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) {
                        continue;
                    }
                    const Vec2 d = center - s.mean;
                    const double power = -0.5 * d.dot(s.conic * d);
                    const double alpha = std::min(kMaxSplatAlpha, s.opacity * std::exp(power));
                    const double next = transmittance * (1.0 - alpha);
                    if (next < kMinTransmittance) {
                        break;
                    }
                    const double weight = alpha * transmittance;
                    color += weight * s.color;
                    depth_sum += weight * s.depth;
                    transmittance = next;
                }
                const double coverage = 1.0 - transmittance;
                out.rgb(px, py) = color;
                out.alpha(px, py) = coverage;
                out.depth(px, py) = coverage > 0.0 ? depth_sum / coverage : kInf;
            }
        }
    });
    return out;
}

GaussianAsset::GaussianAsset(std::vector<Gaussian3D> gaussians, const Vec3& canonical_dims)
    : gaussians_(std::move(gaussians)), canonical_dims_(canonical_dims) {
    if (!(canonical_dims.array() > 0.0).all() || !canonical_dims.allFinite()) {
        throw ConfigError("asset canonical box dims must be positive");
    }
    const Vec3 limit = 0.75 * canonical_dims_;
    for (const Gaussian3D& g : gaussians_) {
        g.validate();
        if (!(g.position.cwiseAbs().array() <= limit.array()).all()) {
            throw ConfigError("asset gaussian lies outside 1.5x the canonical box");
        }
    }
}

std::vector<Gaussian3D> align_asset(const GaussianAsset& asset, const OrientedBox3D& target) {
    const Vec3 ratio = target.dims().cwiseQuotient(asset.canonical_dims());
    if (ratio.maxCoeff() > kMaxAlignAnisotropy * ratio.minCoeff()) {
        throw DimensionMismatch("asset box scale ratios differ by more than 25% (" + std::to_string(ratio.x()) +
                                ", " + std::to_string(ratio.y()) + ", " + std::to_string(ratio.z()) + ")");
    }
    const Eigen::Quaterniond box_rotation(target.rotation());
    std::vector<Gaussian3D> out;
    out.reserve(asset.gaussians().size());
    for (const Gaussian3D& g : asset.gaussians()) {
        Gaussian3D placed = g;
        placed.position = target.rotation() * ratio.cwiseProduct(g.position) + target.center();
        placed.scale = g.scale.cwiseProduct(ratio);
        placed.rotation = (box_rotation * g.rotation).normalized();
        out.push_back(std::move(placed));
    }
    return out;
}

} // namespace scpainter
