// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used as test oracles. They favor directness over speed.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

#include "scpainter/conditioning.hpp"
#include "scpainter/dataset.hpp"
#include "scpainter/diffusion.hpp"
#include "scpainter/geometry.hpp"
#include "scpainter/rng.hpp"
#include "scpainter/splat.hpp"

namespace scpainter::testing {

inline Eigen::Quaterniond random_quaternion(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized();
}

inline RigidPose random_pose(Rng& rng, double spread = 3.0) {
    return RigidPose::from_quaternion(random_quaternion(rng),
                                      Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                                           rng.uniform(-spread, spread)));
}

inline Rgb random_rgb(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

/// Random frame with independent per-pixel depth and validity.
inline Frame random_frame(Rng& rng, int width, int height, double valid_fraction = 0.8) {
    const CameraIntrinsics k(rng.uniform(20.0, 120.0), rng.uniform(20.0, 120.0), rng.uniform(0.0, width - 1.0),
                             rng.uniform(0.0, height - 1.0), width, height);
    Frame f{RgbImage(width, height), ScalarMap(width, height, 0.0), BinaryMap(width, height, 0), k,
            random_pose(rng), {}};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            f.image(x, y) = random_rgb(rng);
            if (rng.bernoulli(valid_fraction)) {
                f.depth(x, y) = rng.uniform(0.5, 50.0);
                f.depth_valid(x, y) = 1;
            }
        }
    }
    return f;
}

/// Camera-space point -> pixel, written out from the pinhole formula.
inline std::pair<int, int> pixel_of(const CameraIntrinsics& k, const Vec3& p_cam) {
    const double u = k.fx() * p_cam.x() / p_cam.z() + k.cx();
    const double v = k.fy() * p_cam.y() / p_cam.z() + k.cy();
    return {static_cast<int>(std::floor(u)), static_cast<int>(std::floor(v))};
}

/// Per pixel: every candidate, sorted by (depth, index); the first wins.
inline PointProjection brute_force_projection(const ColorPointCloud& cloud, const CameraIntrinsics& k,
                                              const RigidPose& pose) {
    const int w = k.width();
    const int h = k.height();
    PointProjection out{RgbImage(w, h, Rgb::Zero()), BinaryMap(w, h, 0),
                        ScalarMap(w, h, std::numeric_limits<double>::infinity())};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::vector<std::pair<double, std::size_t>> hits;
            for (std::size_t i = 0; i < cloud.size(); ++i) {
                const Vec3 pc = pose.rotation().transpose() * (cloud.positions[i] - pose.translation());
                if (pc.z() <= kNearClip) {
                    continue;
                }
                if (pixel_of(k, pc) == std::pair{x, y}) {
                    hits.emplace_back(pc.z(), i);
                }
            }
            if (hits.empty()) {
                continue;
            }
            std::sort(hits.begin(), hits.end());
            out.rgb(x, y) = cloud.colors[hits.front().second];
            out.coverage(x, y) = 1;
            out.zbuf(x, y) = hits.front().first;
        }
    }
    return out;
}

/// Direct per-pixel compositor: for each pixel, every gaussian whose 3-sigma
/// bounding box contains the pixel center, fully sorted front to back.
inline SplatRender brute_force_composite(std::span<const Gaussian3D> gaussians, const CameraIntrinsics& k,
                                         const RigidPose& pose) {
    const int w = k.width();
    const int h = k.height();
    SplatRender out{RgbImage(w, h, Rgb::Zero()), ScalarMap(w, h, 0.0),
                    ScalarMap(w, h, std::numeric_limits<double>::infinity())};
    std::vector<ProjectedGaussian> proj;
    for (const Gaussian3D& g : gaussians) {
        proj.push_back(project_gaussian(g, k, pose));
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 c(x + 0.5, y + 0.5);
            std::vector<std::size_t> order;
            for (std::size_t i = 0; i < proj.size(); ++i) {
                const ProjectedGaussian& p = proj[i];
                if (p.culled) {
                    continue;
                }
                const double rx = kSupportSigmas * std::sqrt(p.cov(0, 0));
                const double ry = kSupportSigmas * std::sqrt(p.cov(1, 1));
                if (std::abs(c.x() - p.mean.x()) <= rx && std::abs(c.y() - p.mean.y()) <= ry) {
                    order.push_back(i);
                }
            }
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return proj[a].depth < proj[b].depth; });
            double t = 1.0;
            Rgb color = Rgb::Zero();
            double depth = 0.0;
            for (std::size_t i : order) {
                const Vec2 d = c - proj[i].mean;
                const double a =
                    std::min(kMaxSplatAlpha, gaussians[i].opacity * std::exp(-0.5 * d.dot(proj[i].cov.inverse() * d)));
                if (t * (1.0 - a) < kMinTransmittance) {
                    break;
                }
                const Vec3 view = (gaussians[i].position - pose.translation()).normalized();
                color += a * t * sh_color(gaussians[i], view);
                depth += a * t * proj[i].depth;
                t *= 1.0 - a;
            }
            out.rgb(x, y) = color;
            out.alpha(x, y) = 1.0 - t;
            if (t < 1.0) {
                out.depth(x, y) = depth / (1.0 - t);
            }
        }
    }
    return out;
}

/// Up to `max_count` random gaussians in front of an identity camera looking down +z.
inline std::vector<Gaussian3D> random_gaussians(Rng& rng, int max_count, int sh_degree = 1) {
    const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_count)));
    std::vector<Gaussian3D> out;
    for (int i = 0; i < n; ++i) {
        Gaussian3D g;
        const double z = rng.uniform(2.0, 6.0);
        g.position = Vec3(rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.3, 0.3) * z, z);
        g.scale = Vec3(rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3));
        g.rotation = random_quaternion(rng);
        g.opacity = rng.uniform(0.2, 1.0);
        g.sh.resize(static_cast<std::size_t>(sh_coefficient_count(sh_degree)));
        for (Rgb& c : g.sh) {
            c = Rgb(rng.normal(), rng.normal(), rng.normal()) * 0.5;
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline Tensor4 random_tensor(Rng& rng, Shape4 shape) {
    Tensor4 t(shape);
    for (double& v : t.values()) {
        v = rng.normal();
    }
    return t;
}

inline Tensor4 random_binary(Rng& rng, Shape4 shape, double p = 0.5) {
    Tensor4 t(shape);
    for (double& v : t.values()) {
        v = rng.bernoulli(p) ? 1.0 : 0.0;
    }
    return t;
}

/// Brute-force point-in-oriented-box with each half-extent scaled.
inline bool inside_box(const OrientedBox3D& box, const Vec3& p, double scale) {
    const Mat3& r = box.rotation();
    const Vec3 d = p - box.center();
    for (int axis = 0; axis < 3; ++axis) {
        const double along = r.col(axis).dot(d);
        if (std::abs(along) > 0.5 * scale * box.dims()[axis]) {
            return false;
        }
    }
    return true;
}

inline double mean_of(const Tensor4& t) {
    const auto v = t.values();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Relative error with an absolute floor so near-zero gradients are judged on scale.
inline double gradient_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences on every parameter; returns the worst gradient_error.
inline double worst_gradient_error(const DenoiserParams& params, std::span<const DenoiserSample> batch,
                                   double step = 1e-4, std::size_t* checked = nullptr) {
    const LossAndGradient analytic = denoiser_backward(params, batch);
    auto loss_at = [&](const DenoiserParams& p) {
        double sum = 0.0;
        for (const DenoiserSample& s : batch) {
            sum += diffusion_loss(denoiser_forward(p, s.input, s.tau, s.embed), s.target);
        }
        return sum / static_cast<double>(batch.size());
    };
    DenoiserParams probe = params;
    double worst = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < probe.tensors().size(); ++t) {
        auto& values = probe.tensors()[t].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss_at(probe);
            values[i] = saved - step;
            const double down = loss_at(probe);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            worst = std::max(worst, gradient_error(analytic.gradient.tensors()[t].values[i], numeric));
            ++count;
        }
    }
    if (checked != nullptr) {
        *checked = count;
    }
    return worst;
}

/// Small fixed batch exercising every input path of the denoiser.
inline std::vector<DenoiserSample> probe_batch(std::uint64_t seed, std::size_t samples = 2) {
    Rng rng(seed);
    std::vector<DenoiserSample> batch;
    for (std::size_t s = 0; s < samples; ++s) {
        DenoiserSample d;
        d.input = random_tensor(rng, {2, kDenoiserInputChannels, 3, 4});
        d.tau = rng.uniform(0.05, 0.95);
        d.embed.resize(kEmbedDim);
        for (double& e : d.embed) {
            e = rng.normal() / std::sqrt(static_cast<double>(kEmbedDim));
        }
        d.target = random_tensor(rng, {2, kLatentChannels, 3, 4});
        batch.push_back(std::move(d));
    }
    return batch;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() /
                ("scpainter_" + name + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

} // namespace scpainter::testing
