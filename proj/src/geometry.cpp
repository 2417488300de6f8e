// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/geometry.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "scpainter/errors.hpp"
#include "scpainter/parallel.hpp"

namespace scpainter {

namespace {

constexpr double kRotationTolerance = 1e-9;

bool finite(const Vec3& v) { return v.allFinite(); }

} // namespace

CameraIntrinsics::CameraIntrinsics(double fx, double fy, double cx, double cy, int width, int height)
    : fx_(fx), fy_(fy), cx_(cx), cy_(cy), width_(width), height_(height) {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
        throw ConfigError("camera focal lengths must be positive and finite");
    }
    if (width <= 0 || height <= 0) {
        throw ConfigError("camera image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw ConfigError("camera principal point must lie inside the image");
    }
}

bool CameraIntrinsics::latent_aligned() const {
    return width_ % kLatentStride == 0 && height_ % kLatentStride == 0;
}

RigidPose::RigidPose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
    if (!rotation.allFinite() || !finite(translation)) {
        throw ConfigError("pose must be finite");
    }
    const double orthonormality = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (orthonormality > kRotationTolerance || std::abs(rotation.determinant() - 1.0) > kRotationTolerance) {
        throw ConfigError("pose rotation is not a proper orthonormal matrix");
    }
}

RigidPose RigidPose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation) {
    return {q.normalized().toRotationMatrix(), translation};
}

RigidPose RigidPose::shifted_laterally(double meters) const {
    return {rotation_, translation_ + meters * rotation_.col(0)};
}

RigidPose compose(const RigidPose& a, const RigidPose& b) {
    return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

RigidPose invert(const RigidPose& a) {
    const Mat3 rt = a.rotation().transpose();
    return {rt, -(rt * a.translation())};
}

Mat3 yaw_rotation(double heading) {
    return Eigen::AngleAxisd(heading, Vec3::UnitZ()).toRotationMatrix();
}

OrientedBox3D::OrientedBox3D(const Vec3& center, const Vec3& dims, double heading)
    : OrientedBox3D(center, dims, yaw_rotation(heading)) {}

OrientedBox3D::OrientedBox3D(const Vec3& center, const Vec3& dims, const Mat3& rotation)
    : center_(center), dims_(dims), rotation_(rotation) {
    if (!(dims.array() > 0.0).all() || !finite(dims) || !finite(center)) {
        throw ConfigError("box dims must be positive and finite");
    }
    // Reuses the pose check for the rotation.
    (void)RigidPose(rotation, center);
}

bool OrientedBox3D::contains(const Vec3& p, double scale) const {
    const Vec3 local = to_local(p);
    const Vec3 half = 0.5 * scale * dims_;
    return (local.cwiseAbs().array() <= half.array()).all();
}

void Frame::validate() const {
    const int w = intrinsics.width();
    const int h = intrinsics.height();
    if (image.width() != w || image.height() != h) {
        throw DimensionMismatch("frame image is " + std::to_string(image.width()) + "x" +
                                std::to_string(image.height()) + ", intrinsics say " + std::to_string(w) +
                                "x" + std::to_string(h));
    }
    if (!depth.same_shape(image) || !depth_valid.same_shape(image)) {
        throw DimensionMismatch("frame depth map does not match the image size");
    }
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (depth_valid.values()[i] != 0) {
            const double d = depth.values()[i];
            if (!std::isfinite(d) || d <= 0.0) {
                throw ConfigError("valid depth values must be finite and positive");
            }
        }
    }
}

void ColorPointCloud::validate() const {
    if (positions.size() != colors.size()) {
        throw DimensionMismatch("point cloud has " + std::to_string(positions.size()) + " positions but " +
                                std::to_string(colors.size()) + " colors");
    }
    for (const Vec3& p : positions) {
        if (!finite(p)) {
            throw ConfigError("point cloud positions must be finite");
        }
    }
    for (const Rgb& c : colors) {
        if (!finite(c) || c.minCoeff() < 0.0 || c.maxCoeff() > 1.0) {
            throw ConfigError("point cloud colors must lie in [0, 1]");
        }
    }
}

void ColorPointCloud::append(const ColorPointCloud& other) {
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
}

ColorPointCloud unproject(const Frame& frame) {
    frame.validate();
    const int w = frame.intrinsics.width();
    const int h = frame.intrinsics.height();

    ColorPointCloud cloud;
    cloud.source_frame = -1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (frame.depth_valid(x, y) == 0) {
                continue;
            }
            const Vec3 p_cam = frame.depth(x, y) * frame.intrinsics.backproject(x + 0.5, y + 0.5);
            cloud.positions.push_back(frame.pose.apply(p_cam));
            cloud.colors.push_back(frame.image(x, y).cwiseMax(0.0).cwiseMin(1.0));
        }
    }
    return cloud;
}

PointProjection project_points(const ColorPointCloud& cloud,
                               const CameraIntrinsics& intrinsics,
                               const RigidPose& pose) {
    cloud.validate();
    const int w = intrinsics.width();
    const int h = intrinsics.height();
    constexpr double kInf = std::numeric_limits<double>::infinity();

    PointProjection out{RgbImage(w, h, Rgb::Zero()), BinaryMap(w, h, 0), ScalarMap(w, h, kInf)};

    // Projection is independent per point; the z-test below runs in index order.
    constexpr long kOffscreen = -1;
    std::vector<long> pixel(cloud.size(), kOffscreen);
    std::vector<double> depth(cloud.size(), kInf);
    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (cloud.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, [&](std::size_t chunk) {
        const std::size_t end = std::min(cloud.size(), (chunk + 1) * kChunk);
        for (std::size_t i = chunk * kChunk; i < end; ++i) {
            const Vec3 p_cam = pose.apply_inverse(cloud.positions[i]);
            if (!(p_cam.z() > kNearClip)) {
                continue;
            }
            const Vec2 uv = intrinsics.project(p_cam);
            const double fx = std::floor(uv.x());
            const double fy = std::floor(uv.y());
            if (fx < 0.0 || fy < 0.0 || fx >= w || fy >= h) {
                continue;
            }
            pixel[i] = static_cast<long>(fy) * w + static_cast<long>(fx);
            depth[i] = p_cam.z();
        }
    });

    auto zbuf = out.zbuf.values();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (pixel[i] == kOffscreen) {
            continue;
        }
        const auto px = static_cast<std::size_t>(pixel[i]);
        if (depth[i] < zbuf[px] - kDepthTieEpsilon) {
            zbuf[px] = depth[i];
            out.rgb.values()[px] = cloud.colors[i];
            out.coverage.values()[px] = 1;
        }
    }
    return out;
}

} // namespace scpainter
