// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "scpainter/grid.hpp"

namespace scpainter {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Points with camera-space depth at or below this are discarded.
inline constexpr double kNearClip = 0.01;
/// Depths closer than this count as equal in the z-buffer; the lower point index wins.
inline constexpr double kDepthTieEpsilon = 1e-12;
/// Width and height of the latent grid cell in pixels.
inline constexpr int kLatentStride = 8;

/// Pinhole camera. Camera frame is x right, y down, z forward.
class CameraIntrinsics {
public:
    CameraIntrinsics(double fx, double fy, double cx, double cy, int width, int height);

    [[nodiscard]] double fx() const { return fx_; }
    [[nodiscard]] double fy() const { return fy_; }
    [[nodiscard]] double cx() const { return cx_; }
    [[nodiscard]] double cy() const { return cy_; }
    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }

    /// True when both image dimensions are multiples of kLatentStride.
    [[nodiscard]] bool latent_aligned() const;

    /// Continuous image coordinates of a camera-space point (z > 0).
    [[nodiscard]] Vec2 project(const Vec3& p_cam) const {
        return {fx_ * p_cam.x() / p_cam.z() + cx_, fy_ * p_cam.y() / p_cam.z() + cy_};
    }
    /// K^-1 [u, v, 1]^T: the camera-space point at unit z-depth.
    [[nodiscard]] Vec3 backproject(double u, double v) const {
        return {(u - cx_) / fx_, (v - cy_) / fy_, 1.0};
    }

    bool operator==(const CameraIntrinsics&) const = default;

private:
    double fx_;
    double fy_;
    double cx_;
    double cy_;
    int width_;
    int height_;
};

/// Camera-to-world (or object-to-world) rigid transform.
class RigidPose {
public:
    RigidPose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
    /// Throws ConfigError unless rotation is orthonormal with det +1 within 1e-9.
    RigidPose(const Mat3& rotation, const Vec3& translation);

    [[nodiscard]] static RigidPose identity() { return {}; }
    [[nodiscard]] static RigidPose from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation);

    [[nodiscard]] const Mat3& rotation() const { return rotation_; }
    [[nodiscard]] const Vec3& translation() const { return translation_; }

    [[nodiscard]] Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
    /// World point into this pose's local frame.
    [[nodiscard]] Vec3 apply_inverse(const Vec3& p) const { return rotation_.transpose() * (p - translation_); }

    /// Translate along the local +x axis expressed in world coordinates.
    [[nodiscard]] RigidPose shifted_laterally(double meters) const;

private:
    Mat3 rotation_;
    Vec3 translation_;
};

/// compose(a, b).apply(p) == a.apply(b.apply(p)).
[[nodiscard]] RigidPose compose(const RigidPose& a, const RigidPose& b);
[[nodiscard]] RigidPose invert(const RigidPose& a);

/// Rotation of `heading` radians about the world up axis (+z).
[[nodiscard]] Mat3 yaw_rotation(double heading);

/// Box with its own axes: dims are (length, width, height) along local x, y, z.
class OrientedBox3D {
public:
    OrientedBox3D(const Vec3& center, const Vec3& dims, double heading);
    OrientedBox3D(const Vec3& center, const Vec3& dims, const Mat3& rotation);

    [[nodiscard]] const Vec3& center() const { return center_; }
    [[nodiscard]] const Vec3& dims() const { return dims_; }
    [[nodiscard]] const Mat3& rotation() const { return rotation_; }
    [[nodiscard]] RigidPose pose() const { return {rotation_, center_}; }

    [[nodiscard]] Vec3 to_local(const Vec3& p) const { return rotation_.transpose() * (p - center_); }
    /// Containment in the box with every dimension multiplied by `scale`.
    [[nodiscard]] bool contains(const Vec3& p, double scale = 1.0) const;

private:
    Vec3 center_;
    Vec3 dims_;
    Mat3 rotation_;
};

struct Frame {
    RgbImage image;
    /// Meters along the camera z axis. Only entries with depth_valid != 0 are meaningful.
    ScalarMap depth;
    BinaryMap depth_valid;
    CameraIntrinsics intrinsics;
    RigidPose pose;
    std::vector<OrientedBox3D> boxes;

    /// Throws DimensionMismatch/ConfigError when image, depth and intrinsics disagree
    /// or a valid depth is non-finite or non-positive.
    void validate() const;
};

struct ColorPointCloud {
    std::vector<Vec3> positions;
    std::vector<Rgb> colors;
    int source_frame = -1;

    [[nodiscard]] std::size_t size() const { return positions.size(); }
    [[nodiscard]] bool empty() const { return positions.empty(); }
    void validate() const;
    void append(const ColorPointCloud& other);
};

/// One colored point per valid-depth pixel, through the pixel center.
[[nodiscard]] ColorPointCloud unproject(const Frame& frame);

struct PointProjection {
    RgbImage rgb;
    BinaryMap coverage;
    /// +inf where no point landed.
    ScalarMap zbuf;
};

/// One-pixel splat of each point into the pixel containing its projection,
/// keeping the nearest by camera-space depth.
[[nodiscard]] PointProjection project_points(const ColorPointCloud& cloud,
                                             const CameraIntrinsics& intrinsics,
                                             const RigidPose& pose);

} // namespace scpainter
