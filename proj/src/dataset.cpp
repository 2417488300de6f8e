// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>

#include <Eigen/Core>

#include "scpainter/errors.hpp"
#include "scpainter/parallel.hpp"
#include "scpainter/rng.hpp"

namespace scpainter {

namespace {

constexpr int kMaxNeighbors = 2 * kNeighborRadius;
constexpr std::uint64_t kEmbedProjectionSeed = 0x5eed0c11b0000001ULL;

Tensor4 image_video(const RgbImage& image) {
    Tensor4 video({1, 3, static_cast<std::size_t>(image.height()), static_cast<std::size_t>(image.width())});
    set_rgb_frame(video, 0, image);
    return video;
}

Trajectory frame_trajectory(const Frame& frame) {
    return Trajectory({CameraView{frame.intrinsics, frame.pose}});
}

void require_frame_index(const Scene& scene, int index, const char* what) {
    if (index < 0 || index >= scene.frame_count()) {
        throw ConfigError(std::string(what) + ": frame index " + std::to_string(index) + " outside [0, " +
                          std::to_string(scene.frame_count()) + ")");
    }
}

TrainingPair finish_pair(ConditioningBundle bundle, const Frame& target_frame) {
    TrainingPair pair;
    pair.bundle = std::move(bundle);
    pair.target = image_video(target_frame.image);
    pair.first_frame_embed = embed_first_frame(target_frame.image);
    return pair;
}

} // namespace

const OrientedBox3D* SceneAsset::placement_at(int frame) const {
    for (const AssetPlacement& p : placements) {
        if (p.frame == frame) {
            return &p.box;
        }
    }
    return nullptr;
}

void Scene::validate() const {
    if (frames.empty()) {
        throw ConfigError("scene has no frames");
    }
    for (const Frame& f : frames) {
        f.validate();
    }
    for (const SceneAsset& a : assets) {
        for (const AssetPlacement& p : a.placements) {
            if (p.frame < 0 || p.frame >= frame_count()) {
                throw ConfigError("asset '" + a.id + "' is placed in missing frame " + std::to_string(p.frame));
            }
        }
    }
}

std::vector<int> sample_neighbors(int t, int n_frames, int k, std::uint64_t seed) {
    if (t < 0 || t >= n_frames) {
        throw ConfigError("sample_neighbors: frame " + std::to_string(t) + " outside [0, " +
                          std::to_string(n_frames) + ")");
    }
    if (k < 1 || k > kMaxNeighbors) {
        throw ConfigError("sample_neighbors: k must lie in [1, 16], got " + std::to_string(k));
    }
    std::vector<int> window;
    for (int i = std::max(0, t - kNeighborRadius); i <= std::min(n_frames - 1, t + kNeighborRadius); ++i) {
        if (i != t) {
            window.push_back(i);
        }
    }
    if (window.empty()) {
        throw ConfigError("sample_neighbors: no neighbor frames in a segment of one frame");
    }
    const std::size_t take = std::min(window.size(), static_cast<std::size_t>(k));
    Rng rng(seed);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(window.size() - i));
        std::swap(window[i], window[j]);
    }
    window.resize(take);
    return window;
}

std::uint64_t pair_seed(std::uint64_t global_seed, std::uint64_t scene_id, int t) {
    return combine_seeds({global_seed, scene_id, static_cast<std::uint64_t>(t)});
}

TrainingPair build_nvs_pair(const Scene& scene, int t, std::span<const int> neighbors) {
    require_frame_index(scene, t, "build_nvs_pair");
    if (neighbors.empty()) {
        throw ConfigError("build_nvs_pair: no neighbor frames given");
    }
    ColorPointCloud cloud;
    for (int n : neighbors) {
        require_frame_index(scene, n, "build_nvs_pair");
        if (n == t) {
            throw ConfigError("build_nvs_pair: the target frame cannot be its own neighbor");
        }
        cloud.append(unproject(scene.frames[static_cast<std::size_t>(n)]));
    }

    std::vector<Gaussian3D> splats;
    for (const SceneAsset& asset : scene.assets) {
        if (const OrientedBox3D* box = asset.placement_at(t)) {
            const auto placed = align_asset(asset.asset, *box);
            splats.insert(splats.end(), placed.begin(), placed.end());
        }
    }
    const Frame& target = scene.frames[static_cast<std::size_t>(t)];
    const std::vector<std::vector<Gaussian3D>> frame_splats{std::move(splats)};
    return finish_pair(render_joint_per_frame(cloud, frame_splats, frame_trajectory(target)), target);
}

RemovalResult remove_points_in_box(const ColorPointCloud& cloud, const OrientedBox3D& box, double dilation) {
    cloud.validate();
    RemovalResult result;
    result.cloud.source_frame = cloud.source_frame;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (box.contains(cloud.positions[i], dilation)) {
            ++result.removed;
            continue;
        }
        result.cloud.positions.push_back(cloud.positions[i]);
        result.cloud.colors.push_back(cloud.colors[i]);
    }
    return result;
}

TrainingPair build_insertion_pair(const Scene& scene, std::size_t asset_index, int frame_t,
                                  ColorPointCloud* rendered_cloud) {
    require_frame_index(scene, frame_t, "build_insertion_pair");
    if (asset_index >= scene.assets.size()) {
        throw ConfigError("build_insertion_pair: asset index " + std::to_string(asset_index) + " out of range");
    }
    const SceneAsset& asset = scene.assets[asset_index];
    const OrientedBox3D* box = asset.placement_at(frame_t);
    if (box == nullptr) {
        throw ConfigError("build_insertion_pair: asset '" + asset.id + "' has no box in frame " +
                          std::to_string(frame_t));
    }
    const Frame& frame = scene.frames[static_cast<std::size_t>(frame_t)];
    RemovalResult removal = remove_points_in_box(unproject(frame), *box);
    const std::vector<std::vector<Gaussian3D>> frame_splats{align_asset(asset.asset, *box)};
    if (rendered_cloud != nullptr) {
        *rendered_cloud = removal.cloud;
    }
    return finish_pair(render_joint_per_frame(removal.cloud, frame_splats, frame_trajectory(frame)), frame);
}

FilterVerdict filter_asset_bbox(const Vec3& asset_dims, const Vec3& original_dims, double tol) {
    if (!(original_dims.array() > 0.0).all()) {
        throw ConfigError("filter_asset_bbox: original dims must be positive");
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
        if (std::abs(asset_dims[i] - original_dims[i]) / original_dims[i] > tol) {
            return FilterVerdict::reject;
        }
    }
    return FilterVerdict::accept;
}

std::vector<double> embed_first_frame(const RgbImage& image) {
    constexpr int kCells = kEmbedGrid * kEmbedGrid;
    static const Eigen::MatrixXd projection = [] {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(kEmbedDim), kCells + 1);
        Rng rng(kEmbedProjectionSeed);
        const double scale = 1.0 / std::sqrt(static_cast<double>(kCells + 1));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                m(r, c) = scale * rng.normal();
            }
        }
        return m;
    }();
    if (image.width() <= 0 || image.height() <= 0) {
        throw DimensionMismatch("embed_first_frame: empty image");
    }

    // Area-average thumbnail; every cell covers at least one source pixel.
    Eigen::VectorXd feature(kCells + 1);
    auto cell_range = [](int cell, int extent) {
        const int lo = cell * extent / kEmbedGrid;
        const int hi = std::max((cell + 1) * extent / kEmbedGrid, lo + 1);
        return std::pair{std::min(lo, extent - 1), std::min(hi, extent)};
    };
    for (int cy = 0; cy < kEmbedGrid; ++cy) {
        const auto [y0, y1] = cell_range(cy, image.height());
        for (int cx = 0; cx < kEmbedGrid; ++cx) {
            const auto [x0, x1] = cell_range(cx, image.width());
            double sum = 0.0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const Rgb& c = image(x, y);
                    sum += 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z();
                }
            }
            feature[cy * kEmbedGrid + cx] = sum / ((y1 - y0) * (x1 - x0));
        }
    }
    feature[kCells] = 1.0;
    Eigen::Matrix<double, static_cast<int>(kEmbedDim), 1> embedding = projection * feature;
    embedding.normalize();
    return {embedding.data(), embedding.data() + embedding.size()};
}

// ---- synthetic scenes ------------------------------------------------------

RigidPose level_camera_pose(const Vec3& position, double heading) {
    const Vec3 forward(std::cos(heading), std::sin(heading), 0.0);
    const Vec3 right(std::sin(heading), -std::cos(heading), 0.0);
    const Vec3 down(0.0, 0.0, -1.0);
    Mat3 rotation;
    rotation.col(0) = right;
    rotation.col(1) = down;
    rotation.col(2) = forward;
    return {rotation, position};
}

SynthSpec canonical_synth_spec() {
    SynthSpec spec;
    spec.cuboids = {
        SynthCuboid{Vec3(16.0, 1.2, 0.75), Vec3(4.4, 1.9, 1.5), 0.0, Rgb(0.75, 0.12, 0.10), "car0"},
        SynthCuboid{Vec3(22.0, -2.6, 0.8), Vec3(4.6, 2.0, 1.6), 0.1, Rgb(0.15, 0.25, 0.65), ""},
        SynthCuboid{Vec3(12.0, 7.5, 3.0), Vec3(10.0, 3.0, 6.0), 0.0, Rgb(0.70, 0.68, 0.60), ""},
        SynthCuboid{Vec3(14.0, -8.0, 2.5), Vec3(8.0, 3.0, 5.0), 0.0, Rgb(0.55, 0.45, 0.35), ""},
        SynthCuboid{Vec3(34.0, 0.0, 4.0), Vec3(3.0, 24.0, 8.0), 0.0, Rgb(0.45, 0.55, 0.50), ""},
    };
    return spec;
}

namespace {

struct Hit {
    double depth = std::numeric_limits<double>::infinity();
    Rgb color = Rgb::Zero();
};

const Rgb kSkyColor(0.55, 0.70, 0.90);

/// Slab test in the box frame. Returns the entry parameter and the entry axis
/// (0..2) with its sign, or a negative parameter on a miss.
std::pair<double, int> intersect_box(const OrientedBox3D& box, const Vec3& origin, const Vec3& dir) {
    const Vec3 o = box.to_local(origin);
    const Vec3 d = box.rotation().transpose() * dir;
    const Vec3 half = 0.5 * box.dims();
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int face = -1;
    for (int axis = 0; axis < 3; ++axis) {
        if (d[axis] == 0.0) {
            if (std::abs(o[axis]) > half[axis]) {
                return {-1.0, -1};
            }
            continue;
        }
        double t0 = (-half[axis] - o[axis]) / d[axis];
        double t1 = (half[axis] - o[axis]) / d[axis];
        int entry_face = d[axis] > 0.0 ? 2 * axis : 2 * axis + 1;
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        if (t0 > t_near) {
            t_near = t0;
            face = entry_face;
        }
        t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_near <= 0.0) {
        return {-1.0, -1};
    }
    return {t_near, face};
}

double face_shade(int face) {
    // face = 2 * axis + (entered through the + side ? 1 : 0)
    static constexpr double kShade[] = {0.80, 0.80, 0.65, 0.65, 0.50, 1.00};
    return kShade[face];
}

Rgb ground_color(const Vec3& p, double cell, const std::array<Rgb, 2>& palette, std::uint64_t seed) {
    const auto ix = static_cast<std::int64_t>(std::floor(p.x() / cell));
    const auto iy = static_cast<std::int64_t>(std::floor(p.y() / cell));
    const Rgb& base = palette[static_cast<std::size_t>((ix + iy) & 1)];
    const std::uint64_t h = combine_seeds({seed, static_cast<std::uint64_t>(ix), static_cast<std::uint64_t>(iy)});
    const double jitter = 0.8 + 0.2 * static_cast<double>(h >> 11) * 0x1.0p-53;
    return base * jitter;
}

void validate_spec(const SynthSpec& spec, const std::vector<OrientedBox3D>& boxes) {
    if (spec.width <= 0 || spec.height <= 0 || !(spec.focal > 0.0)) {
        throw ConfigError("synth_scene: image size and focal length must be positive");
    }
    if (spec.frames < 1) {
        throw ConfigError("synth_scene: camera path needs at least one frame");
    }
    if (!spec.start.allFinite() || !std::isfinite(spec.step) || !std::isfinite(spec.heading) ||
        !(spec.checker_size > 0.0)) {
        throw ConfigError("synth_scene: camera path must be finite");
    }
    for (int i = 0; i < spec.frames; ++i) {
        const Vec3 eye = spec.start + i * spec.step * Vec3(std::cos(spec.heading), std::sin(spec.heading), 0.0);
        if (spec.ground_plane && eye.z() <= spec.plane_height + kNearClip) {
            throw ConfigError("synth_scene: camera path goes below the ground plane");
        }
        for (const OrientedBox3D& box : boxes) {
            if (box.contains(eye)) {
                throw ConfigError("synth_scene: camera path enters a cuboid");
            }
        }
    }
}

} // namespace

GaussianAsset make_box_asset(const Vec3& dims, const Rgb& color, int count, std::uint64_t seed) {
    if (count < 1) {
        throw ConfigError("make_box_asset: need at least one gaussian");
    }
    Rng rng(seed);
    const double base_scale = 0.6 * std::cbrt(dims.prod() / count);
    std::vector<Gaussian3D> gaussians;
    gaussians.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Gaussian3D g;
        g.position = Vec3(rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45))
                         .cwiseProduct(dims);
        g.scale = base_scale * Vec3(rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2));
        const double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
        g.rotation = Eigen::Quaterniond(w, x, y, z).normalized();
        g.opacity = rng.uniform(0.8, 1.0);
        const Rgb tint = (color * rng.uniform(0.9, 1.1)).cwiseMin(1.0);
        g.sh = {(tint - Rgb::Constant(0.5)) / kShC0};
        gaussians.push_back(std::move(g));
    }
    return {std::move(gaussians), dims};
}

Scene synth_scene(const SynthSpec& spec, std::uint64_t seed) {
    std::vector<OrientedBox3D> boxes;
    std::vector<Rgb> colors;
    Rng palette_rng(combine_seeds({seed, 0x7a11e77eULL}));
    for (const SynthCuboid& c : spec.cuboids) {
        boxes.emplace_back(c.center, c.dims, c.heading);
        const Rgb random_color(palette_rng.uniform(0.2, 0.9), palette_rng.uniform(0.2, 0.9),
                               palette_rng.uniform(0.2, 0.9));
        colors.push_back(c.color.value_or(random_color));
    }
    validate_spec(spec, boxes);
    const std::array<Rgb, 2> palette{Rgb(palette_rng.uniform(0.25, 0.45), palette_rng.uniform(0.25, 0.45),
                                         palette_rng.uniform(0.25, 0.45)),
                                     Rgb(palette_rng.uniform(0.5, 0.7), palette_rng.uniform(0.5, 0.7),
                                         palette_rng.uniform(0.5, 0.7))};
    const std::uint64_t texture_seed = combine_seeds({seed, 0x9e0ULL});

    const CameraIntrinsics intrinsics(spec.focal, spec.focal, 0.5 * spec.width, 0.5 * spec.height, spec.width,
                                      spec.height);
    const Vec3 forward(std::cos(spec.heading), std::sin(spec.heading), 0.0);

    Scene scene;
    for (int i = 0; i < spec.frames; ++i) {
        const RigidPose pose = level_camera_pose(spec.start + i * spec.step * forward, spec.heading);
        Frame frame{RgbImage(spec.width, spec.height, kSkyColor),
                    ScalarMap(spec.width, spec.height, 0.0),
                    BinaryMap(spec.width, spec.height, 0),
                    intrinsics,
                    pose,
                    boxes};
        const Vec3 eye = pose.translation();
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                // Unit camera-z step, so the ray parameter is the z-depth.
                const Vec3 dir = pose.rotation() * intrinsics.backproject(x + 0.5, y + 0.5);
                Hit hit;
                if (spec.ground_plane && dir.z() < 0.0) {
                    const double s = (spec.plane_height - eye.z()) / dir.z();
                    hit = {s, ground_color(eye + s * dir, spec.checker_size, palette, texture_seed)};
                }
                for (std::size_t b = 0; b < boxes.size(); ++b) {
                    const auto [s, face] = intersect_box(boxes[b], eye, dir);
                    if (s > 0.0 && s < hit.depth) {
                        hit = {s, colors[b] * face_shade(face)};
                    }
                }
                if (std::isfinite(hit.depth)) {
                    frame.depth(x, y) = hit.depth;
                    frame.depth_valid(x, y) = 1;
                    frame.image(x, y) = hit.color.cwiseMin(1.0);
                }
            }
        }
        scene.frames.push_back(std::move(frame));
    }

    for (std::size_t b = 0; b < spec.cuboids.size(); ++b) {
        const SynthCuboid& c = spec.cuboids[b];
        if (c.asset_id.empty()) {
            continue;
        }
        SceneAsset asset{c.asset_id,
                         make_box_asset(c.dims, colors[b], spec.asset_gaussians, combine_seeds({seed, 0xa55e7ULL, b})),
                         {}};
        for (int i = 0; i < spec.frames; ++i) {
            asset.placements.push_back({i, boxes[b]});
        }
        scene.assets.push_back(std::move(asset));
    }
    return scene;
}

} // namespace scpainter
