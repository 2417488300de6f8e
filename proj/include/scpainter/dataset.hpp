// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scpainter/conditioning.hpp"
#include "scpainter/geometry.hpp"
#include "scpainter/splat.hpp"

namespace scpainter {

inline constexpr int kNeighborRadius = 8;
inline constexpr int kDefaultNeighborCount = 4;
inline constexpr double kRemovalDilation = 1.10;
inline constexpr double kDefaultBoxTolerance = 0.15;
inline constexpr std::size_t kEmbedDim = 512;
inline constexpr int kEmbedGrid = 32;

struct AssetPlacement {
    int frame = 0;
    OrientedBox3D box;
};

struct SceneAsset {
    std::string id;
    GaussianAsset asset;
    std::vector<AssetPlacement> placements;

    [[nodiscard]] const OrientedBox3D* placement_at(int frame) const;
};

/// One recorded segment.
struct Scene {
    std::vector<Frame> frames;
    std::vector<SceneAsset> assets;

    void validate() const;
    [[nodiscard]] int frame_count() const { return static_cast<int>(frames.size()); }
};

struct TrainingPair {
    ConditioningBundle bundle;
    Tensor4 target; ///< T x 3 x H x W ground truth
    std::vector<double> first_frame_embed;
};

/// k distinct frames drawn uniformly from the clamped window [t-8, t+8] minus t.
/// k above the window size is clamped to it. Throws ConfigError for k outside
/// [1, 16] or an empty window.
[[nodiscard]] std::vector<int> sample_neighbors(int t, int n_frames, int k, std::uint64_t seed);

/// Per-job seed so pair construction is independent of scheduling.
[[nodiscard]] std::uint64_t pair_seed(std::uint64_t global_seed, std::uint64_t scene_id, int t);

/// Points from the neighbor frames (never t itself) plus the assets placed at t,
/// rendered into frame t's camera.
[[nodiscard]] TrainingPair build_nvs_pair(const Scene& scene, int t, std::span<const int> neighbors);

struct RemovalResult {
    ColorPointCloud cloud;
    std::size_t removed = 0;
};

/// Drops points inside `box` with every dimension scaled by `dilation`.
[[nodiscard]] RemovalResult remove_points_in_box(const ColorPointCloud& cloud,
                                                 const OrientedBox3D& box,
                                                 double dilation = kRemovalDilation);

/// Replaces the real object at frame_t with the splat asset scene.assets[asset_index].
/// The target is the untouched frame, which still shows the real object.
/// `rendered_cloud`, when given, receives the scene cloud after removal.
[[nodiscard]] TrainingPair build_insertion_pair(const Scene& scene, std::size_t asset_index, int frame_t,
                                                ColorPointCloud* rendered_cloud = nullptr);

enum class FilterVerdict { accept, reject };

/// Accepts iff every axis deviates from the original by at most `tol` (relative).
[[nodiscard]] FilterVerdict filter_asset_bbox(const Vec3& asset_dims, const Vec3& original_dims,
                                              double tol = kDefaultBoxTolerance);

/// Fixed random projection of the 32 x 32 grayscale thumbnail, L2-normalized.
/// Deterministic stand-in for an image-encoder embedding.
[[nodiscard]] std::vector<double> embed_first_frame(const RgbImage& image);

// ---- synthetic scenes ------------------------------------------------------

struct SynthCuboid {
    Vec3 center = Vec3::Zero();
    Vec3 dims = Vec3::Ones();
    double heading = 0.0;
    std::optional<Rgb> color;
    /// Non-empty: the cuboid also becomes a splat asset placed on it in every frame.
    std::string asset_id;
};

/// Procedural world: z is up, an optional textured ground plane and colored cuboids.
/// The camera starts at `start`, faces `heading` (yaw from +x) and advances `step`
/// meters per frame along it.
struct SynthSpec {
    int width = 128;
    int height = 64;
    double focal = 64.0;
    int frames = 8;
    Vec3 start{0.0, 0.0, 1.5};
    double heading = 0.0;
    double step = 1.0;
    bool ground_plane = true;
    double plane_height = 0.0;
    double checker_size = 1.0;
    std::vector<SynthCuboid> cuboids;
    int asset_gaussians = 600;
};

/// Street-like scene used by the shift-protocol and training harnesses.
[[nodiscard]] SynthSpec canonical_synth_spec();

/// Camera-to-world pose looking along `heading` with a level horizon.
[[nodiscard]] RigidPose level_camera_pose(const Vec3& position, double heading);

[[nodiscard]] Scene synth_scene(const SynthSpec& spec, std::uint64_t seed);

/// Degree-0 gaussians filling a box of `dims`, colored `color`.
[[nodiscard]] GaussianAsset make_box_asset(const Vec3& dims, const Rgb& color, int count, std::uint64_t seed);

} // namespace scpainter
