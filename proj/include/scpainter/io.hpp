// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scpainter/conditioning.hpp"
#include "scpainter/dataset.hpp"
#include "scpainter/geometry.hpp"
#include "scpainter/splat.hpp"

namespace scpainter {

namespace fs = std::filesystem;

// ---- .scpt tensors -------------------------------------------------------------
// "SCPT", u32 rank, rank x u32 dims, then float32 values, all little-endian.
// The header is 8 + 4 * rank bytes (16 for the rank-2 maps).

struct ScptTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

void write_scpt(const fs::path& path, std::span<const std::uint32_t> dims, std::span<const float> values);
[[nodiscard]] ScptTensor read_scpt(const fs::path& path);

/// Depth on disk: rank 3, dims (2, H, W); plane 0 holds meters (NaN where invalid),
/// plane 1 the validity flag (1 or 0).
void write_depth(const fs::path& path, const ScalarMap& depth, const BinaryMap& valid);
void read_depth(const fs::path& path, ScalarMap& depth, BinaryMap& valid);

/// Rank-2 (H, W) map.
void write_scalar_map(const fs::path& path, const ScalarMap& map);
[[nodiscard]] ScalarMap read_scalar_map(const fs::path& path);

void write_vector(const fs::path& path, std::span<const double> values);
[[nodiscard]] std::vector<double> read_vector(const fs::path& path);

// ---- PNG ---------------------------------------------------------------------

/// 8-bit RGB; channels are clamped to [0, 1] and rounded to the nearest level.
void write_png(const fs::path& path, const RgbImage& image);
/// Values are level / 255. Grayscale and alpha inputs are expanded/dropped.
[[nodiscard]] RgbImage read_png(const fs::path& path);

// ---- PLY ---------------------------------------------------------------------

/// Binary little-endian: x, y, z float32; red, green, blue uint8.
void write_point_cloud_ply(const fs::path& path, const ColorPointCloud& cloud);
[[nodiscard]] ColorPointCloud read_point_cloud_ply(const fs::path& path);

/// Asset PLY: x,y,z; scale_0..2 (plain standard deviations); rot_0..3 (w,x,y,z);
/// opacity in [0, 1]; f_dc_0..2 and channel-major f_rest_*. The canonical box lives
/// in a sidecar `<stem>.json`: {"dims": [l, w, h], "center": [0, 0, 0]}.
/// With `reference_convention`, scales are read as log-scales and opacity as a logit.
[[nodiscard]] GaussianAsset read_gaussian_asset(const fs::path& ply_path, bool reference_convention = false);
void write_gaussian_asset(const fs::path& ply_path, const GaussianAsset& asset);
[[nodiscard]] fs::path asset_sidecar_path(const fs::path& ply_path);

// ---- scene manifest ------------------------------------------------------------

/// Validating loader for scene.json; relative paths resolve against its directory.
[[nodiscard]] Scene load_scene(const fs::path& manifest, bool reference_convention = false);
/// Writes scene.json plus frames/ and assets/ under `dir`.
void save_scene(const fs::path& dir, const Scene& scene);

// ---- bundles and pairs -----------------------------------------------------------

inline constexpr const char* kMaskPolarity = "coverage";

/// I_%04d.png, cov_%04d.scpt, ma_%04d.scpt and bundle.json.
void write_bundle(const fs::path& dir, const ConditioningBundle& bundle);
[[nodiscard]] ConditioningBundle read_bundle(const fs::path& dir);

/// Bundle layout plus target_%04d.png and embed.scpt.
void write_pair(const fs::path& dir, const TrainingPair& pair);
[[nodiscard]] TrainingPair read_pair(const fs::path& dir);

/// Zero-padded 4-digit frame file name, e.g. frame_file("I_", 3, ".png") == "I_0003.png".
[[nodiscard]] std::string frame_file(const char* prefix, std::size_t index, const char* ext);

} // namespace scpainter
