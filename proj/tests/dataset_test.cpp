// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "scpainter/dataset.hpp"
#include "scpainter/errors.hpp"
#include "support.hpp"

namespace scpainter {
namespace {

// ---- analytic two-plane scene --------------------------------------------------
// A wall at z = 16 fills the view and a 2 m square occluder floats at z = 8. With
// f = 32, a 1 m lateral baseline moves the wall by 2 px and the occluder by 4 px.

constexpr double kWallZ = 16.0;
constexpr double kOccluderZ = 8.0;
constexpr double kHalfOccluder = 1.0;
const CameraIntrinsics kPlaneCamera(32.0, 32.0, 32.0, 16.0, 64, 32);

Vec3 first_hit(const Vec3& eye, const Vec3& dir) {
    const double t = (kOccluderZ - eye.z()) / dir.z();
    const Vec3 p = eye + t * dir;
    if (std::abs(p.x()) <= kHalfOccluder && std::abs(p.y()) <= kHalfOccluder) {
        return p;
    }
    return eye + (kWallZ - eye.z()) / dir.z() * dir;
}

Frame plane_frame(const Vec3& eye) {
    const RigidPose pose(Mat3::Identity(), eye);
    Frame f{RgbImage(64, 32), ScalarMap(64, 32, 0.0), BinaryMap(64, 32, 1), kPlaneCamera, pose, {}};
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 64; ++x) {
            const Vec3 p = first_hit(eye, kPlaneCamera.backproject(x + 0.5, y + 0.5));
            f.depth(x, y) = p.z() - eye.z();
            f.image(x, y) = p.z() < kWallZ ? Rgb(0.9, 0.1, 0.1) : Rgb(0.3, 0.3, 0.3 + 0.005 * x);
        }
    }
    return f;
}

/// Whether the surface seen through target pixel (x, y) is visible from `neighbor_eye`.
bool visible_from(const Vec3& target_eye, const Vec3& neighbor_eye, int x, int y) {
    const Vec3 p = first_hit(target_eye, kPlaneCamera.backproject(x + 0.5, y + 0.5));
    const Vec3 rel = p - neighbor_eye;
    const double u = kPlaneCamera.fx() * rel.x() / rel.z() + kPlaneCamera.cx();
    const double v = kPlaneCamera.fy() * rel.y() / rel.z() + kPlaneCamera.cy();
    if (u < 0 || u >= 64 || v < 0 || v >= 32) {
        return false;
    }
    return (first_hit(neighbor_eye, rel) - p).norm() < 1e-9;
}

TEST(SampleNeighbors, BoundaryClamp) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        for (int idx : sample_neighbors(0, 40, 4, seed)) {
            EXPECT_GE(idx, 1);
            EXPECT_LE(idx, 8);
        }
        for (int idx : sample_neighbors(39, 40, 4, seed)) {
            EXPECT_GE(idx, 31);
            EXPECT_LE(idx, 38);
        }
    }
}

TEST(SampleNeighbors, FullWindow) {
    const auto all = sample_neighbors(10, 40, 16, 5);
    const std::set<int> got(all.begin(), all.end());
    std::set<int> want;
    for (int i = 2; i <= 18; ++i) {
        if (i != 10) {
            want.insert(i);
        }
    }
    EXPECT_EQ(got, want);
    EXPECT_EQ(all.size(), 16u);
    // Clamped when the window is smaller than k.
    const auto small = sample_neighbors(1, 4, 16, 5);
    EXPECT_EQ(std::set<int>(small.begin(), small.end()), (std::set<int>{0, 2, 3}));
}

TEST(SampleNeighbors, DistinctAndDeterministic) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto a = sample_neighbors(20, 50, 6, seed);
        EXPECT_EQ(a, sample_neighbors(20, 50, 6, seed));
        EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 6u);
        EXPECT_EQ(std::count(a.begin(), a.end(), 20), 0);
    }
}

TEST(SampleNeighbors, UniformWithinBinomialBounds) {
    constexpr int kDraws = 1000;
    std::map<int, int> counts;
    for (int i = 0; i < kDraws; ++i) {
        for (int idx : sample_neighbors(20, 50, 4, pair_seed(7, 0, i))) {
            ++counts[idx];
        }
    }
    ASSERT_EQ(counts.size(), 16u);
    const double p = 4.0 / 16.0;
    const double mean = kDraws * p;
    const double sd = std::sqrt(kDraws * p * (1 - p));
    for (const auto& [idx, n] : counts) {
        EXPECT_NEAR(n, mean, 3 * sd) << "index " << idx;
    }
}

TEST(SampleNeighbors, Errors) {
    EXPECT_THROW(static_cast<void>(sample_neighbors(0, 1, 1, 0)), ConfigError);
    EXPECT_THROW(static_cast<void>(sample_neighbors(0, 10, 0, 0)), ConfigError);
    EXPECT_THROW(static_cast<void>(sample_neighbors(0, 10, 17, 0)), ConfigError);
    EXPECT_THROW(static_cast<void>(sample_neighbors(10, 10, 2, 0)), ConfigError);
}

TEST(PairSeed, DependsOnEveryComponent) {
    const auto base = pair_seed(1, 2, 3);
    EXPECT_NE(base, pair_seed(0, 2, 3));
    EXPECT_NE(base, pair_seed(1, 3, 3));
    EXPECT_NE(base, pair_seed(1, 2, 4));
    EXPECT_EQ(base, pair_seed(1, 2, 3));
}

TEST(BuildNvsPair, RejectsSelfNeighbor) {
    Scene scene;
    scene.frames = {plane_frame(Vec3::Zero()), plane_frame(Vec3(1, 0, 0))};
    const std::vector<int> self{0};
    EXPECT_THROW(static_cast<void>(build_nvs_pair(scene, 0, self)), ConfigError);
    const std::vector<int> bad{5};
    EXPECT_THROW(static_cast<void>(build_nvs_pair(scene, 0, bad)), ConfigError);
}

TEST(BuildNvsPair, StaticCameraCoverageEqualsValidity) {
    Rng rng(31);
    Frame f = testing::random_frame(rng, 32, 16);
    Scene scene;
    scene.frames = {f, f};
    const std::vector<int> neighbors{1};
    const TrainingPair pair = build_nvs_pair(scene, 0, neighbors);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 32; ++x) {
            EXPECT_EQ(pair.bundle.coverage(0, 0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)),
                      f.depth_valid(x, y) ? 1.0 : 0.0);
        }
    }
    EXPECT_EQ(rgb_frame(pair.target, 0), f.image);
    EXPECT_EQ(pair.first_frame_embed.size(), kEmbedDim);
}

TEST(BuildNvsPair, DisocclusionMatchesAnalyticRegion) {
    for (const double baseline : {1.0, -1.0, 2.0}) {
        const Vec3 target_eye = Vec3::Zero();
        const Vec3 neighbor_eye(baseline, 0, 0);
        Scene scene;
        scene.frames = {plane_frame(target_eye), plane_frame(neighbor_eye)};
        const std::vector<int> neighbors{1};
        const TrainingPair pair = build_nvs_pair(scene, 0, neighbors);

        BinaryMap oracle(64, 32, 0);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 64; ++x) {
                oracle(x, y) = visible_from(target_eye, neighbor_eye, x, y) ? 1 : 0;
            }
        }
        int holes = 0;
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 64; ++x) {
                holes += 1 - oracle(x, y);
                const double got = pair.bundle.coverage(0, 0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                if (got == oracle(x, y)) {
                    continue;
                }
                // Mismatches are allowed only on the oracle's region boundary.
                bool boundary = false;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx >= 0 && nx < 64 && ny >= 0 && ny < 32 && oracle(nx, ny) != oracle(x, y)) {
                            boundary = true;
                        }
                    }
                }
                EXPECT_TRUE(boundary) << "baseline " << baseline << " pixel " << x << "," << y;
            }
        }
        EXPECT_GT(holes, 0);
    }
}

TEST(RemovePointsInBox, CountMatchesBruteForce) {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const OrientedBox3D box(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                                Vec3(rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2)),
                                rng.uniform(-M_PI, M_PI));
        ColorPointCloud cloud;
        std::size_t inside = 0;
        for (int i = 0; i < 500; ++i) {
            const Vec3 p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
            cloud.positions.push_back(p);
            cloud.colors.push_back(testing::random_rgb(rng));
            inside += testing::inside_box(box, p, kRemovalDilation) ? 1 : 0;
        }
        const RemovalResult r = remove_points_in_box(cloud, box);
        EXPECT_EQ(r.removed, inside);
        EXPECT_EQ(r.cloud.size(), cloud.size() - inside);
        for (const Vec3& p : r.cloud.positions) {
            EXPECT_FALSE(testing::inside_box(box, p, kRemovalDilation));
        }
    }
}

TEST(RemovePointsInBox, ExactKnownCount) {
    const OrientedBox3D box(Vec3(10, 0, 1), Vec3(4, 2, 2), 0.3);
    ColorPointCloud cloud;
    for (int i = 0; i < 7; ++i) {
        cloud.positions.push_back(box.pose().apply(Vec3(-1.5 + 0.5 * i, 0.2, -0.3)));
        cloud.colors.push_back(Rgb::Zero());
    }
    for (int i = 0; i < 5; ++i) {
        cloud.positions.push_back(box.pose().apply(Vec3(0.0, 1.2 + 0.1 * i, 0.0)));
        cloud.colors.push_back(Rgb::Zero());
    }
    EXPECT_EQ(remove_points_in_box(cloud, box).removed, 7u);
}

Scene single_asset_scene() {
    SynthSpec spec = canonical_synth_spec();
    spec.frames = 2;
    spec.asset_gaussians = 200;
    return synth_scene(spec, 3);
}

TEST(BuildInsertionPair, RemovesPointsAndKeepsMaskInCoverage) {
    const Scene scene = single_asset_scene();
    ASSERT_EQ(scene.assets.size(), 1u);
    for (int t = 0; t < scene.frame_count(); ++t) {
        ColorPointCloud rendered;
        const TrainingPair pair = build_insertion_pair(scene, 0, t, &rendered);
        const OrientedBox3D& box = *scene.assets[0].placement_at(t);
        const ColorPointCloud full = unproject(scene.frames[static_cast<std::size_t>(t)]);
        std::size_t inside = 0;
        for (const Vec3& p : full.positions) {
            inside += testing::inside_box(box, p, kRemovalDilation) ? 1 : 0;
        }
        EXPECT_GT(inside, 0u);
        EXPECT_EQ(rendered.size(), full.size() - inside);
        for (const Vec3& p : rendered.positions) {
            EXPECT_FALSE(testing::inside_box(box, p, kRemovalDilation));
        }
        double asset_pixels = 0.0;
        for (std::size_t i = 0; i < pair.bundle.asset_mask.values().size(); ++i) {
            EXPECT_LE(pair.bundle.asset_mask.values()[i], pair.bundle.coverage.values()[i]);
            asset_pixels += pair.bundle.asset_mask.values()[i];
        }
        EXPECT_GT(asset_pixels, 0.0);
        EXPECT_EQ(rgb_frame(pair.target, 0), scene.frames[static_cast<std::size_t>(t)].image);
    }
}

TEST(BuildInsertionPair, EmptyBoxRegionIsPlainJointRender) {
    Scene scene = single_asset_scene();
    // Move the placement into empty air above the cameras.
    const OrientedBox3D air(Vec3(8, 0, 30), Vec3(1, 1, 1), 0.0);
    scene.assets[0] = SceneAsset{"air", make_box_asset(Vec3(1, 1, 1), Rgb(1, 0, 0), 20, 1), {{0, air}}};
    ColorPointCloud rendered;
    const TrainingPair pair = build_insertion_pair(scene, 0, 0, &rendered);
    const ColorPointCloud full = unproject(scene.frames[0]);
    EXPECT_EQ(rendered.positions, full.positions);
    const std::vector<std::vector<Gaussian3D>> splats{align_asset(scene.assets[0].asset, air)};
    const ConditioningBundle plain =
        render_joint(full, splats, Trajectory({CameraView{scene.frames[0].intrinsics, scene.frames[0].pose}}));
    EXPECT_EQ(pair.bundle.rgb, plain.rgb);
    EXPECT_EQ(pair.bundle.coverage, plain.coverage);
}

TEST(BuildInsertionPair, TotalRemovalLeavesOnlyAsset) {
    Scene scene = single_asset_scene();
    // A box around everything the first camera sees.
    const OrientedBox3D all(Vec3::Zero(), Vec3(600, 600, 600), 0.0);
    scene.assets[0] = SceneAsset{"big", make_box_asset(Vec3(600, 600, 600), Rgb(0, 1, 0), 20, 2), {{0, all}}};
    std::vector<Gaussian3D> gs;
    for (Gaussian3D g : scene.assets[0].asset.gaussians()) {
        g.scale = Vec3::Constant(3.0);
        gs.push_back(g);
    }
    gs.push_back(Gaussian3D{});
    gs.back().position = Vec3(10, 0, 1.5);
    scene.assets[0].asset = GaussianAsset(gs, Vec3(600, 600, 600));
    ColorPointCloud rendered;
    const TrainingPair pair = build_insertion_pair(scene, 0, 0, &rendered);
    EXPECT_TRUE(rendered.empty());
    for (std::size_t i = 0; i < pair.bundle.coverage.values().size(); ++i) {
        EXPECT_EQ(pair.bundle.coverage.values()[i], pair.bundle.asset_mask.values()[i]);
    }
}

TEST(BuildInsertionPair, MissingPlacementIsAnError) {
    Scene scene = single_asset_scene();
    scene.assets[0].placements.erase(scene.assets[0].placements.begin() + 1, scene.assets[0].placements.end());
    EXPECT_THROW(static_cast<void>(build_insertion_pair(scene, 0, 1)), ConfigError);
    EXPECT_THROW(static_cast<void>(build_insertion_pair(scene, 3, 0)), ConfigError);
}

TEST(FilterAssetBbox, Examples) {
    const Vec3 orig(4.0, 2.0, 1.5);
    EXPECT_EQ(filter_asset_bbox(orig, orig), FilterVerdict::accept);
    EXPECT_EQ(filter_asset_bbox(Vec3(4.8, 2.0, 1.5), orig, 0.15), FilterVerdict::reject);
    EXPECT_EQ(filter_asset_bbox(1.10 * orig, orig, 0.15), FilterVerdict::accept);
    EXPECT_EQ(filter_asset_bbox(Vec3(4.0, 2.0, 1.5 * 0.84), orig, 0.15), FilterVerdict::reject);
    EXPECT_THROW(static_cast<void>(filter_asset_bbox(orig, Vec3(1, 0, 1))), ConfigError);
}

TEST(SynthScene, PlaneOnlyBelowHorizonIsValid) {
    SynthSpec spec;
    spec.frames = 1;
    const Scene scene = synth_scene(spec, 0);
    const Frame& f = scene.frames[0];
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            // Level camera: rows whose centers lie below cy look down at the ground.
            const bool below = y + 0.5 > 0.5 * spec.height;
            EXPECT_EQ(f.depth_valid(x, y), below ? 1 : 0);
            if (below) {
                const double depth_oracle = spec.start.z() * spec.focal / (y + 0.5 - 0.5 * spec.height);
                EXPECT_NEAR(f.depth(x, y), depth_oracle, 1e-9 * depth_oracle);
            }
        }
    }
}

TEST(SynthScene, FrontFacingCuboidDepth) {
    SynthSpec spec;
    spec.frames = 1;
    spec.ground_plane = false;
    spec.cuboids = {SynthCuboid{Vec3(10, 0, 1.5), Vec3(2, 3, 2), 0.0, Rgb(1, 0, 0), ""}};
    const Scene scene = synth_scene(spec, 0);
    const Frame& f = scene.frames[0];
    EXPECT_EQ(f.depth_valid(64, 32), 1);
    EXPECT_NEAR(f.depth(64, 32), 10.0 - 1.0, 1e-12);
    EXPECT_NEAR(f.depth(60, 30), 9.0, 1e-12);
    EXPECT_EQ(f.depth_valid(0, 0), 0);
}

TEST(SynthScene, BitIdenticalPerSeed) {
    SynthSpec spec = canonical_synth_spec();
    spec.frames = 3;
    const Scene a = synth_scene(spec, 42);
    const Scene b = synth_scene(spec, 42);
    const Scene c = synth_scene(spec, 43);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.frames[i].image, b.frames[i].image);
        EXPECT_EQ(a.frames[i].depth, b.frames[i].depth);
        EXPECT_EQ(a.frames[i].depth_valid, b.frames[i].depth_valid);
    }
    EXPECT_NE(a.frames[0].image, c.frames[0].image);
    ASSERT_EQ(a.assets.size(), 1u);
    EXPECT_EQ(a.assets[0].asset.gaussians().size(), b.assets[0].asset.gaussians().size());
    for (std::size_t i = 0; i < a.assets[0].asset.gaussians().size(); ++i) {
        EXPECT_EQ(a.assets[0].asset.gaussians()[i].position, b.assets[0].asset.gaussians()[i].position);
    }
}

TEST(SynthScene, RejectsDegenerateCameraPath) {
    SynthSpec spec;
    spec.start = Vec3(0, 0, -1);
    EXPECT_THROW(static_cast<void>(synth_scene(spec, 0)), ConfigError);
    spec = canonical_synth_spec();
    spec.start = Vec3(16, 1.2, 0.75);
    EXPECT_THROW(static_cast<void>(synth_scene(spec, 0)), ConfigError);
    spec = SynthSpec{};
    spec.frames = 0;
    EXPECT_THROW(static_cast<void>(synth_scene(spec, 0)), ConfigError);
}

TEST(EmbedFirstFrame, UnitNormAndDeterministic) {
    Rng rng(33);
    std::vector<std::vector<double>> embeds;
    for (int i = 0; i < 20; ++i) {
        RgbImage image(48, 40);
        for (Rgb& p : image.values()) {
            p = testing::random_rgb(rng);
        }
        const auto e = embed_first_frame(image);
        ASSERT_EQ(e.size(), kEmbedDim);
        double norm = 0.0;
        for (double v : e) {
            norm += v * v;
        }
        EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-12);
        EXPECT_EQ(e, embed_first_frame(image));
        embeds.push_back(e);
    }
    for (std::size_t i = 0; i < embeds.size(); ++i) {
        for (std::size_t j = i + 1; j < embeds.size(); ++j) {
            double cosine = 0.0;
            for (std::size_t k = 0; k < kEmbedDim; ++k) {
                cosine += embeds[i][k] * embeds[j][k];
            }
            EXPECT_LT(cosine, 0.99);
        }
    }
}

} // namespace
} // namespace scpainter
