// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "scpainter/cli.hpp"
#include "scpainter/errors.hpp"
#include "scpainter/io.hpp"
#include "scpainter/metrics.hpp"
#include "support.hpp"

namespace scpainter {
namespace {

using nlohmann::json;
using testing::ScratchDir;

int scp(std::vector<std::string> args) {
    args.insert(args.begin(), "scpainter");
    return cli::run(args);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> file bytes for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files[fs::relative(entry.path(), dir).string()] = slurp(entry.path());
        }
    }
    return files;
}

std::size_t count_files(const fs::path& dir, const std::string& extension) {
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        n += entry.path().extension() == extension ? 1 : 0;
    }
    return n;
}

/// Writes a small scene with `frames` frames under dir/scene.
fs::path make_scene(const ScratchDir& dir, int frames, bool assets = true) {
    std::vector<std::string> args{"--out", (dir / "scene").string(), "synth-scene", "--frames", std::to_string(frames)};
    if (!assets) {
        args.push_back("--no-assets");
    }
    EXPECT_EQ(scp(args), cli::kExitOk);
    return dir / "scene" / "scene.json";
}

TEST(CliExitCodes, ParseErrorsAndHelp) {
    EXPECT_EQ(scp({}), cli::kExitUsage);
    EXPECT_EQ(scp({"no-such-command"}), cli::kExitUsage);
    EXPECT_EQ(scp({"unproject", "--bogus"}), cli::kExitUsage);
    EXPECT_EQ(scp({"--help"}), cli::kExitOk);
}

TEST(CliExitCodes, ExceptionMapping) {
    EXPECT_EQ(cli::guarded([] {}), cli::kExitOk);
    EXPECT_EQ(cli::guarded([] { throw InputError("x"); }), cli::kExitUsage);
    EXPECT_EQ(cli::guarded([] { throw ConfigError("x"); }), cli::kExitUsage);
    EXPECT_EQ(cli::guarded([] { throw DimensionMismatch("x"); }), cli::kExitUsage);
    EXPECT_EQ(cli::guarded([] { throw InvariantError("x"); }), cli::kExitInternal);
    EXPECT_EQ(cli::guarded([] { throw std::runtime_error("x"); }), cli::kExitInternal);
}

TEST(CliExitCodes, MissingInputsAndOutput) {
    ScratchDir dir("cli_missing");
    EXPECT_EQ(scp({"--out", (dir / "o").string(), "unproject", "--scene", (dir / "none.json").string()}),
              cli::kExitUsage);
    EXPECT_EQ(scp({"synth-scene"}), cli::kExitUsage);
    EXPECT_EQ(scp({"--out", (dir / "o").string(), "synth-scene", "--frames", "0"}), cli::kExitUsage);
}

TEST(CliUnproject, EmptyRangeWritesNothing) {
    ScratchDir dir("cli_unp_empty");
    const fs::path scene = make_scene(dir, 2);
    EXPECT_EQ(scp({"--out", (dir / "pts").string(), "unproject", "--scene", scene.string(), "--begin", "1", "--end",
                   "1"}),
              cli::kExitOk);
    EXPECT_EQ(count_files(dir / "pts", ".ply"), 0u);
    EXPECT_EQ(scp({"--out", (dir / "pts").string(), "unproject", "--scene", scene.string(), "--begin", "0", "--end",
                   "5"}),
              cli::kExitUsage);
}

TEST(CliUnproject, PointCountEqualsValidPixels) {
    ScratchDir dir("cli_unp_count");
    const fs::path scene_path = make_scene(dir, 1);
    ASSERT_EQ(scp({"--out", (dir / "pts").string(), "unproject", "--scene", scene_path.string()}), cli::kExitOk);
    const Scene scene = load_scene(scene_path);
    std::size_t valid = 0;
    for (std::uint8_t v : scene.frames[0].depth_valid.values()) {
        valid += v;
    }
    EXPECT_GT(valid, 0u);
    EXPECT_EQ(read_point_cloud_ply(dir / "pts" / "points_0000.ply").size(), valid);
    EXPECT_FALSE(fs::exists(dir / "pts" / ".scpainter.lock"));
}

TEST(CliUnproject, CorruptDepthIsInputError) {
    ScratchDir dir("cli_unp_corrupt");
    const fs::path scene = make_scene(dir, 1);
    std::ofstream(dir / "scene" / "frames" / "depth_0000.scpt", std::ios::binary) << "SCPTgarbage";
    EXPECT_EQ(scp({"--out", (dir / "pts").string(), "unproject", "--scene", scene.string()}), cli::kExitUsage);
}

TEST(CliRenderTraj, ZeroShiftReproducesSourceFrame) {
    ScratchDir dir("cli_render_zero");
    const fs::path scene_path = make_scene(dir, 1, false);
    ASSERT_EQ(scp({"--out", (dir / "b").string(), "render-traj", "--scene", scene_path.string(), "--shift", "0"}),
              cli::kExitOk);
    const Scene scene = load_scene(scene_path);
    const ConditioningBundle bundle = read_bundle(dir / "b");
    const Frame& f = scene.frames[0];
    ASSERT_EQ(bundle.frames(), 1u);
    for (int y = 0; y < f.image.height(); ++y) {
        for (int x = 0; x < f.image.width(); ++x) {
            const auto yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
            EXPECT_EQ(bundle.coverage(0, 0, yy, xx), f.depth_valid(x, y) ? 1.0 : 0.0);
            if (f.depth_valid(x, y)) {
                for (std::size_t c = 0; c < 3; ++c) {
                    EXPECT_EQ(bundle.rgb(0, c, yy, xx), f.image(x, y)[static_cast<Eigen::Index>(c)]);
                }
            }
        }
    }
}

TEST(CliRenderTraj, ShiftMovesCamerasAlongTheirRightAxis) {
    ScratchDir dir("cli_render_shift");
    const fs::path scene_path = make_scene(dir, 2);
    ASSERT_EQ(scp({"--out", (dir / "b").string(), "render-traj", "--scene", scene_path.string(), "--shift", "2"}),
              cli::kExitOk);
    const Scene scene = load_scene(scene_path);
    const ConditioningBundle bundle = read_bundle(dir / "b");
    for (std::size_t t = 0; t < scene.frames.size(); ++t) {
        const RigidPose& original = scene.frames[t].pose;
        const RigidPose& shifted = bundle.cameras[t].pose;
        EXPECT_LT((shifted.rotation() - original.rotation()).cwiseAbs().maxCoeff(), 1e-12);
        const Vec3 right = original.rotation().col(0);
        EXPECT_LT((shifted.translation() - original.translation() - 2.0 * right).norm(), 1e-9);
        const RigidPose back = shifted.shifted_laterally(-2.0);
        EXPECT_LT((back.translation() - original.translation()).norm(), 1e-9);
    }
    EXPECT_EQ(scp({"--out", (dir / "c").string(), "render-traj", "--scene", scene_path.string(), "--shift", "nan"}),
              cli::kExitUsage);
}

TEST(CliBuildPairs, CountDeterminismAndClampWarning) {
    ScratchDir dir("cli_pairs");
    const fs::path scene = make_scene(dir, 3);
    ::testing::internal::CaptureStderr();
    const int code = scp({"--seed", "5", "--out", (dir / "p1").string(), "build-pairs", "--scene", scene.string(),
                          "--k", "5", "--insertion"});
    const std::string log = ::testing::internal::GetCapturedStderr();
    ASSERT_EQ(code, cli::kExitOk);
    EXPECT_NE(log.find("clamping"), std::string::npos) << log;

    const json manifest = json::parse(slurp(dir / "p1" / "pairs.json"));
    int nvs = 0, insertion = 0;
    for (const json& e : manifest["pairs"]) {
        (e["kind"] == "nvs" ? nvs : insertion) += 1;
        EXPECT_TRUE(fs::exists(dir / "p1" / e["dir"].get<std::string>() / "bundle.json"));
        if (e["kind"] == "nvs") {
            EXPECT_EQ(e["neighbors"].size(), 2u);
        }
    }
    EXPECT_EQ(nvs, 3);
    const Scene loaded = load_scene(scene);
    std::size_t placements = 0;
    for (const SceneAsset& a : loaded.assets) {
        placements += a.placements.size();
    }
    EXPECT_EQ(insertion, static_cast<int>(placements));

    ASSERT_EQ(scp({"--seed", "5", "--out", (dir / "p2").string(), "build-pairs", "--scene", scene.string(), "--k", "5",
                   "--insertion"}),
              cli::kExitOk);
    EXPECT_EQ(snapshot(dir / "p1"), snapshot(dir / "p2"));
}

TEST(CliIdempotence, RerunsAreByteIdentical) {
    ScratchDir dir("cli_idem");
    for (const char* run : {"a", "b"}) {
        const fs::path root = dir / run;
        ASSERT_EQ(scp({"--seed", "3", "--out", (root / "scene").string(), "synth-scene", "--frames", "2"}),
                  cli::kExitOk);
        const std::string scene = (root / "scene" / "scene.json").string();
        ASSERT_EQ(scp({"--out", (root / "pts").string(), "unproject", "--scene", scene}), cli::kExitOk);
        ASSERT_EQ(scp({"--out", (root / "bundle").string(), "render-traj", "--scene", scene, "--shift", "-2"}),
                  cli::kExitOk);
        ASSERT_EQ(scp({"--seed", "3", "--out", (root / "pairs").string(), "build-pairs", "--scene", scene,
                       "--insertion"}),
                  cli::kExitOk);
        ASSERT_EQ(scp({"--seed", "3", "--out", (root / "model").string(), "train-toy", "--pairs",
                       (root / "pairs").string(), "--iters", "5"}),
                  cli::kExitOk);
        ASSERT_EQ(scp({"--seed", "3", "--out", (root / "video").string(), "sample", "--ckpt",
                       (root / "model" / "checkpoint.scpk").string(), "--bundle", (root / "bundle").string(),
                       "--steps", "2"}),
                  cli::kExitOk);
        ASSERT_EQ(scp({"--out", (root / "eval").string(), "eval", "--generated", (root / "video").string(), "--truth",
                       (root / "bundle").string(), "--bundle", (root / "bundle").string()}),
                  cli::kExitOk);
    }
    EXPECT_EQ(count_files(dir / "a" / "video", ".png"), 2u);
    EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
    // Rerunning into the same directory leaves the outputs unchanged.
    const auto before = snapshot(dir / "a" / "bundle");
    ASSERT_EQ(scp({"--out", (dir / "a" / "bundle").string(), "render-traj", "--scene",
                   (dir / "a" / "scene" / "scene.json").string(), "--shift", "-2"}),
              cli::kExitOk);
    EXPECT_EQ(snapshot(dir / "a" / "bundle"), before);
}

TEST(CliEval, IdenticalFramesAreFlaggedInfinite) {
    ScratchDir dir("cli_eval_same");
    Rng rng(51);
    fs::create_directories(dir / "g");
    fs::create_directories(dir / "t");
    for (std::size_t i = 0; i < 3; ++i) {
        const Frame f = testing::random_frame(rng, 16, 8);
        write_png(dir / "g" / frame_file("f_", i, ".png"), f.image);
        write_png(dir / "t" / frame_file("f_", i, ".png"), f.image);
    }
    ASSERT_EQ(scp({"--out", (dir / "m").string(), "eval", "--generated", (dir / "g").string(), "--truth",
                   (dir / "t").string()}),
              cli::kExitOk);
    const json metrics = json::parse(slurp(dir / "m" / "metrics.json"));
    EXPECT_EQ(metrics["infinite_count"], 3);
    for (const json& f : metrics["frames"]) {
        EXPECT_TRUE(f["psnr_db"].is_null());
        EXPECT_TRUE(f["infinite"].get<bool>());
    }
    EXPECT_FALSE(metrics.contains("runtime_seconds"));
    EXPECT_TRUE(fs::exists(dir / "m" / "metrics.csv"));
}

TEST(CliEval, MatchesLibraryPsnr) {
    ScratchDir dir("cli_eval_psnr");
    Rng rng(52);
    fs::create_directories(dir / "g");
    fs::create_directories(dir / "t");
    const Frame a = testing::random_frame(rng, 16, 8);
    const Frame b = testing::random_frame(rng, 16, 8);
    write_png(dir / "g" / "x.png", a.image);
    write_png(dir / "t" / "x.png", b.image);
    ASSERT_EQ(scp({"--out", (dir / "m").string(), "eval", "--generated", (dir / "g").string(), "--truth",
                   (dir / "t").string(), "--record-runtime"}),
              cli::kExitOk);
    const json metrics = json::parse(slurp(dir / "m" / "metrics.json"));
    const double want = psnr(read_png(dir / "g" / "x.png"), read_png(dir / "t" / "x.png"));
    EXPECT_NEAR(metrics["frames"][0]["psnr_db"].get<double>(), want, 1e-9);
    EXPECT_FALSE(metrics["frames"][0]["infinite"].get<bool>());
    EXPECT_TRUE(metrics.contains("runtime_seconds"));
}

TEST(CliEval, CountMismatchAndEmptyDirsAreInputErrors) {
    ScratchDir dir("cli_eval_bad");
    fs::create_directories(dir / "g");
    fs::create_directories(dir / "t");
    EXPECT_EQ(scp({"--out", (dir / "m").string(), "eval", "--generated", (dir / "g").string(), "--truth",
                   (dir / "t").string()}),
              cli::kExitUsage);
    Rng rng(53);
    const Frame f = testing::random_frame(rng, 8, 8);
    write_png(dir / "g" / "a.png", f.image);
    write_png(dir / "g" / "b.png", f.image);
    write_png(dir / "t" / "a.png", f.image);
    EXPECT_EQ(scp({"--out", (dir / "m").string(), "eval", "--generated", (dir / "g").string(), "--truth",
                   (dir / "t").string()}),
              cli::kExitUsage);
}

TEST(CliLock, HeldLockRejectsSecondWriter) {
    ScratchDir dir("cli_lock");
    fs::create_directories(dir / "o");
    std::ofstream(dir / "o" / ".scpainter.lock") << "held";
    EXPECT_EQ(scp({"--out", (dir / "o").string(), "synth-scene", "--frames", "1"}), cli::kExitUsage);
    EXPECT_FALSE(fs::exists(dir / "o" / "scene.json"));
    EXPECT_TRUE(fs::exists(dir / "o" / ".scpainter.lock"));
    fs::remove(dir / "o" / ".scpainter.lock");
    EXPECT_EQ(scp({"--out", (dir / "o").string(), "synth-scene", "--frames", "1"}), cli::kExitOk);
    EXPECT_FALSE(fs::exists(dir / "o" / ".scpainter.lock"));
}

TEST(Metrics, PsnrClosedForm) {
    RgbImage a(8, 4, Rgb::Constant(0.3));
    RgbImage b(8, 4, Rgb::Constant(0.4));
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_THROW(static_cast<void>(psnr(a, RgbImage(4, 4))), DimensionMismatch);
}

TEST(Metrics, CoverageFractionsStayInUnitInterval) {
    Rng rng(54);
    for (int i = 0; i < 20; ++i) {
        ConditioningBundle b;
        b.coverage = testing::random_binary(rng, {2, 1, 8, 8}, rng.uniform());
        b.asset_mask = Tensor4({2, 1, 8, 8});
        for (std::size_t p = 0; p < b.coverage.values().size(); ++p) {
            b.asset_mask.values()[p] = b.coverage.values()[p] * static_cast<double>(rng.below(2));
        }
        const double cov = mean_coverage(b), asset = asset_fraction(b);
        EXPECT_GE(cov, 0.0);
        EXPECT_LE(cov, 1.0);
        EXPECT_GE(asset, 0.0);
        EXPECT_LE(asset, cov);
        EXPECT_NEAR(cov, testing::mean_of(b.coverage), 1e-15);
    }
}

} // namespace
} // namespace scpainter
