// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "scpainter/diffusion.hpp"
#include "scpainter/errors.hpp"
#include "scpainter/io.hpp"
#include "scpainter/metrics.hpp"
#include "scpainter/parallel.hpp"

namespace scpainter::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void configure_logging() {
    static std::once_flag once;
    std::call_once(once, [] { spdlog::set_default_logger(spdlog::stderr_color_mt("scpainter")); });
    const char* level = std::getenv("SCPAINTER_LOG");
    spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::warn);
}

/// One writer per output directory.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".scpainter.lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) {
            throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
        }
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0 && errno == EEXIST) {
            throw InputError("output directory " + dir.string() + " is locked by another run (" + path_.string() +
                             ")");
        }
        if (fd_ < 0) {
            throw InputError("cannot create " + path_.string() + ": " + std::strerror(errno));
        }
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;
    ~OutputLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
    int fd_ = -1;
};

struct Globals {
    std::uint64_t seed = 0;
    unsigned jobs = 0;
    std::string out;
};

fs::path require_out(const Globals& g) {
    if (g.out.empty()) {
        throw InputError("--out is required for this command");
    }
    return g.out;
}

void require_file(const fs::path& p) {
    if (!fs::exists(p)) {
        throw InputError("missing input: " + p.string());
    }
}

// ---- synth-scene ---------------------------------------------------------------

struct SynthArgs {
    int frames = 8;
    bool no_assets = false;
};

void cmd_synth_scene(const Globals& g, const SynthArgs& a) {
    const fs::path out = require_out(g);
    OutputLock lock(out);
    SynthSpec spec = canonical_synth_spec();
    if (a.frames < 1) {
        throw ConfigError("--frames must be positive");
    }
    spec.frames = a.frames;
    if (a.no_assets) {
        for (SynthCuboid& c : spec.cuboids) {
            c.asset_id.clear();
        }
    }
    save_scene(out, synth_scene(spec, g.seed));
    spdlog::info("wrote synthetic scene with {} frames to {}", spec.frames, out.string());
}

// ---- unproject -----------------------------------------------------------------

struct UnprojectArgs {
    std::string scene;
    int begin = 0;
    std::optional<int> end;
    bool reference_convention = false;
};

void cmd_unproject(const Globals& g, const UnprojectArgs& a) {
    const fs::path out = require_out(g);
    require_file(a.scene);
    const Scene scene = load_scene(a.scene, a.reference_convention);
    const int end = a.end.value_or(scene.frame_count());
    if (a.begin < 0 || end > scene.frame_count() || a.begin > end) {
        throw InputError("frame range [" + std::to_string(a.begin) + ", " + std::to_string(end) +
                         ") is outside the scene's " + std::to_string(scene.frame_count()) + " frames");
    }
    OutputLock lock(out);
    const auto count = static_cast<std::size_t>(end - a.begin);
    parallel_for(count, [&](std::size_t i) {
        const int f = a.begin + static_cast<int>(i);
        const ColorPointCloud cloud = unproject(scene.frames[static_cast<std::size_t>(f)]);
        write_point_cloud_ply(out / frame_file("points_", static_cast<std::size_t>(f), ".ply"), cloud);
    });
    spdlog::info("unprojected {} frames", count);
}

// ---- render-traj ---------------------------------------------------------------

struct RenderArgs {
    std::string scene;
    double shift = 0.0;
    bool no_assets = false;
    int tile = 16;
    bool reference_convention = false;
};

void cmd_render_traj(const Globals& g, const RenderArgs& a) {
    const fs::path out = require_out(g);
    if (!std::isfinite(a.shift)) {
        throw InputError("--shift must be finite");
    }
    require_file(a.scene);
    const Scene scene = load_scene(a.scene, a.reference_convention);

    ColorPointCloud cloud;
    for (const Frame& f : scene.frames) {
        cloud.append(unproject(f));
    }
    std::vector<std::vector<Gaussian3D>> splats(scene.frames.size());
    if (!a.no_assets) {
        for (const SceneAsset& asset : scene.assets) {
            for (const AssetPlacement& p : asset.placements) {
                cloud = remove_points_in_box(cloud, p.box).cloud;
                const auto aligned = align_asset(asset.asset, p.box);
                auto& frame_splats = splats[static_cast<std::size_t>(p.frame)];
                frame_splats.insert(frame_splats.end(), aligned.begin(), aligned.end());
            }
        }
    }
    std::vector<CameraView> cameras;
    for (const Frame& f : scene.frames) {
        cameras.push_back({f.intrinsics, f.pose.shifted_laterally(a.shift)});
    }
    OutputLock lock(out);
    const ConditioningBundle bundle = render_joint_per_frame(cloud, splats, Trajectory(std::move(cameras)), a.tile);
    write_bundle(out, bundle);
    spdlog::info("shift {} m: mean coverage {:.4f}, asset fraction {:.4f}", a.shift, mean_coverage(bundle),
                 asset_fraction(bundle));
}

// ---- build-pairs ---------------------------------------------------------------

struct PairArgs {
    std::string scene;
    int k = kDefaultNeighborCount;
    bool insertion = false;
    std::uint64_t scene_id = 0;
    bool reference_convention = false;
};

void cmd_build_pairs(const Globals& g, const PairArgs& a) {
    const fs::path out = require_out(g);
    require_file(a.scene);
    const Scene scene = load_scene(a.scene, a.reference_convention);
    const int n = scene.frame_count();
    const int window = std::min(n - 1, 2 * kNeighborRadius);
    if (a.k > window && window > 0 && a.k <= 2 * kNeighborRadius) {
        spdlog::warn("k = {} exceeds the largest neighbor window ({}); clamping", a.k, window);
    }
    OutputLock lock(out);

    json entries = json::array();
    for (int t = 0; t < n && n > 1; ++t) {
        const std::vector<int> neighbors = sample_neighbors(t, n, a.k, pair_seed(g.seed, a.scene_id, t));
        const std::string dir = frame_file("nvs_", static_cast<std::size_t>(t), "");
        write_pair(out / dir, build_nvs_pair(scene, t, neighbors));
        entries.push_back({{"dir", dir}, {"kind", "nvs"}, {"frame", t}, {"neighbors", neighbors}});
    }
    if (a.insertion) {
        for (std::size_t i = 0; i < scene.assets.size(); ++i) {
            for (const AssetPlacement& p : scene.assets[i].placements) {
                const std::string dir = "ins_" + scene.assets[i].id + "_" +
                                        frame_file("", static_cast<std::size_t>(p.frame), "");
                write_pair(out / dir, build_insertion_pair(scene, i, p.frame));
                entries.push_back({{"dir", dir}, {"kind", "insertion"}, {"frame", p.frame}, {"asset", scene.assets[i].id}});
            }
        }
    }
    if (n == 1) {
        spdlog::warn("a one-frame scene has no neighbor window; no view-synthesis pairs written");
    }
    std::ofstream(out / "pairs.json") << json{{"k", a.k}, {"seed", g.seed}, {"pairs", entries}}.dump(2) << "\n";
    spdlog::info("wrote {} pairs", entries.size());
}

// ---- train-toy -----------------------------------------------------------------

struct TrainArgs {
    std::string pairs;
    TrainConfig config;
    bool joint_dropout = false;
};

std::vector<TrainingPair> load_pairs(const fs::path& dir) {
    const fs::path manifest = dir / "pairs.json";
    require_file(manifest);
    json root;
    try {
        root = json::parse(std::ifstream(manifest));
        std::vector<TrainingPair> pairs;
        for (const json& e : root.at("pairs")) {
            pairs.push_back(read_pair(dir / e.at("dir").get<std::string>()));
        }
        if (pairs.empty()) {
            throw InputError(manifest.string() + " lists no pairs");
        }
        return pairs;
    } catch (const json::exception& e) {
        throw InputError(manifest.string() + ": " + e.what());
    }
}

void cmd_train_toy(const Globals& g, TrainArgs a) {
    const fs::path out = require_out(g);
    const std::vector<TrainingPair> pairs = load_pairs(a.pairs);
    a.config.seed = g.seed;
    a.config.dropout_mode = a.joint_dropout ? DropoutMode::joint : DropoutMode::independent;
    a.config.validate();
    OutputLock lock(out);
    const TrainResult result = train(pairs, a.config);
    save_checkpoint(out / "checkpoint.scpk", result.params, {g.seed, a.config.iterations});
    write_loss_csv(out / "loss.csv", result.losses);
    spdlog::info("trained {} iterations; final loss {:.6f}", a.config.iterations,
                 result.losses.empty() ? 0.0 : result.losses.back());
}

// ---- sample --------------------------------------------------------------------

struct SampleArgs {
    std::string ckpt;
    std::string bundle;
    int steps = 16;
};

void cmd_sample(const Globals& g, const SampleArgs& a) {
    const fs::path out = require_out(g);
    require_file(a.ckpt);
    require_file(fs::path(a.bundle) / "bundle.json");
    if (a.steps < 1) {
        throw ConfigError("--steps must be positive");
    }
    const DenoiserParams params = load_checkpoint(a.ckpt);
    const ConditioningBundle bundle = read_bundle(a.bundle);
    const fs::path embed_path = fs::path(a.bundle) / "embed.scpt";
    const std::vector<double> embed =
        fs::exists(embed_path) ? read_vector(embed_path) : embed_first_frame(rgb_frame(bundle.rgb, 0));
    if (embed.size() != kEmbedDim) {
        throw InputError(embed_path.string() + " has the wrong length");
    }
    OutputLock lock(out);
    const Tensor4 video = sample(params, bundle, embed, a.steps, g.seed);
    for (std::size_t t = 0; t < video.frames(); ++t) {
        write_png(out / frame_file("frame_", t, ".png"), rgb_frame(video, t));
    }
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
    std::string generated;
    std::string truth;
    std::string bundle;
    bool record_runtime = false;
};

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw InputError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

void cmd_eval(const Globals& g, const EvalArgs& a) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path out = require_out(g);
    const auto generated = sorted_pngs(a.generated);
    const auto truth = sorted_pngs(a.truth);
    if (generated.empty() || truth.empty()) {
        throw InputError("eval needs PNG frames in both directories");
    }
    if (generated.size() != truth.size()) {
        throw InputError("frame count mismatch: " + std::to_string(generated.size()) + " generated vs " +
                         std::to_string(truth.size()) + " ground truth");
    }
    MetricsReport report;
    report.psnr_db.resize(generated.size());
    parallel_for(generated.size(), [&](std::size_t i) {
        const RgbImage x = read_png(generated[i]);
        const RgbImage y = read_png(truth[i]);
        if (!x.same_shape(y)) {
            throw InputError("frame size mismatch: " + generated[i].string() + " vs " + truth[i].string());
        }
        report.psnr_db[i] = psnr(x, y);
    });
    if (!a.bundle.empty()) {
        const ConditioningBundle b = read_bundle(a.bundle);
        report.mean_coverage = mean_coverage(b);
        report.asset_fraction = asset_fraction(b);
    }
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    OutputLock lock(out);
    report.write(out, a.record_runtime);
    spdlog::info("eval: {} frames, mean finite PSNR {:.3f} dB, {:.3f} s", generated.size(), report.mean_finite_psnr(),
                 report.runtime_seconds);
}

} // namespace

int run(const std::vector<std::string>& args) {
    configure_logging();
    CLI::App app{"scpainter: geometric conditioning for asset insertion and novel-view synthesis"};
    app.name(args.empty() ? "scpainter" : args.front());
    app.require_subcommand(1);

    Globals g;
    app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Worker threads (0: all cores)")->capture_default_str();
    app.add_option("--out", g.out, "Output directory");

    std::function<void()> action;
    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        return sub;
    };

    SynthArgs synth;
    auto* synth_cmd = add("synth-scene", "Write the canonical synthetic scene");
    synth_cmd->add_option("--frames", synth.frames, "Frame count")->capture_default_str();
    synth_cmd->add_flag("--no-assets", synth.no_assets, "Do not attach splat assets to cuboids");
    synth_cmd->callback([&] { action = [&] { cmd_synth_scene(g, synth); }; });

    UnprojectArgs unp;
    auto* unp_cmd = add("unproject", "Unproject frames to colored point clouds (one PLY per frame)");
    unp_cmd->add_option("--scene", unp.scene, "scene.json")->required();
    unp_cmd->add_option("--begin", unp.begin, "First frame")->capture_default_str();
    unp_cmd->add_option("--end", unp.end, "One past the last frame (default: all)");
    unp_cmd->add_flag("--gs-reference-convention", unp.reference_convention,
                      "Asset PLYs store log-scales and opacity logits");
    unp_cmd->callback([&] { action = [&] { cmd_unproject(g, unp); }; });

    RenderArgs render;
    auto* render_cmd = add("render-traj", "Render a laterally shifted trajectory to a conditioning bundle");
    render_cmd->add_option("--scene", render.scene, "scene.json")->required();
    render_cmd->add_option("--shift", render.shift, "Lateral shift in meters (+ is camera right)")->capture_default_str();
    render_cmd->add_flag("--no-assets", render.no_assets, "Render scene points only");
    render_cmd->add_option("--tile", render.tile, "Rasterizer tile size")->capture_default_str();
    render_cmd->add_flag("--gs-reference-convention", render.reference_convention,
                         "Asset PLYs store log-scales and opacity logits");
    render_cmd->callback([&] { action = [&] { cmd_render_traj(g, render); }; });

    PairArgs pairs;
    auto* pairs_cmd = add("build-pairs", "Build training pairs from a scene");
    pairs_cmd->add_option("--scene", pairs.scene, "scene.json")->required();
    pairs_cmd->add_option("--k", pairs.k, "Neighbor frames per pair")->capture_default_str();
    pairs_cmd->add_option("--scene-id", pairs.scene_id, "Scene id mixed into pair seeds")->capture_default_str();
    pairs_cmd->add_flag("--insertion", pairs.insertion, "Also write asset insertion pairs");
    pairs_cmd->add_flag("--gs-reference-convention", pairs.reference_convention,
                        "Asset PLYs store log-scales and opacity logits");
    pairs_cmd->callback([&] { action = [&] { cmd_build_pairs(g, pairs); }; });

    TrainArgs tr;
    auto* train_cmd = add("train-toy", "Train the toy denoiser");
    train_cmd->add_option("--pairs", tr.pairs, "Directory written by build-pairs")->required();
    train_cmd->add_option("--iters", tr.config.iterations, "Iterations")->capture_default_str();
    train_cmd->add_option("--dropout", tr.config.dropout, "Condition dropout probability")->capture_default_str();
    train_cmd->add_option("--batch", tr.config.batch_size, "Batch size")->capture_default_str();
    train_cmd->add_option("--lr", tr.config.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_flag("--joint-dropout", tr.joint_dropout, "Drop both conditions together");
    train_cmd->callback([&] { action = [&] { cmd_train_toy(g, tr); }; });

    SampleArgs smp;
    auto* sample_cmd = add("sample", "Sample a video from a trained checkpoint");
    sample_cmd->add_option("--ckpt", smp.ckpt, "Checkpoint file")->required();
    sample_cmd->add_option("--bundle", smp.bundle, "Conditioning bundle or pair directory")->required();
    sample_cmd->add_option("--steps", smp.steps, "Sampler steps")->capture_default_str();
    sample_cmd->callback([&] { action = [&] { cmd_sample(g, smp); }; });

    EvalArgs ev;
    auto* eval_cmd = add("eval", "PSNR of generated frames against ground truth");
    eval_cmd->add_option("--generated", ev.generated, "Directory of generated PNGs")->required();
    eval_cmd->add_option("--truth", ev.truth, "Directory of ground-truth PNGs")->required();
    eval_cmd->add_option("--bundle", ev.bundle, "Bundle for coverage statistics");
    eval_cmd->add_flag("--record-runtime", ev.record_runtime, "Write runtime_seconds to metrics.json");
    eval_cmd->callback([&] { action = [&] { cmd_eval(g, ev); }; });

    try {
        std::vector<std::string> reversed(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
        std::reverse(reversed.begin(), reversed.end());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    return guarded([&] {
        if (g.jobs > 0) {
            set_max_workers(g.jobs);
        }
        action();
    });
}

int guarded(const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::critical("internal error: {}", e.what());
        return kExitInternal;
    }
}

} // namespace scpainter::cli
