// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "binary_io.hpp"
#include "scpainter/diffusion.hpp"
#include "scpainter/errors.hpp"

namespace scpainter {

namespace {
constexpr char kCheckpointMagic[4] = {'S', 'C', 'P', 'K'};
constexpr const char* kCheckpointFormat = "scpainter-denoiser";
} // namespace

void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& params, const CheckpointMeta& meta) {
    nlohmann::json header;
    header["format"] = kCheckpointFormat;
    header["version"] = 1;
    header["seed"] = meta.seed;
    header["iteration"] = meta.iteration;
    header["dtype"] = "float32";
    header["tensors"] = nlohmann::json::array();
    for (const ParamTensor& t : params.tensors()) {
        header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    }
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write checkpoint " + path.string());
    }
    out.write(kCheckpointMagic, 4);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const ParamTensor& t : params.tensors()) {
        for (double v : t.values) {
            detail::write_le<float>(out, static_cast<float>(v));
        }
    }
    if (!out) {
        throw InputError("failed writing checkpoint " + path.string());
    }
}

DenoiserParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint " + path.string());
    }
    const std::string what = "checkpoint " + path.string();
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kCheckpointMagic, 4)) {
        throw InputError(what + ": bad magic");
    }
    const auto length = detail::read_le<std::uint32_t>(in, what);
    std::string text(length, '\0');
    if (!in.read(text.data(), length)) {
        throw InputError(what + ": truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(what + ": invalid header JSON (" + e.what() + ")");
    }
    if (header.value("format", "") != kCheckpointFormat) {
        throw InputError(what + ": not a denoiser checkpoint");
    }

    DenoiserParams params = DenoiserParams::zeros();
    const auto& listed = header.at("tensors");
    if (listed.size() != params.tensors().size()) {
        throw InputError(what + ": tensor count does not match the denoiser architecture");
    }
    for (std::size_t i = 0; i < listed.size(); ++i) {
        ParamTensor& t = params.tensors()[i];
        if (listed[i].at("name").get<std::string>() != t.name ||
            listed[i].at("shape").get<std::vector<std::size_t>>() != t.shape) {
            throw InputError(what + ": tensor '" + t.name + "' does not match the denoiser architecture");
        }
    }
    for (ParamTensor& t : params.tensors()) {
        for (double& v : t.values) {
            v = detail::read_le<float>(in, what);
        }
    }
    if (meta != nullptr) {
        meta->seed = header.value("seed", std::uint64_t{0});
        meta->iteration = header.value("iteration", 0);
    }
    return params;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    out << "iteration,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        out << i + 1 << ',' << losses[i] << '\n';
    }
}

} // namespace scpainter
