// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <algorithm>
#include <sstream>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "scpainter/errors.hpp"

namespace scpainter {

using nlohmann::json;

namespace {

constexpr char kScptMagic[4] = {'S', 'C', 'P', 'T'};
constexpr std::uint32_t kMaxScptRank = 8;

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    return out;
}

std::vector<std::uint32_t> map_dims(int height, int width) {
    return {static_cast<std::uint32_t>(height), static_cast<std::uint32_t>(width)};
}

// ---- PLY -----------------------------------------------------------------------

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType parse_ply_type(const std::string& name, const std::string& what) {
    static const std::map<std::string, PlyType> kTypes = {
        {"char", PlyType::i8},    {"int8", PlyType::i8},     {"uchar", PlyType::u8},   {"uint8", PlyType::u8},
        {"short", PlyType::i16},  {"int16", PlyType::i16},   {"ushort", PlyType::u16}, {"uint16", PlyType::u16},
        {"int", PlyType::i32},    {"int32", PlyType::i32},   {"uint", PlyType::u32},   {"uint32", PlyType::u32},
        {"float", PlyType::f32},  {"float32", PlyType::f32}, {"double", PlyType::f64}, {"float64", PlyType::f64}};
    const auto it = kTypes.find(name);
    if (it == kTypes.end()) {
        throw InputError(what + ": unsupported PLY property type '" + name + "'");
    }
    return it->second;
}

double read_ply_value(std::istream& in, PlyType type, const std::string& what) {
    switch (type) {
    case PlyType::i8: return detail::read_le<std::int8_t>(in, what);
    case PlyType::u8: return detail::read_le<std::uint8_t>(in, what);
    case PlyType::i16: return detail::read_le<std::int16_t>(in, what);
    case PlyType::u16: return detail::read_le<std::uint16_t>(in, what);
    case PlyType::i32: return detail::read_le<std::int32_t>(in, what);
    case PlyType::u32: return detail::read_le<std::uint32_t>(in, what);
    case PlyType::f32: return detail::read_le<float>(in, what);
    case PlyType::f64: return detail::read_le<double>(in, what);
    }
    throw InvariantError("unhandled PLY type");
}

/// The vertex element of a binary little-endian PLY, as doubles.
struct PlyVertices {
    std::vector<std::string> names;
    std::vector<PlyType> types;
    std::size_t count = 0;
    std::vector<double> values; // count x names.size()

    [[nodiscard]] std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }
    [[nodiscard]] std::size_t require(const std::string& name, const std::string& what) const {
        if (auto c = column(name)) {
            return *c;
        }
        throw InputError(what + ": missing PLY property '" + name + "'");
    }
    [[nodiscard]] double at(std::size_t row, std::size_t col) const { return values[row * names.size() + col]; }
};

PlyVertices read_ply_vertices(const fs::path& path) {
    std::ifstream in = open_input(path);
    const std::string what = path.string();
    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw InputError(what + ": not a PLY file");
    }
    PlyVertices v;
    bool in_vertex = false;
    bool seen_vertex = false;
    bool format_ok = false;
    while (true) {
        if (!std::getline(in, line)) {
            throw InputError(what + ": PLY header has no end_header");
        }
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream tokens(line);
        std::string keyword;
        tokens >> keyword;
        if (keyword == "end_header") {
            break;
        }
        if (keyword == "format") {
            std::string kind;
            tokens >> kind;
            if (kind != "binary_little_endian") {
                throw InputError(what + ": only binary_little_endian PLY is supported");
            }
            format_ok = true;
        } else if (keyword == "element") {
            std::string name;
            std::size_t count = 0;
            tokens >> name >> count;
            if (name == "vertex") {
                if (seen_vertex) {
                    throw InputError(what + ": duplicate vertex element");
                }
                if (!v.names.empty() || (!tokens && !tokens.eof())) {
                    throw InputError(what + ": malformed vertex element");
                }
                v.count = count;
                in_vertex = seen_vertex = true;
            } else {
                if (!seen_vertex) {
                    throw InputError(what + ": the vertex element must come first");
                }
                in_vertex = false;
            }
        } else if (keyword == "property" && in_vertex) {
            std::string type;
            std::string name;
            tokens >> type;
            if (type == "list") {
                throw InputError(what + ": list properties on vertices are not supported");
            }
            tokens >> name;
            v.types.push_back(parse_ply_type(type, what));
            v.names.push_back(name);
        }
    }
    if (!format_ok || !seen_vertex) {
        throw InputError(what + ": PLY header lacks a format line or vertex element");
    }
    v.values.resize(v.count * v.names.size());
    for (std::size_t r = 0; r < v.count; ++r) {
        for (std::size_t c = 0; c < v.names.size(); ++c) {
            v.values[r * v.names.size() + c] = read_ply_value(in, v.types[c], what);
        }
    }
    return v;
}

void write_ply_header(std::ostream& out, std::size_t count, const std::vector<std::pair<std::string, std::string>>& props) {
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << count << "\n";
    for (const auto& [type, name] : props) {
        out << "property " << type << " " << name << "\n";
    }
    out << "end_header\n";
}

std::uint8_t to_level(double value) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

// ---- JSON helpers ------------------------------------------------------------

Vec3 json_vec3(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) {
        throw InputError(what + ": expected an array of 3 numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Mat3 json_mat3(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 9) {
        throw InputError(what + ": expected a row-major array of 9 numbers");
    }
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            m(r, c) = j[static_cast<std::size_t>(r * 3 + c)].get<double>();
        }
    }
    return m;
}

json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json to_json(const Mat3& m) {
    json out = json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out.push_back(m(r, c));
        }
    }
    return out;
}

json camera_json(const CameraIntrinsics& k, const RigidPose& pose) {
    return {{"intrinsics",
             {{"fx", k.fx()}, {"fy", k.fy()}, {"cx", k.cx()}, {"cy", k.cy()}, {"width", k.width()}, {"height", k.height()}}},
            {"pose", {{"rotation", to_json(pose.rotation())}, {"translation", to_json(pose.translation())}}}};
}

CameraView parse_camera(const json& j, const std::string& what) {
    const json& k = j.at("intrinsics");
    const json& p = j.at("pose");
    return {CameraIntrinsics(k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                             k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()),
            RigidPose(json_mat3(p.at("rotation"), what + ".pose.rotation"),
                      json_vec3(p.at("translation"), what + ".pose.translation"))};
}

json read_json(const fs::path& path) {
    std::ifstream in = open_input(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out = open_output(path);
    out << j.dump(2) << "\n";
}

/// Runs `body`, rethrowing JSON access errors as InputError tagged with `what`.
template <typename F>
auto with_json_errors(const std::string& what, F&& body) {
    try {
        return body();
    } catch (const json::exception& e) {
        throw InputError(what + ": " + e.what());
    }
}

} // namespace

std::string frame_file(const char* prefix, std::size_t index, const char* ext) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%04zu", index);
    return std::string(prefix) + buffer + ext;
}

// ---- .scpt ---------------------------------------------------------------------

void write_scpt(const fs::path& path, std::span<const std::uint32_t> dims, std::span<const float> values) {
    std::size_t expected = 1;
    for (std::uint32_t d : dims) {
        expected *= d;
    }
    if (expected != values.size()) {
        throw DimensionMismatch("write_scpt: dims do not match the value count");
    }
    std::ofstream out = open_output(path);
    out.write(kScptMagic, 4);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) {
        detail::write_le<std::uint32_t>(out, d);
    }
    for (float v : values) {
        detail::write_le<float>(out, v);
    }
    if (!out) {
        throw InputError("failed writing " + path.string());
    }
}

ScptTensor read_scpt(const fs::path& path) {
    std::ifstream in = open_input(path);
    const std::string what = path.string();
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kScptMagic, 4)) {
        throw InputError(what + ": not an SCPT tensor file");
    }
    ScptTensor tensor;
    const auto rank = detail::read_le<std::uint32_t>(in, what);
    if (rank == 0 || rank > kMaxScptRank) {
        throw InputError(what + ": unsupported tensor rank " + std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        tensor.dims.push_back(detail::read_le<std::uint32_t>(in, what));
        count *= tensor.dims.back();
    }
    // Size check before allocating.
    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto available = static_cast<std::size_t>(in.tellg() - data_start);
    in.seekg(data_start);
    if (available != count * sizeof(float)) {
        throw InputError(what + ": payload has " + std::to_string(available) + " bytes, header implies " +
                         std::to_string(count * sizeof(float)));
    }
    tensor.values.resize(count);
    for (float& v : tensor.values) {
        v = detail::read_le<float>(in, what);
    }
    return tensor;
}

void write_depth(const fs::path& path, const ScalarMap& depth, const BinaryMap& valid) {
    if (!depth.same_shape(valid)) {
        throw DimensionMismatch("write_depth: depth and validity maps differ in size");
    }
    const std::size_t n = depth.size();
    std::vector<float> values(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool ok = valid.values()[i] != 0;
        values[i] = ok ? static_cast<float>(depth.values()[i]) : std::numeric_limits<float>::quiet_NaN();
        values[n + i] = ok ? 1.0f : 0.0f;
    }
    const std::vector<std::uint32_t> dims{2, static_cast<std::uint32_t>(depth.height()),
                                          static_cast<std::uint32_t>(depth.width())};
    write_scpt(path, dims, values);
}

void read_depth(const fs::path& path, ScalarMap& depth, BinaryMap& valid) {
    const ScptTensor t = read_scpt(path);
    if (t.dims.size() != 3 || t.dims[0] != 2) {
        throw InputError(path.string() + ": depth files must have dims (2, H, W)");
    }
    const int h = static_cast<int>(t.dims[1]);
    const int w = static_cast<int>(t.dims[2]);
    depth = ScalarMap(w, h, 0.0);
    valid = BinaryMap(w, h, 0);
    const std::size_t n = depth.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = t.values[i];
        const bool flagged = t.values[n + i] != 0.0f;
        if (flagged && std::isfinite(d) && d > 0.0) {
            depth.values()[i] = d;
            valid.values()[i] = 1;
        }
    }
}

void write_scalar_map(const fs::path& path, const ScalarMap& map) {
    std::vector<float> values(map.values().begin(), map.values().end());
    write_scpt(path, map_dims(map.height(), map.width()), values);
}

ScalarMap read_scalar_map(const fs::path& path) {
    const ScptTensor t = read_scpt(path);
    if (t.dims.size() != 2) {
        throw InputError(path.string() + ": expected a rank-2 map");
    }
    ScalarMap map(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]));
    std::ranges::copy(t.values, map.values().begin());
    return map;
}

void write_vector(const fs::path& path, std::span<const double> values) {
    const std::vector<float> f(values.begin(), values.end());
    const std::uint32_t dims[] = {static_cast<std::uint32_t>(values.size())};
    write_scpt(path, dims, f);
}

std::vector<double> read_vector(const fs::path& path) {
    const ScptTensor t = read_scpt(path);
    if (t.dims.size() != 1) {
        throw InputError(path.string() + ": expected a rank-1 tensor");
    }
    return {t.values.begin(), t.values.end()};
}

// ---- PNG -----------------------------------------------------------------------

void write_png(const fs::path& path, const RgbImage& image) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::vector<std::uint8_t> buffer(image.size() * 3);
    for (std::size_t i = 0; i < image.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            buffer[i * 3 + static_cast<std::size_t>(c)] = to_level(image.values()[i][c]);
        }
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width());
    png.height = static_cast<png_uint_32>(image.height());
    png.format = PNG_FORMAT_RGB;
    if (png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw InputError("cannot write " + path.string() + ": " + message);
    }
}

RgbImage read_png(const fs::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw InputError("cannot read " + path.string() + ": " + message);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw InputError("cannot decode " + path.string() + ": " + message);
    }
    RgbImage image(static_cast<int>(png.width), static_cast<int>(png.height));
    for (std::size_t i = 0; i < image.size(); ++i) {
        image.values()[i] = Rgb(buffer[i * 3], buffer[i * 3 + 1], buffer[i * 3 + 2]) / 255.0;
    }
    return image;
}

// ---- PLY -----------------------------------------------------------------------

void write_point_cloud_ply(const fs::path& path, const ColorPointCloud& cloud) {
    cloud.validate();
    std::ofstream out = open_output(path);
    write_ply_header(out, cloud.size(),
                     {{"float", "x"}, {"float", "y"}, {"float", "z"}, {"uchar", "red"}, {"uchar", "green"}, {"uchar", "blue"}});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            detail::write_le<float>(out, static_cast<float>(cloud.positions[i][c]));
        }
        for (int c = 0; c < 3; ++c) {
            detail::write_le<std::uint8_t>(out, to_level(cloud.colors[i][c]));
        }
    }
    if (!out) {
        throw InputError("failed writing " + path.string());
    }
}

ColorPointCloud read_point_cloud_ply(const fs::path& path) {
    const PlyVertices v = read_ply_vertices(path);
    const std::string what = path.string();
    const std::size_t cols[] = {v.require("x", what), v.require("y", what), v.require("z", what),
                                v.require("red", what), v.require("green", what), v.require("blue", what)};
    ColorPointCloud cloud;
    cloud.positions.reserve(v.count);
    cloud.colors.reserve(v.count);
    for (std::size_t r = 0; r < v.count; ++r) {
        cloud.positions.emplace_back(v.at(r, cols[0]), v.at(r, cols[1]), v.at(r, cols[2]));
        cloud.colors.push_back(Rgb(v.at(r, cols[3]), v.at(r, cols[4]), v.at(r, cols[5])) / 255.0);
    }
    cloud.validate();
    return cloud;
}

fs::path asset_sidecar_path(const fs::path& ply_path) {
    fs::path sidecar = ply_path;
    sidecar.replace_extension(".json");
    return sidecar;
}

GaussianAsset read_gaussian_asset(const fs::path& ply_path, bool reference_convention) {
    const std::string what = ply_path.string();
    const json box = read_json(asset_sidecar_path(ply_path));
    const auto [dims, center] = with_json_errors(what + " sidecar", [&] {
        return std::pair{json_vec3(box.at("dims"), "dims"), box.contains("center") ? json_vec3(box["center"], "center")
                                                                                     : Vec3(Vec3::Zero())};
    });

    const PlyVertices v = read_ply_vertices(ply_path);
    std::size_t rest = 0;
    while (v.column("f_rest_" + std::to_string(rest))) {
        ++rest;
    }
    if (rest % 3 != 0) {
        throw InputError(what + ": f_rest_* count is not a multiple of 3");
    }
    const std::size_t coefficients = rest / 3 + 1;
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d) {
        if (static_cast<std::size_t>(sh_coefficient_count(d)) == coefficients) {
            degree = d;
        }
    }
    if (degree < 0) {
        throw InputError(what + ": " + std::to_string(rest) + " f_rest_* properties match no SH degree <= 3");
    }

    const std::size_t px = v.require("x", what), py = v.require("y", what), pz = v.require("z", what);
    const std::size_t s0 = v.require("scale_0", what), s1 = v.require("scale_1", what), s2 = v.require("scale_2", what);
    const std::size_t r0 = v.require("rot_0", what), r1 = v.require("rot_1", what), r2 = v.require("rot_2", what),
                      r3 = v.require("rot_3", what);
    const std::size_t op = v.require("opacity", what);
    const std::size_t dc[] = {v.require("f_dc_0", what), v.require("f_dc_1", what), v.require("f_dc_2", what)};
    std::vector<std::size_t> rest_cols(rest);
    for (std::size_t i = 0; i < rest; ++i) {
        rest_cols[i] = *v.column("f_rest_" + std::to_string(i));
    }

    std::vector<Gaussian3D> gaussians;
    gaussians.reserve(v.count);
    for (std::size_t r = 0; r < v.count; ++r) {
        Gaussian3D g;
        g.position = Vec3(v.at(r, px), v.at(r, py), v.at(r, pz)) - center;
        g.scale = Vec3(v.at(r, s0), v.at(r, s1), v.at(r, s2));
        double opacity = v.at(r, op);
        if (reference_convention) {
            g.scale = g.scale.array().exp();
            opacity = 1.0 / (1.0 + std::exp(-opacity));
        }
        g.opacity = opacity;
        const Eigen::Quaterniond q(v.at(r, r0), v.at(r, r1), v.at(r, r2), v.at(r, r3));
        if (!(q.norm() > 0.0)) {
            throw InputError(what + ": zero rotation quaternion at vertex " + std::to_string(r));
        }
        g.rotation = q.normalized();
        g.sh.assign(coefficients, Rgb::Zero());
        g.sh[0] = Rgb(v.at(r, dc[0]), v.at(r, dc[1]), v.at(r, dc[2]));
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t k = 1; k < coefficients; ++k) {
                g.sh[k][static_cast<Eigen::Index>(c)] = v.at(r, rest_cols[c * (coefficients - 1) + (k - 1)]);
            }
        }
        gaussians.push_back(std::move(g));
    }
    try {
        return {std::move(gaussians), dims};
    } catch (const ConfigError& e) {
        throw InputError(what + ": " + e.what());
    }
}

void write_gaussian_asset(const fs::path& ply_path, const GaussianAsset& asset) {
    const auto& gaussians = asset.gaussians();
    const std::size_t coefficients = gaussians.empty() ? 1 : gaussians.front().sh.size();
    for (const Gaussian3D& g : gaussians) {
        if (g.sh.size() != coefficients) {
            throw ConfigError("write_gaussian_asset: all gaussians must share one SH degree");
        }
    }
    std::vector<std::pair<std::string, std::string>> props = {
        {"float", "x"},       {"float", "y"},       {"float", "z"},       {"float", "scale_0"}, {"float", "scale_1"},
        {"float", "scale_2"}, {"float", "rot_0"},   {"float", "rot_1"},   {"float", "rot_2"},   {"float", "rot_3"},
        {"float", "opacity"}, {"float", "f_dc_0"},  {"float", "f_dc_1"},  {"float", "f_dc_2"}};
    for (std::size_t i = 0; i < 3 * (coefficients - 1); ++i) {
        props.emplace_back("float", "f_rest_" + std::to_string(i));
    }

    std::ofstream out = open_output(ply_path);
    write_ply_header(out, gaussians.size(), props);
    for (const Gaussian3D& g : gaussians) {
        auto put = [&](double value) { detail::write_le<float>(out, static_cast<float>(value)); };
        put(g.position.x()), put(g.position.y()), put(g.position.z());
        put(g.scale.x()), put(g.scale.y()), put(g.scale.z());
        put(g.rotation.w()), put(g.rotation.x()), put(g.rotation.y()), put(g.rotation.z());
        put(g.opacity);
        put(g.sh[0].x()), put(g.sh[0].y()), put(g.sh[0].z());
        for (Eigen::Index c = 0; c < 3; ++c) {
            for (std::size_t k = 1; k < coefficients; ++k) {
                put(g.sh[k][c]);
            }
        }
    }
    if (!out) {
        throw InputError("failed writing " + ply_path.string());
    }
    write_json(asset_sidecar_path(ply_path), {{"dims", to_json(asset.canonical_dims())}, {"center", {0.0, 0.0, 0.0}}});
}

// ---- scene manifest ------------------------------------------------------------

Scene load_scene(const fs::path& manifest, bool reference_convention) {
    const json root = read_json(manifest);
    const fs::path base = manifest.parent_path();
    const std::string what = manifest.string();
    auto resolve = [&](const json& j) {
        const fs::path p = j.get<std::string>();
        return p.is_absolute() ? p : base / p;
    };

    return with_json_errors(what, [&] {
        Scene scene;
        if (!root.is_object() || !root.contains("frames") || !root["frames"].is_array()) {
            throw InputError(what + ": a 'frames' array is required");
        }
        for (std::size_t i = 0; i < root["frames"].size(); ++i) {
            const json& f = root["frames"][i];
            const std::string where = what + ": frames[" + std::to_string(i) + "]";
            const CameraView camera = parse_camera(f, where);
            ScalarMap depth;
            BinaryMap valid;
            read_depth(resolve(f.at("depth")), depth, valid);
            Frame frame{read_png(resolve(f.at("image"))), std::move(depth), std::move(valid), camera.intrinsics,
                        camera.pose, {}};
            try {
                frame.validate();
            } catch (const Error& e) {
                throw InputError(where + ": " + e.what());
            }
            scene.frames.push_back(std::move(frame));
        }

        std::map<std::string, std::size_t> asset_index;
        for (const json& a : root.value("assets", json::array())) {
            const std::string id = a.at("id").get<std::string>();
            if (asset_index.contains(id)) {
                throw InputError(what + ": duplicate asset id '" + id + "'");
            }
            asset_index[id] = scene.assets.size();
            scene.assets.push_back({id, read_gaussian_asset(resolve(a.at("ply")), reference_convention), {}});
        }

        for (const json& b : root.value("boxes", json::array())) {
            const int frame = b.at("frame").get<int>();
            if (frame < 0 || frame >= scene.frame_count()) {
                throw InputError(what + ": box references missing frame " + std::to_string(frame));
            }
            const Vec3 center = json_vec3(b.at("center"), "box center");
            const Vec3 dims = json_vec3(b.at("dims"), "box dims");
            const OrientedBox3D box = b.contains("rotation")
                                          ? OrientedBox3D(center, dims, json_mat3(b["rotation"], "box rotation"))
                                          : OrientedBox3D(center, dims, b.value("heading", 0.0));
            scene.frames[static_cast<std::size_t>(frame)].boxes.push_back(box);
            if (b.contains("asset_id")) {
                const std::string id = b["asset_id"].get<std::string>();
                const auto it = asset_index.find(id);
                if (it == asset_index.end()) {
                    throw InputError(what + ": box references unknown asset '" + id + "'");
                }
                scene.assets[it->second].placements.push_back({frame, box});
            }
        }
        scene.validate();
        return scene;
    });
}

void save_scene(const fs::path& dir, const Scene& scene) {
    scene.validate();
    fs::create_directories(dir / "frames");
    json root;
    root["version"] = 1;
    root["frames"] = json::array();
    root["boxes"] = json::array();
    for (std::size_t i = 0; i < scene.frames.size(); ++i) {
        const Frame& f = scene.frames[i];
        const std::string image = "frames/" + frame_file("image_", i, ".png");
        const std::string depth = "frames/" + frame_file("depth_", i, ".scpt");
        write_png(dir / image, f.image);
        write_depth(dir / depth, f.depth, f.depth_valid);
        json entry = camera_json(f.intrinsics, f.pose);
        entry["image"] = image;
        entry["depth"] = depth;
        root["frames"].push_back(entry);
    }

    auto box_json = [](int frame, const OrientedBox3D& box) {
        return json{{"frame", frame}, {"center", to_json(box.center())}, {"dims", to_json(box.dims())},
                    {"rotation", to_json(box.rotation())}};
    };
    root["assets"] = json::array();
    for (const SceneAsset& asset : scene.assets) {
        const std::string ply = "assets/" + asset.id + ".ply";
        write_gaussian_asset(dir / ply, asset.asset);
        root["assets"].push_back({{"id", asset.id}, {"ply", ply}});
        for (const AssetPlacement& p : asset.placements) {
            json b = box_json(p.frame, p.box);
            b["asset_id"] = asset.id;
            root["boxes"].push_back(b);
        }
    }
    // Frame boxes that are not asset placements.
    for (std::size_t i = 0; i < scene.frames.size(); ++i) {
        for (const OrientedBox3D& box : scene.frames[i].boxes) {
            bool placed = false;
            for (const SceneAsset& asset : scene.assets) {
                const OrientedBox3D* p = asset.placement_at(static_cast<int>(i));
                placed = placed || (p != nullptr && p->center() == box.center() && p->dims() == box.dims() &&
                                    p->rotation() == box.rotation());
            }
            if (!placed) {
                root["boxes"].push_back(box_json(static_cast<int>(i), box));
            }
        }
    }
    write_json(dir / "scene.json", root);
}

// ---- bundles and pairs ---------------------------------------------------------

void write_bundle(const fs::path& dir, const ConditioningBundle& bundle) {
    bundle.validate();
    fs::create_directories(dir);
    json cameras = json::array();
    for (std::size_t t = 0; t < bundle.frames(); ++t) {
        write_png(dir / frame_file("I_", t, ".png"), rgb_frame(bundle.rgb, t));
        write_scalar_map(dir / frame_file("cov_", t, ".scpt"), scalar_frame(bundle.coverage, t, 0));
        write_scalar_map(dir / frame_file("ma_", t, ".scpt"), scalar_frame(bundle.asset_alpha, t, 0));
        cameras.push_back(camera_json(bundle.cameras[t].intrinsics, bundle.cameras[t].pose));
    }
    write_json(dir / "bundle.json", {{"T", bundle.frames()},
                                     {"H", bundle.height()},
                                     {"W", bundle.width()},
                                     {"polarity", kMaskPolarity},
                                     {"asset_mask_threshold", kAssetMaskThreshold},
                                     {"cameras", cameras}});
}

ConditioningBundle read_bundle(const fs::path& dir) {
    const json manifest = read_json(dir / "bundle.json");
    const std::string what = (dir / "bundle.json").string();
    return with_json_errors(what, [&] {
        if (manifest.at("polarity").get<std::string>() != kMaskPolarity) {
            throw InputError(what + ": unsupported mask polarity");
        }
        const auto frames = manifest.at("T").get<std::size_t>();
        const auto height = manifest.at("H").get<std::size_t>();
        const auto width = manifest.at("W").get<std::size_t>();
        if (frames == 0 || manifest.at("cameras").size() != frames) {
            throw InputError(what + ": camera list does not match T");
        }
        ConditioningBundle bundle;
        bundle.rgb = Tensor4({frames, 3, height, width});
        bundle.coverage = Tensor4({frames, 1, height, width});
        bundle.asset_alpha = Tensor4({frames, 1, height, width});
        bundle.asset_mask = Tensor4({frames, 1, height, width});
        for (std::size_t t = 0; t < frames; ++t) {
            bundle.cameras.push_back(parse_camera(manifest["cameras"][t], what));
            const RgbImage image = read_png(dir / frame_file("I_", t, ".png"));
            const ScalarMap coverage = read_scalar_map(dir / frame_file("cov_", t, ".scpt"));
            const ScalarMap alpha = read_scalar_map(dir / frame_file("ma_", t, ".scpt"));
            if (static_cast<std::size_t>(image.width()) != width || static_cast<std::size_t>(image.height()) != height ||
                !coverage.same_shape(image) || !alpha.same_shape(image)) {
                throw InputError(what + ": frame " + std::to_string(t) + " files disagree with H x W");
            }
            set_rgb_frame(bundle.rgb, t, image);
            set_scalar_frame(bundle.asset_alpha, t, 0, alpha);
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const bool asset = bundle.asset_alpha(t, 0, y, x) >= kAssetMaskThreshold;
                    const double covered = coverage(static_cast<int>(x), static_cast<int>(y));
                    if (covered != 0.0 && covered != 1.0) {
                        throw InputError(what + ": coverage must be binary");
                    }
                    bundle.asset_mask(t, 0, y, x) = asset ? 1.0 : 0.0;
                    // Asset pixels always count as covered.
                    bundle.coverage(t, 0, y, x) = (covered != 0.0 || asset) ? 1.0 : 0.0;
                }
            }
        }
        return bundle;
    });
}

void write_pair(const fs::path& dir, const TrainingPair& pair) {
    write_bundle(dir, pair.bundle);
    for (std::size_t t = 0; t < pair.target.frames(); ++t) {
        write_png(dir / frame_file("target_", t, ".png"), rgb_frame(pair.target, t));
    }
    write_vector(dir / "embed.scpt", pair.first_frame_embed);
}

TrainingPair read_pair(const fs::path& dir) {
    TrainingPair pair;
    pair.bundle = read_bundle(dir);
    pair.target = Tensor4(pair.bundle.rgb.shape());
    for (std::size_t t = 0; t < pair.target.frames(); ++t) {
        const RgbImage image = read_png(dir / frame_file("target_", t, ".png"));
        if (static_cast<std::size_t>(image.width()) != pair.target.width() ||
            static_cast<std::size_t>(image.height()) != pair.target.height()) {
            throw InputError(dir.string() + ": target frame size differs from the bundle");
        }
        set_rgb_frame(pair.target, t, image);
    }
    pair.first_frame_embed = read_vector(dir / "embed.scpt");
    if (pair.first_frame_embed.size() != kEmbedDim) {
        throw InputError(dir.string() + ": embed.scpt must hold " + std::to_string(kEmbedDim) + " values");
    }
    return pair;
}

} // namespace scpainter
