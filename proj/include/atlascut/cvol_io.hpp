#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/errors.hpp"
#include "atlascut/volume.hpp"

// CVOL: a <name>.json sidecar describing dims/spacing/dtype plus a <name>.raw
// payload of little-endian voxels (float32 for images, uint8 for masks).
// Cine sequences are directories of volumes named frame_000, frame_001, ...

namespace atlascut {

namespace detail {

inline std::filesystem::path cvol_stem(const std::filesystem::path& path) {
    auto p = path;
    if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
    return p;
}

inline std::vector<char> read_all_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_all_bytes(const std::filesystem::path& p, const char* data,
                            std::size_t n) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed for " + p.string());
}

template <typename T>
inline void to_little_endian_inplace(std::vector<T>& v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& x : v) {
            auto* b = reinterpret_cast<unsigned char*>(&x);
            std::reverse(b, b + sizeof(T));
        }
    } else {
        (void)v;
    }
}

inline nlohmann::json load_sidecar(const std::filesystem::path& stem,
                                   const std::string& want_dtype) {
    const auto jpath = std::filesystem::path(stem).concat(".json");
    nlohmann::json j;
    try {
        std::ifstream in(jpath);
        if (!in) throw IoError("missing sidecar " + jpath.string());
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt sidecar " + jpath.string() + ": " + e.what());
    }
    if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3)
        throw FormatError("sidecar " + jpath.string() + ": bad or missing dims");
    if (j.value("dtype", "") != want_dtype)
        throw FormatError("sidecar " + jpath.string() + ": expected dtype " + want_dtype);
    if (j.value("order", "x-fastest") != "x-fastest")
        throw FormatError("sidecar " + jpath.string() + ": unsupported voxel order");
    if (j.value("endian", "little") != "little")
        throw FormatError("sidecar " + jpath.string() + ": unsupported endianness");
    return j;
}

}  // namespace detail

inline Volume load_volume(const std::filesystem::path& path) {
    const auto stem = detail::cvol_stem(path);
    const auto j = detail::load_sidecar(stem, "f32");

    Volume v;
    const int nx = j["dims"][0].get<int>();
    const int ny = j["dims"][1].get<int>();
    const int nz = j["dims"][2].get<int>();
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw FormatError("sidecar " + stem.string() + ".json: non-positive dims");
    v.vox = Grid3<float>(nx, ny, nz);
    if (j.contains("spacing")) {
        if (!j["spacing"].is_array() || j["spacing"].size() != 3)
            throw FormatError("sidecar " + stem.string() + ".json: bad spacing");
        for (int i = 0; i < 3; ++i) v.spacing[i] = j["spacing"][i].get<double>();
    }
    if (j.contains("frame_index")) v.frame_index = j["frame_index"].get<int>();

    const auto bytes = detail::read_all_bytes(std::filesystem::path(stem).concat(".raw"));
    if (bytes.size() != v.vox.size() * sizeof(float))
        throw IntegrityError("payload length mismatch for " + stem.string() + ".raw: got " +
                             std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(v.vox.size() * sizeof(float)));
    std::memcpy(v.vox.raw().data(), bytes.data(), bytes.size());
    detail::to_little_endian_inplace(v.vox.raw());  // payload is LE on disk
    validate_volume(v);
    return v;
}

inline void save_volume(const Volume& v, const std::filesystem::path& path) {
    validate_volume(v);
    const auto stem = detail::cvol_stem(path);

    nlohmann::json j;
    j["dims"] = {v.nx(), v.ny(), v.nz()};
    j["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
    j["dtype"] = "f32";
    j["order"] = "x-fastest";
    j["endian"] = "little";
    if (v.frame_index) j["frame_index"] = *v.frame_index;

    const std::string text = j.dump(2) + "\n";
    detail::write_all_bytes(std::filesystem::path(stem).concat(".json"), text.data(),
                            text.size());

    auto payload = v.vox.raw();
    detail::to_little_endian_inplace(payload);
    detail::write_all_bytes(std::filesystem::path(stem).concat(".raw"),
                            reinterpret_cast<const char*>(payload.data()),
                            payload.size() * sizeof(float));
}

inline Mask3 load_mask(const std::filesystem::path& path) {
    const auto stem = detail::cvol_stem(path);
    const auto j = detail::load_sidecar(stem, "u8");
    const int nx = j["dims"][0].get<int>();
    const int ny = j["dims"][1].get<int>();
    const int nz = j["dims"][2].get<int>();
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw FormatError("sidecar " + stem.string() + ".json: non-positive dims");
    Mask3 m(nx, ny, nz);
    const auto bytes = detail::read_all_bytes(std::filesystem::path(stem).concat(".raw"));
    if (bytes.size() != m.size())
        throw IntegrityError("payload length mismatch for " + stem.string() + ".raw");
    std::memcpy(m.raw().data(), bytes.data(), bytes.size());
    for (auto v : m.raw())
        if (v > 1) throw IntegrityError("mask " + stem.string() + " has non-binary values");
    return m;
}

inline void save_mask(const Mask3& m, const std::filesystem::path& path) {
    if (m.empty()) throw DegenerateInputError("refusing to save empty mask");
    for (auto v : m.raw())
        if (v > 1) throw DegenerateInputError("mask values must be 0 or 1");
    const auto stem = detail::cvol_stem(path);

    nlohmann::json j;
    j["dims"] = {m.nx(), m.ny(), m.nz()};
    j["spacing"] = {1.0, 1.0, 1.0};
    j["dtype"] = "u8";
    j["order"] = "x-fastest";
    j["endian"] = "little";
    const std::string text = j.dump(2) + "\n";
    detail::write_all_bytes(std::filesystem::path(stem).concat(".json"), text.data(),
                            text.size());
    detail::write_all_bytes(std::filesystem::path(stem).concat(".raw"),
                            reinterpret_cast<const char*>(m.raw().data()), m.size());
}

inline std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d", i);
    return buf;
}

// Loads frame_000, frame_001, ... from a cine directory, in index order.
inline std::vector<Volume> load_cine(const std::filesystem::path& dir) {
    std::vector<Volume> frames;
    for (int i = 0;; ++i) {
        const auto stem = dir / frame_name(i);
        if (!std::filesystem::exists(std::filesystem::path(stem).concat(".json"))) break;
        frames.push_back(load_volume(stem));
    }
    if (frames.empty()) throw IoError("no cine frames found in " + dir.string());
    return frames;
}

inline void save_cine(const std::vector<Volume>& frames,
                      const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < frames.size(); ++i)
        save_volume(frames[i], dir / frame_name(static_cast<int>(i)));
}

}  // namespace atlascut
