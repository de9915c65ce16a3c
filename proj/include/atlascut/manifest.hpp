#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/errors.hpp"
#include "atlascut/version.hpp"

// Every CLI run writes exactly one manifest: the command, the full config
// snapshot (so each empirical constant is auditable per run), input content
// hashes, the seed, and wall-clock timings per stage.

namespace atlascut {

inline std::uint64_t fnv1a_64(const char* data, std::size_t n,
                              std::uint64_t h = 0xcbf29ce484222325ull) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot hash missing file " + p.string());
    char buf[1 << 16];
    std::uint64_t h = 0xcbf29ce484222325ull;
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a_64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

// Hash of all regular files under a path (or the file itself), stable in path
// order.
inline std::string hash_path(const std::filesystem::path& p) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(p)) return hash_file(p);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, p).string();
        h = fnv1a_64(rel.data(), rel.size(), h);
        const std::string fh = hash_file(f);
        h = fnv1a_64(fh.data(), fh.size(), h);
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

class RunManifest {
public:
    explicit RunManifest(std::string command) : start_(clock::now()) {
        j_["command"] = std::move(command);
        j_["tool_version"] = kVersion;
        j_["stage_seconds"] = nlohmann::json::object();
        j_["input_hashes"] = nlohmann::json::object();
    }

    void set_config(const nlohmann::json& cfg) { j_["config"] = cfg; }
    void set_seed(std::uint64_t seed) { j_["seed"] = seed; }
    void add_input(const std::string& name, const std::filesystem::path& p) {
        j_["input_hashes"][name] = hash_path(p);
    }
    void note(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    // Stage timing: call stage_start, then stage_done with the same name.
    void stage_start(const std::string& name) { stage_t0_[name] = clock::now(); }
    void stage_done(const std::string& name) {
        const auto it = stage_t0_.find(name);
        if (it == stage_t0_.end()) return;
        j_["stage_seconds"][name] = seconds_since(it->second);
    }

    void write(const std::filesystem::path& path) {
        j_["wall_seconds"] = seconds_since(start_);
        std::ofstream out(path);
        if (!out) throw IoError("cannot write manifest " + path.string());
        out << j_.dump(2) << "\n";
    }

private:
    using clock = std::chrono::steady_clock;

    double seconds_since(clock::time_point t0) const {
        return std::chrono::duration<double>(clock::now() - t0).count();
    }

    nlohmann::json j_;
    clock::time_point start_;
    std::map<std::string, clock::time_point> stage_t0_;
};

}  // namespace atlascut
