#pragma once

// JSON report plumbing shared by the CLI commands.

#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>

#include "json.hpp"

#include "loce/common.hpp"
#include "loce/tensor_store.hpp"

namespace loce::report {

inline constexpr int kReportSchemaVersion = 1;

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Keys of nlohmann::json objects are sorted, so dump() is canonical.
inline std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

inline nlohmann::json header(const std::string& command, const nlohmann::json& config) {
    return {{"schema_version", kReportSchemaVersion}, {"command", command}, {"config_hash", config_hash(config)}};
}

// NaN/inf are not valid JSON; emit null instead.
inline nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    detail::write_text_file(path, j.dump(2) + "\n");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    detail::write_text_file(path, text);
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

// Population standard deviation; both zero for empty input.
inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    if (v.empty()) return out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size()));
    return out;
}

}  // namespace loce::report
