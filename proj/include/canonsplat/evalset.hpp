// Copyright Contributors to the canonsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "canonsplat/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

// Overlap-ratio protocol for building evaluation sets from dense match maps.
namespace canonsplat::evalset {

static_assert(std::endian::native == std::endian::little, "MatchMap I/O assumes a little-endian host");

/// Per-pixel match confidence of one matching direction, row-major.
struct MatchMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<float> score;

    MatchMap() = default;
    MatchMap(std::uint32_t w, std::uint32_t h, float fill = 0.0F)
        : width(w), height(h), score(static_cast<std::size_t>(w) * h, fill) {}

    float &at(std::uint32_t x, std::uint32_t y) { return score[static_cast<std::size_t>(y) * width + x]; }

    void
    validate() const {
        require(score.size() == static_cast<std::size_t>(width) * height, "MatchMap: score size does not match shape");
        for (float s : score) {
            require(s >= 0.0F && s <= 1.0F, "MatchMap: scores must lie in [0, 1]");
        }
    }

    bool operator==(const MatchMap &) const = default;
};

inline constexpr std::array<char, 4> kMagic = {'M', 'M', 'A', 'P'};
inline constexpr std::size_t kHeaderBytes = 12;

inline void
write_matchmap(const MatchMap &map, const std::filesystem::path &path) {
    map.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    out.write(kMagic.data(), 4);
    out.write(reinterpret_cast<const char *>(&map.width), 4);
    out.write(reinterpret_cast<const char *>(&map.height), 4);
    out.write(reinterpret_cast<const char *>(map.score.data()),
              static_cast<std::streamsize>(map.score.size() * sizeof(float)));
    if (!out) {
        fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
    }
}

inline MatchMap
read_matchmap(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "'" + path.string() + "': ";
    if (bytes.size() < kHeaderBytes) {
        fail(ErrorKind::Parse, where + "truncated header");
    }
    if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
        fail(ErrorKind::Parse, where + "bad magic (expected MMAP)");
    }
    MatchMap map;
    std::memcpy(&map.width, bytes.data() + 4, 4);
    std::memcpy(&map.height, bytes.data() + 8, 4);
    const std::size_t payload = bytes.size() - kHeaderBytes;
    if (payload % sizeof(float) != 0) {
        fail(ErrorKind::Parse, where + "truncated payload");
    }
    const std::size_t expected = static_cast<std::size_t>(map.width) * map.height;
    if (payload / sizeof(float) != expected) {
        fail(ErrorKind::Parse, where + "size mismatch: header says " + std::to_string(map.width) + "x" +
                                   std::to_string(map.height) + " but payload holds " +
                                   std::to_string(payload / sizeof(float)) + " scores");
    }
    map.score.resize(expected);
    std::memcpy(map.score.data(), bytes.data() + kHeaderBytes, payload);
    return map;
}

enum class OverlapBin { Small, Medium, Large, OutOfRange };

inline std::string
to_string(OverlapBin b) {
    switch (b) {
    case OverlapBin::Small:
        return "small";
    case OverlapBin::Medium:
        return "medium";
    case OverlapBin::Large:
        return "large";
    case OverlapBin::OutOfRange:
        break;
    }
    return "out-of-range";
}

inline OverlapBin
bin_from_string(const std::string &s) {
    for (auto b : {OverlapBin::Small, OverlapBin::Medium, OverlapBin::Large, OverlapBin::OutOfRange}) {
        if (to_string(b) == s) {
            return b;
        }
    }
    fail(ErrorKind::Parse, "unknown overlap bin '" + s + "'");
}

/// [0.05, 0.3) small, [0.3, 0.55) medium, [0.55, 0.8] large.
inline OverlapBin
bin_overlap(double r) {
    if (r >= 0.05 && r < 0.3) {
        return OverlapBin::Small;
    }
    if (r >= 0.3 && r < 0.55) {
        return OverlapBin::Medium;
    }
    if (r >= 0.55 && r <= 0.8) {
        return OverlapBin::Large;
    }
    return OverlapBin::OutOfRange;
}

struct OverlapRecord {
    std::string pair_id;
    double r12 = 0.0;
    double r21 = 0.0;
    double r_overlap = 0.0;
    OverlapBin bin = OverlapBin::OutOfRange;
};

inline constexpr double kDefaultMatchThreshold = 0.005;

/// Fraction of pixels whose score is strictly above `threshold`.
inline double
valid_fraction(const MatchMap &m, double threshold) {
    m.validate();
    require(!m.score.empty(), "overlap_ratio: empty match map");
    std::size_t valid = 0;
    for (float s : m.score) {
        valid += static_cast<double>(s) > threshold ? 1 : 0;
    }
    return static_cast<double>(valid) / static_cast<double>(m.score.size());
}

inline OverlapRecord
overlap_ratio(const MatchMap &m12, const MatchMap &m21, double threshold = kDefaultMatchThreshold,
              std::string pair_id = {}) {
    OverlapRecord r;
    r.pair_id = std::move(pair_id);
    r.r12 = valid_fraction(m12, threshold);
    r.r21 = valid_fraction(m21, threshold);
    r.r_overlap = std::min(r.r12, r.r21);
    r.bin = bin_overlap(r.r_overlap);
    return r;
}

inline nlohmann::ordered_json
to_json(const OverlapRecord &r) {
    nlohmann::ordered_json j;
    j["pair_id"] = r.pair_id;
    j["r12"] = r.r12;
    j["r21"] = r.r21;
    j["r_overlap"] = r.r_overlap;
    j["bin"] = to_string(r.bin);
    return j;
}

inline OverlapRecord
overlap_from_json(const nlohmann::json &j) {
    OverlapRecord r;
    try {
        r.pair_id = j.at("pair_id").get<std::string>();
        r.r12 = j.at("r12").get<double>();
        r.r21 = j.at("r21").get<double>();
        r.r_overlap = j.at("r_overlap").get<double>();
        r.bin = bin_from_string(j.at("bin").get<std::string>());
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::Parse, std::string("overlap record: ") + e.what());
    }
    return r;
}

/// One JSON object per line.
inline void
write_manifest(const std::vector<OverlapRecord> &records, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    for (const auto &r : records) {
        out << to_json(r).dump() << "\n";
    }
}

inline std::vector<nlohmann::json>
read_json_lines(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    }
    std::vector<nlohmann::json> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<OverlapRecord>
read_manifest(const std::filesystem::path &path) {
    std::vector<OverlapRecord> out;
    for (const auto &j : read_json_lines(path)) {
        out.push_back(overlap_from_json(j));
    }
    return out;
}

} // namespace canonsplat::evalset
