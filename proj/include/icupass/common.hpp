#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace icupass {

inline constexpr const char* kToolName = "icupass";
inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest decimal representation that round-trips the exact double.
/// All file writers go through here so artifacts are byte-stable and
/// non-finite values can never reach disk.
inline std::string fmt_double(double v) {
    if (!std::isfinite(v)) {
        throw std::runtime_error("refusing to serialize non-finite value");
    }
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("invalid number for " + what + ": '" + std::string(s) + "'");
    }
    return v;
}

inline long long parse_int(std::string_view s, const std::string& what) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("invalid integer for " + what + ": '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string_view> split_tsv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

}  // namespace icupass
