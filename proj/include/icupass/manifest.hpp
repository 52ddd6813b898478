#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "icupass/common.hpp"

namespace icupass {

using ordered_json = nlohmann::ordered_json;

/// FNV-1a/64 over raw bytes. Integrity digest for the artifact chain:
/// detects edits and stale files, not an adversary.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for digest: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return digest_hex(fnv1a64(ss.str()));
}

inline std::string digest_string(std::string_view bytes) { return digest_hex(fnv1a64(bytes)); }

/// Runs the writer against a temp path, then renames over the target, so
/// a crash can never leave a half-written artifact in place.
inline void atomic_write(const std::string& path, const std::function<void(const std::string&)>& writer) {
    const std::string tmp = path + ".tmp";
    writer(tmp);
    std::filesystem::rename(tmp, path);
}

/// Per-run ledger of stage seeds, config digests and artifact digests.
/// Contains no timestamps: a rerun with unchanged inputs rewrites the
/// identical bytes.
class Manifest {
public:
    static Manifest load_or_create(const std::string& path) {
        Manifest m;
        m.path_ = path;
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            m.doc_ = ordered_json::parse(in);
        } else {
            m.doc_["tool"] = kToolName;
            m.doc_["version"] = kToolVersion;
            m.doc_["digest_algo"] = "fnv1a64";
            m.doc_["stages"] = ordered_json::object();
        }
        return m;
    }

    /// Digest of `name` as recorded by whichever stage produced it.
    std::optional<std::string> recorded_digest(const std::string& name) const {
        if (!doc_.contains("stages")) return std::nullopt;
        for (const auto& [stage, entry] : doc_["stages"].items()) {
            if (entry.contains("outputs") && entry["outputs"].contains(name)) {
                return entry["outputs"][name].get<std::string>();
            }
        }
        return std::nullopt;
    }

    void record_stage(const std::string& stage, std::uint64_t seed, const std::string& config_digest,
                      const ordered_json& inputs, const ordered_json& outputs) {
        ordered_json entry;
        entry["seed"] = seed;
        entry["config_digest"] = config_digest;
        entry["inputs"] = inputs;
        entry["outputs"] = outputs;
        doc_["stages"][stage] = std::move(entry);
    }

    void save() const {
        atomic_write(path_, [&](const std::string& tmp) {
            std::ofstream out(tmp);
            if (!out) throw std::runtime_error("cannot write manifest: " + tmp);
            out << doc_.dump(2) << '\n';
        });
    }

    const ordered_json& doc() const { return doc_; }

private:
    std::string path_;
    ordered_json doc_;
};

}  // namespace icupass
