#pragma once

#include <array>
#include <fstream>
#include <map>
#include <string>

#include "icupass/cohort.hpp"
#include "icupass/common.hpp"

namespace icupass {

inline constexpr std::array<const char*, 3> kVitalLabels = {"hr", "sbp", "dbp"};
inline constexpr std::array<const char*, 3> kVitalUnits = {"bpm", "mmHg", "mmHg"};

/// Catalog ids of the three target vitals.
struct VitalIds {
    std::string hr = "hr";
    std::string sbp = "sbp";
    std::string dbp = "dbp";

    const std::string& operator[](std::size_t i) const {
        return i == 0 ? hr : i == 1 ? sbp : dbp;
    }
};

/// The episode's acceptable-state targets: mean HR/SBP/DBP in raw units
/// over the closed window [medical discharge, physical discharge].
struct PassTargets {
    std::string episode_id;
    std::array<double, 3> mu = {0.0, 0.0, 0.0};     // hr, sbp, dbp
    std::array<int, 3> window_counts = {0, 0, 0};

    double mu_hr() const { return mu[0]; }
    double mu_sbp() const { return mu[1]; }
    double mu_dbp() const { return mu[2]; }
};

/// Arithmetic mean of raw window observations per vital; boundaries are
/// closed on both ends.
inline PassTargets compute_pass(const Episode& episode, const VitalIds& vitals = {}) {
    PassTargets t;
    t.episode_id = episode.episode_id;
    std::array<double, 3> sums = {0.0, 0.0, 0.0};
    for (const Observation& o : episode.observations) {
        if (o.time_hr < episode.medical_discharge_hr || o.time_hr > episode.physical_discharge_hr) {
            continue;
        }
        for (std::size_t v = 0; v < 3; ++v) {
            if (o.variable_id == vitals[v]) {
                sums[v] += o.value;
                ++t.window_counts[v];
            }
        }
    }
    for (std::size_t v = 0; v < 3; ++v) {
        if (t.window_counts[v] == 0) {
            throw std::runtime_error("episode '" + episode.episode_id + "': no window measurements of " +
                                     vitals[v]);
        }
        t.mu[v] = sums[v] / t.window_counts[v];
    }
    return t;
}

using PassTargetsTable = std::map<std::string, PassTargets>;  // episode_id -> targets

inline void save_pass_targets(const PassTargetsTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "episode_id\tmu_hr\tmu_sbp\tmu_dbp\tn_hr\tn_sbp\tn_dbp\n";
    for (const auto& [id, t] : table) {
        out << id;
        for (double m : t.mu) out << '\t' << fmt_double(m);
        for (int n : t.window_counts) out << '\t' << n;
        out << '\n';
    }
}

inline PassTargetsTable load_pass_targets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open targets file: " + path);
    PassTargetsTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        if (lineno == 1 && sv.substr(0, 11) == "episode_id\t") continue;
        auto cols = split_tsv(sv);
        if (cols.size() != 7) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 7 columns");
        }
        PassTargets t;
        t.episode_id = std::string(cols[0]);
        for (std::size_t v = 0; v < 3; ++v) t.mu[v] = parse_double(cols[1 + v], "mu");
        for (std::size_t v = 0; v < 3; ++v) {
            t.window_counts[v] = static_cast<int>(parse_int(cols[4 + v], "window count"));
        }
        table[t.episode_id] = std::move(t);
    }
    return table;
}

}  // namespace icupass
