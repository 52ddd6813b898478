#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "icupass/common.hpp"
#include "icupass/rng.hpp"

namespace icupass {

using ordered_json = nlohmann::ordered_json;

/// One raw (pre-imputation) measurement of one variable.
struct Observation {
    std::string variable_id;
    double time_hr = 0.0;  // hours since ICU admission
    double value = 0.0;
};

/// One contiguous ICU stay. A patient may have several episodes; the
/// medical discharge marker precedes (or equals) physical discharge and
/// the interval between them defines the acceptable-state window.
struct Episode {
    std::string episode_id;
    std::string patient_id;
    double age_months = 0.0;
    std::string diagnosis;            // empty = unknown
    std::optional<double> pim2;       // severity-of-illness score in [0,1]
    bool survived = true;
    double medical_discharge_hr = 0.0;
    double physical_discharge_hr = 0.0;
    std::vector<Observation> observations;  // non-decreasing in time_hr
};

struct VariableInfo {
    std::string id;
    std::string name;
    std::string units;
    double population_median = 0.0;
};

struct Catalog {
    std::vector<VariableInfo> variables;

    int index_of(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? -1 : it->second;
    }
    bool contains(const std::string& id) const { return index_.count(id) > 0; }
    std::size_t size() const { return variables.size(); }

    void add(VariableInfo v) {
        if (contains(v.id)) throw std::runtime_error("duplicate variable id in catalog: " + v.id);
        index_[v.id] = static_cast<int>(variables.size());
        variables.push_back(std::move(v));
    }

private:
    std::unordered_map<std::string, int> index_;
};

struct Cohort {
    Catalog catalog;
    std::vector<Episode> episodes;
};

enum class Partition { train, validation, test };

inline const char* partition_name(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::validation: return "validation";
        case Partition::test: return "test";
    }
    return "?";
}

inline Partition partition_from_name(std::string_view s) {
    if (s == "train") return Partition::train;
    if (s == "validation") return Partition::validation;
    if (s == "test") return Partition::test;
    throw std::runtime_error("unknown partition name: '" + std::string(s) + "'");
}

/// episode_id -> partition; all episodes of one patient share a partition.
struct SplitAssignment {
    std::map<std::string, Partition> partition_of;

    Partition at(const std::string& episode_id) const {
        auto it = partition_of.find(episode_id);
        if (it == partition_of.end()) {
            throw std::runtime_error("episode not present in split: " + episode_id);
        }
        return it->second;
    }
    bool contains(const std::string& episode_id) const { return partition_of.count(episode_id) > 0; }
};

namespace detail {

inline void validate_episode(const Episode& ep) {
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error("episode '" + ep.episode_id + "': " + msg);
    };
    if (ep.episode_id.empty()) fail("empty episode_id");
    if (ep.patient_id.empty()) fail("empty patient_id");
    if (!(ep.age_months >= 0.0) || !std::isfinite(ep.age_months)) fail("age_months must be finite and >= 0");
    if (ep.pim2 && (!(*ep.pim2 >= 0.0) || !(*ep.pim2 <= 1.0))) fail("pim2 must lie in [0,1]");
    if (!(ep.medical_discharge_hr > 0.0)) fail("medical_discharge_hr must be positive");
    if (!(ep.physical_discharge_hr >= ep.medical_discharge_hr)) {
        fail("physical_discharge_hr is before medical_discharge_hr");
    }
    for (const Observation& obs : ep.observations) {
        if (!(obs.time_hr >= 0.0)) fail("observation time must be >= 0");
        if (!std::isfinite(obs.value)) fail("observation value must be finite");
        if (obs.time_hr > ep.physical_discharge_hr) fail("observation after physical discharge");
    }
}

inline void sort_observations(Episode& ep) {
    // stable: equal-time observations keep file order (featurize tie rule)
    std::stable_sort(ep.observations.begin(), ep.observations.end(),
                     [](const Observation& a, const Observation& b) { return a.time_hr < b.time_hr; });
}

}  // namespace detail

inline void save_catalog(const Catalog& catalog, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "id\tname\tunits\tpopulation_median\n";
    for (const VariableInfo& v : catalog.variables) {
        out << v.id << '\t' << v.name << '\t' << v.units << '\t' << fmt_double(v.population_median) << '\n';
    }
}

inline Catalog load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open catalog file: " + path);
    Catalog catalog;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        if (lineno == 1 && sv.substr(0, 3) == "id\t") continue;  // header
        auto cols = split_tsv(sv);
        if (cols.size() != 4) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 4 columns");
        }
        catalog.add({std::string(cols[0]), std::string(cols[1]), std::string(cols[2]),
                     parse_double(cols[3], "population_median")});
    }
    return catalog;
}

/// One episode per line, self-contained JSON object; observations encoded
/// as [variable_id, time_hr, value] triples.
inline void save_cohort(const Cohort& cohort, const std::string& episodes_path,
                        const std::string& catalog_path) {
    save_catalog(cohort.catalog, catalog_path);
    std::ofstream out(episodes_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + episodes_path);
    for (const Episode& ep : cohort.episodes) {
        ordered_json j;
        j["episode_id"] = ep.episode_id;
        j["patient_id"] = ep.patient_id;
        j["age_months"] = ep.age_months;
        if (!ep.diagnosis.empty()) j["diagnosis"] = ep.diagnosis;
        if (ep.pim2) j["pim2"] = *ep.pim2;
        j["survived"] = ep.survived;
        j["medical_discharge_hr"] = ep.medical_discharge_hr;
        j["physical_discharge_hr"] = ep.physical_discharge_hr;
        ordered_json obs = ordered_json::array();
        for (const Observation& o : ep.observations) {
            obs.push_back(ordered_json::array({o.variable_id, o.time_hr, o.value}));
        }
        j["observations"] = std::move(obs);
        out << j.dump() << '\n';
    }
}

inline Cohort load_cohort(const std::string& episodes_path, const std::string& catalog_path) {
    Cohort cohort;
    cohort.catalog = load_catalog(catalog_path);

    std::ifstream in(episodes_path);
    if (!in) throw std::runtime_error("cannot open episode file: " + episodes_path);

    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        const std::string where = episodes_path + ":" + std::to_string(lineno);
        ordered_json j;
        try {
            j = ordered_json::parse(sv);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": malformed record: " + e.what());
        }
        try {
            Episode ep;
            ep.episode_id = j.at("episode_id").get<std::string>();
            ep.patient_id = j.at("patient_id").get<std::string>();
            ep.age_months = j.at("age_months").get<double>();
            if (j.contains("diagnosis") && !j["diagnosis"].is_null()) {
                ep.diagnosis = j["diagnosis"].get<std::string>();
            }
            if (j.contains("pim2") && !j["pim2"].is_null()) {
                ep.pim2 = j["pim2"].get<double>();
            }
            ep.survived = j.at("survived").get<bool>();
            ep.medical_discharge_hr = j.at("medical_discharge_hr").get<double>();
            ep.physical_discharge_hr = j.at("physical_discharge_hr").get<double>();
            for (const auto& o : j.at("observations")) {
                if (!o.is_array() || o.size() != 3) {
                    throw std::runtime_error("observation must be [variable_id, time, value]");
                }
                Observation obs{o[0].get<std::string>(), o[1].get<double>(), o[2].get<double>()};
                if (!cohort.catalog.contains(obs.variable_id)) {
                    throw std::runtime_error("unknown variable_id '" + obs.variable_id + "'");
                }
                ep.observations.push_back(std::move(obs));
            }
            if (!seen_ids.insert(ep.episode_id).second) {
                throw std::runtime_error("duplicate episode_id '" + ep.episode_id + "'");
            }
            detail::sort_observations(ep);
            detail::validate_episode(ep);
            cohort.episodes.push_back(std::move(ep));
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    return cohort;
}

struct FilterOptions {
    std::vector<std::string> vitals;  // required window coverage per vital
    int min_window_measurements = 3;
    double min_duration_hr = 12.0;
};

struct FilterCounts {
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t excluded_non_survivor = 0;
    std::size_t excluded_short_stay = 0;          // medical discharge before min_duration_hr
    std::size_t excluded_sparse_window = 0;       // < min measurements of some vital in window
};

namespace detail {

inline int window_count(const Episode& ep, const std::string& vital_id) {
    // window closed on both ends: [medical, physical]
    int n = 0;
    for (const Observation& o : ep.observations) {
        if (o.variable_id == vital_id && o.time_hr >= ep.medical_discharge_hr &&
            o.time_hr <= ep.physical_discharge_hr) {
            ++n;
        }
    }
    return n;
}

}  // namespace detail

/// Keeps survivors whose medical discharge is at least min_duration_hr
/// after admission (so the 12th-hour prediction point exists) and whose
/// acceptable-state window holds at least min_window_measurements of every
/// listed vital. Total over its input; exclusion tallies are optional.
inline Cohort filter_eligible(const Cohort& cohort, const FilterOptions& opts,
                              FilterCounts* counts_out = nullptr) {
    if (opts.min_window_measurements <= 0 || opts.min_duration_hr <= 0.0) {
        throw std::runtime_error("filter thresholds must be positive");
    }
    for (const std::string& v : opts.vitals) {
        if (!cohort.catalog.contains(v)) {
            throw std::runtime_error("filter vital not in catalog: " + v);
        }
    }
    FilterCounts counts;
    counts.input = cohort.episodes.size();
    Cohort out;
    out.catalog = cohort.catalog;
    for (const Episode& ep : cohort.episodes) {
        if (!ep.survived) {
            ++counts.excluded_non_survivor;
            continue;
        }
        if (ep.medical_discharge_hr < opts.min_duration_hr) {
            ++counts.excluded_short_stay;
            continue;
        }
        bool sparse = false;
        for (const std::string& v : opts.vitals) {
            if (detail::window_count(ep, v) < opts.min_window_measurements) {
                sparse = true;
                break;
            }
        }
        if (sparse) {
            ++counts.excluded_sparse_window;
            continue;
        }
        out.episodes.push_back(ep);
    }
    counts.kept = out.episodes.size();
    if (counts_out) *counts_out = counts;
    return out;
}

/// Patient-level split: distinct patient_ids (first-appearance order) are
/// shuffled by seed and cut at cumulative fractions of the *patient* count;
/// every episode follows its patient, so no patient spans partitions.
inline SplitAssignment split_by_patient(const Cohort& cohort, double train_frac,
                                        double validation_frac, double test_frac,
                                        std::uint64_t seed) {
    if (cohort.episodes.empty()) throw std::runtime_error("cannot split an empty cohort");
    if (!(train_frac > 0.0 && validation_frac > 0.0 && test_frac > 0.0)) {
        throw std::runtime_error("split fractions must be positive");
    }
    if (std::abs(train_frac + validation_frac + test_frac - 1.0) > 1e-9) {
        throw std::runtime_error("split fractions must sum to 1");
    }

    std::vector<std::string> patients;
    std::unordered_set<std::string> seen;
    for (const Episode& ep : cohort.episodes) {
        if (seen.insert(ep.patient_id).second) patients.push_back(ep.patient_id);
    }

    Rng rng(seed);
    rng.shuffle(patients);

    const auto n = static_cast<double>(patients.size());
    const auto cut1 = static_cast<std::size_t>(std::llround(train_frac * n));
    const auto cut2 = static_cast<std::size_t>(std::llround((train_frac + validation_frac) * n));

    std::unordered_map<std::string, Partition> patient_partition;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        Partition p = i < cut1 ? Partition::train : i < cut2 ? Partition::validation : Partition::test;
        patient_partition[patients[i]] = p;
    }

    SplitAssignment split;
    for (const Episode& ep : cohort.episodes) {
        split.partition_of[ep.episode_id] = patient_partition.at(ep.patient_id);
    }
    return split;
}

inline void save_split(const SplitAssignment& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "episode_id\tpartition\n";
    for (const auto& [id, part] : split.partition_of) {
        out << id << '\t' << partition_name(part) << '\n';
    }
}

inline SplitAssignment load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file: " + path);
    SplitAssignment split;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        if (lineno == 1 && sv.substr(0, 11) == "episode_id\t") continue;
        auto cols = split_tsv(sv);
        if (cols.size() != 2) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 2 columns");
        }
        auto [it, fresh] = split.partition_of.emplace(std::string(cols[0]), partition_from_name(cols[1]));
        if (!fresh) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": episode assigned twice: " + std::string(cols[0]));
        }
    }
    return split;
}

/// Episodes of one partition, in cohort order.
inline std::vector<const Episode*> episodes_in(const Cohort& cohort, const SplitAssignment& split,
                                               Partition part) {
    std::vector<const Episode*> out;
    for (const Episode& ep : cohort.episodes) {
        if (split.contains(ep.episode_id) && split.at(ep.episode_id) == part) out.push_back(&ep);
    }
    return out;
}

}  // namespace icupass
