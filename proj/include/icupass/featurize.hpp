#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "icupass/cohort.hpp"
#include "icupass/common.hpp"

namespace icupass {

/// Per-variable normalization constants, catalog order. Fitted on the
/// train partition only; variables never observed in train fall back to
/// the catalog population median and are flagged zero-variance (their
/// z-score is defined as 0).
struct VariableStats {
    std::string id;
    double mean = 0.0;
    double stddev = 0.0;  // population convention (divide by N)
    double median = 0.0;
    bool zero_variance = false;
    bool observed_in_train = false;
};

struct NormStats {
    std::vector<VariableStats> vars;

    int index_of(const std::string& id) const {
        for (std::size_t i = 0; i < vars.size(); ++i) {
            if (vars[i].id == id) return static_cast<int>(i);
        }
        return -1;
    }
    std::size_t size() const { return vars.size(); }
};

/// Fixed-grid, imputed, z-scored variables-by-time matrix for one episode.
/// Column k sits at grid time k * grid_step_hr; observed_mask marks cells
/// whose grid step contains a real measurement.
struct FeatureMatrix {
    std::string episode_id;
    double grid_step_hr = 1.0;
    Eigen::MatrixXd values;                              // D x T
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed_mask;  // D x T

    Eigen::Index n_variables() const { return values.rows(); }
    Eigen::Index n_steps() const { return values.cols(); }
};

inline constexpr double kZScoreClamp = 10.0;

namespace detail {

inline double median_of(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Mean/std/median per variable over all raw observed values of train
/// episodes. Deterministic: accumulation follows cohort and observation
/// order.
inline NormStats fit_norm_stats(const Cohort& cohort, const SplitAssignment& split) {
    const auto train = episodes_in(cohort, split, Partition::train);
    if (train.empty()) throw std::runtime_error("fit_norm_stats: train partition is empty");

    const std::size_t d = cohort.catalog.size();
    std::vector<std::vector<double>> samples(d);
    for (const Episode* ep : train) {
        for (const Observation& o : ep->observations) {
            samples[cohort.catalog.index_of(o.variable_id)].push_back(o.value);
        }
    }

    NormStats stats;
    stats.vars.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        VariableStats& vs = stats.vars[i];
        vs.id = cohort.catalog.variables[i].id;
        auto& xs = samples[i];
        if (xs.empty()) {
            vs.median = cohort.catalog.variables[i].population_median;
            vs.mean = vs.median;
            vs.stddev = 0.0;
            vs.zero_variance = true;
            vs.observed_in_train = false;
            continue;
        }
        vs.observed_in_train = true;
        double sum = 0.0;
        for (double x : xs) sum += x;
        vs.mean = sum / static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - vs.mean) * (x - vs.mean);
        vs.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
        vs.zero_variance = vs.stddev == 0.0;
        vs.median = detail::median_of(xs);
    }
    return stats;
}

/// z-score with the zero-variance convention, clamped to +-kZScoreClamp.
inline double normalize_value(const VariableStats& vs, double raw) {
    if (vs.zero_variance) return 0.0;
    const double z = (raw - vs.mean) / vs.stddev;
    return std::clamp(z, -kZScoreClamp, kZScoreClamp);
}

/// Builds the matrix of data available up to end_hr (inclusive): grid
/// times t_k = k * grid_step_hr for k = 0..floor(end_hr/step); each cell is
/// the last observation at time <= t_k (forward fill), cells before a
/// variable's first observation hold its train median; everything is then
/// z-scored. Only pre-medical-discharge data may feed models, hence the
/// end_hr precondition.
inline FeatureMatrix build_matrix(const Episode& episode, double end_hr, double grid_step_hr,
                                  const NormStats& stats) {
    if (!(grid_step_hr > 0.0)) throw std::runtime_error("grid_step_hr must be positive");
    if (end_hr > episode.medical_discharge_hr) {
        throw std::runtime_error("build_matrix: end_hr " + fmt_double(end_hr) +
                                 " exceeds medical discharge of episode '" + episode.episode_id + "'");
    }

    const auto d = static_cast<Eigen::Index>(stats.size());
    const auto t_count = static_cast<Eigen::Index>(std::floor(end_hr / grid_step_hr)) + 1;

    FeatureMatrix m;
    m.episode_id = episode.episode_id;
    m.grid_step_hr = grid_step_hr;
    m.values.resize(d, t_count);
    m.observed_mask.setConstant(d, t_count, false);

    // raw fill pass: forward fill from sorted observations, median before
    // the first one; equal-time ties resolve to the later record because
    // the scan keeps overwriting (observations are stably sorted).
    for (Eigen::Index row = 0; row < d; ++row) m.values.row(row).setConstant(stats.vars[row].median);

    for (const Observation& o : episode.observations) {
        const int row = stats.index_of(o.variable_id);
        if (row < 0) throw std::runtime_error("build_matrix: unknown variable '" + o.variable_id + "'");
        // first grid index whose time >= o.time_hr; the observation is
        // visible from that column on
        const auto k = static_cast<Eigen::Index>(std::ceil(o.time_hr / grid_step_hr - 1e-12));
        if (k < t_count) {
            m.values.row(row).segment(k, t_count - k).setConstant(o.value);
            m.observed_mask(row, k) = true;
        }
    }

    for (Eigen::Index row = 0; row < d; ++row) {
        const VariableStats& vs = stats.vars[static_cast<std::size_t>(row)];
        for (Eigen::Index k = 0; k < t_count; ++k) {
            m.values(row, k) = normalize_value(vs, m.values(row, k));
        }
    }
    return m;
}

inline void save_norm_stats(const NormStats& stats, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    ordered_json vars = ordered_json::array();
    for (const VariableStats& vs : stats.vars) {
        ordered_json v;
        v["id"] = vs.id;
        v["mean"] = vs.mean;
        v["stddev"] = vs.stddev;
        v["median"] = vs.median;
        v["zero_variance"] = vs.zero_variance;
        v["observed_in_train"] = vs.observed_in_train;
        vars.push_back(std::move(v));
    }
    j["variables"] = std::move(vars);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

inline NormStats load_norm_stats(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open norm stats file: " + path);
    ordered_json j = ordered_json::parse(in);
    NormStats stats;
    for (const auto& v : j.at("variables")) {
        VariableStats vs;
        vs.id = v.at("id").get<std::string>();
        vs.mean = v.at("mean").get<double>();
        vs.stddev = v.at("stddev").get<double>();
        vs.median = v.at("median").get<double>();
        vs.zero_variance = v.at("zero_variance").get<bool>();
        vs.observed_in_train = v.at("observed_in_train").get<bool>();
        stats.vars.push_back(std::move(vs));
    }
    return stats;
}

/// Optional per-episode dump: header line, row-major value table, then the
/// mask table.
inline void save_matrix_dump(const FeatureMatrix& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << m.episode_id << '\t' << fmt_double(m.grid_step_hr) << '\t' << m.n_variables() << '\t'
        << m.n_steps() << '\n';
    for (Eigen::Index r = 0; r < m.n_variables(); ++r) {
        for (Eigen::Index c = 0; c < m.n_steps(); ++c) {
            out << (c ? "\t" : "") << fmt_double(m.values(r, c));
        }
        out << '\n';
    }
    for (Eigen::Index r = 0; r < m.n_variables(); ++r) {
        for (Eigen::Index c = 0; c < m.n_steps(); ++c) {
            out << (c ? "\t" : "") << (m.observed_mask(r, c) ? 1 : 0);
        }
        out << '\n';
    }
}

}  // namespace icupass
