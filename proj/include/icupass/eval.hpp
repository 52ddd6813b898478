#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "icupass/baselines.hpp"
#include "icupass/cohort.hpp"
#include "icupass/common.hpp"
#include "icupass/pass.hpp"

namespace icupass {
namespace metrics {

/// sqrt of the mean squared error over (actual, predicted) pairs.
inline double rmse(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw std::runtime_error("rmse: empty input");
    double ss = 0.0;
    for (const auto& [actual, predicted] : pairs) {
        const double e = actual - predicted;
        ss += e * e;
    }
    return std::sqrt(ss / static_cast<double>(pairs.size()));
}

inline double mae(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw std::runtime_error("mae: empty input");
    double s = 0.0;
    for (const auto& [actual, predicted] : pairs) s += std::abs(actual - predicted);
    return s / static_cast<double>(pairs.size());
}

/// Audit variant with the 1/N factor outside the square root. With any
/// realistic N this sits far below the MAE; it exists only behind the
/// --audit-literal-rmse flag.
inline double rmse_literal(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw std::runtime_error("rmse_literal: empty input");
    double ss = 0.0;
    for (const auto& [actual, predicted] : pairs) {
        const double e = actual - predicted;
        ss += e * e;
    }
    return std::sqrt(ss) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// F-distribution upper tail via the regularized incomplete beta function

namespace detail {

/// Continued fraction for the incomplete beta function, modified Lentz.
inline double ibeta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr int max_iter = 500;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::runtime_error("regularized_incomplete_beta: a,b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::ibeta_cf(a, b, x) / a;
    }
    return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

/// P(F(df1, df2) > f); evaluated on the complementary side so small tails
/// do not cancel.
inline double f_upper_tail(double f, int df1, int df2) {
    if (f <= 0.0) return 1.0;
    const double d1 = df1;
    const double d2 = df2;
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

struct AnovaResult {
    double f = 0.0;
    int df_between = 0;
    int df_within = 0;
    double p = 1.0;
    bool degenerate = false;  // within-group variance was zero
};

/// One-way ANOVA F = MS_between / MS_within across the groups.
inline AnovaResult anova_f(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw std::runtime_error("anova_f: need at least 2 groups");
    std::size_t total_n = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw std::runtime_error("anova_f: each group needs at least 2 values");
        total_n += g.size();
    }
    if (total_n <= groups.size()) throw std::runtime_error("anova_f: too few values in total");

    double grand_sum = 0.0;
    std::vector<double> means(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        double s = 0.0;
        for (double v : groups[i]) s += v;
        means[i] = s / static_cast<double>(groups[i].size());
        grand_sum += s;
    }
    const double grand_mean = grand_sum / static_cast<double>(total_n);

    double ss_between = 0.0;
    double ss_within = 0.0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        ss_between += static_cast<double>(groups[i].size()) * (means[i] - grand_mean) * (means[i] - grand_mean);
        for (double v : groups[i]) ss_within += (v - means[i]) * (v - means[i]);
    }

    AnovaResult r;
    r.df_between = static_cast<int>(groups.size()) - 1;
    r.df_within = static_cast<int>(total_n - groups.size());
    const double ms_between = ss_between / r.df_between;
    const double ms_within = ss_within / r.df_within;
    if (ms_within == 0.0) {
        r.degenerate = true;
        if (ms_between == 0.0) {
            r.f = 0.0;
            r.p = 1.0;
        } else {
            r.f = std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.f = ms_between / ms_within;
    r.p = f_upper_tail(r.f, r.df_between, r.df_within);
    return r;
}

// ---------------------------------------------------------------------------
// Stratified evaluation report

/// One model's predictions over an evaluation partition.
struct PredictionSet {
    std::string model;
    std::map<std::string, std::array<double, 3>> predictions;  // episode_id -> (hr, sbp, dbp)
};

inline void save_prediction_set(const PredictionSet& ps, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "model\tepisode_id\tmu_hr\tmu_sbp\tmu_dbp\n";
    for (const auto& [id, mu] : ps.predictions) {
        out << ps.model << '\t' << id;
        for (double m : mu) out << '\t' << fmt_double(m);
        out << '\n';
    }
}

inline PredictionSet load_prediction_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prediction file: " + path);
    PredictionSet ps;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        if (lineno == 1 && sv.substr(0, 6) == "model\t") continue;
        auto cols = split_tsv(sv);
        if (cols.size() != 5) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 5 columns");
        }
        if (ps.model.empty()) {
            ps.model = std::string(cols[0]);
        } else if (ps.model != cols[0]) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": mixed model labels");
        }
        std::array<double, 3> mu;
        for (std::size_t v = 0; v < 3; ++v) mu[v] = parse_double(cols[2 + v], "prediction");
        ps.predictions[std::string(cols[1])] = mu;
    }
    if (ps.model.empty()) throw std::runtime_error(path + ": no predictions");
    return ps;
}

struct AgeBin {
    std::string label;
    double lo_months = 0.0;  // inclusive
    double hi_months = 0.0;  // exclusive (inf allowed)
};

struct ReportRow {
    std::string model;
    std::string vital;         // hr | sbp | dbp
    std::string stratum_kind;  // overall | age_bin | diagnosis | pim2_quartile
    std::string stratum_label;
    std::size_t n = 0;
    double rmse = 0.0;   // NaN when n == 0
    double mae = 0.0;
    double rmse_literal = 0.0;
};

struct AnovaRow {
    std::string vital;
    std::string model;  // compared against the baseline
    AnovaResult result;
};

struct EvaluationReport {
    std::size_t partition_size = 0;
    std::string baseline_model;
    std::string error_kind = "absolute";  // what the ANOVA groups hold
    std::array<double, 3> pim2_cuts = {0.0, 0.0, 0.0};
    std::size_t pim2_n = 0;       // episodes with a PIM2 value
    std::size_t diagnosis_n = 0;  // episodes with a known diagnosis
    std::vector<ReportRow> rows;
    std::vector<AnovaRow> anova;
};

struct ReportOptions {
    std::map<std::string, std::vector<AgeBin>> age_bins;  // per vital
    std::string baseline_model = "age_normal";
    bool audit_literal_rmse = false;
};

namespace detail {

/// Type-7 (linear interpolation) quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::runtime_error("quantile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline ReportRow make_row(const std::string& model, std::size_t vital,
                          const std::string& kind, const std::string& label,
                          const std::vector<std::pair<double, double>>& pairs) {
    ReportRow row;
    row.model = model;
    row.vital = kVitalLabels[vital];
    row.stratum_kind = kind;
    row.stratum_label = label;
    row.n = pairs.size();
    if (pairs.empty()) {
        row.rmse = row.mae = row.rmse_literal = std::numeric_limits<double>::quiet_NaN();
    } else {
        row.rmse = rmse(pairs);
        row.mae = mae(pairs);
        row.rmse_literal = rmse_literal(pairs);
    }
    return row;
}

}  // namespace detail

/// Overall and stratified rMSE/MAE per (model, vital), plus per-vital
/// ANOVA of each model's absolute errors against the baseline's. Episodes
/// missing PIM2 or diagnosis drop out of only that stratification; PIM2
/// quartile cuts come from the evaluation partition itself.
inline EvaluationReport stratified_report(const std::vector<const Episode*>& partition,
                                          const PassTargetsTable& actual,
                                          const std::vector<PredictionSet>& predictions,
                                          const ReportOptions& options) {
    if (predictions.empty()) throw std::runtime_error("stratified_report: no prediction sets");
    for (const PredictionSet& ps : predictions) {
        for (const Episode* ep : partition) {
            if (!ps.predictions.count(ep->episode_id)) {
                throw std::runtime_error("prediction set '" + ps.model + "' missing episode '" +
                                         ep->episode_id + "'");
            }
        }
    }
    bool have_baseline = false;
    for (const PredictionSet& ps : predictions) have_baseline |= ps.model == options.baseline_model;
    if (!have_baseline) {
        throw std::runtime_error("stratified_report: baseline model '" + options.baseline_model +
                                 "' not among prediction sets");
    }

    EvaluationReport report;
    report.partition_size = partition.size();
    report.baseline_model = options.baseline_model;

    std::vector<double> pim2_values;
    for (const Episode* ep : partition) {
        if (ep->pim2) pim2_values.push_back(*ep->pim2);
        if (!ep->diagnosis.empty()) ++report.diagnosis_n;
    }
    report.pim2_n = pim2_values.size();
    std::sort(pim2_values.begin(), pim2_values.end());
    const bool have_pim2 = pim2_values.size() >= 4;
    if (have_pim2) {
        report.pim2_cuts = {detail::quantile_sorted(pim2_values, 0.25),
                            detail::quantile_sorted(pim2_values, 0.50),
                            detail::quantile_sorted(pim2_values, 0.75)};
    }
    auto pim2_quartile = [&](double v) {
        if (v < report.pim2_cuts[0]) return 0;
        if (v < report.pim2_cuts[1]) return 1;
        if (v < report.pim2_cuts[2]) return 2;
        return 3;
    };
    static const std::array<const char*, 4> kQuartileLabels = {"Q1", "Q2", "Q3", "Q4"};

    std::vector<std::string> diagnoses;
    for (const Episode* ep : partition) {
        if (!ep->diagnosis.empty() &&
            std::find(diagnoses.begin(), diagnoses.end(), ep->diagnosis) == diagnoses.end()) {
            diagnoses.push_back(ep->diagnosis);
        }
    }
    std::sort(diagnoses.begin(), diagnoses.end());

    for (const PredictionSet& ps : predictions) {
        for (std::size_t v = 0; v < 3; ++v) {
            auto pair_of = [&](const Episode* ep) {
                return std::pair<double, double>{actual.at(ep->episode_id).mu[v],
                                                 ps.predictions.at(ep->episode_id)[v]};
            };

            std::vector<std::pair<double, double>> overall;
            for (const Episode* ep : partition) overall.push_back(pair_of(ep));
            report.rows.push_back(detail::make_row(ps.model, v, "overall", "all", overall));

            const auto bins_it = options.age_bins.find(kVitalLabels[v]);
            if (bins_it != options.age_bins.end()) {
                for (const AgeBin& bin : bins_it->second) {
                    std::vector<std::pair<double, double>> pairs;
                    for (const Episode* ep : partition) {
                        if (ep->age_months >= bin.lo_months && ep->age_months < bin.hi_months) {
                            pairs.push_back(pair_of(ep));
                        }
                    }
                    report.rows.push_back(detail::make_row(ps.model, v, "age_bin", bin.label, pairs));
                }
            }

            for (const std::string& dx : diagnoses) {
                std::vector<std::pair<double, double>> pairs;
                for (const Episode* ep : partition) {
                    if (ep->diagnosis == dx) pairs.push_back(pair_of(ep));
                }
                report.rows.push_back(detail::make_row(ps.model, v, "diagnosis", dx, pairs));
            }

            if (have_pim2) {
                for (int q = 0; q < 4; ++q) {
                    std::vector<std::pair<double, double>> pairs;
                    for (const Episode* ep : partition) {
                        if (ep->pim2 && pim2_quartile(*ep->pim2) == q) pairs.push_back(pair_of(ep));
                    }
                    report.rows.push_back(
                        detail::make_row(ps.model, v, "pim2_quartile", kQuartileLabels[static_cast<std::size_t>(q)], pairs));
                }
            }
        }
    }

    // ANOVA: baseline absolute errors vs each other model's
    const PredictionSet* baseline = nullptr;
    for (const PredictionSet& ps : predictions) {
        if (ps.model == options.baseline_model) baseline = &ps;
    }
    for (std::size_t v = 0; v < 3; ++v) {
        std::vector<double> base_errors;
        for (const Episode* ep : partition) {
            base_errors.push_back(
                std::abs(actual.at(ep->episode_id).mu[v] - baseline->predictions.at(ep->episode_id)[v]));
        }
        for (const PredictionSet& ps : predictions) {
            if (ps.model == options.baseline_model) continue;
            std::vector<double> errors;
            for (const Episode* ep : partition) {
                errors.push_back(
                    std::abs(actual.at(ep->episode_id).mu[v] - ps.predictions.at(ep->episode_id)[v]));
            }
            AnovaRow row;
            row.vital = kVitalLabels[v];
            row.model = ps.model;
            row.result = anova_f({base_errors, errors});
            report.anova.push_back(std::move(row));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Emission

inline void write_report_csv(const EvaluationReport& report, const std::string& path,
                             bool audit_literal_rmse = false) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# partition_size=" << report.partition_size << " anova_errors=" << report.error_kind
        << " pim2_cuts=" << fmt_double(report.pim2_cuts[0]) << "," << fmt_double(report.pim2_cuts[1])
        << "," << fmt_double(report.pim2_cuts[2]) << " pim2_n=" << report.pim2_n
        << " diagnosis_n=" << report.diagnosis_n << "\n";
    out << "model,vital,stratum_kind,stratum_label,n,rmse,mae";
    if (audit_literal_rmse) out << ",rmse_literal";
    out << '\n';
    for (const ReportRow& row : report.rows) {
        out << row.model << ',' << row.vital << ',' << row.stratum_kind << ',' << row.stratum_label
            << ',' << row.n;
        if (row.n == 0) {
            out << ",,";
            if (audit_literal_rmse) out << ',';
        } else {
            out << ',' << fmt_double(row.rmse) << ',' << fmt_double(row.mae);
            if (audit_literal_rmse) out << ',' << fmt_double(row.rmse_literal);
        }
        out << '\n';
    }
}

inline void write_anova_csv(const EvaluationReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# baseline=" << report.baseline_model << " errors=" << report.error_kind << "\n";
    out << "vital,model,f,df_between,df_within,p,degenerate\n";
    for (const AnovaRow& row : report.anova) {
        out << row.vital << ',' << row.model << ','
            << (std::isfinite(row.result.f) ? fmt_double(row.result.f) : "inf") << ','
            << row.result.df_between << ',' << row.result.df_within << ',' << fmt_double(row.result.p)
            << ',' << (row.result.degenerate ? 1 : 0) << '\n';
    }
}

namespace detail {

inline std::string fixed2(double v) {
    if (!std::isfinite(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

/// Aligned text table: one block per stratification, models as rows and
/// the three vitals' rMSE/MAE as columns.
inline void write_report_text(const EvaluationReport& report, const std::string& path,
                              const std::vector<std::string>& model_order) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);

    auto find_row = [&](const std::string& model, const std::string& vital, const std::string& kind,
                        const std::string& label) -> const ReportRow* {
        for (const ReportRow& row : report.rows) {
            if (row.model == model && row.vital == vital && row.stratum_kind == kind &&
                row.stratum_label == label) {
                return &row;
            }
        }
        return nullptr;
    };

    std::vector<std::pair<std::string, std::string>> strata;  // (kind, label)
    for (const ReportRow& row : report.rows) {
        std::pair<std::string, std::string> key{row.stratum_kind, row.stratum_label};
        if (std::find(strata.begin(), strata.end(), key) == strata.end()) strata.push_back(key);
    }

    out << "12th-hour prediction error, test partition (N=" << report.partition_size << ")\n";
    out << "ANOVA on " << report.error_kind << " errors vs baseline '" << report.baseline_model
        << "'; PIM2 quartile cuts from this partition.\n\n";

    for (const auto& [kind, label] : strata) {
        const ReportRow* any = nullptr;
        for (const std::string& model : model_order) {
            if (const ReportRow* r = find_row(model, "hr", kind, label)) {
                any = r;
                break;
            }
        }
        out << "== " << kind << ": " << label << (any ? " (N=" + std::to_string(any->n) + ")" : "")
            << " ==\n";
        char header[160];
        std::snprintf(header, sizeof(header), "%-14s %21s %21s %21s\n", "",
                      "Heart Rate (bpm)", "Systolic BP (mmHg)", "Diastolic BP (mmHg)");
        out << header;
        std::snprintf(header, sizeof(header), "%-14s %10s %10s %10s %10s %10s %10s\n", "Model", "rMSE",
                      "MAE", "rMSE", "MAE", "rMSE", "MAE");
        out << header;
        for (const std::string& model : model_order) {
            std::array<std::string, 6> cells;
            bool present = false;
            for (std::size_t v = 0; v < 3; ++v) {
                if (const ReportRow* r = find_row(model, kVitalLabels[v], kind, label)) {
                    cells[2 * v] = detail::fixed2(r->rmse);
                    cells[2 * v + 1] = detail::fixed2(r->mae);
                    present = true;
                } else {
                    cells[2 * v] = cells[2 * v + 1] = "-";
                }
            }
            if (!present) continue;
            char line[200];
            std::snprintf(line, sizeof(line), "%-14s %10s %10s %10s %10s %10s %10s\n", model.c_str(),
                          cells[0].c_str(), cells[1].c_str(), cells[2].c_str(), cells[3].c_str(),
                          cells[4].c_str(), cells[5].c_str());
            out << line;
        }
        out << '\n';
    }

    out << "== ANOVA F-tests vs " << report.baseline_model << " ==\n";
    char header[160];
    std::snprintf(header, sizeof(header), "%-6s %-14s %12s %6s %6s %12s\n", "vital", "model", "F",
                  "df1", "df2", "p");
    out << header;
    for (const AnovaRow& row : report.anova) {
        char line[200];
        std::snprintf(line, sizeof(line), "%-6s %-14s %12s %6d %6d %12s\n", row.vital.c_str(),
                      row.model.c_str(),
                      std::isfinite(row.result.f) ? detail::fixed2(row.result.f).c_str() : "inf",
                      row.result.df_between, row.result.df_within,
                      fmt_double(row.result.p).c_str());
        out << line;
    }
}

/// Plot-ready data per vital: acceptable-state scatter over age, the
/// regression curve sampled at 200 ages, and the age-normal step function.
inline void write_plot_data(const std::vector<const Episode*>& episodes,
                            const PassTargetsTable& targets,
                            const baselines::PolynomialModel& poly,
                            const baselines::AgeNormalTable& age_normal, const std::string& dir) {
    for (std::size_t v = 0; v < 3; ++v) {
        const std::string vital = kVitalLabels[v];
        {
            std::ofstream out(dir + "/plot_" + vital + "_scatter.tsv");
            if (!out) throw std::runtime_error("cannot write plot scatter for " + vital);
            out << "age_months\tpass_value\n";
            for (const Episode* ep : episodes) {
                out << fmt_double(ep->age_months) << '\t'
                    << fmt_double(targets.at(ep->episode_id).mu[v]) << '\n';
            }
        }
        {
            const baselines::PolynomialFit& fit = poly.fits[v];
            std::ofstream out(dir + "/plot_" + vital + "_curve.tsv");
            if (!out) throw std::runtime_error("cannot write plot curve for " + vital);
            out << "age_months\tpredicted\n";
            constexpr int kSamples = 200;
            for (int i = 0; i < kSamples; ++i) {
                const double age = fit.age_min + (fit.age_max - fit.age_min) * i /
                                                     static_cast<double>(kSamples - 1);
                out << fmt_double(age) << '\t'
                    << fmt_double(baselines::predict_polynomial_vital(fit, age)) << '\n';
            }
        }
        {
            std::ofstream out(dir + "/plot_" + vital + "_age_normal.tsv");
            if (!out) throw std::runtime_error("cannot write plot steps for " + vital);
            out << "age_lo_months\tage_hi_months\tvalue\trange_lo\trange_hi\n";
            for (const baselines::AgeNormalBin& bin : age_normal.bins(vital)) {
                out << fmt_double(bin.age_lo_months) << '\t'
                    << (std::isfinite(bin.age_hi_months) ? fmt_double(bin.age_hi_months) : "inf") << '\t'
                    << fmt_double(bin.value) << '\t' << fmt_double(bin.range_lo) << '\t'
                    << fmt_double(bin.range_hi) << '\n';
            }
        }
    }
}

}  // namespace metrics
}  // namespace icupass
