#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "icupass/common.hpp"
#include "icupass/pass.hpp"

namespace icupass {
namespace baselines {

// ---------------------------------------------------------------------------
// Age-normal lookup table

struct AgeNormalBin {
    double age_lo_months = 0.0;   // inclusive
    double age_hi_months = 0.0;   // exclusive; +inf for the final bin
    double range_lo = 0.0;
    double range_hi = 0.0;
    double value = 0.0;           // defaults to the range midpoint
};

struct AgeNormalTable {
    std::map<std::string, std::vector<AgeNormalBin>> bins_by_vital;

    const std::vector<AgeNormalBin>& bins(const std::string& vital) const {
        auto it = bins_by_vital.find(vital);
        if (it == bins_by_vital.end()) throw std::runtime_error("age-normal table has no vital '" + vital + "'");
        return it->second;
    }
};

/// Bins must be sorted, non-overlapping, contiguous, start at 0 months and
/// end open-ended.
inline void validate_age_normal_table(const AgeNormalTable& table) {
    for (const auto& [vital, bins] : table.bins_by_vital) {
        if (bins.empty()) throw std::runtime_error("age-normal table: vital '" + vital + "' has no bins");
        double expect_lo = 0.0;
        for (std::size_t i = 0; i < bins.size(); ++i) {
            const AgeNormalBin& b = bins[i];
            if (b.age_lo_months != expect_lo) {
                throw std::runtime_error("age-normal table: vital '" + vital + "' bins not contiguous at " +
                                         fmt_double(b.age_lo_months));
            }
            if (!(b.age_hi_months > b.age_lo_months)) {
                throw std::runtime_error("age-normal table: empty bin for vital '" + vital + "'");
            }
            if (!(b.range_lo <= b.value && b.value <= b.range_hi)) {
                throw std::runtime_error("age-normal table: value outside range for vital '" + vital + "'");
            }
            expect_lo = b.age_hi_months;
        }
        if (std::isfinite(bins.back().age_hi_months)) {
            throw std::runtime_error("age-normal table: vital '" + vital + "' must end with an open bin");
        }
    }
}

/// Half-open bins [lo, hi): a boundary age belongs to the upper bin.
inline double lookup_age_normal(const AgeNormalTable& table, const std::string& vital,
                                double age_months) {
    if (!(age_months >= 0.0)) throw std::runtime_error("lookup_age_normal: negative age");
    for (const AgeNormalBin& b : table.bins(vital)) {
        if (age_months >= b.age_lo_months && age_months < b.age_hi_months) return b.value;
    }
    return table.bins(vital).back().value;  // unreachable after validation
}

/// Table file columns: vital, age_lo_months, age_hi_months, range_lo,
/// range_hi, value. An "inf" upper bound marks the open-ended bin; a blank
/// value column means the range midpoint.
inline AgeNormalTable load_age_normal_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open age-normal table: " + path);
    AgeNormalTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        if (sv.substr(0, 6) == "vital\t") continue;  // header
        auto cols = split_tsv(sv);
        if (cols.size() != 5 && cols.size() != 6) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 5 or 6 columns");
        }
        AgeNormalBin b;
        b.age_lo_months = parse_double(cols[1], "age_lo_months");
        b.age_hi_months = cols[2] == "inf" ? std::numeric_limits<double>::infinity()
                                           : parse_double(cols[2], "age_hi_months");
        b.range_lo = parse_double(cols[3], "range_lo");
        b.range_hi = parse_double(cols[4], "range_hi");
        b.value = cols.size() == 5 || trim(cols[5]).empty() ? 0.5 * (b.range_lo + b.range_hi)
                                                            : parse_double(cols[5], "value");
        table.bins_by_vital[std::string(cols[0])].push_back(b);
    }
    for (auto& [vital, bins] : table.bins_by_vital) {
        std::sort(bins.begin(), bins.end(),
                  [](const AgeNormalBin& a, const AgeNormalBin& b) { return a.age_lo_months < b.age_lo_months; });
    }
    validate_age_normal_table(table);
    return table;
}

// ---------------------------------------------------------------------------
// Age-only polynomial regression

struct DegreeTrace {
    int degree = 0;
    bool skipped = false;          // fewer distinct train ages than degree+1
    double validation_rmse = std::numeric_limits<double>::quiet_NaN();
};

/// One vital's fitted curve over standardized age, with the bias-variance
/// selection trace that picked its degree.
struct PolynomialFit {
    int degree = 0;
    std::vector<double> coefficients;  // c_0..c_degree over standardized age
    double age_mean = 0.0;
    double age_std = 1.0;
    double age_min = 0.0;              // raw-age clamp range from train
    double age_max = 0.0;
    std::vector<DegreeTrace> trace;
};

struct AgePoint {
    double age_months = 0.0;
    double target = 0.0;
};

namespace detail {

inline double eval_poly(const std::vector<double>& coeffs, double z) {
    double acc = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * z + coeffs[i];
    return acc;
}

/// Ridge least squares on the standardized-age Vandermonde system, solved
/// by Householder QR on the augmented matrix [A; sqrt(ridge) I].
inline std::vector<double> ridge_fit(const std::vector<double>& z, const std::vector<double>& y,
                                     int degree, double ridge) {
    const auto n = static_cast<Eigen::Index>(z.size());
    const Eigen::Index p = degree + 1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n + p);
    for (Eigen::Index i = 0; i < n; ++i) {
        double pw = 1.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            a(i, j) = pw;
            pw *= z[static_cast<std::size_t>(i)];
        }
        b(i) = y[static_cast<std::size_t>(i)];
    }
    const double s = std::sqrt(ridge);
    for (Eigen::Index j = 0; j < p; ++j) a(n + j, j) = s;

    Eigen::VectorXd c = a.householderQr().solve(b);
    if (!c.allFinite()) throw std::runtime_error("polynomial fit: solver produced non-finite coefficients");
    return std::vector<double>(c.data(), c.data() + c.size());
}

}  // namespace detail

inline double predict_polynomial_vital(const PolynomialFit& fit, double age_months) {
    // extrapolation is clamped to the train age range, so the curve is
    // constant outside it
    const double clamped = std::clamp(age_months, fit.age_min, fit.age_max);
    return detail::eval_poly(fit.coefficients, (clamped - fit.age_mean) / fit.age_std);
}

/// Fits one vital. For each candidate degree the ridge-regularized least
/// squares problem is solved on standardized age and scored by validation
/// rMSE; the selected degree is the smallest one within 0.5% of the best
/// score (plus a 1e-12 absolute slack so exact fits with ~0 rMSE pick the
/// smallest adequate degree).
inline PolynomialFit fit_polynomial(const std::vector<AgePoint>& train,
                                    const std::vector<AgePoint>& val, int degree_min = 1,
                                    int degree_max = 8, double ridge = 1e-8) {
    if (train.empty()) throw std::runtime_error("fit_polynomial: empty train set");
    if (val.empty()) throw std::runtime_error("fit_polynomial: empty validation set");
    if (degree_min < 1 || degree_max < degree_min) {
        throw std::runtime_error("fit_polynomial: bad degree range");
    }

    PolynomialFit fit;
    fit.age_min = std::numeric_limits<double>::infinity();
    fit.age_max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const AgePoint& pt : train) {
        sum += pt.age_months;
        fit.age_min = std::min(fit.age_min, pt.age_months);
        fit.age_max = std::max(fit.age_max, pt.age_months);
    }
    fit.age_mean = sum / static_cast<double>(train.size());
    double ss = 0.0;
    for (const AgePoint& pt : train) ss += (pt.age_months - fit.age_mean) * (pt.age_months - fit.age_mean);
    fit.age_std = std::sqrt(ss / static_cast<double>(train.size()));
    if (!(fit.age_std > 0.0)) {
        throw std::runtime_error("fit_polynomial: train ages are all identical");
    }

    std::vector<double> z, y;
    z.reserve(train.size());
    y.reserve(train.size());
    for (const AgePoint& pt : train) {
        z.push_back((pt.age_months - fit.age_mean) / fit.age_std);
        y.push_back(pt.target);
    }
    std::vector<double> distinct = z;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    struct Candidate {
        int degree;
        std::vector<double> coeffs;
        double val_rmse;
    };
    std::vector<Candidate> candidates;

    for (int degree = degree_min; degree <= degree_max; ++degree) {
        DegreeTrace tr;
        tr.degree = degree;
        if (distinct.size() < static_cast<std::size_t>(degree) + 1) {
            tr.skipped = true;
            fit.trace.push_back(tr);
            continue;
        }
        std::vector<double> coeffs = detail::ridge_fit(z, y, degree, ridge);

        PolynomialFit probe = fit;
        probe.degree = degree;
        probe.coefficients = coeffs;
        double se = 0.0;
        for (const AgePoint& pt : val) {
            const double err = predict_polynomial_vital(probe, pt.age_months) - pt.target;
            se += err * err;
        }
        tr.validation_rmse = std::sqrt(se / static_cast<double>(val.size()));
        fit.trace.push_back(tr);
        candidates.push_back({degree, std::move(coeffs), tr.validation_rmse});
    }
    if (candidates.empty()) {
        throw std::runtime_error("fit_polynomial: all candidate degrees skipped (too few distinct ages)");
    }

    double best = std::numeric_limits<double>::infinity();
    for (const Candidate& c : candidates) best = std::min(best, c.val_rmse);
    for (const Candidate& c : candidates) {
        if (c.val_rmse <= 1.005 * best + 1e-12) {
            fit.degree = c.degree;
            fit.coefficients = c.coeffs;
            break;
        }
    }
    return fit;
}

/// One curve per target vital (hr, sbp, dbp order).
struct PolynomialModel {
    std::array<PolynomialFit, 3> fits;
};

inline std::array<double, 3> predict_polynomial(const PolynomialModel& model, double age_months) {
    return {predict_polynomial_vital(model.fits[0], age_months),
            predict_polynomial_vital(model.fits[1], age_months),
            predict_polynomial_vital(model.fits[2], age_months)};
}

inline void save_polynomial_model(const PolynomialModel& model, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["kind"] = "age_polynomial";
    ordered_json fits = ordered_json::array();
    for (std::size_t v = 0; v < 3; ++v) {
        const PolynomialFit& f = model.fits[v];
        ordered_json jf;
        jf["vital"] = kVitalLabels[v];
        jf["degree"] = f.degree;
        jf["coefficients"] = f.coefficients;
        jf["age_mean"] = f.age_mean;
        jf["age_std"] = f.age_std;
        jf["age_min"] = f.age_min;
        jf["age_max"] = f.age_max;
        ordered_json trace = ordered_json::array();
        for (const DegreeTrace& tr : f.trace) {
            ordered_json jt;
            jt["degree"] = tr.degree;
            jt["skipped"] = tr.skipped;
            if (!tr.skipped) jt["validation_rmse"] = tr.validation_rmse;
            trace.push_back(std::move(jt));
        }
        jf["selection_trace"] = std::move(trace);
        fits.push_back(std::move(jf));
    }
    j["fits"] = std::move(fits);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

inline PolynomialModel load_polynomial_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open polynomial model: " + path);
    ordered_json j = ordered_json::parse(in);
    if (j.at("kind").get<std::string>() != "age_polynomial") {
        throw std::runtime_error(path + ": not an age-polynomial model artifact");
    }
    PolynomialModel model;
    const auto& fits = j.at("fits");
    if (fits.size() != 3) throw std::runtime_error(path + ": expected 3 per-vital fits");
    for (std::size_t v = 0; v < 3; ++v) {
        const auto& jf = fits[v];
        PolynomialFit f;
        f.degree = jf.at("degree").get<int>();
        f.coefficients = jf.at("coefficients").get<std::vector<double>>();
        f.age_mean = jf.at("age_mean").get<double>();
        f.age_std = jf.at("age_std").get<double>();
        f.age_min = jf.at("age_min").get<double>();
        f.age_max = jf.at("age_max").get<double>();
        for (const auto& jt : jf.at("selection_trace")) {
            DegreeTrace tr;
            tr.degree = jt.at("degree").get<int>();
            tr.skipped = jt.at("skipped").get<bool>();
            if (!tr.skipped) tr.validation_rmse = jt.at("validation_rmse").get<double>();
            f.trace.push_back(tr);
        }
        model.fits[v] = std::move(f);
    }
    return model;
}

}  // namespace baselines
}  // namespace icupass
