#pragma once

// Independent reference implementations used to cross-check the library:
// brute-force eligibility, normal-equations least squares, and quadrature
// of the F density. None of them share code with the checked paths.

#include <cmath>
#include <functional>
#include <vector>

#include "icupass/cohort.hpp"

namespace test_oracles {

inline bool brute_force_eligible(const icupass::Episode& ep, const icupass::FilterOptions& opts) {
    if (!ep.survived) return false;
    if (ep.medical_discharge_hr < opts.min_duration_hr) return false;
    for (const std::string& vital : opts.vitals) {
        int count = 0;
        for (const icupass::Observation& o : ep.observations) {
            if (o.variable_id == vital && o.time_hr >= ep.medical_discharge_hr &&
                o.time_hr <= ep.physical_discharge_hr) {
                ++count;
            }
        }
        if (count < opts.min_window_measurements) return false;
    }
    return true;
}

/// Explicit normal equations (A^T A + ridge I) c = A^T y on standardized
/// age, solved by Gaussian elimination with partial pivoting.
inline std::vector<double> normal_equations_fit(const std::vector<double>& z,
                                                const std::vector<double>& y, int degree,
                                                double ridge) {
    const int p = degree + 1;
    std::vector<std::vector<double>> ata(p, std::vector<double>(p, 0.0));
    std::vector<double> aty(p, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        std::vector<double> row(p);
        double pw = 1.0;
        for (int j = 0; j < p; ++j) {
            row[j] = pw;
            pw *= z[i];
        }
        for (int a = 0; a < p; ++a) {
            for (int b = 0; b < p; ++b) ata[a][b] += row[a] * row[b];
            aty[a] += row[a] * y[i];
        }
    }
    for (int a = 0; a < p; ++a) ata[a][a] += ridge;

    for (int col = 0; col < p; ++col) {
        int pivot = col;
        for (int r = col + 1; r < p; ++r) {
            if (std::abs(ata[r][col]) > std::abs(ata[pivot][col])) pivot = r;
        }
        std::swap(ata[col], ata[pivot]);
        std::swap(aty[col], aty[pivot]);
        for (int r = col + 1; r < p; ++r) {
            const double f = ata[r][col] / ata[col][col];
            for (int cc = col; cc < p; ++cc) ata[r][cc] -= f * ata[col][cc];
            aty[r] -= f * aty[col];
        }
    }
    std::vector<double> c(p, 0.0);
    for (int r = p - 1; r >= 0; --r) {
        double acc = aty[r];
        for (int cc = r + 1; cc < p; ++cc) acc -= ata[r][cc] * c[cc];
        c[r] = acc / ata[r][r];
    }
    return c;
}

inline double f_density(double x, int d1, int d2) {
    const double a = d1 / 2.0, b = d2 / 2.0;
    const double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    return std::exp(a * std::log(static_cast<double>(d1) / d2) + (a - 1.0) * std::log(x) -
                    (a + b) * std::log1p(static_cast<double>(d1) * x / d2) - ln_beta);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double lo, double hi,
                               double fl, double fm, double fh, double whole, double tol,
                               int depth) {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double left = (mid - lo) / 6.0 * (fl + 4.0 * flm + fm);
    const double right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fh);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive_simpson(f, lo, mid, fl, flm, fm, left, tol / 2.0, depth - 1) +
           adaptive_simpson(f, mid, hi, fm, frm, fh, right, tol / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double lo, double hi, double tol) {
    const double fl = f(lo), fh = f(hi), fm = f(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (fl + 4.0 * fm + fh);
    return adaptive_simpson(f, lo, hi, fl, fm, fh, whole, tol, 48);
}

/// P(F(d1,d2) > f0): the density integrated over [f0, inf), mapped to
/// u in [0,1) via x = f0 + u/(1-u).
inline double f_tail_quadrature(double f0, int d1, int d2) {
    auto g = [&](double u) {
        if (u >= 1.0) return 0.0;
        const double x = f0 + u / (1.0 - u);
        return f_density(x, d1, d2) / ((1.0 - u) * (1.0 - u));
    };
    return integrate(g, 0.0, 1.0 - 1e-12, 1e-10);
}

}  // namespace test_oracles
