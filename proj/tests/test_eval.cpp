#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "icupass/eval.hpp"
#include "icupass/rng.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace icupass;
using namespace icupass::metrics;
using test_oracles::f_tail_quadrature;
using test_support::TempDir;

namespace {

std::vector<std::pair<double, double>> make_pairs(std::initializer_list<std::pair<double, double>> p) {
    return {p};
}

}  // namespace

TEST_CASE("rmse and mae match their arithmetic oracles") {
    CHECK(rmse(make_pairs({{100.0, 100.0}})) == 0.0);
    CHECK(mae(make_pairs({{100.0, 100.0}})) == 0.0);
    CHECK(rmse(make_pairs({{1.0, 3.0}, {2.0, 2.0}})) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(mae(make_pairs({{1.0, 3.0}, {2.0, 2.0}})) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(rmse_literal(make_pairs({{1.0, 3.0}, {2.0, 2.0}})) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS(rmse({}));
    CHECK_THROWS(mae({}));
}

TEST_CASE("rmse >= mae and mae is symmetric on random error sets") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<double, double>> pairs, flipped;
        const int n = 1 + static_cast<int>(rng.uniform_int(40));
        for (int i = 0; i < n; ++i) {
            const double a = rng.uniform(-100.0, 100.0), p = rng.uniform(-100.0, 100.0);
            pairs.push_back({a, p});
            flipped.push_back({p, a});
        }
        CHECK(rmse(pairs) >= mae(pairs) - 1e-12);
        CHECK(mae(pairs) == Catch::Approx(mae(flipped)).epsilon(1e-12));
        // direct arithmetic oracle
        double ss = 0.0, sa = 0.0;
        for (auto& [a, p] : pairs) {
            ss += (a - p) * (a - p);
            sa += std::abs(a - p);
        }
        CHECK(rmse(pairs) == Catch::Approx(std::sqrt(ss / n)).margin(1e-12));
        CHECK(mae(pairs) == Catch::Approx(sa / n).margin(1e-12));
    }
}

TEST_CASE("anova_f fixtures") {
    SECTION("identical group means give F = 0, p = 1") {
        AnovaResult r = anova_f({{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}});
        CHECK(r.f == 0.0);
        CHECK(r.p == 1.0);
        CHECK_FALSE(r.degenerate);
    }
    SECTION("hand-computed two-group fixture: F = 1.5 at df (1,4)") {
        AnovaResult r = anova_f({{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}});
        CHECK(r.f == Catch::Approx(1.5).margin(1e-10));
        CHECK(r.df_between == 1);
        CHECK(r.df_within == 4);
        CHECK(r.p == Catch::Approx(f_tail_quadrature(1.5, 1, 4)).margin(1e-6));
    }
    SECTION("zero within-group variance with distinct means is degenerate") {
        AnovaResult r = anova_f({{1.0, 1.0}, {2.0, 2.0}});
        CHECK(r.degenerate);
        CHECK(r.p == 0.0);
        CHECK(std::isinf(r.f));
    }
    SECTION("all values identical: F = 0, p = 1") {
        AnovaResult r = anova_f({{3.0, 3.0}, {3.0, 3.0, 3.0}});
        CHECK(r.f == 0.0);
        CHECK(r.p == 1.0);
    }
    SECTION("preconditions") {
        CHECK_THROWS(anova_f({{1.0, 2.0}}));
        CHECK_THROWS(anova_f({{1.0}, {2.0, 3.0}}));
    }
}

TEST_CASE("anova_f invariances: shift by a constant, scale by a constant") {
    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::vector<double>> groups(2 + rng.uniform_int(3));
        for (auto& g : groups) {
            const int n = 2 + static_cast<int>(rng.uniform_int(10));
            for (int i = 0; i < n; ++i) g.push_back(rng.uniform(-5.0, 5.0));
        }
        AnovaResult base = anova_f(groups);

        const double shift = rng.uniform(-100.0, 100.0);
        const double scale = rng.uniform(0.1, 10.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        std::vector<std::vector<double>> shifted = groups, scaled = groups;
        for (auto& g : shifted) {
            for (double& v : g) v += shift;
        }
        for (auto& g : scaled) {
            for (double& v : g) v *= scale;
        }
        CHECK(anova_f(shifted).f == Catch::Approx(base.f).margin(1e-8));
        CHECK(anova_f(scaled).f == Catch::Approx(base.f).margin(1e-8));
    }
}

TEST_CASE("F-distribution p-values match the quadrature oracle") {
    for (int d1 : {1, 2, 3, 5, 10}) {
        for (int d2 : {2, 4, 9, 24, 50}) {
            for (double f0 : {0.3, 1.5, 4.0}) {
                const double p = f_upper_tail(f0, d1, d2);
                const double oracle = f_tail_quadrature(f0, d1, d2);
                INFO("d1=" << d1 << " d2=" << d2 << " f=" << f0);
                CHECK(p == Catch::Approx(oracle).margin(1e-6));
            }
        }
    }
}

TEST_CASE("regularized incomplete beta complement identity") {
    Rng rng(67);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(0.25, 20.0);
        const double b = rng.uniform(0.25, 20.0);
        const double x = rng.uniform(0.0, 1.0);
        const double sum = regularized_incomplete_beta(a, b, x) + regularized_incomplete_beta(b, a, 1.0 - x);
        CHECK(sum == Catch::Approx(1.0).margin(1e-10));
    }
}

// --- stratified report ------------------------------------------------------

namespace {

struct Fixture {
    std::vector<Episode> episodes;
    std::vector<const Episode*> partition;
    PassTargetsTable actual;
    std::vector<PredictionSet> predictions;

    explicit Fixture(bool perfect_model = false) {
        Rng rng(404);
        PredictionSet baseline{"age_normal", {}};
        PredictionSet model{"model_x", {}};
        for (int i = 0; i < 8; ++i) {
            Episode ep = test_support::eligible_episode("e" + std::to_string(i), "p" + std::to_string(i));
            ep.diagnosis = i < 4 ? "sepsis" : "trauma";
            ep.age_months = 6.0 + 20.0 * i;
            ep.pim2 = 0.05 * (i + 1);
            episodes.push_back(ep);
        }
        for (Episode& ep : episodes) {
            partition.push_back(&ep);
            PassTargets t;
            t.episode_id = ep.episode_id;
            for (std::size_t v = 0; v < 3; ++v) {
                t.mu[v] = 100.0 + rng.uniform(-20.0, 20.0);
                t.window_counts[v] = 3;
            }
            actual[ep.episode_id] = t;
            for (std::size_t v = 0; v < 3; ++v) {
                baseline.predictions[ep.episode_id][v] = t.mu[v] + rng.uniform(-25.0, 25.0);
                model.predictions[ep.episode_id][v] =
                    perfect_model ? t.mu[v] : t.mu[v] + rng.uniform(-5.0, 5.0);
            }
        }
        predictions = {baseline, model};
    }

    ReportOptions options() const {
        ReportOptions o;
        o.age_bins["hr"] = {{"young", 0.0, 60.0}, {"old", 60.0, std::numeric_limits<double>::infinity()}};
        o.age_bins["sbp"] = o.age_bins["hr"];
        o.age_bins["dbp"] = o.age_bins["hr"];
        return o;
    }
};

const ReportRow& find_row(const EvaluationReport& report, const std::string& model,
                          const std::string& vital, const std::string& kind, const std::string& label) {
    for (const ReportRow& row : report.rows) {
        if (row.model == model && row.vital == vital && row.stratum_kind == kind &&
            row.stratum_label == label) {
            return row;
        }
    }
    FAIL("row not found: " + model + "/" + vital + "/" + kind + "/" + label);
    throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("stratified_report: stratum sizes and per-stratum metrics match subsets") {
    Fixture fx;
    EvaluationReport report = stratified_report(fx.partition, fx.actual, fx.predictions, fx.options());
    CHECK(report.partition_size == 8);

    const ReportRow& sepsis = find_row(report, "model_x", "hr", "diagnosis", "sepsis");
    const ReportRow& trauma = find_row(report, "model_x", "hr", "diagnosis", "trauma");
    CHECK(sepsis.n == 4);
    CHECK(trauma.n == 4);

    // subset-recomputation oracle
    std::vector<std::pair<double, double>> subset;
    for (const Episode* ep : fx.partition) {
        if (ep->diagnosis == "sepsis") {
            subset.push_back({fx.actual.at(ep->episode_id).mu[0],
                              fx.predictions[1].predictions.at(ep->episode_id)[0]});
        }
    }
    CHECK(sepsis.rmse == Catch::Approx(rmse(subset)).epsilon(1e-12));
    CHECK(sepsis.mae == Catch::Approx(mae(subset)).epsilon(1e-12));

    // every row obeys rmse >= mae
    for (const ReportRow& row : report.rows) {
        if (row.n > 0) CHECK(row.rmse >= row.mae - 1e-12);
    }

    // complete stratifications recompose to the overall metrics
    const ReportRow& overall = find_row(report, "model_x", "hr", "overall", "all");
    for (const char* kind : {"age_bin", "diagnosis", "pim2_quartile"}) {
        double se = 0.0, ae = 0.0;
        std::size_t n = 0;
        for (const ReportRow& row : report.rows) {
            if (row.model == "model_x" && row.vital == "hr" && row.stratum_kind == kind && row.n > 0) {
                se += row.rmse * row.rmse * static_cast<double>(row.n);
                ae += row.mae * static_cast<double>(row.n);
                n += row.n;
            }
        }
        INFO(kind);
        CHECK(n == 8);
        CHECK(std::sqrt(se / static_cast<double>(n)) == Catch::Approx(overall.rmse).margin(1e-10));
        CHECK(ae / static_cast<double>(n) == Catch::Approx(overall.mae).margin(1e-10));
    }

    // ANOVA section compares each non-baseline model per vital
    REQUIRE(report.anova.size() == 3);
    for (const AnovaRow& row : report.anova) {
        CHECK(row.model == "model_x");
        CHECK(row.result.df_within == 14);
    }
}

TEST_CASE("stratified_report: perfect model yields zero cells") {
    Fixture fx(/*perfect_model=*/true);
    EvaluationReport report = stratified_report(fx.partition, fx.actual, fx.predictions, fx.options());
    for (const ReportRow& row : report.rows) {
        if (row.model == "model_x" && row.n > 0) {
            CHECK(row.rmse == 0.0);
            CHECK(row.mae == 0.0);
        }
    }
    // ANOVA still computed against the baseline errors
    for (const AnovaRow& row : report.anova) CHECK(row.result.p <= 1.0);
}

TEST_CASE("stratified_report: episodes missing pim2/diagnosis drop from only that stratification") {
    Fixture fx;
    fx.episodes[0].pim2.reset();
    fx.episodes[1].diagnosis.clear();
    EvaluationReport report = stratified_report(fx.partition, fx.actual, fx.predictions, fx.options());
    CHECK(report.pim2_n == 7);
    CHECK(report.diagnosis_n == 7);

    std::size_t pim2_total = 0, age_total = 0;
    for (const ReportRow& row : report.rows) {
        if (row.model == "model_x" && row.vital == "hr") {
            if (row.stratum_kind == "pim2_quartile") pim2_total += row.n;
            if (row.stratum_kind == "age_bin") age_total += row.n;
        }
    }
    CHECK(pim2_total == 7);
    CHECK(age_total == 8);  // age is always present
}

TEST_CASE("stratified_report: empty stratum reported with N=0 and blank metrics") {
    Fixture fx;
    ReportOptions opts = fx.options();
    opts.age_bins["hr"].insert(opts.age_bins["hr"].begin(), {"empty", 0.0, 0.0});
    EvaluationReport report = stratified_report(fx.partition, fx.actual, fx.predictions, opts);
    const ReportRow& row = find_row(report, "model_x", "hr", "age_bin", "empty");
    CHECK(row.n == 0);
    CHECK(std::isnan(row.rmse));

    TempDir dir("report_csv");
    write_report_csv(report, dir.file("report.csv"));
    std::ifstream in(dir.file("report.csv"));
    std::string line;
    bool found_blank = false;
    while (std::getline(in, line)) {
        if (line.find("age_bin,empty,0,,") != std::string::npos) found_blank = true;
    }
    CHECK(found_blank);
}

TEST_CASE("stratified_report: coverage and baseline preconditions") {
    Fixture fx;
    std::vector<PredictionSet> missing = fx.predictions;
    missing[1].predictions.erase("e3");
    CHECK_THROWS_WITH(stratified_report(fx.partition, fx.actual, missing, fx.options()),
                      Catch::Matchers::ContainsSubstring("e3"));

    ReportOptions opts = fx.options();
    opts.baseline_model = "nonexistent";
    CHECK_THROWS(stratified_report(fx.partition, fx.actual, fx.predictions, opts));
}

TEST_CASE("prediction set round-trip") {
    TempDir dir("pred_rt");
    PredictionSet ps{"rnn_pmd", {}};
    ps.predictions["e1"] = {130.25, 95.0, 60.5};
    ps.predictions["e2"] = {111.0, 88.875, 54.0};
    save_prediction_set(ps, dir.file("p.tsv"));
    PredictionSet loaded = load_prediction_set(dir.file("p.tsv"));
    CHECK(loaded.model == "rnn_pmd");
    CHECK(loaded.predictions == ps.predictions);
}

TEST_CASE("report text and plot data are emitted") {
    Fixture fx;
    EvaluationReport report = stratified_report(fx.partition, fx.actual, fx.predictions, fx.options());
    TempDir dir("report_txt");
    write_report_text(report, dir.file("report.txt"), {"age_normal", "model_x"});
    std::ifstream in(dir.file("report.txt"));
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(all.find("Heart Rate (bpm)") != std::string::npos);
    CHECK(all.find("age_normal") != std::string::npos);
    CHECK(all.find("ANOVA") != std::string::npos);
}
