#include <catch2/catch_amalgamated.hpp>

#include "icupass/featurize.hpp"
#include "test_support.hpp"

using namespace icupass;
using test_support::TempDir;

namespace {

NormStats simple_stats(double mean, double stddev, double median) {
    NormStats stats;
    for (const char* id : {"hr", "sbp", "dbp"}) {
        stats.vars.push_back({id, mean, stddev, median, false, true});
    }
    return stats;
}

Episode bare_episode(double medical = 20.0, double physical = 30.0) {
    Episode ep;
    ep.episode_id = "e";
    ep.patient_id = "p";
    ep.survived = true;
    ep.medical_discharge_hr = medical;
    ep.physical_discharge_hr = physical;
    return ep;
}

}  // namespace

TEST_CASE("fit_norm_stats: population mean/std/median from train only") {
    Cohort cohort;
    cohort.catalog = test_support::vitals_catalog();
    Episode train_ep = bare_episode();
    train_ep.episode_id = "train";
    train_ep.observations = {{"hr", 1.0, 1.0}, {"hr", 2.0, 2.0}, {"hr", 3.0, 3.0}};
    Episode test_ep = bare_episode();
    test_ep.episode_id = "test";
    test_ep.patient_id = "q";
    test_ep.observations = {{"hr", 1.0, 500.0}, {"sbp", 1.0, 999.0}};
    cohort.episodes = {train_ep, test_ep};

    SplitAssignment split;
    split.partition_of = {{"train", Partition::train}, {"test", Partition::test}};

    NormStats stats = fit_norm_stats(cohort, split);
    const VariableStats& hr = stats.vars[0];
    CHECK(hr.mean == Catch::Approx(2.0));
    CHECK(hr.stddev == Catch::Approx(std::sqrt(2.0 / 3.0)));
    CHECK(hr.median == Catch::Approx(2.0));
    CHECK_FALSE(hr.zero_variance);

    // sbp observed only outside train: catalog population median fallback
    const VariableStats& sbp = stats.vars[1];
    CHECK_FALSE(sbp.observed_in_train);
    CHECK(sbp.median == Catch::Approx(95.0));
    CHECK(sbp.zero_variance);

    // mutating non-train values cannot move the stats
    cohort.episodes[1].observations[0].value = -123.0;
    NormStats again = fit_norm_stats(cohort, split);
    CHECK(again.vars[0].mean == stats.vars[0].mean);
    CHECK(again.vars[0].stddev == stats.vars[0].stddev);

    NormStats third = fit_norm_stats(cohort, split);
    CHECK(third.vars[0].median == stats.vars[0].median);
}

TEST_CASE("fit_norm_stats: constant variable flagged zero-variance") {
    Cohort cohort;
    cohort.catalog = test_support::vitals_catalog();
    Episode ep = bare_episode();
    ep.observations = {{"hr", 1.0, 5.0}, {"hr", 2.0, 5.0}};
    cohort.episodes = {ep};
    SplitAssignment split;
    split.partition_of = {{"e", Partition::train}};

    NormStats stats = fit_norm_stats(cohort, split);
    CHECK(stats.vars[0].zero_variance);
    CHECK(normalize_value(stats.vars[0], 5.0) == 0.0);
    CHECK(normalize_value(stats.vars[0], 99.0) == 0.0);
}

TEST_CASE("build_matrix forward fill matches the hand-traced oracle") {
    NormStats stats = simple_stats(100.0, 20.0, 100.0);
    Episode ep = bare_episode(20.0, 30.0);
    ep.observations = {{"hr", 0.5, 120.0}, {"hr", 2.2, 130.0}};

    FeatureMatrix m = build_matrix(ep, 3.0, 1.0, stats);
    REQUIRE(m.n_steps() == 4);
    // raw row [median=100, 120, 120, 130], z-scored by (x-100)/20
    CHECK(m.values(0, 0) == Catch::Approx(0.0));
    CHECK(m.values(0, 1) == Catch::Approx(1.0));
    CHECK(m.values(0, 2) == Catch::Approx(1.0));
    CHECK(m.values(0, 3) == Catch::Approx(1.5));

    CHECK_FALSE(m.observed_mask(0, 0));
    CHECK(m.observed_mask(0, 1));
    CHECK_FALSE(m.observed_mask(0, 2));
    CHECK(m.observed_mask(0, 3));
}

TEST_CASE("build_matrix grid arithmetic and preconditions") {
    NormStats stats = simple_stats(0.0, 1.0, 0.0);
    Episode ep = bare_episode(14.0, 30.0);
    CHECK(build_matrix(ep, 12.0, 1.0, stats).n_steps() == 13);
    CHECK(build_matrix(ep, 12.0, 1.0, stats).n_variables() == 3);
    CHECK(build_matrix(ep, 0.0, 1.0, stats).n_steps() == 1);
    CHECK_THROWS_WITH(build_matrix(ep, 15.0, 1.0, stats),
                      Catch::Matchers::ContainsSubstring("medical discharge"));
    CHECK_THROWS(build_matrix(ep, 12.0, 0.0, stats));
}

TEST_CASE("build_matrix: mean-valued single observation z-scores to zero row") {
    NormStats stats = simple_stats(120.0, 1.0, 120.0);
    Episode ep = bare_episode(20.0, 30.0);
    ep.observations = {{"hr", 0.0, 120.0}};
    FeatureMatrix m = build_matrix(ep, 5.0, 1.0, stats);
    for (Eigen::Index k = 0; k < m.n_steps(); ++k) CHECK(m.values(0, k) == 0.0);
    CHECK(m.observed_mask(0, 0));
}

TEST_CASE("build_matrix tie-breaking inside one grid step") {
    NormStats stats = simple_stats(0.0, 1.0, 0.0);
    Episode ep = bare_episode(20.0, 30.0);

    SECTION("latest timestamp wins") {
        ep.observations = {{"hr", 1.2, 6.0}, {"hr", 1.8, 7.0}};
        icupass::detail::sort_observations(ep);
        FeatureMatrix m = build_matrix(ep, 3.0, 1.0, stats);
        CHECK(m.values(0, 2) == Catch::Approx(7.0));
    }
    SECTION("exact timestamp tie: last in file order wins") {
        ep.observations = {{"hr", 1.5, 3.0}, {"hr", 1.5, 4.0}};
        icupass::detail::sort_observations(ep);
        FeatureMatrix m = build_matrix(ep, 3.0, 1.0, stats);
        CHECK(m.values(0, 2) == Catch::Approx(4.0));
    }
}

TEST_CASE("build_matrix causality: future observations never reach earlier cells") {
    NormStats stats = simple_stats(80.0, 15.0, 85.0);
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Episode ep = bare_episode(24.0, 30.0);
        for (const char* vital : {"hr", "sbp", "dbp"}) {
            for (int k = 0; k < 10; ++k) {
                ep.observations.push_back({vital, rng.uniform(0.0, 24.0), rng.uniform(40.0, 160.0)});
            }
        }
        icupass::detail::sort_observations(ep);
        const double end_hr = 8.0;
        FeatureMatrix before = build_matrix(ep, end_hr, 1.0, stats);

        Episode perturbed = ep;
        for (Observation& o : perturbed.observations) {
            if (o.time_hr > end_hr) o.value += rng.uniform(-50.0, 50.0);
        }
        perturbed.observations.push_back({"hr", end_hr + 0.75, 999.0});
        icupass::detail::sort_observations(perturbed);
        FeatureMatrix after = build_matrix(perturbed, end_hr, 1.0, stats);
        CHECK(before.values == after.values);
    }
}

TEST_CASE("build_matrix output stays inside the z-score clamp") {
    NormStats stats = simple_stats(100.0, 0.5, 100.0);
    Episode ep = bare_episode(20.0, 30.0);
    ep.observations = {{"hr", 0.0, 5000.0}, {"sbp", 1.0, -4000.0}};
    FeatureMatrix m = build_matrix(ep, 10.0, 1.0, stats);
    CHECK((m.values.array() <= kZScoreClamp).all());
    CHECK((m.values.array() >= -kZScoreClamp).all());
    CHECK(m.values(0, 0) == kZScoreClamp);
}

TEST_CASE("norm stats JSON round-trip") {
    TempDir dir("norm_stats");
    NormStats stats = simple_stats(12.5, 3.25, 11.0);
    stats.vars[2].zero_variance = true;
    stats.vars[2].observed_in_train = false;
    save_norm_stats(stats, dir.file("stats.json"));
    NormStats loaded = load_norm_stats(dir.file("stats.json"));
    REQUIRE(loaded.size() == stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
        CHECK(loaded.vars[i].id == stats.vars[i].id);
        CHECK(loaded.vars[i].mean == stats.vars[i].mean);
        CHECK(loaded.vars[i].stddev == stats.vars[i].stddev);
        CHECK(loaded.vars[i].median == stats.vars[i].median);
        CHECK(loaded.vars[i].zero_variance == stats.vars[i].zero_variance);
    }
}

TEST_CASE("matrix dump writes header, values and mask") {
    TempDir dir("dump");
    NormStats stats = simple_stats(0.0, 1.0, 0.0);
    Episode ep = bare_episode(20.0, 30.0);
    ep.observations = {{"hr", 1.0, 2.0}};
    FeatureMatrix m = build_matrix(ep, 2.0, 1.0, stats);
    save_matrix_dump(m, dir.file("m.tsv"));

    std::ifstream in(dir.file("m.tsv"));
    std::string header;
    std::getline(in, header);
    CHECK(header == "e\t1\t3\t3");
}
