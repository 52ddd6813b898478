#include <catch2/catch_amalgamated.hpp>

#include "icupass/pass.hpp"
#include "test_support.hpp"

using namespace icupass;
using test_support::TempDir;

namespace {

Episode window_episode(std::initializer_list<double> hr_values) {
    Episode ep;
    ep.episode_id = "e";
    ep.patient_id = "p";
    ep.survived = true;
    ep.medical_discharge_hr = 20.0;
    ep.physical_discharge_hr = 30.0;
    double t = 21.0;
    for (double v : hr_values) ep.observations.push_back({"hr", t += 1.0, v});
    for (const char* vital : {"sbp", "dbp"}) {
        for (int k = 0; k < 3; ++k) {
            ep.observations.push_back({vital, 22.0 + k, vital == std::string("sbp") ? 95.0 : 60.0});
        }
    }
    icupass::detail::sort_observations(ep);
    return ep;
}

}  // namespace

TEST_CASE("compute_pass takes arithmetic means over the window") {
    Episode ep = window_episode({120.0, 130.0, 140.0});
    PassTargets t = compute_pass(ep);
    CHECK(t.mu_hr() == Catch::Approx(130.0));
    CHECK(t.window_counts[0] == 3);

    Episode ep2 = window_episode({1.0, 1.0, 1.0});
    ep2.observations.clear();
    for (double v : {90.0, 95.0, 100.0, 115.0}) ep2.observations.push_back({"sbp", 22.0, v});
    for (const char* vital : {"hr", "dbp"}) {
        for (int k = 0; k < 3; ++k) ep2.observations.push_back({vital, 23.0 + k, 100.0});
    }
    icupass::detail::sort_observations(ep2);
    CHECK(compute_pass(ep2).mu_sbp() == Catch::Approx(100.0));
}

TEST_CASE("compute_pass window is closed on both boundaries") {
    Episode ep = window_episode({100.0, 100.0});
    // exactly at medical and physical discharge: both included
    ep.observations.push_back({"hr", ep.medical_discharge_hr, 130.0});
    ep.observations.push_back({"hr", ep.physical_discharge_hr, 160.0});
    icupass::detail::sort_observations(ep);
    PassTargets t = compute_pass(ep);
    CHECK(t.window_counts[0] == 4);
    CHECK(t.mu_hr() == Catch::Approx((100.0 + 100.0 + 130.0 + 160.0) / 4.0));
}

TEST_CASE("compute_pass ignores observations outside the window") {
    Episode ep = window_episode({110.0, 120.0, 130.0});
    PassTargets before = compute_pass(ep);

    Episode perturbed = ep;
    perturbed.observations.push_back({"hr", 3.0, 999.0});
    perturbed.observations.push_back({"hr", 19.999, -40.0});
    icupass::detail::sort_observations(perturbed);
    PassTargets after = compute_pass(perturbed);
    CHECK(before.mu_hr() == after.mu_hr());
    CHECK(before.mu_sbp() == after.mu_sbp());
    CHECK(before.window_counts == after.window_counts);
}

TEST_CASE("compute_pass is permutation invariant and exact on constants") {
    Rng rng(7);
    std::vector<double> values;
    for (int i = 0; i < 9; ++i) values.push_back(rng.uniform(60.0, 180.0));

    Episode a = window_episode({});
    Episode b = window_episode({});
    a.observations.clear();
    b.observations.clear();
    for (std::size_t i = 0; i < values.size(); ++i) {
        a.observations.push_back({"hr", 21.0 + 0.5 * static_cast<double>(i), values[i]});
        b.observations.push_back(
            {"hr", 21.0 + 0.5 * static_cast<double>(i), values[values.size() - 1 - i]});
    }
    for (const char* vital : {"sbp", "dbp"}) {
        for (int k = 0; k < 3; ++k) {
            a.observations.push_back({vital, 22.0 + k, 70.0});
            b.observations.push_back({vital, 22.0 + k, 70.0});
        }
    }
    icupass::detail::sort_observations(a);
    icupass::detail::sort_observations(b);
    CHECK(compute_pass(a).mu_hr() == Catch::Approx(compute_pass(b).mu_hr()).epsilon(1e-12));

    // constant window: every target equals the constant exactly
    Episode c = window_episode({77.0, 77.0, 77.0, 77.0});
    CHECK(compute_pass(c).mu_hr() == 77.0);
    CHECK(compute_pass(c).mu_sbp() == 95.0);
    CHECK(compute_pass(c).mu_dbp() == 60.0);
}

TEST_CASE("compute_pass with an empty vital window is a hard error") {
    Episode ep = window_episode({120.0, 125.0, 135.0});
    std::vector<Observation> kept;
    for (const Observation& o : ep.observations) {
        if (o.variable_id != "dbp") kept.push_back(o);
    }
    ep.observations = kept;
    CHECK_THROWS_WITH(compute_pass(ep), Catch::Matchers::ContainsSubstring("dbp"));
}

TEST_CASE("pass targets table round-trip") {
    TempDir dir("pass_rt");
    PassTargetsTable table;
    table["e1"] = {"e1", {130.0, 95.5, 60.25}, {3, 4, 5}};
    table["e2"] = {"e2", {111.125, 88.0, 54.0}, {6, 3, 3}};
    save_pass_targets(table, dir.file("targets.tsv"));
    PassTargetsTable loaded = load_pass_targets(dir.file("targets.tsv"));
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.at("e1").mu == table.at("e1").mu);
    CHECK(loaded.at("e2").window_counts == table.at("e2").window_counts);
}
