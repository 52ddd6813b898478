#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icupass/baselines.hpp"
#include "icupass/cohort.hpp"
#include "icupass/common.hpp"
#include "icupass/eval.hpp"
#include "icupass/featurize.hpp"
#include "icupass/manifest.hpp"
#include "icupass/pass.hpp"
#include "icupass/rnn.hpp"
#include "icupass/synth.hpp"

namespace icupass {
namespace pipeline {

namespace fs = std::filesystem;

struct RunConfig {
    std::string out_dir = "run";
    std::string cohort_path;   // empty: the synth stage's output
    std::string catalog_path;  // empty: the synth stage's output
    std::string age_normal_table_path = "data/age_normal_fixture.tsv";

    synth::SynthConfig synth;
    FilterOptions filter{{"hr", "sbp", "dbp"}, 3, 12.0};
    double split_train = 0.6;
    double split_validation = 0.2;
    double split_test = 0.2;
    std::uint64_t split_seed = 7;
    double grid_step_hr = 1.0;
    bool dump_matrices = false;
    int degree_min = 1;
    int degree_max = 8;
    double ridge = 1e-8;
    rnn::TrainConfig train_pmd;
    rnn::TrainConfig train_h12;
    std::vector<rnn::GridPoint> train_grid;  // non-empty: validation-driven search
    std::map<std::string, std::vector<metrics::AgeBin>> age_bins;
    bool audit_literal_rmse = false;

    RunConfig() {
        train_pmd.regime = rnn::Regime::pmd;
        train_pmd.seed = 101;
        train_h12.regime = rnn::Regime::h12;
        train_h12.seed = 102;
        age_bins = default_age_bins();
    }

    static std::map<std::string, std::vector<metrics::AgeBin>> default_age_bins() {
        const double inf = std::numeric_limits<double>::infinity();
        std::map<std::string, std::vector<metrics::AgeBin>> bins;
        bins["hr"] = {{"0-1mo", 0, 1},      {"1-11mo", 1, 12},   {"1-2y", 12, 36},
                      {"3-4y", 36, 60},     {"5-6y", 60, 84},    {"7-9y", 84, 120},
                      {"10y+", 120, inf}};
        bins["sbp"] = {{"0-12mo", 0, 12},   {"1-2y", 12, 36},    {"3-5y", 36, 72},
                       {"6-9y", 72, 120},   {"10-11y", 120, 144}, {"12y+", 144, inf}};
        bins["dbp"] = bins["sbp"];
        return bins;
    }
};

// ---------------------------------------------------------------------------
// Config (de)serialization; the canonical JSON form also feeds the digest.

namespace detail {

inline ordered_json train_config_to_json(const rnn::TrainConfig& c) {
    ordered_json j;
    j["hidden_size"] = c.hidden_size;
    j["learning_rate"] = c.learning_rate;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["epsilon"] = c.epsilon;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    return j;
}

inline void train_config_from_json(const ordered_json& j, rnn::TrainConfig& c) {
    if (j.contains("hidden_size")) c.hidden_size = j["hidden_size"].get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("patience")) c.patience = j["patience"].get<int>();
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
}

}  // namespace detail

inline ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["out_dir"] = c.out_dir;
    ordered_json paths;
    paths["cohort"] = c.cohort_path;
    paths["catalog"] = c.catalog_path;
    paths["age_normal_table"] = c.age_normal_table_path;
    j["paths"] = std::move(paths);

    ordered_json sy;
    sy["seed"] = c.synth.seed;
    sy["n_patients"] = c.synth.n_patients;
    sy["extra_episode_prob"] = c.synth.extra_episode_prob;
    sy["n_aux_variables"] = c.synth.n_aux_variables;
    sy["ineligible_fraction"] = c.synth.ineligible_fraction;
    j["synth"] = std::move(sy);

    ordered_json fl;
    fl["vitals"] = c.filter.vitals;
    fl["min_window_measurements"] = c.filter.min_window_measurements;
    fl["min_duration_hr"] = c.filter.min_duration_hr;
    j["filter"] = std::move(fl);

    ordered_json sp;
    sp["train"] = c.split_train;
    sp["validation"] = c.split_validation;
    sp["test"] = c.split_test;
    sp["seed"] = c.split_seed;
    j["split"] = std::move(sp);

    ordered_json fz;
    fz["grid_step_hr"] = c.grid_step_hr;
    fz["dump_matrices"] = c.dump_matrices;
    j["featurize"] = std::move(fz);

    ordered_json bl;
    bl["degree_min"] = c.degree_min;
    bl["degree_max"] = c.degree_max;
    bl["ridge"] = c.ridge;
    j["baselines"] = std::move(bl);

    ordered_json tr;
    tr["pmd"] = detail::train_config_to_json(c.train_pmd);
    tr["h12"] = detail::train_config_to_json(c.train_h12);
    ordered_json grid = ordered_json::array();
    for (const rnn::GridPoint& g : c.train_grid) {
        grid.push_back({{"hidden_size", g.hidden_size}, {"learning_rate", g.learning_rate}});
    }
    tr["grid"] = std::move(grid);
    j["train"] = std::move(tr);

    ordered_json ev;
    ordered_json bins;
    for (const auto& [vital, list] : c.age_bins) {
        ordered_json arr = ordered_json::array();
        for (const metrics::AgeBin& b : list) {
            ordered_json jb;
            jb["label"] = b.label;
            jb["lo_months"] = b.lo_months;
            jb["hi_months"] = std::isfinite(b.hi_months) ? ordered_json(b.hi_months) : ordered_json("inf");
            arr.push_back(std::move(jb));
        }
        bins[vital] = std::move(arr);
    }
    ev["age_bins"] = std::move(bins);
    ev["audit_literal_rmse"] = c.audit_literal_rmse;
    j["eval"] = std::move(ev);
    return j;
}

inline RunConfig config_from_json(const ordered_json& j) {
    RunConfig c;
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        if (p.contains("cohort")) c.cohort_path = p["cohort"].get<std::string>();
        if (p.contains("catalog")) c.catalog_path = p["catalog"].get<std::string>();
        if (p.contains("age_normal_table")) c.age_normal_table_path = p["age_normal_table"].get<std::string>();
    }
    if (j.contains("synth")) {
        const auto& s = j["synth"];
        if (s.contains("seed")) c.synth.seed = s["seed"].get<std::uint64_t>();
        if (s.contains("n_patients")) c.synth.n_patients = s["n_patients"].get<int>();
        if (s.contains("extra_episode_prob")) c.synth.extra_episode_prob = s["extra_episode_prob"].get<double>();
        if (s.contains("n_aux_variables")) c.synth.n_aux_variables = s["n_aux_variables"].get<int>();
        if (s.contains("ineligible_fraction")) c.synth.ineligible_fraction = s["ineligible_fraction"].get<double>();
    }
    if (j.contains("filter")) {
        const auto& f = j["filter"];
        if (f.contains("vitals")) c.filter.vitals = f["vitals"].get<std::vector<std::string>>();
        if (f.contains("min_window_measurements")) c.filter.min_window_measurements = f["min_window_measurements"].get<int>();
        if (f.contains("min_duration_hr")) c.filter.min_duration_hr = f["min_duration_hr"].get<double>();
    }
    if (j.contains("split")) {
        const auto& s = j["split"];
        if (s.contains("train")) c.split_train = s["train"].get<double>();
        if (s.contains("validation")) c.split_validation = s["validation"].get<double>();
        if (s.contains("test")) c.split_test = s["test"].get<double>();
        if (s.contains("seed")) c.split_seed = s["seed"].get<std::uint64_t>();
    }
    if (j.contains("featurize")) {
        const auto& f = j["featurize"];
        if (f.contains("grid_step_hr")) c.grid_step_hr = f["grid_step_hr"].get<double>();
        if (f.contains("dump_matrices")) c.dump_matrices = f["dump_matrices"].get<bool>();
    }
    if (j.contains("baselines")) {
        const auto& b = j["baselines"];
        if (b.contains("degree_min")) c.degree_min = b["degree_min"].get<int>();
        if (b.contains("degree_max")) c.degree_max = b["degree_max"].get<int>();
        if (b.contains("ridge")) c.ridge = b["ridge"].get<double>();
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("pmd")) detail::train_config_from_json(t["pmd"], c.train_pmd);
        if (t.contains("h12")) detail::train_config_from_json(t["h12"], c.train_h12);
        if (t.contains("grid")) {
            c.train_grid.clear();
            for (const auto& g : t["grid"]) {
                c.train_grid.push_back(
                    {g.at("hidden_size").get<int>(), g.at("learning_rate").get<double>()});
            }
        }
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        if (e.contains("age_bins")) {
            c.age_bins.clear();
            for (const auto& [vital, arr] : e["age_bins"].items()) {
                std::vector<metrics::AgeBin> list;
                for (const auto& jb : arr) {
                    metrics::AgeBin b;
                    b.label = jb.at("label").get<std::string>();
                    b.lo_months = jb.at("lo_months").get<double>();
                    b.hi_months = jb.at("hi_months").is_string()
                                      ? std::numeric_limits<double>::infinity()
                                      : jb.at("hi_months").get<double>();
                    list.push_back(std::move(b));
                }
                c.age_bins[vital] = std::move(list);
            }
        }
        if (e.contains("audit_literal_rmse")) c.audit_literal_rmse = e["audit_literal_rmse"].get<bool>();
    }
    c.train_pmd.regime = rnn::Regime::pmd;
    c.train_h12.regime = rnn::Regime::h12;
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return config_from_json(ordered_json::parse(in));
}

inline void validate_config(const RunConfig& c) {
    if (!(c.grid_step_hr > 0.0)) throw std::runtime_error("config: grid_step_hr must be positive");
    const double k = 12.0 / c.grid_step_hr;
    if (std::abs(k - std::llround(k)) > 1e-9) {
        throw std::runtime_error("config: grid_step_hr must place a grid point at hour 12");
    }
    if (c.degree_min < 1 || c.degree_max < c.degree_min) throw std::runtime_error("config: bad degree range");
    if (c.filter.vitals.size() != 3) throw std::runtime_error("config: filter.vitals must list hr, sbp, dbp ids");
}

/// Replaces every stage seed with a value derived from the override, so
/// one integer reseeds the entire pipeline deterministically.
inline void apply_seed_override(RunConfig& c, std::uint64_t seed) {
    c.synth.seed = seed;
    c.split_seed = derive_seed(seed, 1);
    c.train_pmd.seed = derive_seed(seed, 2);
    c.train_h12.seed = derive_seed(seed, 3);
}

inline std::string config_digest(const RunConfig& c) { return digest_string(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Stages

enum class Stage { synth, split, featurize, fit_baselines, train, predict, evaluate, report };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::synth: return "synth";
        case Stage::split: return "split";
        case Stage::featurize: return "featurize";
        case Stage::fit_baselines: return "fit-baselines";
        case Stage::train: return "train";
        case Stage::predict: return "predict";
        case Stage::evaluate: return "evaluate";
        case Stage::report: return "report";
    }
    return "?";
}

inline Stage stage_from_name(std::string_view name) {
    for (Stage s : {Stage::synth, Stage::split, Stage::featurize, Stage::fit_baselines, Stage::train,
                    Stage::predict, Stage::evaluate, Stage::report}) {
        if (name == stage_name(s)) return s;
    }
    throw std::runtime_error("unknown stage: '" + std::string(name) + "'");
}

inline const std::vector<std::string> kModelOrder = {"age_normal", "regression", "rnn_12h", "rnn_pmd"};

namespace detail {

/// Which stage produces which artifact, for dependency error messages.
inline const std::map<std::string, std::string>& artifact_producers() {
    static const std::map<std::string, std::string> map = {
        {"cohort.jsonl", "synth"},
        {"catalog.tsv", "synth"},
        {"truth_targets.tsv", "synth"},
        {"split.tsv", "split"},
        {"filter_report.json", "split"},
        {"norm_stats.json", "featurize"},
        {"pass_targets.tsv", "featurize"},
        {"age_normal.tsv", "fit-baselines"},
        {"poly_model.json", "fit-baselines"},
        {"model_rnn_pmd.json", "train"},
        {"model_rnn_12h.json", "train"},
        {"predictions_age_normal.tsv", "predict"},
        {"predictions_regression.tsv", "predict"},
        {"predictions_rnn_pmd.tsv", "predict"},
        {"predictions_rnn_12h.tsv", "predict"},
        {"report.csv", "evaluate"},
        {"anova.csv", "evaluate"},
    };
    return map;
}

struct StageIo {
    RunConfig config;
    std::string out_dir;
    Manifest manifest;
    ordered_json inputs = ordered_json::object();
    ordered_json outputs = ordered_json::object();

    StageIo(const RunConfig& cfg)
        : config(cfg), out_dir(cfg.out_dir), manifest(Manifest::load_or_create(cfg.out_dir + "/manifest.json")) {
        fs::create_directories(out_dir);
    }

    std::string path(const std::string& name) const { return out_dir + "/" + name; }

    std::string cohort_file() const {
        return config.cohort_path.empty() ? path("cohort.jsonl") : config.cohort_path;
    }
    std::string catalog_file() const {
        return config.catalog_path.empty() ? path("catalog.tsv") : config.catalog_path;
    }

    /// Registers a prerequisite: must exist, and if the manifest recorded
    /// its digest, the bytes on disk must still match.
    std::string require(const std::string& name, const std::string& file_path) {
        if (!fs::exists(file_path)) {
            auto it = artifact_producers().find(name);
            std::string hint = it == artifact_producers().end()
                                   ? " at " + file_path
                                   : " (produce it with stage '" + it->second + "')";
            throw std::runtime_error("missing prerequisite artifact '" + name + "'" + hint);
        }
        const std::string digest = digest_file(file_path);
        if (auto recorded = manifest.recorded_digest(name); recorded && *recorded != digest) {
            throw std::runtime_error("artifact '" + name + "' no longer matches the digest its producing "
                                     "stage recorded; the upstream file was modified");
        }
        inputs[name] = digest;
        return file_path;
    }
    std::string require(const std::string& name) { return require(name, path(name)); }

    void emit(const std::string& name, const std::function<void(const std::string&)>& writer) {
        const std::string file_path = path(name);
        atomic_write(file_path, writer);
        outputs[name] = digest_file(file_path);
    }

    void finish(Stage stage, std::uint64_t seed) {
        manifest.record_stage(stage_name(stage), seed, config_digest(config), inputs, outputs);
        manifest.save();
    }
};

inline Cohort load_eligible(StageIo& io, SplitAssignment& split_out) {
    Cohort cohort = load_cohort(io.require("cohort.jsonl", io.cohort_file()),
                                io.require("catalog.tsv", io.catalog_file()));
    split_out = load_split(io.require("split.tsv"));
    // the split stage filtered: episodes absent from the split are the
    // ineligible ones
    Cohort eligible;
    eligible.catalog = cohort.catalog;
    for (Episode& ep : cohort.episodes) {
        if (split_out.contains(ep.episode_id)) eligible.episodes.push_back(std::move(ep));
    }
    return eligible;
}

inline std::vector<rnn::TrainExample> make_examples(const std::vector<const Episode*>& eps,
                                                    const PassTargetsTable& targets) {
    std::vector<rnn::TrainExample> out;
    out.reserve(eps.size());
    for (const Episode* ep : eps) out.push_back({ep, targets.at(ep->episode_id)});
    return out;
}

}  // namespace detail

inline void run_stage(Stage stage, const RunConfig& config) {
    validate_config(config);
    detail::StageIo io(config);

    switch (stage) {
        case Stage::synth: {
            synth::SynthResult result = synth::generate(config.synth);
            io.emit("cohort.jsonl", [&](const std::string& tmp) {
                const std::string tmp_catalog = io.path("catalog.tsv") + ".tmp";
                save_cohort(result.cohort, tmp, tmp_catalog);
                fs::rename(tmp_catalog, io.path("catalog.tsv"));
            });
            io.outputs["catalog.tsv"] = digest_file(io.path("catalog.tsv"));
            io.emit("truth_targets.tsv", [&](const std::string& tmp) {
                save_pass_targets(result.oracle, tmp);
            });
            io.finish(stage, config.synth.seed);
            break;
        }
        case Stage::split: {
            Cohort cohort = load_cohort(io.require("cohort.jsonl", io.cohort_file()),
                                        io.require("catalog.tsv", io.catalog_file()));
            FilterCounts counts;
            Cohort eligible = filter_eligible(cohort, config.filter, &counts);
            SplitAssignment split = split_by_patient(eligible, config.split_train,
                                                     config.split_validation, config.split_test,
                                                     config.split_seed);
            io.emit("split.tsv", [&](const std::string& tmp) { save_split(split, tmp); });
            io.emit("filter_report.json", [&](const std::string& tmp) {
                ordered_json j;
                j["input_episodes"] = counts.input;
                j["kept"] = counts.kept;
                j["excluded_non_survivor"] = counts.excluded_non_survivor;
                j["excluded_short_stay"] = counts.excluded_short_stay;
                j["excluded_sparse_window"] = counts.excluded_sparse_window;
                std::ofstream out(tmp);
                out << j.dump(2) << '\n';
            });
            io.finish(stage, config.split_seed);
            break;
        }
        case Stage::featurize: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            NormStats stats = fit_norm_stats(eligible, split);
            io.emit("norm_stats.json", [&](const std::string& tmp) { save_norm_stats(stats, tmp); });

            VitalIds vitals{config.filter.vitals[0], config.filter.vitals[1], config.filter.vitals[2]};
            PassTargetsTable targets;
            for (const Episode& ep : eligible.episodes) {
                targets[ep.episode_id] = compute_pass(ep, vitals);
            }
            io.emit("pass_targets.tsv", [&](const std::string& tmp) { save_pass_targets(targets, tmp); });

            if (config.dump_matrices) {
                fs::create_directories(io.path("matrices"));
                for (const Episode& ep : eligible.episodes) {
                    FeatureMatrix m = build_matrix(ep, ep.medical_discharge_hr, config.grid_step_hr, stats);
                    atomic_write(io.path("matrices/" + ep.episode_id + ".tsv"),
                                 [&](const std::string& tmp) { save_matrix_dump(m, tmp); });
                }
            }
            io.finish(stage, 0);
            break;
        }
        case Stage::fit_baselines: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            PassTargetsTable targets = load_pass_targets(io.require("pass_targets.tsv"));

            baselines::AgeNormalTable table =
                baselines::load_age_normal_table(io.require("age_normal_source.tsv", config.age_normal_table_path));
            io.emit("age_normal.tsv", [&](const std::string& tmp) {
                fs::copy_file(config.age_normal_table_path, tmp, fs::copy_options::overwrite_existing);
            });

            const auto train_eps = episodes_in(eligible, split, Partition::train);
            const auto val_eps = episodes_in(eligible, split, Partition::validation);
            baselines::PolynomialModel poly;
            for (std::size_t v = 0; v < 3; ++v) {
                std::vector<baselines::AgePoint> train_pts, val_pts;
                for (const Episode* ep : train_eps) {
                    train_pts.push_back({ep->age_months, targets.at(ep->episode_id).mu[v]});
                }
                for (const Episode* ep : val_eps) {
                    val_pts.push_back({ep->age_months, targets.at(ep->episode_id).mu[v]});
                }
                poly.fits[v] = baselines::fit_polynomial(train_pts, val_pts, config.degree_min,
                                                         config.degree_max, config.ridge);
            }
            io.emit("poly_model.json", [&](const std::string& tmp) { save_polynomial_model(poly, tmp); });
            io.finish(stage, 0);
            break;
        }
        case Stage::train: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            NormStats stats = load_norm_stats(io.require("norm_stats.json"));
            PassTargetsTable targets = load_pass_targets(io.require("pass_targets.tsv"));

            const auto train_set = detail::make_examples(episodes_in(eligible, split, Partition::train), targets);
            const auto val_set = detail::make_examples(episodes_in(eligible, split, Partition::validation), targets);

            auto fit = [&](const rnn::TrainConfig& tc) {
                return config.train_grid.empty()
                           ? rnn::train(train_set, val_set, stats, tc, config.grid_step_hr)
                           : rnn::grid_search(train_set, val_set, stats, tc, config.train_grid,
                                              config.grid_step_hr);
            };
            rnn::LstmModel pmd = fit(config.train_pmd);
            io.emit("model_rnn_pmd.json", [&](const std::string& tmp) { rnn::save_lstm_model(pmd, tmp); });
            rnn::LstmModel h12 = fit(config.train_h12);
            io.emit("model_rnn_12h.json", [&](const std::string& tmp) { rnn::save_lstm_model(h12, tmp); });
            io.finish(stage, config.train_pmd.seed);
            break;
        }
        case Stage::predict: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            NormStats stats = load_norm_stats(io.require("norm_stats.json"));
            baselines::AgeNormalTable table = baselines::load_age_normal_table(io.require("age_normal.tsv"));
            baselines::PolynomialModel poly = baselines::load_polynomial_model(io.require("poly_model.json"));
            rnn::LstmModel pmd = rnn::load_lstm_model(io.require("model_rnn_pmd.json"));
            rnn::LstmModel h12 = rnn::load_lstm_model(io.require("model_rnn_12h.json"));

            const auto test_eps = episodes_in(eligible, split, Partition::test);
            metrics::PredictionSet age_normal{"age_normal", {}};
            metrics::PredictionSet regression{"regression", {}};
            metrics::PredictionSet rnn_pmd{"rnn_pmd", {}};
            metrics::PredictionSet rnn_12h{"rnn_12h", {}};
            for (const Episode* ep : test_eps) {
                for (std::size_t v = 0; v < 3; ++v) {
                    age_normal.predictions[ep->episode_id][v] =
                        baselines::lookup_age_normal(table, kVitalLabels[v], ep->age_months);
                }
                regression.predictions[ep->episode_id] = baselines::predict_polynomial(poly, ep->age_months);
                rnn_pmd.predictions[ep->episode_id] = rnn::predict_at_12h(pmd, *ep, stats);
                rnn_12h.predictions[ep->episode_id] = rnn::predict_at_12h(h12, *ep, stats);
            }
            io.emit("predictions_age_normal.tsv", [&](const std::string& tmp) { metrics::save_prediction_set(age_normal, tmp); });
            io.emit("predictions_regression.tsv", [&](const std::string& tmp) { metrics::save_prediction_set(regression, tmp); });
            io.emit("predictions_rnn_pmd.tsv", [&](const std::string& tmp) { metrics::save_prediction_set(rnn_pmd, tmp); });
            io.emit("predictions_rnn_12h.tsv", [&](const std::string& tmp) { metrics::save_prediction_set(rnn_12h, tmp); });
            io.finish(stage, 0);
            break;
        }
        case Stage::evaluate: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            PassTargetsTable targets = load_pass_targets(io.require("pass_targets.tsv"));
            // models are upstream of the predictions; requiring them keeps
            // the digest chain verifiable end to end
            io.require("model_rnn_pmd.json");
            io.require("model_rnn_12h.json");
            std::vector<metrics::PredictionSet> predictions;
            for (const std::string& model : kModelOrder) {
                predictions.push_back(metrics::load_prediction_set(io.require("predictions_" + model + ".tsv")));
            }

            metrics::ReportOptions options;
            options.age_bins = config.age_bins;
            options.audit_literal_rmse = config.audit_literal_rmse;
            metrics::EvaluationReport report = metrics::stratified_report(
                episodes_in(eligible, split, Partition::test), targets, predictions, options);

            io.emit("report.csv", [&](const std::string& tmp) {
                metrics::write_report_csv(report, tmp, config.audit_literal_rmse);
            });
            io.emit("anova.csv", [&](const std::string& tmp) { metrics::write_anova_csv(report, tmp); });
            io.finish(stage, 0);
            break;
        }
        case Stage::report: {
            SplitAssignment split;
            Cohort eligible = detail::load_eligible(io, split);
            PassTargetsTable targets = load_pass_targets(io.require("pass_targets.tsv"));
            baselines::AgeNormalTable table = baselines::load_age_normal_table(io.require("age_normal.tsv"));
            baselines::PolynomialModel poly = baselines::load_polynomial_model(io.require("poly_model.json"));
            io.require("report.csv");
            std::vector<metrics::PredictionSet> predictions;
            for (const std::string& model : kModelOrder) {
                predictions.push_back(metrics::load_prediction_set(io.require("predictions_" + model + ".tsv")));
            }

            metrics::ReportOptions options;
            options.age_bins = config.age_bins;
            options.audit_literal_rmse = config.audit_literal_rmse;
            metrics::EvaluationReport report = metrics::stratified_report(
                episodes_in(eligible, split, Partition::test), targets, predictions, options);
            io.emit("report.txt", [&](const std::string& tmp) {
                metrics::write_report_text(report, tmp, kModelOrder);
            });

            // plot data mirrors the published layout: training-set scatter
            // with the fitted curve and the age-normal band
            const auto train_eps = episodes_in(eligible, split, Partition::train);
            fs::create_directories(io.path("plots"));
            metrics::write_plot_data(train_eps, targets, poly, table, io.path("plots"));
            for (std::size_t v = 0; v < 3; ++v) {
                for (const char* kind : {"scatter", "curve", "age_normal"}) {
                    const std::string name = std::string("plots/plot_") + kVitalLabels[v] + "_" + kind + ".tsv";
                    io.outputs[name] = digest_file(io.path(name));
                }
            }
            io.finish(stage, 0);
            break;
        }
    }
}

/// Stages in dependency order; synth is skipped when the config points at
/// an external cohort.
inline void run_all(const RunConfig& config) {
    if (config.cohort_path.empty()) run_stage(Stage::synth, config);
    for (Stage s : {Stage::split, Stage::featurize, Stage::fit_baselines, Stage::train, Stage::predict,
                    Stage::evaluate, Stage::report}) {
        run_stage(s, config);
    }
}

}  // namespace pipeline
}  // namespace icupass
