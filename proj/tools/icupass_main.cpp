#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "icupass/icupass.hpp"

namespace {

struct GlobalOptions {
    std::string config_path;
    std::string stage;
    std::optional<std::uint64_t> seed_override;
    std::string out_override;
    bool audit_literal_rmse = false;
};

int run(const GlobalOptions& opts) {
    using namespace icupass;
    pipeline::RunConfig config = pipeline::load_run_config(opts.config_path);
    if (!opts.out_override.empty()) config.out_dir = opts.out_override;
    if (opts.seed_override) pipeline::apply_seed_override(config, *opts.seed_override);
    if (opts.audit_literal_rmse) config.audit_literal_rmse = true;

    if (opts.stage == "all") {
        pipeline::run_all(config);
    } else {
        pipeline::run_stage(pipeline::stage_from_name(opts.stage), config);
    }
    std::cout << "stage '" << opts.stage << "' complete; artifacts in " << config.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learn and evaluate patient-specific acceptable ICU discharge vitals"};
    app.require_subcommand(0, 1);

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "run configuration file (JSON)");
    app.add_option("--stage", opts.stage, "stage to run (synth|split|featurize|fit-baselines|train|predict|evaluate|report|all)");
    app.add_option("--seed-override", opts.seed_override, "reseed every pipeline stage from this value");
    app.add_option("--out", opts.out_override, "output directory (overrides the config)");
    app.add_flag("--audit-literal-rmse", opts.audit_literal_rmse,
                 "add the literal 1/N-outside-the-root rMSE variant to report.csv");

    for (const char* name : {"synth", "split", "featurize", "fit-baselines", "train", "predict",
                             "evaluate", "report", "all"}) {
        CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " stage");
        sub->fallthrough();  // global options may follow the subcommand
        sub->callback([&opts, name]() { opts.stage = name; });
    }

    CLI11_PARSE(app, argc, argv);

    if (opts.stage.empty()) {
        std::cerr << "error: pass a subcommand or --stage <name>\n";
        return 2;
    }
    if (opts.config_path.empty()) {
        std::cerr << "error: --config <path> is required\n";
        return 2;
    }
    try {
        return run(opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
