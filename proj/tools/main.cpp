#include <cstdint>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "strata/common.hpp"
#include "strata/pipeline.hpp"
#include "strata/synth.hpp"

namespace {

// Self-contained demo setup for runs without --config: a synthetic cohort
// with the default planted signals.
strata::PipelineConfig demo_config() {
    strata::PipelineConfig config = strata::default_config();
    strata::SynthConfig synth;
    synth.planted_signals =
        strata::default_planted_signals(synth.n_concepts_per_domain, 10, 0.30, 0.05, 90.0);
    config.synth = synth;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stratified chronic rhinosinusitis risk pipeline"};
    app.require_subcommand(1);
    // Global flags remain valid after the stage name: "strata run --config x"
    // parses the same as "strata --config x run".
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::string input_dir;
    std::uint64_t seed = 0;
    int workers = 1;
    bool paper_mode = false;

    app.add_option("--config", config_path, "Pipeline config JSON; omit for a synthetic demo run");
    app.add_option("--out", out_dir, "Output directory, overrides the config");
    app.add_option("--input", input_dir, "Input data directory, overrides the config");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed, overrides the config");
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--paper-mode", paper_mode,
                 "Select features once on the full cohort instead of inside each fold");

    app.add_subcommand("run", "Run every stage in order");
    app.add_subcommand("synth", "Generate the synthetic cohort");
    app.add_subcommand("phenotype", "Find targets by the rule-based definition");
    app.add_subcommand("match", "Propensity-match controls to targets");
    app.add_subcommand("encode", "Encode recency features");
    app.add_subcommand("select", "Two-stage feature selection");
    app.add_subcommand("tune", "Tune hyperparameters per regime");
    app.add_subcommand("train", "Train deployable per-regime models");
    app.add_subcommand("eval", "Cross-validated benchmark");
    app.add_subcommand("report", "Assemble report.json and report.md");

    CLI11_PARSE(app, argc, argv);

    try {
        strata::PipelineConfig config =
            config_path.empty() ? demo_config() : strata::load_config(config_path);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (!input_dir.empty()) config.input_dir = input_dir;
        if (seed_opt->count() > 0) config.seed = seed;
        if (paper_mode) config.selection.paper_mode = true;

        const std::string& name = app.get_subcommands().front()->get_name();
        if (name == "run") {
            strata::run_all(config, workers);
        } else {
            strata::run_stage(config, *strata::parse_stage(name), workers);
        }
        return 0;
    } catch (const strata::ValidationError& e) {
        strata::log::error(e.what());
        return 1;
    } catch (const strata::PipelineError& e) {
        strata::log::error(e.what());
        return 2;
    } catch (const std::exception& e) {
        strata::log::error(e.what());
        return 2;
    }
}
