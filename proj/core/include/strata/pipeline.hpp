#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "strata/cohort.hpp"
#include "strata/evaluate.hpp"
#include "strata/synth.hpp"

namespace strata {

struct MatchingConfig {
    std::int64_t visit_window_days = 730;  // window behind the visit-frequency covariate

    void validate() const;
};

struct FeaturizeConfig {
    std::int64_t window_days = 730;
    // Fixed by the encoding contract; present so configs state it explicitly.
    std::int32_t sentinel = kSentinel;

    void validate() const;
};

struct SelectionConfig {
    QuotaConfig quotas;
    int k = 100;
    // One selection on the full cohort (as the reference protocol) instead of
    // re-screening inside every training fold.
    bool paper_mode = false;
    GBDTParams stage2;  // screening model

    void validate() const;
};

struct TuningConfig {
    bool enabled = true;
    TPEConfig tpe;
    int folds = 3;  // inner CV folds behind the objective
    SearchSpace space = SearchSpace::defaults();

    void validate() const;
};

struct EvaluationConfig {
    int folds = 10;
    double threshold = 0.5;

    void validate() const;
};

struct PipelineConfig {
    std::string input_dir = "data";
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::optional<SynthConfig> synth;  // when present, the synth stage fills input_dir
    PhenotypeConfig phenotype;
    MatchingConfig matching;
    FeaturizeConfig featurize;
    SelectionConfig selection;
    GBDTParams model;  // defaults for untuned regimes and the tuning base
    TuningConfig tuning;
    EvaluationConfig evaluation;

    void validate() const;
};

// Defaults with the standard CRS code set filled in.
PipelineConfig default_config();

// Strict JSON: unknown keys and wrong types are field-level errors; `where`
// names the source in messages.
PipelineConfig parse_config(const std::string& text, std::string_view where);
PipelineConfig load_config(const std::string& path);

// Canonical JSON of the effective scientific config (paths excluded, so
// reports from different working directories compare byte-equal).
std::string config_echo(const PipelineConfig& config);

enum class Stage { synth, phenotype, match, encode, select, tune, train, eval, report };

inline constexpr int kNumStages = 9;

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view text);

// Runs one stage; upstream artifacts must exist (the error names the stage to
// run first). A stage whose config hash chain matches the recorded state and
// whose artifacts are present is skipped as cached.
void run_stage(const PipelineConfig& config, Stage stage, int workers = 1);

// synth (when configured) through report, in order.
void run_all(const PipelineConfig& config, int workers = 1);

// cohort.csv round-trip, shared by stages and tests.
void write_cohort_file(const std::vector<CohortLabel>& cohort, const std::string& path);
std::vector<CohortLabel> read_cohort_file(const std::string& path);

}  // namespace strata
