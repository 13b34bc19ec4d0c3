#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strata/boosting.hpp"
#include "strata/cohort.hpp"
#include "strata/featurize.hpp"
#include "strata/select.hpp"
#include "strata/stratum.hpp"
#include "strata/tune.hpp"

namespace strata {

// Mann-Whitney rank AUC with midranks for ties:
// (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg). Both classes required.
double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct Metrics {
    double auc = 0.0;
    double f1 = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;
};

// Predicted positive iff score >= threshold (boundary positive). Fills the
// confusion counts, the derived rates and the rank AUC; both classes required.
Metrics threshold_metrics(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& labels, double threshold = 0.5);

// Fold id per index, in [0, k). Per class, every fold receives floor(n_c/k)
// or ceil(n_c/k) members; remainders go to the least-loaded folds (ties to the
// lower fold index). Deterministic given the seed; every class needs >= k
// members.
std::vector<int> stratified_kfold(const std::vector<std::uint8_t>& labels, int k,
                                  std::uint64_t seed);

// sum(share_g * auc_g); shares must sum to 1 within 1e-6.
double weighted_total(const std::vector<double>& aucs, const std::vector<double>& shares);

// "59.8%" style one-decimal share, or "—" when n is 0.
std::string format_target_share(std::size_t targets, std::size_t n);

struct StratumCount {
    std::string name;
    std::size_t n = 0;
    std::size_t targets = 0;
    std::string target_share;  // formatted percentage
};

struct CohortStatistics {
    std::vector<StratumCount> strata;  // six rows, kAllStrata order
    StratumCount remainder;            // sex other_unknown
    StratumCount total;
};

// Core tabulation; row_strata[i] is nullopt for remainder-bucket rows.
CohortStatistics tabulate_cohort(const std::vector<std::optional<StratumId>>& row_strata,
                                 const std::vector<std::uint8_t>& labels);
CohortStatistics cohort_statistics(const std::vector<CohortLabel>& cohort, const EventStore& store);

// Stratum per feature row from the participant table and the cohort index
// dates; nullopt marks the remainder bucket.
std::vector<std::optional<StratumId>> feature_row_strata(const EventStore& store,
                                                         const std::vector<CohortLabel>& cohort,
                                                         const RecencyFeatureMatrix& features);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// ROC sweep over distinct score thresholds, (0,0) first and (1,1) last,
// evenly thinned to at most max_points points.
std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& labels,
                                 std::size_t max_points = 512);

// Two-stage screen re-run inside each training fold, so held-out rows never
// influence feature choice. Absent in paper mode, where one full-cohort
// selection upstream fixes the matrix columns.
struct FoldSelectionConfig {
    QuotaConfig quotas;
    int k = 100;
    GBDTParams stage2;  // screening model
};

struct BenchmarkConfig {
    int n_folds = 10;
    double threshold = 0.5;
    GBDTParams model;
    // Per-regime hyperparameters keyed by regime name ("global" or a stratum
    // token); regimes not listed fall back to `model`. Filled from the tune
    // stage artifact.
    std::map<std::string, GBDTParams> regime_params;
    bool tune = false;  // run TPE per regime inside the benchmark instead
    SearchSpace space = SearchSpace::defaults();
    TPEConfig tpe;
    int tuning_folds = 3;  // inner CV folds behind the tuning objective
    std::optional<FoldSelectionConfig> fold_selection;
    std::uint64_t seed = 0;

    void validate() const;
};

// One training regime: the global model or one stratum model.
struct RegimeResult {
    std::string name;
    std::vector<std::size_t> rows;  // indices into the benchmark feature matrix
    int folds_used = 0;
    GBDTParams params;          // tuned when tuning ran, resolved defaults otherwise
    std::vector<Trial> trials;  // tuning history, empty when tuning was skipped
    std::vector<double> oof_scores;     // aligned with rows
    Metrics pooled;                     // pooled out-of-fold metrics
    std::vector<Metrics> fold_metrics;  // per held-out fold
    double fold_auc_mean = 0.0;
    double fold_auc_std = 0.0;  // population std over folds
};

struct StratumComparison {
    StratumId stratum = StratumId::male_18_40;
    std::size_t n = 0;
    std::size_t targets = 0;
    bool evaluated = false;   // false when a class is too small to cross-validate
    double share = 0.0;       // of rows across evaluated strata
    double auc_global = 0.0;  // global model, pooled OOF restricted to the stratum
    double auc_group = 0.0;   // stratum model, pooled OOF
    double delta = 0.0;       // group - global
};

struct GroupReport {
    CohortStatistics statistics;
    RegimeResult global;
    std::vector<RegimeResult> groups;       // evaluated strata only, stratum order
    std::vector<StratumComparison> strata;  // six rows, kAllStrata order
    double weighted_global = 0.0;
    double weighted_group = 0.0;
    double weighted_delta = 0.0;
    std::size_t remainder_n = 0;
    std::optional<double> remainder_auc;  // global model on the remainder bucket
    std::vector<RocPoint> roc;            // global model, pooled OOF
};

// Cross-validates one global model on all rows and one model per stratum on
// its rows. Regime hyperparameters come from regime_params, or from TPE run
// inside the benchmark when config.tune is set. The global model's
// per-stratum AUC comes from its pooled out-of-fold predictions; weighted
// totals use cohort shares over the evaluated strata. Strata with fewer than
// two rows in either class are excluded with a warning; participants outside
// the six strata form a remainder bucket scored by the global model only.
// Deterministic given config.seed, independent of the worker count.
GroupReport run_benchmark(const EventStore& store, const std::vector<CohortLabel>& cohort,
                          const RecencyFeatureMatrix& features, const BenchmarkConfig& config,
                          int workers = 1);

struct RegimeTuning {
    std::string name;  // "global" or a stratum token
    GBDTParams params;
    std::vector<Trial> trials;
};

// TPE per regime (global plus every stratum with at least two rows per
// class), each trial scored by mean inner-CV AUC under the same fold and
// selection protocol as run_benchmark. config.tune is ignored here.
std::vector<RegimeTuning> tune_regimes(const EventStore& store,
                                       const std::vector<CohortLabel>& cohort,
                                       const RecencyFeatureMatrix& features,
                                       const BenchmarkConfig& config, int workers = 1);

}  // namespace strata
