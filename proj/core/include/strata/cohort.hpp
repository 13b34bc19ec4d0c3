#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "strata/ehr.hpp"

namespace strata {

struct PhenotypeConfig {
    std::vector<std::string> crs_code_set;
    int min_code_count = 2;
    std::int64_t qualifying_span_days = 730;

    void validate() const;
};

enum class CohortGroup { target, control };

std::string_view to_string(CohortGroup g);
CohortGroup parse_cohort_group(std::string_view text, std::string_view where);

struct CohortLabel {
    std::string person_id;
    CohortGroup label = CohortGroup::control;
    Date index_date;
    std::string matched_to;  // empty for targets
};

// A person is a target iff at least min_code_count CRS-coded events fall
// within one qualifying_span_days window; index_date is the first event of the
// earliest qualifying window. Non-targets are omitted.
std::vector<CohortLabel> phenotype(const EventStore& store, const PhenotypeConfig& config);

// low: count < 12, mid: 12 <= count <= 24, high: count > 24, where count is
// the number of distinct event dates in the window.
enum class VisitFrequencyCategory { low, mid, high };

std::string_view to_string(VisitFrequencyCategory v);
VisitFrequencyCategory visit_category_from_count(std::int64_t distinct_dates);

std::int64_t distinct_event_dates(const EventStore& store, std::int32_t person, Date end_date,
                                  std::int64_t window_days);
VisitFrequencyCategory visit_frequency_category(const EventStore& store, std::string_view person_id,
                                                Date end_date, std::int64_t window_days);

// Ordered categorical covariates; rows carry one level index per covariate.
struct CovariateSchema {
    struct Covariate {
        std::string name;
        std::vector<std::string> levels;
    };
    std::vector<Covariate> covariates;

    std::size_t n_columns() const;
    std::size_t offset(std::size_t covariate) const;
    int level_index(std::size_t covariate, std::string_view value) const;
};

struct PropensityModel {
    CovariateSchema schema;
    double intercept = 0.0;
    std::vector<double> coefficients;  // one per one-hot level, schema order
    int n_iterations = 0;
    double gradient_norm = 0.0;

    double margin(const std::vector<int>& levels) const;
    double score(const std::vector<int>& levels) const;  // in (0,1)
};

// Newton-fitted logistic regression on one-hot covariates with a ridge of
// 1e-6 on the non-intercept coefficients (all levels are kept, the ridge makes
// the problem strictly convex). Converges when the largest coefficient change
// drops below 1e-8 or the largest gradient entry below 1e-10 per row; throws
// PipelineError after 100 iterations.
PropensityModel fit_propensity(const CovariateSchema& schema,
                               const std::vector<std::vector<int>>& rows,
                               const std::vector<std::uint8_t>& labels);

struct ScoredPerson {
    std::string person_id;
    double score = 0.0;
};

struct MatchedPair {
    std::string target_id;
    std::string control_id;
    double target_score = 0.0;
    double control_score = 0.0;
};

struct MatchResult {
    std::vector<MatchedPair> pairs;
    std::vector<std::string> unmatched_targets;
};

// Greedy 1:1 nearest-neighbor matching without replacement. Targets are
// processed in descending score (ties by smaller person_id); each takes the
// unused control with minimal |score difference|, ties by smaller control
// person_id. Runs until targets or controls are exhausted.
MatchResult match_by_score(std::vector<ScoredPerson> targets, std::vector<ScoredPerson> controls);

// Covariate rows for propensity fitting and balance checks. Target rows are
// evaluated at the index date; candidate controls (every non-target person
// with at least one recorded event) at their last event date, which stands in
// for the index date they receive only once matched.
struct MatchingData {
    CovariateSchema schema;
    std::vector<std::string> target_ids;
    std::vector<Date> target_index_dates;
    std::vector<std::vector<int>> target_rows;
    std::vector<std::string> control_ids;
    std::vector<std::vector<int>> control_rows;
};

MatchingData build_matching_input(const EventStore& store, const std::vector<CohortLabel>& targets,
                                  std::int64_t window_days = 730);

struct CovariateBalance {
    std::string covariate;
    double pre = 0.0;   // targets vs all candidate controls
    double post = 0.0;  // matched targets vs matched controls
};

// Standardized mean difference per covariate: max over its one-hot levels of
// |p1 - p2| / sqrt((p1(1-p1) + p2(1-p2)) / 2); 0 when both variances vanish.
double standardized_mean_difference(double p1, double p2);

std::vector<CovariateBalance> covariate_balance(const MatchingData& data, const MatchResult& match);

// Matched pairs as cohort rows: targets keep their index date, controls
// inherit their target's. Targets first, then controls, each sorted by id.
std::vector<CohortLabel> assemble_cohort(const std::vector<CohortLabel>& targets,
                                         const MatchResult& match);

}  // namespace strata
