#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/boosting.hpp"
#include "strata/featurize.hpp"

namespace strata {

struct QuotaConfig {
    int conditions = 300;
    int procedures = 500;
    int medications = 300;

    void validate() const;
    int quota(Domain d) const;
};

struct SelectedFeature {
    std::string concept_code;
    Domain domain = Domain::condition;
    int stage = 1;  // 1 = prevalence screen, 2 = gain screen
    double score = 0.0;
};

struct SelectedFeatureSet {
    std::vector<SelectedFeature> features;  // rank order

    std::vector<std::string> codes() const;
};

// Coarse screen: per concept, score = |presence rate among targets - presence
// rate among controls| (presence = value != sentinel); per domain the
// quota-many highest scores survive. Ties break by higher target prevalence,
// then code.
SelectedFeatureSet stage1_prevalence(const RecencyFeatureMatrix& matrix, const QuotaConfig& quotas);

// Fine screen: one GBDT on the stage-1 matrix, features ranked by total split
// gain; the top k with positive gain survive.
SelectedFeatureSet stage2_gain(const RecencyFeatureMatrix& stage1_matrix, const GBDTParams& params,
                               int k = 100, int workers = 1);

// Ranking half of stage2_gain, for callers that keep the trained screening
// model (e.g. to reuse its attributions for coverage).
SelectedFeatureSet stage2_rank(const GBDTModel& model, const RecencyFeatureMatrix& stage1_matrix,
                               int k = 100);

// Share of total mean-|contribution| importance captured by `selected`;
// 1.0 (with a warning) when the model is constant.
double shap_coverage(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                     const std::vector<std::string>& selected, int workers = 1);

struct KruskalResult {
    double H = 0.0;
    double p = 1.0;
};

// Kruskal-Wallis rank test with midrank tie correction; p from the chi-square
// survival function with (#groups - 1) degrees of freedom.
KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& samples);

struct FeatureHeterogeneity {
    std::string concept_code;
    KruskalResult test;
};

// Per column, Kruskal-Wallis over the per-stratum value distributions
// (sentinel included as a value). row_strata holds a stratum index per row or
// -1 for the remainder bucket; strata with fewer than two rows are excluded.
std::vector<FeatureHeterogeneity> stratum_heterogeneity(const RecencyFeatureMatrix& matrix,
                                                        const std::vector<int>& row_strata,
                                                        int workers = 1);

int count_significant(const std::vector<FeatureHeterogeneity>& tests, double alpha = 0.05);

struct PrevalenceComparison {
    double diff = 0.0;  // k1/n1 - k2/n2
    double z = 0.0;
    double p = 1.0;
};

// Two-proportion chi-square test (pooled variance, no continuity correction).
PrevalenceComparison compare_prevalence(std::int64_t k1, std::int64_t n1, std::int64_t k2,
                                        std::int64_t n2);

}  // namespace strata
