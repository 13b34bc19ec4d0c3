#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "strata/ehr.hpp"
#include "strata/stratum.hpp"

namespace strata {

// Cohort composition defaults: six-stratum shares and per-stratum target
// rates taken from the reference study population (17,560 matched adults).
inline constexpr std::array<double, kNumStrata> kDefaultStrataProportions = {
    291.0 / 17560.0, 1184.0 / 17560.0, 3566.0 / 17560.0,
    1295.0 / 17560.0, 4089.0 / 17560.0, 7135.0 / 17560.0,
};
inline constexpr std::array<double, kNumStrata> kDefaultStratumTargetRates = {
    174.0 / 291.0, 598.0 / 1184.0, 1782.0 / 3566.0,
    619.0 / 1295.0, 2039.0 / 4089.0, 3568.0 / 7135.0,
};

// A concept made informative within one stratum: it occurs with
// target_prevalence among that stratum's targets and control_prevalence among
// its controls. Elsewhere it behaves like background noise. When present, the
// most recent occurrence sits `recency_mean_days` before the person's anchor
// date on average (geometric draw), so recency itself carries signal.
struct PlantedSignal {
    StratumId stratum = StratumId::male_18_40;
    std::string concept_code;
    double target_prevalence = 0.0;
    double control_prevalence = 0.0;
    double recency_mean_days = 90.0;
};

struct SynthConfig {
    int n_participants = 10000;
    // conditions, procedures, medications
    std::array<int, 3> n_concepts_per_domain = {1500, 2000, 1500};
    // Shares of the six strata; must sum to <= 1, remainder becomes
    // sex other_unknown.
    std::array<double, kNumStrata> strata_proportions = kDefaultStrataProportions;
    std::vector<PlantedSignal> planted_signals;
    std::vector<std::string> crs_codes = {"CRS420", "CRS421", "CRS422"};
    // Overall target share; per-stratum rates are tilted so that the default
    // 0.5 reproduces the reference cohort's per-stratum target percentages.
    double target_fraction = 0.5;
    // Presence probability of every non-planted concept, equal in both groups.
    double background_prevalence = 0.004;
    std::uint64_t seed = 0;

    double stratum_target_rate(StratumId s) const;
    void validate() const;
};

struct GroundTruth {
    std::vector<std::string> person_ids;
    std::vector<std::uint8_t> true_label;
    std::vector<PlantedSignal> planted;
};

struct SynthData {
    struct EventRow {
        std::int32_t person;
        std::int32_t concept_id;  // index into concept_codes, or CRS index past its end
        Date date;
    };

    std::vector<Participant> participants;
    std::vector<EventRow> events;
    std::vector<std::string> concept_codes;  // dictionary (planted + background)
    std::vector<Domain> concept_domains;
    std::vector<std::string> crs_codes;  // referenced by concept index >= dictionary size
    GroundTruth truth;

    const std::string& code_of(std::int32_t concept_id) const {
        return concept_id < static_cast<std::int32_t>(concept_codes.size())
                   ? concept_codes[concept_id]
                   : crs_codes[concept_id - concept_codes.size()];
    }
    Domain domain_of(std::int32_t concept_id) const {
        return concept_id < static_cast<std::int32_t>(concept_codes.size())
                   ? concept_domains[concept_id]
                   : Domain::condition;
    }
};

// Deterministic: the seed fully determines the output, and each person's data
// comes from a stream keyed by (seed, person index) so it is independent of
// generation order.
SynthData generate(const SynthConfig& config);

struct SynthPaths {
    std::string participants;
    std::string events;
    std::string ground_truth;
    std::string planted_concepts;
};

void write_synth(const SynthData& data, const SynthPaths& paths);

std::string concept_code_name(Domain d, int index);

// Picks `per_stratum` distinct dictionary concepts per stratum, cycling
// domains, and plants them with the given prevalences.
std::vector<PlantedSignal> default_planted_signals(const std::array<int, 3>& n_concepts_per_domain,
                                                   int per_stratum, double target_prevalence,
                                                   double control_prevalence,
                                                   double recency_mean_days = 90.0);

// `count` concepts planted identically in every stratum: the
// null-heterogeneity control, where stratum models have nothing extra to
// learn.
std::vector<PlantedSignal> shared_planted_signals(const std::array<int, 3>& n_concepts_per_domain,
                                                  int count, double target_prevalence,
                                                  double control_prevalence,
                                                  double recency_mean_days = 90.0);

}  // namespace strata
