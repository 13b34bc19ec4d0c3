#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "strata/boosting.hpp"
#include "strata/rng.hpp"

namespace strata {

enum class ParamKind { int_uniform, uniform, log_uniform };

std::string_view to_string(ParamKind k);

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::uniform;
    double lo = 0.0;
    double hi = 1.0;
};

struct SearchSpace {
    std::vector<ParamSpec> params;

    // The six tuned GBDT dimensions with bounds wide enough to contain every
    // per-stratum optimum reported for the reference models.
    static SearchSpace defaults();
    void validate() const;
    int index_of(std::string_view name) const;  // -1 if absent
};

struct Trial {
    std::vector<double> point;  // aligned with SearchSpace::params
    double objective = 0.0;     // -inf for failed trials
    bool complete = false;
};

struct TPEConfig {
    int n_trials = 100;
    double gamma_fraction = 0.25;
    int n_startup = 20;
    int n_candidates = 24;

    void validate() const;
};

// One TPE proposal. Uniform while history is shorter than n_startup;
// afterwards the best ceil(gamma_fraction * #complete) trials form the good
// density l and everything else (failed trials included) the bad density g,
// each a per-dimension truncated-Gaussian Parzen mixture (log dimensions in
// log space); of n_candidates draws from l the one maximizing l/g wins.
// Integer dimensions are rounded on emission; points always lie in bounds.
std::vector<double> tpe_suggest(const std::vector<Trial>& history, const SearchSpace& space,
                                const TPEConfig& config, RngStream& rng);

struct OptimizeResult {
    Trial best;
    std::vector<Trial> history;
};

// Runs exactly n_trials sequential evaluations; objective exceptions mark the
// trial failed. Deterministic given the seed and a pure objective.
OptimizeResult optimize(const std::function<double(const std::vector<double>&)>& objective,
                        const SearchSpace& space, const TPEConfig& config, std::uint64_t seed);

// Overlays a tuned point on top of base params, matching dimensions by name
// (n_estimators, max_depth, learning_rate, subsample, colsample_bytree,
// reg_alpha).
GBDTParams apply_point(const SearchSpace& space, const std::vector<double>& point, GBDTParams base);

}  // namespace strata
