#include "strata/tune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "strata/common.hpp"

namespace strata {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_cdf(double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

double transform(const ParamSpec& spec, double x) {
    return spec.kind == ParamKind::log_uniform ? std::log(x) : x;
}

double untransform(const ParamSpec& spec, double x) {
    return spec.kind == ParamKind::log_uniform ? std::exp(x) : x;
}

// One transformed dimension of a Parzen mixture with equally weighted
// truncated-Gaussian components.
struct ParzenMixture {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> mu;
    std::vector<double> bw;

    static ParzenMixture fit(std::vector<double> obs, double lo, double hi) {
        ParzenMixture m;
        m.lo = lo;
        m.hi = hi;
        std::sort(obs.begin(), obs.end());
        const double range = hi - lo;
        const auto n = obs.size();
        const double bw_min = range / std::min<double>(100.0, static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            double left = i == 0 ? lo : obs[i - 1];
            double right = i + 1 == n ? hi : obs[i + 1];
            double bw = std::max(obs[i] - left, right - obs[i]);
            m.mu.push_back(obs[i]);
            m.bw.push_back(std::clamp(bw, bw_min, range));
        }
        return m;
    }

    // Uniform density over the bounds when there are no observations.
    double density(double x) const {
        if (mu.empty()) return 1.0 / (hi - lo);
        double total = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            constexpr double kSqrt2Pi = 2.5066282746310002;
            double z = (x - mu[i]) / bw[i];
            double mass = normal_cdf((hi - mu[i]) / bw[i]) - normal_cdf((lo - mu[i]) / bw[i]);
            if (mass <= 0.0) continue;
            total += std::exp(-0.5 * z * z) / (bw[i] * kSqrt2Pi) / mass;
        }
        return total / static_cast<double>(mu.size());
    }

    double sample(RngStream& rng) const {
        if (mu.empty()) return rng.uniform(lo, hi);
        auto i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(mu.size()) - 1));
        for (int attempt = 0; attempt < 100; ++attempt) {
            double x = mu[i] + bw[i] * rng.normal();
            if (x >= lo && x <= hi) return x;
        }
        return std::clamp(mu[i], lo, hi);
    }
};

double emit(const ParamSpec& spec, double transformed) {
    double x = std::clamp(untransform(spec, transformed), spec.lo, spec.hi);
    if (spec.kind == ParamKind::int_uniform) x = std::clamp(std::round(x), spec.lo, spec.hi);
    return x;
}

std::vector<double> uniform_point(const SearchSpace& space, RngStream& rng) {
    std::vector<double> point;
    point.reserve(space.params.size());
    for (const auto& spec : space.params) {
        if (spec.kind == ParamKind::int_uniform) {
            point.push_back(static_cast<double>(
                rng.uniform_int(static_cast<std::int64_t>(spec.lo), static_cast<std::int64_t>(spec.hi))));
        } else {
            point.push_back(emit(spec, rng.uniform(transform(spec, spec.lo), transform(spec, spec.hi))));
        }
    }
    return point;
}

}  // namespace

std::string_view to_string(ParamKind k) {
    switch (k) {
        case ParamKind::int_uniform: return "int_uniform";
        case ParamKind::uniform: return "uniform";
        case ParamKind::log_uniform: return "log_uniform";
    }
    return "uniform";
}

SearchSpace SearchSpace::defaults() {
    SearchSpace space;
    space.params = {
        {"n_estimators", ParamKind::int_uniform, 100.0, 400.0},
        {"max_depth", ParamKind::int_uniform, 4.0, 12.0},
        {"learning_rate", ParamKind::log_uniform, 0.005, 0.1},
        {"subsample", ParamKind::uniform, 0.5, 1.0},
        {"colsample_bytree", ParamKind::uniform, 0.5, 1.0},
        {"reg_alpha", ParamKind::log_uniform, 1e-4, 1.0},
    };
    return space;
}

void SearchSpace::validate() const {
    if (params.empty()) throw ValidationError("tune: search space is empty");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamSpec& spec = params[i];
        if (spec.name.empty()) throw ValidationError("tune: unnamed search dimension");
        if (!(spec.lo < spec.hi)) {
            throw ValidationError("tune: dimension '" + spec.name + "' needs lo < hi");
        }
        if (spec.kind == ParamKind::log_uniform && spec.lo <= 0.0) {
            throw ValidationError("tune: log dimension '" + spec.name + "' needs positive bounds");
        }
        for (std::size_t j = i + 1; j < params.size(); ++j) {
            if (params[j].name == spec.name) {
                throw ValidationError("tune: duplicate search dimension '" + spec.name + "'");
            }
        }
    }
}

int SearchSpace::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

void TPEConfig::validate() const {
    if (n_trials < 1) throw ValidationError("tune: n_trials must be >= 1");
    if (!(gamma_fraction > 0.0 && gamma_fraction < 1.0)) {
        throw ValidationError("tune: gamma_fraction must be in (0, 1)");
    }
    // n_startup >= n_trials means every trial is a uniform draw, which is
    // plain random search; that is a valid configuration.
    if (n_startup < 0) throw ValidationError("tune: n_startup must be >= 0");
    if (n_candidates < 1) throw ValidationError("tune: n_candidates must be >= 1");
}

std::vector<double> tpe_suggest(const std::vector<Trial>& history, const SearchSpace& space,
                                const TPEConfig& config, RngStream& rng) {
    space.validate();
    config.validate();

    std::vector<std::size_t> complete;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i].complete) complete.push_back(i);
    }
    if (history.size() < static_cast<std::size_t>(config.n_startup) || complete.empty()) {
        return uniform_point(space, rng);
    }

    std::stable_sort(complete.begin(), complete.end(),
                     [&](std::size_t a, std::size_t b) { return history[a].objective > history[b].objective; });
    auto n_good = static_cast<std::size_t>(
        std::ceil(config.gamma_fraction * static_cast<double>(complete.size())));
    n_good = std::clamp<std::size_t>(n_good, 1, complete.size());

    std::vector<char> is_good(history.size(), 0);
    for (std::size_t i = 0; i < n_good; ++i) is_good[complete[i]] = 1;

    const auto dims = space.params.size();
    std::vector<ParzenMixture> good(dims);
    std::vector<ParzenMixture> bad(dims);
    for (std::size_t d = 0; d < dims; ++d) {
        const ParamSpec& spec = space.params[d];
        double lo = transform(spec, spec.lo);
        double hi = transform(spec, spec.hi);
        std::vector<double> good_obs;
        std::vector<double> bad_obs;
        for (std::size_t i = 0; i < history.size(); ++i) {
            (is_good[i] ? good_obs : bad_obs).push_back(transform(spec, history[i].point[d]));
        }
        good[d] = ParzenMixture::fit(std::move(good_obs), lo, hi);
        bad[d] = ParzenMixture::fit(std::move(bad_obs), lo, hi);
    }

    std::vector<double> best_point;
    double best_score = kNegInf;
    std::vector<double> candidate(dims);
    for (int k = 0; k < config.n_candidates; ++k) {
        double score = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            candidate[d] = good[d].sample(rng);
            score += std::log(std::max(good[d].density(candidate[d]), 1e-300)) -
                     std::log(std::max(bad[d].density(candidate[d]), 1e-300));
        }
        if (score > best_score) {
            best_score = score;
            best_point = candidate;
        }
    }
    std::vector<double> point(dims);
    for (std::size_t d = 0; d < dims; ++d) point[d] = emit(space.params[d], best_point[d]);
    return point;
}

OptimizeResult optimize(const std::function<double(const std::vector<double>&)>& objective,
                        const SearchSpace& space, const TPEConfig& config, std::uint64_t seed) {
    space.validate();
    config.validate();
    RngStream rng = RngStream::keyed(seed, "tpe");

    OptimizeResult result;
    for (int i = 0; i < config.n_trials; ++i) {
        Trial trial;
        trial.point = tpe_suggest(result.history, space, config, rng);
        try {
            trial.objective = objective(trial.point);
            trial.complete = true;
        } catch (const std::exception& e) {
            trial.objective = kNegInf;
            trial.complete = false;
            log::warn(strfmt("tune: trial %d failed: %s", i, e.what()));
        }
        result.history.push_back(std::move(trial));
    }

    const Trial* best = nullptr;
    for (const Trial& t : result.history) {
        if (t.complete && (!best || t.objective > best->objective)) best = &t;
    }
    if (!best) throw PipelineError("tune: every trial failed");
    result.best = *best;
    return result;
}

GBDTParams apply_point(const SearchSpace& space, const std::vector<double>& point, GBDTParams base) {
    if (point.size() != space.params.size()) {
        throw ValidationError("tune: point does not match the search space");
    }
    for (std::size_t d = 0; d < space.params.size(); ++d) {
        const std::string& name = space.params[d].name;
        double v = point[d];
        if (name == "n_estimators") {
            base.n_estimators = static_cast<int>(v);
        } else if (name == "max_depth") {
            base.max_depth = static_cast<int>(v);
        } else if (name == "learning_rate") {
            base.learning_rate = v;
        } else if (name == "subsample") {
            base.subsample = v;
        } else if (name == "colsample_bytree") {
            base.colsample_bytree = v;
        } else if (name == "reg_alpha") {
            base.reg_alpha = v;
        } else {
            throw ValidationError("tune: unknown tuned parameter '" + name + "'");
        }
    }
    return base;
}

}  // namespace strata
