#include "strata/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "strata/common.hpp"
#include "strata/stratum.hpp"

namespace strata {

namespace {

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

// Solves A x = b for symmetric positive-definite A (dense, row-major).
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= 0.0) throw PipelineError("propensity: covariate matrix is not positive definite");
        d = std::sqrt(d);
        a[j * n + j] = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / d;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    return b;
}

// log(1 + exp(m)) without overflow.
double log1pexp(double m) { return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }

}  // namespace

void PhenotypeConfig::validate() const {
    if (crs_code_set.empty()) throw ValidationError("phenotype: crs_code_set must not be empty");
    if (min_code_count < 1) throw ValidationError("phenotype: min_code_count must be >= 1");
    if (qualifying_span_days <= 0) throw ValidationError("phenotype: qualifying_span_days must be > 0");
}

std::string_view to_string(CohortGroup g) { return g == CohortGroup::target ? "target" : "control"; }

CohortGroup parse_cohort_group(std::string_view text, std::string_view where) {
    if (text == "target") return CohortGroup::target;
    if (text == "control") return CohortGroup::control;
    throw ValidationError(strfmt("%.*s: unknown label '%.*s'", static_cast<int>(where.size()),
                                 where.data(), static_cast<int>(text.size()), text.data()));
}

std::vector<CohortLabel> phenotype(const EventStore& store, const PhenotypeConfig& config) {
    config.validate();
    std::unordered_set<std::string_view> crs(config.crs_code_set.begin(), config.crs_code_set.end());

    std::vector<CohortLabel> targets;
    std::vector<Date> dates;
    for (std::int32_t person = 0; person < static_cast<std::int32_t>(store.n_participants()); ++person) {
        dates.clear();
        for (const Event& e : store.events_of(person)) {
            if (crs.count(e.concept_code)) dates.push_back(e.date);  // already date-sorted
        }
        if (static_cast<int>(dates.size()) < config.min_code_count) continue;
        std::size_t j = 0;
        for (std::size_t i = 0; i + config.min_code_count <= dates.size(); ++i) {
            if (j < i) j = i;
            // Same convention as EventStore windows: a span of N days covers
            // date differences 0 .. N-1.
            while (j + 1 < dates.size() &&
                   days_between(dates[j + 1], dates[i]) < config.qualifying_span_days) {
                ++j;
            }
            if (j - i + 1 >= static_cast<std::size_t>(config.min_code_count)) {
                targets.push_back({store.participant(person).person_id, CohortGroup::target,
                                   dates[i], ""});
                break;
            }
        }
    }
    return targets;
}

std::string_view to_string(VisitFrequencyCategory v) {
    switch (v) {
        case VisitFrequencyCategory::low: return "low";
        case VisitFrequencyCategory::mid: return "mid";
        case VisitFrequencyCategory::high: return "high";
    }
    return "low";
}

VisitFrequencyCategory visit_category_from_count(std::int64_t distinct_dates) {
    if (distinct_dates < 12) return VisitFrequencyCategory::low;
    if (distinct_dates <= 24) return VisitFrequencyCategory::mid;
    return VisitFrequencyCategory::high;
}

std::int64_t distinct_event_dates(const EventStore& store, std::int32_t person, Date end_date,
                                  std::int64_t window_days) {
    std::int64_t count = 0;
    Date prev{INT32_MIN};
    for (const Event& e : store.events_in_window(person, end_date, window_days)) {
        if (e.date != prev) {
            ++count;
            prev = e.date;
        }
    }
    return count;
}

VisitFrequencyCategory visit_frequency_category(const EventStore& store, std::string_view person_id,
                                                Date end_date, std::int64_t window_days) {
    return visit_category_from_count(
        distinct_event_dates(store, store.require_person(person_id), end_date, window_days));
}

std::size_t CovariateSchema::n_columns() const {
    std::size_t n = 0;
    for (const auto& c : covariates) n += c.levels.size();
    return n;
}

std::size_t CovariateSchema::offset(std::size_t covariate) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < covariate; ++c) n += covariates[c].levels.size();
    return n;
}

int CovariateSchema::level_index(std::size_t covariate, std::string_view value) const {
    const auto& levels = covariates[covariate].levels;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == value) return static_cast<int>(i);
    }
    return -1;
}

double PropensityModel::margin(const std::vector<int>& levels) const {
    if (levels.size() != schema.covariates.size()) {
        throw ValidationError("propensity: covariate row does not match schema");
    }
    double m = intercept;
    std::size_t offset = 0;
    for (std::size_t c = 0; c < levels.size(); ++c) {
        m += coefficients[offset + levels[c]];
        offset += schema.covariates[c].levels.size();
    }
    return m;
}

double PropensityModel::score(const std::vector<int>& levels) const { return sigmoid(margin(levels)); }

PropensityModel fit_propensity(const CovariateSchema& schema,
                               const std::vector<std::vector<int>>& rows,
                               const std::vector<std::uint8_t>& labels) {
    constexpr double kRidge = 1e-6;
    constexpr double kTol = 1e-8;
    constexpr int kMaxIterations = 100;

    if (rows.size() != labels.size()) throw ValidationError("propensity: rows/labels length mismatch");
    if (rows.empty()) throw ValidationError("propensity: no rows");
    std::size_t n_pos = 0;
    for (auto y : labels) n_pos += y ? 1 : 0;
    if (n_pos == 0 || n_pos == labels.size()) {
        throw ValidationError("propensity: both classes are required to fit");
    }

    const std::size_t n_cov = schema.covariates.size();
    const std::size_t dim = 1 + schema.n_columns();  // intercept first
    std::vector<std::size_t> offsets(n_cov);
    for (std::size_t c = 0; c < n_cov; ++c) offsets[c] = 1 + schema.offset(c);
    for (const auto& row : rows) {
        if (row.size() != n_cov) throw ValidationError("propensity: covariate row does not match schema");
        for (std::size_t c = 0; c < n_cov; ++c) {
            if (row[c] < 0 || row[c] >= static_cast<int>(schema.covariates[c].levels.size())) {
                throw ValidationError("propensity: covariate level outside schema");
            }
        }
    }

    std::vector<double> beta(dim, 0.0);
    std::vector<std::size_t> active(1 + n_cov);

    auto row_margin = [&](const std::vector<int>& row) {
        double m = beta[0];
        for (std::size_t c = 0; c < n_cov; ++c) m += beta[offsets[c] + row[c]];
        return m;
    };
    auto penalized_nll = [&] {
        double nll = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double m = row_margin(rows[i]);
            nll += log1pexp(m) - (labels[i] ? m : 0.0);
        }
        for (std::size_t j = 1; j < dim; ++j) nll += 0.5 * kRidge * beta[j] * beta[j];
        return nll;
    };

    double current_nll = penalized_nll();
    double grad_norm = 0.0;
    for (int iter = 1; iter <= kMaxIterations; ++iter) {
        std::vector<double> grad(dim, 0.0);
        std::vector<double> hess(dim * dim, 0.0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double p = sigmoid(row_margin(rows[i]));
            double g = p - (labels[i] ? 1.0 : 0.0);
            double w = std::max(p * (1.0 - p), 1e-12);
            active[0] = 0;
            for (std::size_t c = 0; c < n_cov; ++c) active[c + 1] = offsets[c] + rows[i][c];
            for (std::size_t a : active) {
                grad[a] += g;
                for (std::size_t b : active) hess[a * dim + b] += w;
            }
        }
        for (std::size_t j = 1; j < dim; ++j) {
            grad[j] += kRidge * beta[j];
            hess[j * dim + j] += kRidge;
        }
        // The all-levels one-hot design is rank deficient without the ridge;
        // give the intercept a vanishing ridge too so Cholesky stays stable.
        hess[0] += 1e-12;

        grad_norm = 0.0;
        for (double g : grad) grad_norm = std::max(grad_norm, std::abs(g));

        // Along the one-hot null directions the curvature is only the ridge,
        // so rounding-level gradients map to coefficient steps above kTol
        // forever; a vanished gradient is itself convergence.
        bool gradient_vanished = grad_norm < 1e-10 * static_cast<double>(rows.size());

        std::vector<double> neg_grad(dim);
        for (std::size_t j = 0; j < dim; ++j) neg_grad[j] = -grad[j];
        std::vector<double> step = cholesky_solve(hess, neg_grad, dim);

        double t = 1.0;
        std::vector<double> base = beta;
        double new_nll = current_nll;
        for (int halving = 0; halving < 40; ++halving) {
            for (std::size_t j = 0; j < dim; ++j) beta[j] = base[j] + t * step[j];
            new_nll = penalized_nll();
            if (new_nll <= current_nll + 1e-12) break;
            t *= 0.5;
        }
        current_nll = new_nll;

        double max_change = 0.0;
        for (std::size_t j = 0; j < dim; ++j) max_change = std::max(max_change, std::abs(t * step[j]));
        if (max_change < kTol || gradient_vanished) {
            PropensityModel model;
            model.schema = schema;
            model.intercept = beta[0];
            model.coefficients.assign(beta.begin() + 1, beta.end());
            model.n_iterations = iter;
            model.gradient_norm = grad_norm;
            return model;
        }
    }
    throw PipelineError(strfmt("propensity: Newton did not converge in %d iterations "
                               "(max |gradient| = %.3e)",
                               kMaxIterations, grad_norm));
}

MatchResult match_by_score(std::vector<ScoredPerson> targets, std::vector<ScoredPerson> controls) {
    std::stable_sort(targets.begin(), targets.end(), [](const ScoredPerson& a, const ScoredPerson& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.person_id < b.person_id;
    });
    std::map<double, std::set<std::string>> pool;
    for (auto& c : controls) pool[c.score].insert(std::move(c.person_id));

    MatchResult result;
    for (const auto& t : targets) {
        if (pool.empty()) {
            result.unmatched_targets.push_back(t.person_id);
            continue;
        }
        auto right = pool.lower_bound(t.score);
        auto pick = pool.end();
        if (right == pool.end()) {
            pick = std::prev(right);
        } else if (right == pool.begin()) {
            pick = right;
        } else {
            auto left = std::prev(right);
            double d_left = t.score - left->first;
            double d_right = right->first - t.score;
            if (d_left < d_right) {
                pick = left;
            } else if (d_right < d_left) {
                pick = right;
            } else {
                pick = *left->second.begin() < *right->second.begin() ? left : right;
            }
        }
        result.pairs.push_back({t.person_id, *pick->second.begin(), t.score, pick->first});
        pick->second.erase(pick->second.begin());
        if (pick->second.empty()) pool.erase(pick);
    }
    return result;
}

MatchingData build_matching_input(const EventStore& store, const std::vector<CohortLabel>& targets,
                                  std::int64_t window_days) {
    MatchingData data;

    std::unordered_set<std::string_view> target_set;
    for (const auto& t : targets) target_set.insert(t.person_id);

    // Evaluation date per person: targets at the index date, candidate
    // controls at their last recorded event (they have no index date yet).
    std::set<std::string> races;
    std::set<std::string> ethnicities;
    std::vector<std::pair<std::int32_t, Date>> control_eval;
    for (std::int32_t person = 0; person < static_cast<std::int32_t>(store.n_participants()); ++person) {
        const Participant& p = store.participant(person);
        if (target_set.count(p.person_id)) {
            races.insert(p.race);
            ethnicities.insert(p.ethnicity);
            continue;
        }
        auto events = store.events_of(person);
        if (events.empty()) continue;  // no observable history, ineligible as control
        races.insert(p.race);
        ethnicities.insert(p.ethnicity);
        control_eval.emplace_back(person, events.back().date);
    }

    data.schema.covariates = {
        {"sex", {"male", "female", "other_unknown"}},
        {"age_group", {"18_40", "40_60", "60plus"}},
        {"race", {races.begin(), races.end()}},
        {"ethnicity", {ethnicities.begin(), ethnicities.end()}},
        {"visit_frequency", {"low", "mid", "high"}},
    };

    auto make_row = [&](std::int32_t person, Date eval_date) {
        const Participant& p = store.participant(person);
        std::vector<int> row(5);
        row[0] = static_cast<int>(p.sex_at_birth);
        row[1] = age_bin(whole_years_between(p.birth_date, eval_date));
        row[2] = data.schema.level_index(2, p.race);
        row[3] = data.schema.level_index(3, p.ethnicity);
        row[4] = static_cast<int>(
            visit_category_from_count(distinct_event_dates(store, person, eval_date, window_days)));
        return row;
    };

    for (const auto& t : targets) {
        std::int32_t person = store.require_person(t.person_id);
        data.target_ids.push_back(t.person_id);
        data.target_index_dates.push_back(t.index_date);
        data.target_rows.push_back(make_row(person, t.index_date));
    }
    for (auto [person, eval_date] : control_eval) {
        data.control_ids.push_back(store.participant(person).person_id);
        data.control_rows.push_back(make_row(person, eval_date));
    }
    return data;
}

double standardized_mean_difference(double p1, double p2) {
    double pooled = (p1 * (1.0 - p1) + p2 * (1.0 - p2)) / 2.0;
    if (pooled <= 0.0) return 0.0;
    return std::abs(p1 - p2) / std::sqrt(pooled);
}

std::vector<CovariateBalance> covariate_balance(const MatchingData& data, const MatchResult& match) {
    std::unordered_set<std::string_view> matched_targets;
    std::unordered_set<std::string_view> matched_controls;
    for (const auto& pair : match.pairs) {
        matched_targets.insert(pair.target_id);
        matched_controls.insert(pair.control_id);
    }

    auto level_share = [](const std::vector<std::vector<int>>& rows,
                          const std::vector<char>& keep, std::size_t covariate, int level) {
        std::size_t n = 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!keep.empty() && !keep[i]) continue;
            ++n;
            hits += rows[i][covariate] == level ? 1 : 0;
        }
        return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
    };

    std::vector<char> target_matched(data.target_ids.size());
    for (std::size_t i = 0; i < data.target_ids.size(); ++i) {
        target_matched[i] = matched_targets.count(data.target_ids[i]) ? 1 : 0;
    }
    std::vector<char> control_matched(data.control_ids.size());
    for (std::size_t i = 0; i < data.control_ids.size(); ++i) {
        control_matched[i] = matched_controls.count(data.control_ids[i]) ? 1 : 0;
    }
    const std::vector<char> all;  // empty mask = keep every row

    std::vector<CovariateBalance> balance;
    for (std::size_t c = 0; c < data.schema.covariates.size(); ++c) {
        CovariateBalance entry;
        entry.covariate = data.schema.covariates[c].name;
        for (int l = 0; l < static_cast<int>(data.schema.covariates[c].levels.size()); ++l) {
            entry.pre = std::max(entry.pre,
                                 standardized_mean_difference(level_share(data.target_rows, all, c, l),
                                                              level_share(data.control_rows, all, c, l)));
            entry.post = std::max(
                entry.post,
                standardized_mean_difference(level_share(data.target_rows, target_matched, c, l),
                                             level_share(data.control_rows, control_matched, c, l)));
        }
        balance.push_back(std::move(entry));
    }
    return balance;
}

std::vector<CohortLabel> assemble_cohort(const std::vector<CohortLabel>& targets,
                                         const MatchResult& match) {
    std::unordered_map<std::string_view, Date> index_of;
    for (const auto& t : targets) index_of.emplace(t.person_id, t.index_date);

    std::vector<CohortLabel> cohort;
    cohort.reserve(match.pairs.size() * 2);
    std::vector<CohortLabel> controls;
    controls.reserve(match.pairs.size());
    for (const auto& pair : match.pairs) {
        auto it = index_of.find(pair.target_id);
        if (it == index_of.end()) {
            throw PipelineError("cohort: matched pair references unknown target '" + pair.target_id + "'");
        }
        cohort.push_back({pair.target_id, CohortGroup::target, it->second, ""});
        controls.push_back({pair.control_id, CohortGroup::control, it->second, pair.target_id});
    }
    auto by_id = [](const CohortLabel& a, const CohortLabel& b) { return a.person_id < b.person_id; };
    std::sort(cohort.begin(), cohort.end(), by_id);
    std::sort(controls.begin(), controls.end(), by_id);
    cohort.insert(cohort.end(), std::make_move_iterator(controls.begin()),
                  std::make_move_iterator(controls.end()));
    return cohort;
}

}  // namespace strata
