#include "strata/select.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <boost/math/special_functions/gamma.hpp>

#include "strata/common.hpp"

namespace strata {

namespace {

double chi_square_survival(double statistic, double dof) {
    if (statistic <= 0.0) return 1.0;
    return boost::math::gamma_q(dof / 2.0, statistic / 2.0);
}

}  // namespace

void QuotaConfig::validate() const {
    if (conditions < 0 || procedures < 0 || medications < 0) {
        throw ValidationError("select: quotas must be >= 0");
    }
}

int QuotaConfig::quota(Domain d) const {
    switch (d) {
        case Domain::condition: return conditions;
        case Domain::procedure: return procedures;
        case Domain::medication: return medications;
    }
    return 0;
}

std::vector<std::string> SelectedFeatureSet::codes() const {
    std::vector<std::string> out;
    out.reserve(features.size());
    for (const auto& f : features) out.push_back(f.concept_code);
    return out;
}

SelectedFeatureSet stage1_prevalence(const RecencyFeatureMatrix& matrix, const QuotaConfig& quotas) {
    quotas.validate();
    std::size_t n_targets = 0;
    for (auto y : matrix.labels) n_targets += y ? 1 : 0;
    std::size_t n_controls = matrix.n_rows() - n_targets;
    if (n_targets == 0 || n_controls == 0) {
        throw ValidationError("select: both classes are required for the prevalence screen");
    }

    struct Scored {
        std::size_t column;
        double score;
        double p_target;
    };
    std::vector<std::vector<Scored>> per_domain(3);
    for (std::size_t c = 0; c < matrix.n_columns(); ++c) {
        const FeatureColumn& col = matrix.columns[c];
        std::size_t hits_target = 0;
        std::size_t hits_control = 0;
        for (const auto& [row, value] : col.cells) {
            (matrix.labels[row] ? hits_target : hits_control) += 1;
        }
        double p_target = static_cast<double>(hits_target) / static_cast<double>(n_targets);
        double p_control = static_cast<double>(hits_control) / static_cast<double>(n_controls);
        per_domain[static_cast<int>(col.domain)].push_back(
            {c, std::abs(p_target - p_control), p_target});
    }

    SelectedFeatureSet out;
    for (int d = 0; d < 3; ++d) {
        auto& scored = per_domain[d];
        std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.p_target != b.p_target) return a.p_target > b.p_target;
            return matrix.columns[a.column].code < matrix.columns[b.column].code;
        });
        auto quota = static_cast<std::size_t>(quotas.quota(static_cast<Domain>(d)));
        if (scored.size() < quota) {
            log::warn(strfmt("select: domain %s has %zu concepts, below its quota of %zu",
                             std::string(to_string(static_cast<Domain>(d))).c_str(), scored.size(),
                             quota));
        }
        scored.resize(std::min(scored.size(), quota));
        for (const Scored& s : scored) {
            out.features.push_back({matrix.columns[s.column].code, static_cast<Domain>(d), 1, s.score});
        }
    }
    std::sort(out.features.begin(), out.features.end(),
              [](const SelectedFeature& a, const SelectedFeature& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.concept_code < b.concept_code;
              });
    return out;
}

SelectedFeatureSet stage2_gain(const RecencyFeatureMatrix& stage1_matrix, const GBDTParams& params,
                               int k, int workers) {
    if (stage1_matrix.n_columns() == 0) {
        throw ValidationError("select: stage-1 set is empty, nothing to rank");
    }
    GBDTModel model = train(stage1_matrix, params, workers);
    return stage2_rank(model, stage1_matrix, k);
}

SelectedFeatureSet stage2_rank(const GBDTModel& model, const RecencyFeatureMatrix& stage1_matrix,
                               int k) {
    if (k < 1) throw ValidationError("select: stage-2 k must be >= 1");
    if (model.feature_names.size() != stage1_matrix.n_columns())
        throw ValidationError(strfmt("select: model has %zu features but the matrix %zu columns",
                                     model.feature_names.size(), stage1_matrix.n_columns()));
    for (std::size_t c = 0; c < model.feature_names.size(); ++c)
        if (model.feature_names[c] != stage1_matrix.columns[c].code)
            throw ValidationError("select: model feature order differs from the matrix");
    std::vector<double> gains = gain_importance(model);

    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < gains.size(); ++c) {
        if (gains[c] > 0.0) order.push_back(c);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (gains[a] != gains[b]) return gains[a] > gains[b];
        return stage1_matrix.columns[a].code < stage1_matrix.columns[b].code;
    });
    if (order.size() < static_cast<std::size_t>(k)) {
        log::warn(strfmt("select: only %zu features carry split gain, below the requested %d",
                         order.size(), k));
    } else {
        order.resize(k);
    }

    SelectedFeatureSet out;
    for (std::size_t c : order) {
        out.features.push_back(
            {stage1_matrix.columns[c].code, stage1_matrix.columns[c].domain, 2, gains[c]});
    }
    return out;
}

double shap_coverage(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                     const std::vector<std::string>& selected, int workers) {
    std::vector<double> importance = mean_abs_contributions(model, matrix, workers);
    double total = 0.0;
    for (double v : importance) total += v;
    if (total <= 0.0) {
        log::warn("select: model attribution is identically zero; coverage defined as 1");
        return 1.0;
    }
    std::unordered_set<std::string_view> keep(selected.begin(), selected.end());
    double covered = 0.0;
    for (std::size_t f = 0; f < importance.size(); ++f) {
        if (keep.count(model.feature_names[f])) covered += importance[f];
    }
    return covered / total;
}

KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& samples) {
    if (samples.size() < 2) throw ValidationError("kruskal_wallis: need at least two groups");
    std::size_t n_total = 0;
    for (const auto& group : samples) {
        if (group.empty()) throw ValidationError("kruskal_wallis: empty group");
        n_total += group.size();
    }

    std::vector<std::pair<double, std::size_t>> pooled;  // (value, group)
    pooled.reserve(n_total);
    for (std::size_t gi = 0; gi < samples.size(); ++gi) {
        for (double v : samples[gi]) pooled.emplace_back(v, gi);
    }
    std::sort(pooled.begin(), pooled.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const auto n = static_cast<double>(n_total);
    std::vector<double> rank_sum(samples.size(), 0.0);
    double tie_mass = 0.0;  // sum of t^3 - t over tie groups
    for (std::size_t i = 0; i < pooled.size();) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
        const auto t = static_cast<double>(j - i);
        double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].second] += midrank;
        tie_mass += t * t * t - t;
        i = j;
    }

    double h = 0.0;
    for (std::size_t gi = 0; gi < samples.size(); ++gi) {
        h += rank_sum[gi] * rank_sum[gi] / static_cast<double>(samples[gi].size());
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    double correction = 1.0 - tie_mass / (n * n * n - n);
    if (correction <= 0.0) return {0.0, 1.0};  // every pooled value identical
    h /= correction;
    if (h < 0.0) h = 0.0;  // rounding guard near the all-tied boundary

    double dof = static_cast<double>(samples.size()) - 1.0;
    return {h, chi_square_survival(h, dof)};
}

std::vector<FeatureHeterogeneity> stratum_heterogeneity(const RecencyFeatureMatrix& matrix,
                                                        const std::vector<int>& row_strata,
                                                        int workers) {
    if (row_strata.size() != matrix.n_rows()) {
        throw ValidationError("heterogeneity: row_strata length must match matrix rows");
    }
    int max_stratum = -1;
    for (int s : row_strata) max_stratum = std::max(max_stratum, s);
    std::vector<std::size_t> group_size(max_stratum + 1, 0);
    for (int s : row_strata) {
        if (s >= 0) group_size[s] += 1;
    }
    std::vector<int> group_of(group_size.size(), -1);
    std::vector<std::size_t> kept_sizes;
    for (std::size_t s = 0; s < group_size.size(); ++s) {
        if (group_size[s] >= 2) {
            group_of[s] = static_cast<int>(kept_sizes.size());
            kept_sizes.push_back(group_size[s]);
        } else if (group_size[s] > 0) {
            log::warn(strfmt("heterogeneity: stratum %zu has %zu members, excluded from testing", s,
                             group_size[s]));
        }
    }

    std::vector<FeatureHeterogeneity> out(matrix.n_columns());
    if (kept_sizes.size() < 2) {
        log::warn("heterogeneity: fewer than two usable strata; all tests report H = 0, p = 1");
        for (std::size_t c = 0; c < matrix.n_columns(); ++c) {
            out[c] = {matrix.columns[c].code, {0.0, 1.0}};
        }
        return out;
    }

    // Slot of each row inside its group's value list, fixed across columns.
    std::vector<std::size_t> slot(row_strata.size(), SIZE_MAX);
    {
        std::vector<std::size_t> next(kept_sizes.size(), 0);
        for (std::size_t r = 0; r < row_strata.size(); ++r) {
            int s = row_strata[r];
            if (s < 0 || group_of[s] < 0) continue;
            slot[r] = next[group_of[s]]++;
        }
    }

    parallel_for(matrix.n_columns(), workers, [&](std::size_t begin, std::size_t end) {
        std::vector<std::vector<double>> groups(kept_sizes.size());
        for (std::size_t c = begin; c < end; ++c) {
            // All-sentinel baseline, observed cells overwrite their slots.
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                groups[gi].assign(kept_sizes[gi], static_cast<double>(kSentinel));
            }
            for (const auto& [row, value] : matrix.columns[c].cells) {
                int s = row_strata[row];
                if (s < 0 || group_of[s] < 0) continue;
                groups[group_of[s]][slot[row]] = static_cast<double>(value);
            }
            out[c] = {matrix.columns[c].code, kruskal_wallis(groups)};
        }
    });
    return out;
}

int count_significant(const std::vector<FeatureHeterogeneity>& tests, double alpha) {
    int n = 0;
    for (const auto& t : tests) n += t.test.p < alpha ? 1 : 0;
    return n;
}

PrevalenceComparison compare_prevalence(std::int64_t k1, std::int64_t n1, std::int64_t k2,
                                        std::int64_t n2) {
    if (n1 < 1 || n2 < 1) throw ValidationError("compare_prevalence: group sizes must be >= 1");
    if (k1 < 0 || k1 > n1 || k2 < 0 || k2 > n2) {
        throw ValidationError("compare_prevalence: counts must satisfy 0 <= k <= n");
    }
    double p1 = static_cast<double>(k1) / static_cast<double>(n1);
    double p2 = static_cast<double>(k2) / static_cast<double>(n2);
    double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
    double variance = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2);

    PrevalenceComparison out;
    out.diff = p1 - p2;
    out.z = variance > 0.0 ? (p1 - p2) / std::sqrt(variance) : 0.0;
    out.p = chi_square_survival(out.z * out.z, 1.0);
    return out;
}

}  // namespace strata
