#include "strata/evaluate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <unordered_map>
#include <utility>

#include "strata/common.hpp"
#include "strata/rng.hpp"

namespace strata {

double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw ValidationError(strfmt("auc: %zu scores vs %zu labels", scores.size(), labels.size()));
    std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (std::uint8_t y : labels) n_pos += y ? 1 : 0;
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ValidationError("auc requires both classes");
    for (double s : scores)
        if (std::isnan(s)) throw ValidationError("auc: NaN score");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]]) rank_pos += midrank;
        i = j;
    }
    double np = static_cast<double>(n_pos);
    double nn = static_cast<double>(n_neg);
    return (rank_pos - 0.5 * np * (np + 1.0)) / (np * nn);
}

Metrics threshold_metrics(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& labels, double threshold) {
    Metrics m;
    m.auc = auc(scores, labels);  // also validates sizes and class presence
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool predicted = scores[i] >= threshold;
        if (labels[i])
            (predicted ? m.tp : m.fn)++;
        else
            (predicted ? m.fp : m.tn)++;
    }
    m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
    double f1_denom = static_cast<double>(2 * m.tp + m.fp + m.fn);
    m.f1 = f1_denom > 0.0 ? 2.0 * static_cast<double>(m.tp) / f1_denom : 0.0;
    return m;
}

std::vector<int> stratified_kfold(const std::vector<std::uint8_t>& labels, int k,
                                  std::uint64_t seed) {
    if (k < 2) throw ValidationError(strfmt("stratified_kfold: k = %d, need at least 2", k));
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] ? 1 : 0].push_back(i);
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < static_cast<std::size_t>(k))
            throw ValidationError(strfmt(
                "stratified_kfold: class %d has %zu members, fewer than %d folds", c,
                by_class[c].size(), k));

    std::vector<int> fold(labels.size(), -1);
    std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);
    for (int c = 0; c < 2; ++c) {
        auto idx = by_class[c];
        RngStream rng = RngStream::keyed(seed, "kfold", static_cast<std::uint64_t>(c));
        rng.shuffle(idx);

        std::size_t base = idx.size() / static_cast<std::size_t>(k);
        std::size_t rem = idx.size() % static_cast<std::size_t>(k);
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), base);
        std::vector<int> by_load(static_cast<std::size_t>(k));
        std::iota(by_load.begin(), by_load.end(), 0);
        std::stable_sort(by_load.begin(), by_load.end(),
                         [&](int a, int b) { return load[a] < load[b]; });
        for (std::size_t r = 0; r < rem; ++r) counts[by_load[r]]++;

        std::size_t cursor = 0;
        for (int f = 0; f < k; ++f) {
            for (std::size_t t = 0; t < counts[f]; ++t) fold[idx[cursor++]] = f;
            load[f] += counts[f];
        }
    }
    return fold;
}

double weighted_total(const std::vector<double>& aucs, const std::vector<double>& shares) {
    if (aucs.size() != shares.size())
        throw ValidationError(strfmt("weighted_total: %zu aucs vs %zu shares", aucs.size(),
                                     shares.size()));
    double sum = 0.0;
    for (double s : shares) sum += s;
    if (std::abs(sum - 1.0) > 1e-6)
        throw ValidationError(strfmt("weighted_total: shares sum to %.9f, expected 1", sum));
    double total = 0.0;
    for (std::size_t i = 0; i < aucs.size(); ++i) total += shares[i] * aucs[i];
    return total;
}

std::string format_target_share(std::size_t targets, std::size_t n) {
    if (n == 0) return "—";
    return strfmt("%.1f%%", 100.0 * static_cast<double>(targets) / static_cast<double>(n));
}

namespace {

StratumCount finish_count(std::string name, std::size_t n, std::size_t targets) {
    StratumCount row;
    row.name = std::move(name);
    row.n = n;
    row.targets = targets;
    row.target_share = format_target_share(targets, n);
    return row;
}

}  // namespace

CohortStatistics tabulate_cohort(const std::vector<std::optional<StratumId>>& row_strata,
                                 const std::vector<std::uint8_t>& labels) {
    if (row_strata.size() != labels.size())
        throw ValidationError(strfmt("tabulate_cohort: %zu strata vs %zu labels",
                                     row_strata.size(), labels.size()));
    std::array<std::size_t, kNumStrata> n{};
    std::array<std::size_t, kNumStrata> targets{};
    std::size_t rem_n = 0;
    std::size_t rem_targets = 0;
    for (std::size_t i = 0; i < row_strata.size(); ++i) {
        if (row_strata[i]) {
            auto s = static_cast<std::size_t>(*row_strata[i]);
            n[s]++;
            targets[s] += labels[i] ? 1 : 0;
        } else {
            rem_n++;
            rem_targets += labels[i] ? 1 : 0;
        }
    }

    CohortStatistics stats;
    std::size_t total_n = 0;
    std::size_t total_targets = 0;
    for (int s = 0; s < kNumStrata; ++s) {
        stats.strata.push_back(
            finish_count(std::string(display_name(kAllStrata[s])), n[s], targets[s]));
        total_n += n[s];
        total_targets += targets[s];
    }
    stats.remainder = finish_count("Other / unknown", rem_n, rem_targets);
    stats.total = finish_count("Total", total_n + rem_n, total_targets + rem_targets);
    return stats;
}

CohortStatistics cohort_statistics(const std::vector<CohortLabel>& cohort,
                                   const EventStore& store) {
    std::vector<std::optional<StratumId>> row_strata;
    std::vector<std::uint8_t> labels;
    row_strata.reserve(cohort.size());
    labels.reserve(cohort.size());
    for (const auto& member : cohort) {
        std::int32_t person = store.require_person(member.person_id);
        row_strata.push_back(assign_stratum(store.participant(person), member.index_date));
        labels.push_back(member.label == CohortGroup::target ? 1 : 0);
    }
    return tabulate_cohort(row_strata, labels);
}

std::vector<std::optional<StratumId>> feature_row_strata(const EventStore& store,
                                                         const std::vector<CohortLabel>& cohort,
                                                         const RecencyFeatureMatrix& features) {
    std::unordered_map<std::string_view, const CohortLabel*> by_person;
    by_person.reserve(cohort.size());
    for (const auto& member : cohort) by_person.emplace(member.person_id, &member);

    std::vector<std::optional<StratumId>> row_strata(features.n_rows());
    for (std::size_t i = 0; i < features.n_rows(); ++i) {
        auto it = by_person.find(features.row_ids[i]);
        if (it == by_person.end())
            throw ValidationError(strfmt("feature row %s is not in the cohort",
                                         features.row_ids[i].c_str()));
        std::int32_t person = store.require_person(features.row_ids[i]);
        row_strata[i] = assign_stratum(store.participant(person), it->second->index_date);
    }
    return row_strata;
}

std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& labels,
                                 std::size_t max_points) {
    if (scores.size() != labels.size())
        throw ValidationError(strfmt("roc_points: %zu scores vs %zu labels", scores.size(),
                                     labels.size()));
    if (max_points < 2) throw ValidationError("roc_points: max_points must be at least 2");
    std::size_t n_pos = 0;
    for (std::uint8_t y : labels) n_pos += y ? 1 : 0;
    std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ValidationError("roc_points requires both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> points;
    points.push_back({0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t < j; ++t) (labels[order[t]] ? tp : fp)++;
        points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
        i = j;
    }

    if (points.size() <= max_points) return points;
    std::vector<RocPoint> thinned;
    thinned.reserve(max_points);
    for (std::size_t t = 0; t < max_points; ++t)
        thinned.push_back(points[t * (points.size() - 1) / (max_points - 1)]);
    return thinned;
}

void BenchmarkConfig::validate() const {
    if (n_folds < 2)
        throw ValidationError(strfmt("evaluation: n_folds = %d, need at least 2", n_folds));
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValidationError(strfmt("evaluation: threshold = %g, need a value in (0,1)",
                                     threshold));
    if (tuning_folds < 2)
        throw ValidationError(strfmt("evaluation: tuning_folds = %d, need at least 2",
                                     tuning_folds));
    model.validate();
    for (const auto& [name, params] : regime_params) params.validate();
    if (tune) {
        tpe.validate();
        space.validate();
    }
    if (fold_selection) {
        fold_selection->quotas.validate();
        if (fold_selection->k < 1)
            throw ValidationError(strfmt("evaluation: fold selection k = %d, need at least 1",
                                         fold_selection->k));
        fold_selection->stage2.validate();
    }
}

namespace {

std::uint64_t derive_seed(std::uint64_t master, std::string_view regime, std::string_view purpose) {
    return fnv1a64(purpose, fnv1a64(regime, fnv1a64(master)));
}

std::pair<std::size_t, std::size_t> class_counts(const std::vector<std::uint8_t>& labels) {
    std::size_t pos = 0;
    for (std::uint8_t y : labels) pos += y ? 1 : 0;
    return {pos, labels.size() - pos};
}

// Fold split with the training matrices built once: selection (when
// configured) runs on each fold's training rows only, so trial loops can
// reuse the folds without repeating the screen.
struct FoldSet {
    int n_folds = 0;
    std::vector<RecencyFeatureMatrix> train_m;
    std::vector<RecencyFeatureMatrix> val_m;
    std::vector<std::vector<std::size_t>> val_idx;  // into the regime matrix
};

FoldSet build_folds(const RecencyFeatureMatrix& sub, int n_folds,
                    const std::optional<FoldSelectionConfig>& selection,
                    std::uint64_t fold_seed, std::uint64_t select_seed, int workers) {
    FoldSet set;
    set.n_folds = n_folds;
    auto fold_of = stratified_kfold(sub.labels, n_folds, fold_seed);

    std::vector<std::vector<std::size_t>> train_idx(n_folds);
    set.val_idx.resize(n_folds);
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        for (int f = 0; f < n_folds; ++f)
            (fold_of[i] == f ? set.val_idx : train_idx)[f].push_back(i);

    set.train_m.resize(n_folds);
    set.val_m.resize(n_folds);
    parallel_for(static_cast<std::size_t>(n_folds), std::min<int>(workers, n_folds),
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t f = begin; f < end; ++f) {
                         RecencyFeatureMatrix train = subset_rows(sub, train_idx[f]);
                         RecencyFeatureMatrix val = subset_rows(sub, set.val_idx[f]);
                         if (selection) {
                             auto stage1 = stage1_prevalence(train, selection->quotas);
                             RecencyFeatureMatrix screened = train.restricted_to(stage1.codes());
                             GBDTParams sp = selection->stage2;
                             sp.seed = fnv1a64(static_cast<std::uint64_t>(f), select_seed);
                             auto stage2 = stage2_gain(screened, sp, selection->k, 1);
                             auto codes = stage2.codes();
                             train = train.restricted_to(codes);
                             val = val.restricted_to(codes);
                         }
                         set.train_m[f] = std::move(train);
                         set.val_m[f] = std::move(val);
                     }
                 });
    return set;
}

struct CvRun {
    std::vector<double> oof;            // aligned with the regime matrix rows
    std::vector<Metrics> fold_metrics;  // per held-out fold
};

CvRun run_folds(const FoldSet& set, std::size_t n_rows, const GBDTParams& params,
                std::uint64_t model_seed, double threshold, int workers) {
    CvRun run;
    run.oof.assign(n_rows, 0.0);
    run.fold_metrics.resize(set.n_folds);
    parallel_for(static_cast<std::size_t>(set.n_folds), std::min<int>(workers, set.n_folds),
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t f = begin; f < end; ++f) {
                         GBDTParams pf = params;
                         pf.seed = fnv1a64(static_cast<std::uint64_t>(f), model_seed);
                         GBDTModel model = train(set.train_m[f], pf, 1);
                         std::vector<double> scores = predict_proba(model, set.val_m[f]);
                         for (std::size_t i = 0; i < set.val_idx[f].size(); ++i)
                             run.oof[set.val_idx[f][i]] = scores[i];
                         run.fold_metrics[f] =
                             threshold_metrics(scores, set.val_m[f].labels, threshold);
                     }
                 });
    return run;
}

// TPE over inner CV folds; base params come from config.model.
std::pair<GBDTParams, std::vector<Trial>> tune_one_regime(const std::string& name,
                                                          const RecencyFeatureMatrix& sub,
                                                          const BenchmarkConfig& config,
                                                          int workers) {
    auto [pos, neg] = class_counts(sub.labels);
    std::size_t smallest = std::min(pos, neg);
    int tuning_folds = static_cast<int>(std::min<std::size_t>(config.tuning_folds, smallest));
    if (tuning_folds < 2) {
        log::warn(strfmt("%s: too few rows to tune, keeping configured params", name.c_str()));
        return {config.model, {}};
    }
    if (tuning_folds < config.tuning_folds)
        log::warn(strfmt("%s: tuning with %d folds instead of %d", name.c_str(), tuning_folds,
                         config.tuning_folds));

    FoldSet inner = build_folds(sub, tuning_folds, config.fold_selection,
                                derive_seed(config.seed, name, "tuning_folds"),
                                derive_seed(config.seed, name, "tuning_select"), workers);
    std::uint64_t model_seed = derive_seed(config.seed, name, "tuning_model");
    auto objective = [&](const std::vector<double>& point) {
        GBDTParams p = apply_point(config.space, point, config.model);
        CvRun run = run_folds(inner, sub.n_rows(), p, model_seed, config.threshold, workers);
        double total = 0.0;
        for (const Metrics& m : run.fold_metrics) total += m.auc;
        return total / static_cast<double>(tuning_folds);
    };
    OptimizeResult tuned = optimize(objective, config.space, config.tpe,
                                    derive_seed(config.seed, name, "tpe"));
    return {apply_point(config.space, tuned.best.point, config.model), std::move(tuned.history)};
}

RegimeResult evaluate_regime(std::string name, std::vector<std::size_t> rows,
                             const RecencyFeatureMatrix& features, const BenchmarkConfig& config,
                             int workers) {
    RegimeResult out;
    out.name = std::move(name);
    out.rows = std::move(rows);
    RecencyFeatureMatrix sub = subset_rows(features, out.rows);
    auto [pos, neg] = class_counts(sub.labels);
    std::size_t smallest = std::min(pos, neg);

    out.folds_used = static_cast<int>(std::min<std::size_t>(config.n_folds, smallest));
    if (out.folds_used < config.n_folds)
        log::warn(strfmt("%s: smallest class has %zu rows, reducing to %d folds",
                         out.name.c_str(), smallest, out.folds_used));

    GBDTParams params = config.model;
    if (auto it = config.regime_params.find(out.name); it != config.regime_params.end())
        params = it->second;
    if (config.tune) {
        auto [tuned, trials] = tune_one_regime(out.name, sub, config, workers);
        params = tuned;
        out.trials = std::move(trials);
    }
    params.seed = derive_seed(config.seed, out.name, "model");
    out.params = params;

    FoldSet outer = build_folds(sub, out.folds_used, config.fold_selection,
                                derive_seed(config.seed, out.name, "folds"),
                                derive_seed(config.seed, out.name, "fold_select"), workers);
    CvRun run = run_folds(outer, sub.n_rows(), params, params.seed, config.threshold, workers);
    out.oof_scores = std::move(run.oof);
    out.fold_metrics = std::move(run.fold_metrics);

    out.pooled = threshold_metrics(out.oof_scores, sub.labels, config.threshold);
    double mean = 0.0;
    for (const Metrics& m : out.fold_metrics) mean += m.auc;
    mean /= static_cast<double>(out.folds_used);
    double var = 0.0;
    for (const Metrics& m : out.fold_metrics) var += (m.auc - mean) * (m.auc - mean);
    out.fold_auc_mean = mean;
    out.fold_auc_std = std::sqrt(var / static_cast<double>(out.folds_used));
    return out;
}

}  // namespace

GroupReport run_benchmark(const EventStore& store, const std::vector<CohortLabel>& cohort,
                          const RecencyFeatureMatrix& features, const BenchmarkConfig& config,
                          int workers) {
    config.validate();
    if (workers < 1) throw ValidationError("run_benchmark: workers must be positive");
    std::size_t n = features.n_rows();
    if (n == 0) throw ValidationError("run_benchmark: empty feature matrix");

    std::vector<std::optional<StratumId>> row_stratum = feature_row_strata(store, cohort, features);

    GroupReport report;
    report.statistics = cohort_statistics(cohort, store);

    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    report.global = evaluate_regime("global", all_rows, features, config, workers);

    for (int s = 0; s < kNumStrata; ++s) {
        StratumId stratum = kAllStrata[s];
        std::vector<std::size_t> rows;
        std::size_t targets = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (row_stratum[i] != stratum) continue;
            rows.push_back(i);
            targets += features.labels[i] ? 1 : 0;
        }

        StratumComparison cmp;
        cmp.stratum = stratum;
        cmp.n = rows.size();
        cmp.targets = targets;
        std::size_t smallest = std::min(targets, rows.size() - targets);
        if (smallest < 2) {
            log::warn(strfmt("%s: smallest class has %zu rows, too few to cross-validate, excluded",
                             std::string(to_string(stratum)).c_str(), smallest));
        } else {
            RegimeResult group = evaluate_regime(std::string(to_string(stratum)), rows, features,
                                                 config, workers);
            std::vector<double> global_scores;
            std::vector<std::uint8_t> stratum_labels;
            global_scores.reserve(rows.size());
            stratum_labels.reserve(rows.size());
            for (std::size_t row : rows) {
                global_scores.push_back(report.global.oof_scores[row]);
                stratum_labels.push_back(features.labels[row]);
            }
            cmp.auc_global = auc(global_scores, stratum_labels);
            cmp.auc_group = group.pooled.auc;
            cmp.delta = cmp.auc_group - cmp.auc_global;
            cmp.evaluated = true;
            report.groups.push_back(std::move(group));
        }
        report.strata.push_back(std::move(cmp));
    }

    std::size_t evaluated_rows = 0;
    for (const auto& cmp : report.strata)
        if (cmp.evaluated) evaluated_rows += cmp.n;
    if (evaluated_rows == 0)
        throw PipelineError("run_benchmark: no stratum is large enough to evaluate");

    std::vector<double> global_aucs;
    std::vector<double> group_aucs;
    std::vector<double> shares;
    for (auto& cmp : report.strata) {
        if (!cmp.evaluated) continue;
        cmp.share = static_cast<double>(cmp.n) / static_cast<double>(evaluated_rows);
        global_aucs.push_back(cmp.auc_global);
        group_aucs.push_back(cmp.auc_group);
        shares.push_back(cmp.share);
    }
    report.weighted_global = weighted_total(global_aucs, shares);
    report.weighted_group = weighted_total(group_aucs, shares);
    report.weighted_delta = report.weighted_group - report.weighted_global;

    std::vector<double> remainder_scores;
    std::vector<std::uint8_t> remainder_labels;
    for (std::size_t i = 0; i < n; ++i) {
        if (row_stratum[i]) continue;
        remainder_scores.push_back(report.global.oof_scores[i]);
        remainder_labels.push_back(features.labels[i]);
    }
    report.remainder_n = remainder_scores.size();
    auto [rem_pos, rem_neg] = class_counts(remainder_labels);
    if (rem_pos > 0 && rem_neg > 0) report.remainder_auc = auc(remainder_scores, remainder_labels);

    report.roc = roc_points(report.global.oof_scores, features.labels);
    return report;
}

std::vector<RegimeTuning> tune_regimes(const EventStore& store,
                                       const std::vector<CohortLabel>& cohort,
                                       const RecencyFeatureMatrix& features,
                                       const BenchmarkConfig& config, int workers) {
    config.validate();
    config.tpe.validate();
    config.space.validate();
    if (workers < 1) throw ValidationError("tune_regimes: workers must be positive");
    std::size_t n = features.n_rows();
    if (n == 0) throw ValidationError("tune_regimes: empty feature matrix");

    std::vector<std::optional<StratumId>> row_stratum = feature_row_strata(store, cohort, features);

    std::vector<std::pair<std::string, std::vector<std::size_t>>> regimes;
    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    regimes.emplace_back("global", std::move(all_rows));
    for (int s = 0; s < kNumStrata; ++s) {
        std::vector<std::size_t> rows;
        std::size_t targets = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (row_stratum[i] != kAllStrata[s]) continue;
            rows.push_back(i);
            targets += features.labels[i] ? 1 : 0;
        }
        std::size_t smallest = std::min(targets, rows.size() - targets);
        if (smallest < 2) {
            log::warn(strfmt("%s: smallest class has %zu rows, too few to tune, skipped",
                             std::string(to_string(kAllStrata[s])).c_str(), smallest));
            continue;
        }
        regimes.emplace_back(std::string(to_string(kAllStrata[s])), std::move(rows));
    }

    std::vector<RegimeTuning> out;
    out.reserve(regimes.size());
    for (auto& [name, rows] : regimes) {
        RecencyFeatureMatrix sub = subset_rows(features, rows);
        auto [params, trials] = tune_one_regime(name, sub, config, workers);
        RegimeTuning tuning;
        tuning.name = name;
        tuning.params = params;
        tuning.trials = std::move(trials);
        out.push_back(std::move(tuning));
    }
    return out;
}

}  // namespace strata
