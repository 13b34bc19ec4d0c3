// Acceptance suite: one check per release gate, each printing a single
// [PASS]/[FAIL] line. Run with no arguments for the whole gate or with a
// check number for one. Exit code is the number of failed checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "strata/boosting.hpp"
#include "strata/cohort.hpp"
#include "strata/common.hpp"
#include "strata/csv.hpp"
#include "strata/dates.hpp"
#include "strata/ehr.hpp"
#include "strata/evaluate.hpp"
#include "strata/featurize.hpp"
#include "strata/rng.hpp"
#include "strata/select.hpp"
#include "strata/stratum.hpp"
#include "strata/synth.hpp"
#include "strata/tune.hpp"

#include "helpers.hpp"

namespace {

using namespace strata;
using strata::testing::TempDir;
using strata::testing::dense_of;
using strata::testing::event;
using strata::testing::make_matrix;
using strata::testing::node_rows;
using strata::testing::person;
using strata::testing::soft_threshold;
using strata::testing::walk_tree;
using strata::testing::PersonSpec;
using nlohmann::json;

struct Check {
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

double logloss_at(const std::vector<double>& margins, const std::vector<std::uint8_t>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        double p = sigmoid(margins[i]);
        p = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
        total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return total / static_cast<double>(margins.size());
}

// Labeled sparse fixture: recencies in [0, 729], labels driven by the first
// two columns so trees have real structure to find.
RecencyFeatureMatrix random_fixture(std::uint64_t seed, int n, int cols, double missing_rate) {
    RngStream rng = RngStream::keyed(seed, "acceptance-fixture");
    std::vector<std::vector<std::int32_t>> rows(n, std::vector<std::int32_t>(cols, kSentinel));
    std::vector<std::uint8_t> labels(n, 0);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < cols; ++c)
            if (!rng.bernoulli(missing_rate))
                rows[i][c] = static_cast<std::int32_t>(rng.uniform_int(0, 729));
        double signal = 0.0;
        signal += rows[i][0] == kSentinel ? -0.4 : (365.0 - rows[i][0]) / 200.0;
        if (cols > 1)
            signal += rows[i][1] == kSentinel ? 0.2 : (rows[i][1] % 2 == 0 ? 0.6 : -0.6);
        labels[i] = rng.bernoulli(sigmoid(signal)) ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    return make_matrix(rows, labels);
}

// The matching flow as the pipeline runs it: propensity on the stacked
// target and candidate-control covariate rows, greedy 1:1 matching, matched
// pairs assembled into the final cohort.
std::vector<CohortLabel> matched_cohort(const EventStore& store,
                                        const std::vector<CohortLabel>& targets,
                                        std::int64_t window_days) {
    MatchingData data = build_matching_input(store, targets, window_days);
    std::vector<std::vector<int>> rows = data.target_rows;
    rows.insert(rows.end(), data.control_rows.begin(), data.control_rows.end());
    std::vector<std::uint8_t> labels(rows.size(), 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(data.target_ids.size()),
              std::uint8_t{1});
    PropensityModel model = fit_propensity(data.schema, rows, labels);
    std::vector<ScoredPerson> scored_targets;
    for (std::size_t i = 0; i < data.target_ids.size(); ++i)
        scored_targets.push_back({data.target_ids[i], model.score(data.target_rows[i])});
    std::vector<ScoredPerson> scored_controls;
    for (std::size_t i = 0; i < data.control_ids.size(); ++i)
        scored_controls.push_back({data.control_ids[i], model.score(data.control_rows[i])});
    MatchResult match = match_by_score(std::move(scored_targets), std::move(scored_controls));
    return assemble_cohort(targets, match);
}

// Synthetic population to an encoded, leakage-free feature matrix plus its
// cohort, through the same stages the pipeline runs.
struct EncodedCohort {
    EventStore store;
    std::vector<CohortLabel> cohort;
    RecencyFeatureMatrix features;
};

EncodedCohort encode_synthetic(const SynthConfig& config, std::int64_t window_days) {
    TempDir dir;
    SynthData data = generate(config);
    SynthPaths paths{dir.file("participants.csv"), dir.file("events.csv"),
                     dir.file("ground_truth.csv"), dir.file("planted_concepts.csv")};
    write_synth(data, paths);
    EncodedCohort out{EventStore::load(paths.participants, paths.events), {}, {}};
    PhenotypeConfig pheno;
    pheno.crs_code_set = config.crs_codes;
    std::vector<CohortLabel> targets = phenotype(out.store, pheno);
    out.cohort = matched_cohort(out.store, targets, window_days);
    out.features = strip_leakage(encode_recency(out.store, out.cohort, window_days),
                                 config.crs_codes);
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- check 1 -----------------------------------------------------------

void check_weighted_totals(Check& t) {
    auto start = std::chrono::steady_clock::now();
    // Stratum order: female 18-40, female 40-60, female 60+, male 18-40,
    // male 40-60, male 60+, shares and AUCs from the reference comparison.
    std::vector<double> shares = {0.074, 0.233, 0.406, 0.017, 0.067, 0.203};
    std::vector<double> auc_global = {0.8713, 0.7940, 0.8410, 0.9286, 0.8109, 0.8291};
    std::vector<double> auc_group = {0.8789, 0.8218, 0.8546, 0.9548, 0.8225, 0.8435};
    double total_global = weighted_total(auc_global, shares);
    double total_group = weighted_total(auc_group, shares);
    t.expect(std::abs(total_group - 0.8461) <= 5e-4,
             strfmt("group weighted total %.6f is not 0.8461 +/- 5e-4", total_group));
    t.expect(std::abs(total_global - 0.8293) <= 5e-4,
             strfmt("global weighted total %.6f is not 0.8293 +/- 5e-4", total_global));
    t.expect(std::abs((total_group - total_global) - 0.0168) <= 5e-4,
             strfmt("weighted delta %.6f is not 0.0168 +/- 5e-4", total_group - total_global));
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    t.expect(seconds < 1.0, strfmt("took %.3f s, bound is 1 s", seconds));
}

// --- check 2 -----------------------------------------------------------

void check_cohort_table(Check& t) {
    auto start = std::chrono::steady_clock::now();
    std::vector<std::optional<StratumId>> row_strata;
    std::vector<std::uint8_t> labels;
    auto add_rows = [&](StratumId s, std::size_t n, std::size_t targets) {
        for (std::size_t i = 0; i < n; ++i) {
            row_strata.push_back(s);
            labels.push_back(i < targets ? 1 : 0);
        }
    };
    add_rows(StratumId::male_18_40, 291, 174);
    add_rows(StratumId::female_18_40, 1295, 619);
    CohortStatistics stats = tabulate_cohort(row_strata, labels);
    t.expect(stats.strata.size() == 6, "expected six stratum rows");
    if (stats.strata.size() == 6) {
        const StratumCount& male = stats.strata[0];
        t.expect(male.n == 291 && male.targets == 174,
                 strfmt("male 18-40 row holds %zu/%zu, expected 174/291", male.targets, male.n));
        t.expect(male.target_share == "59.8%",
                 strfmt("174/291 formats as \"%s\", expected \"59.8%%\"", male.target_share.c_str()));
        const StratumCount& female = stats.strata[3];
        t.expect(female.n == 1295 && female.targets == 619,
                 strfmt("female 18-40 row holds %zu/%zu, expected 619/1295", female.targets, female.n));
        t.expect(female.target_share == "47.8%",
                 strfmt("619/1295 formats as \"%s\", expected \"47.8%%\"", female.target_share.c_str()));
        t.expect(stats.strata[1].target_share == "—",
                 "an empty stratum row should format its share as an em dash");
    }
    t.expect(format_target_share(174, 291) == "59.8%", "format_target_share(174, 291) != 59.8%");
    t.expect(format_target_share(619, 1295) == "47.8%", "format_target_share(619, 1295) != 47.8%");
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    t.expect(seconds < 1.0, strfmt("took %.3f s, bound is 1 s", seconds));
}

// --- check 3 -----------------------------------------------------------

void check_leaf_weights(Check& t) {
    auto start = std::chrono::steady_clock::now();
    const std::int32_t X = kSentinel;
    std::vector<std::vector<std::int32_t>> rows = {
        {10, 100}, {40, X}, {15, 200}, {45, 150},
        {20, X},   {25, 120}, {50, 90}, {30, 60},
    };
    std::vector<std::uint8_t> labels = {0, 0, 1, 0, 1, 1, 0, 1};
    RecencyFeatureMatrix m = make_matrix(rows, labels);
    for (double alpha : {0.0, 0.5}) {
        for (double lambda : {0.0, 1.0}) {
            GBDTParams p;
            p.n_estimators = 1;
            p.max_depth = 2;
            p.min_child_weight = 0.0;
            p.reg_alpha = alpha;
            p.reg_lambda = lambda;
            GBDTModel model = train(m, p);
            const Tree& tree = model.trees.at(0);
            std::vector<std::vector<int>> reach = node_rows(tree, rows);
            int leaves = 0;
            for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
                if (!tree.nodes[n].is_leaf()) continue;
                ++leaves;
                double g = 0.0;
                double h = 0.0;
                for (int row : reach[n]) {
                    g += 0.5 - labels[static_cast<std::size_t>(row)];
                    h += 0.25;
                }
                double expected = -soft_threshold(g, alpha) / (h + lambda);
                t.expect(std::abs(tree.nodes[n].weight - expected) <= 1e-9,
                         strfmt("alpha=%.1f lambda=%.1f node %zu: weight %.12f, closed form %.12f",
                                alpha, lambda, n, tree.nodes[n].weight, expected));
            }
            t.expect(leaves >= 2, strfmt("alpha=%.1f lambda=%.1f: tree did not split", alpha, lambda));
        }
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    t.expect(seconds < 1.0, strfmt("took %.3f s, bound is 1 s", seconds));
}

// --- check 4 -----------------------------------------------------------

void check_loss_descent(Check& t) {
    for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
        RecencyFeatureMatrix m = random_fixture(seed, 160, 8, 0.3);
        GBDTParams p;
        p.n_estimators = 50;
        p.max_depth = 3;
        p.learning_rate = 0.3;
        p.subsample = 1.0;
        p.colsample_bytree = 1.0;
        p.gamma = 0.0;
        GBDTModel model = train(m, p);
        std::vector<std::vector<std::int32_t>> dense = dense_of(m);
        std::vector<double> margins(m.n_rows(), model.base_margin());
        double previous = logloss_at(margins, m.labels);
        for (std::size_t round = 0; round < model.trees.size(); ++round) {
            for (std::size_t i = 0; i < m.n_rows(); ++i)
                margins[i] += p.learning_rate * walk_tree(model.trees[round], dense[i]);
            double current = logloss_at(margins, m.labels);
            t.expect(current <= previous + 1e-12,
                     strfmt("seed %llu round %zu: log-loss rose from %.12f to %.12f",
                            static_cast<unsigned long long>(seed), round + 1, previous, current));
            previous = current;
        }
    }
}

// --- check 5 -----------------------------------------------------------

void check_default_direction(Check& t) {
    RecencyFeatureMatrix m = random_fixture(77, 48, 6, 0.4);
    GBDTParams p;
    p.n_estimators = 1;
    p.max_depth = 3;
    p.learning_rate = 1.0;
    p.min_child_weight = 0.0;
    GBDTModel model = train(m, p);
    const Tree& tree = model.trees.at(0);
    std::vector<std::vector<std::int32_t>> dense = dense_of(m);
    std::vector<std::vector<int>> reach = node_rows(tree, dense);
    const double lambda = p.reg_lambda;
    auto score = [&](double g, double h) { return g * g / (h + lambda); };
    int internal = 0;
    int with_missing = 0;
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        const TreeNode& node = tree.nodes[n];
        if (node.is_leaf()) continue;
        ++internal;
        double g_left = 0.0, h_left = 0.0, g_right = 0.0, h_right = 0.0;
        double g_missing = 0.0, h_missing = 0.0;
        for (int row : reach[n]) {
            double g = 0.5 - m.labels[static_cast<std::size_t>(row)];
            std::int32_t v = dense[static_cast<std::size_t>(row)][node.feature];
            if (v == kSentinel) {
                g_missing += g;
                h_missing += 0.25;
            } else if (v < node.threshold) {
                g_left += g;
                h_left += 0.25;
            } else {
                g_right += g;
                h_right += 0.25;
            }
        }
        if (h_missing > 0.0) ++with_missing;
        double score_left = score(g_left + g_missing, h_left + h_missing) + score(g_right, h_right);
        double score_right = score(g_left, h_left) + score(g_right + g_missing, h_right + h_missing);
        if (std::abs(score_left - score_right) <= 1e-12) continue;
        t.expect(node.default_left == (score_left > score_right),
                 strfmt("node %zu routes missing %s but brute force prefers %s "
                        "(%.12f vs %.12f)",
                        n, node.default_left ? "left" : "right",
                        score_left > score_right ? "left" : "right", score_left, score_right));
    }
    t.expect(internal >= 3, strfmt("depth-3 tree has only %d internal nodes", internal));
    t.expect(with_missing >= 1, "no internal node saw a missing value, the check is vacuous");
}

// --- check 6 -----------------------------------------------------------

double all_pairs_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

void check_auc_oracle(Check& t) {
    for (int i = 0; i < 200; ++i) {
        RngStream rng = RngStream::keyed(500, "auc", static_cast<std::uint64_t>(i));
        int n = static_cast<int>(rng.uniform_int(4, 200));
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
        bool ties = i % 2 == 1;
        for (int j = 0; j < n; ++j) {
            scores[static_cast<std::size_t>(j)] =
                ties ? static_cast<double>(rng.uniform_int(0, 4)) * 0.25 : rng.uniform();
            labels[static_cast<std::size_t>(j)] = rng.bernoulli(0.4) ? 1 : 0;
        }
        labels[0] = 0;
        labels[1] = 1;
        double rank = auc(scores, labels);
        double oracle = all_pairs_auc(scores, labels);
        t.expect(std::abs(rank - oracle) <= 1e-12,
                 strfmt("fixture %d (n=%d): rank AUC %.15f vs all-pairs %.15f", i, n, rank, oracle));
    }
}

// --- check 7 -----------------------------------------------------------

void check_local_accuracy(Check& t) {
    RecencyFeatureMatrix m = random_fixture(123, 1000, 12, 0.25);
    GBDTParams p;
    p.n_estimators = 80;
    p.max_depth = 5;
    p.learning_rate = 0.1;
    p.subsample = 0.9;
    p.colsample_bytree = 0.8;
    p.reg_alpha = 0.5;
    p.reg_lambda = 2.0;
    p.gamma = 0.1;
    p.seed = 7;
    GBDTModel model = train(m, p);
    std::vector<double> margins = predict_margin(model, m);
    double worst = 0.0;
    for (std::int32_t row = 0; row < static_cast<std::int32_t>(m.n_rows()); ++row) {
        Attribution a = path_contributions(model, m, row);
        double total = a.bias;
        for (double c : a.contributions) total += c;
        worst = std::max(worst, std::abs(total - margins[static_cast<std::size_t>(row)]));
    }
    t.expect(worst <= 1e-9, strfmt("worst |bias + sum - margin| over 1000 rows is %.3e", worst));
}

// --- check 8 -----------------------------------------------------------

void check_planted_recovery(Check& t) {
    auto start = std::chrono::steady_clock::now();
    SynthConfig sc;
    sc.n_participants = 20000;
    sc.n_concepts_per_domain = {1667, 1667, 1666};
    sc.planted_signals = default_planted_signals(sc.n_concepts_per_domain, 10, 0.30, 0.05, 90.0);
    sc.seed = 77;
    t.expect(sc.planted_signals.size() == 60,
             strfmt("expected 60 planted signals, got %zu", sc.planted_signals.size()));
    std::vector<std::string> planted;
    for (const PlantedSignal& s : sc.planted_signals) planted.push_back(s.concept_code);
    std::sort(planted.begin(), planted.end());
    planted.erase(std::unique(planted.begin(), planted.end()), planted.end());

    EncodedCohort enc = encode_synthetic(sc, 730);
    t.expect(enc.cohort.size() >= 15000,
             strfmt("matched cohort has %zu rows, expected a large matched population",
                    enc.cohort.size()));

    auto count_planted = [&](const std::vector<std::string>& codes) {
        std::size_t hits = 0;
        for (const std::string& code : codes)
            if (std::binary_search(planted.begin(), planted.end(), code)) ++hits;
        return hits;
    };

    SelectedFeatureSet stage1 = stage1_prevalence(enc.features, QuotaConfig{});
    std::size_t stage1_hits = count_planted(stage1.codes());
    t.expect(stage1_hits * 10 >= planted.size() * 9,
             strfmt("stage 1 kept %zu of %zu planted signals, needs >= 90%%", stage1_hits,
                    planted.size()));

    RecencyFeatureMatrix stage1_matrix = enc.features.restricted_to(stage1.codes());
    GBDTParams screen;
    screen.n_estimators = 200;
    screen.max_depth = 4;
    screen.learning_rate = 0.1;
    screen.subsample = 0.9;
    screen.colsample_bytree = 0.8;
    SelectedFeatureSet stage2 = stage2_gain(stage1_matrix, screen, 100);
    std::size_t stage2_hits = count_planted(stage2.codes());
    t.expect(stage2_hits * 10 >= planted.size() * 8,
             strfmt("stage 2 top-100 recalled %zu of %zu planted signals, needs >= 80%%",
                    stage2_hits, planted.size()));

    BenchmarkConfig bc;
    bc.n_folds = 5;
    bc.model.n_estimators = 200;
    bc.model.max_depth = 6;
    bc.model.learning_rate = 0.1;
    bc.model.subsample = 0.9;
    bc.model.colsample_bytree = 0.8;
    bc.seed = 9;
    GroupReport report =
        run_benchmark(enc.store, enc.cohort, enc.features.restricted_to(stage2.codes()), bc);
    t.expect(report.global.pooled.auc >= 0.80,
             strfmt("pipeline out-of-fold AUC %.4f, needs >= 0.80", report.global.pooled.auc));

    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    t.expect(seconds <= 600.0, strfmt("took %.1f s, bound is 600 s", seconds));
}

// --- check 9 -----------------------------------------------------------

GroupReport heterogeneity_benchmark(const SynthConfig& sc) {
    EncodedCohort enc = encode_synthetic(sc, 730);
    BenchmarkConfig bc;
    bc.n_folds = 3;
    bc.model.n_estimators = 80;
    bc.model.max_depth = 3;
    bc.model.learning_rate = 0.25;
    bc.model.min_child_weight = 5.0;
    bc.seed = sc.seed;
    return run_benchmark(enc.store, enc.cohort, enc.features, bc);
}

SynthConfig heterogeneity_base(std::uint64_t seed) {
    SynthConfig sc;
    sc.n_participants = 4800;
    sc.n_concepts_per_domain = {40, 40, 40};
    sc.strata_proportions = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
    sc.background_prevalence = 0.01;
    sc.seed = seed;
    sc.planted_signals = shared_planted_signals(sc.n_concepts_per_domain, 8, 0.40, 0.04, 60.0);
    return sc;
}

void check_stratified_gain(Check& t) {
    std::vector<std::vector<double>> deltas(kNumStrata);
    std::vector<double> null_weighted;
    for (std::uint64_t i = 0; i < 5; ++i) {
        // Heterogeneous population: three concept trios, each predictive in
        // one stratum and anti-predictive in its partner, so pooled
        // prevalences carry no signal and only stratum models can use them.
        SynthConfig hetero = heterogeneity_base(1000 + i);
        for (int pair = 0; pair < 3; ++pair) {
            StratumId a = kAllStrata[static_cast<std::size_t>(pair)];
            StratumId b = kAllStrata[static_cast<std::size_t>(pair + 3)];
            for (int j = 0; j < 3; ++j) {
                std::string code = concept_code_name(Domain::condition, 10 + pair * 3 + j);
                hetero.planted_signals.push_back({a, code, 0.40, 0.05, 60.0});
                hetero.planted_signals.push_back({b, code, 0.05, 0.40, 60.0});
            }
        }
        GroupReport report = heterogeneity_benchmark(hetero);
        for (const StratumComparison& s : report.strata) {
            t.expect(s.evaluated, strfmt("seed %llu: stratum %s was not evaluated",
                                         static_cast<unsigned long long>(1000 + i),
                                         std::string(to_string(s.stratum)).c_str()));
            deltas[static_cast<std::size_t>(s.stratum)].push_back(s.delta);
        }

        SynthConfig null_config = heterogeneity_base(2000 + i);
        GroupReport null_report = heterogeneity_benchmark(null_config);
        null_weighted.push_back(null_report.weighted_delta);
    }
    int positive = 0;
    for (int s = 0; s < kNumStrata; ++s) {
        double med = median(deltas[static_cast<std::size_t>(s)]);
        if (med > 0.0) ++positive;
        std::printf("       stratum %-13s median delta %+.4f\n",
                    std::string(to_string(kAllStrata[static_cast<std::size_t>(s)])).c_str(), med);
    }
    t.expect(positive >= 5,
             strfmt("median stratum-minus-global AUC gain positive in %d of 6 strata, needs >= 5",
                    positive));
    double null_med = median(null_weighted);
    t.expect(std::abs(null_med) <= 0.01,
             strfmt("null control weighted delta median %.4f, needs |.| <= 0.01", null_med));
}

// --- check 10 ----------------------------------------------------------

void check_tpe_vs_random(Check& t) {
    SearchSpace space;
    space.params.push_back({"x", ParamKind::uniform, 0.0, 1.0});
    TPEConfig cfg;
    cfg.n_trials = 100;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto objective = [](const std::vector<double>& p) {
            return -(p[0] - 0.3) * (p[0] - 0.3);
        };
        OptimizeResult result = optimize(objective, space, cfg, 900 + seed);
        double tpe_best = result.best.objective;
        RngStream rng = RngStream::keyed(900 + seed, "random");
        double random_best = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < cfg.n_trials; ++i) {
            double x = rng.uniform();
            random_best = std::max(random_best, -(x - 0.3) * (x - 0.3));
        }
        if (tpe_best >= random_best) ++wins;
    }
    t.expect(wins >= 14, strfmt("TPE matched or beat random search on %d of 20 seeds, needs >= 14",
                                wins));
}

// --- check 11 ----------------------------------------------------------

void check_kruskal_wallis(Check& t) {
    KruskalResult r = kruskal_wallis({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    t.expect(std::abs(r.H - 27.0 / 7.0) <= 1e-12,
             strfmt("H({1,2,3} vs {4,5,6}) = %.15f, expected 27/7", r.H));
    int rejections = 0;
    const int replicates = 10000;
    for (int rep = 0; rep < replicates; ++rep) {
        RngStream rng = RngStream::keyed(4242, "kw-null", static_cast<std::uint64_t>(rep));
        std::vector<std::vector<double>> groups(3, std::vector<double>(25));
        for (auto& g : groups)
            for (double& v : g) v = rng.uniform();
        if (kruskal_wallis(groups).p < 0.05) ++rejections;
    }
    double rate = static_cast<double>(rejections) / replicates;
    t.expect(rate >= 0.04 && rate <= 0.06,
             strfmt("null rejection rate %.4f at alpha 0.05, needs [0.04, 0.06]", rate));
}

// --- check 12 ----------------------------------------------------------

#ifndef STRATA_CLI_PATH
#define STRATA_CLI_PATH "strata"
#endif

void check_byte_identical_runs(Check& t) {
    TempDir dir;
    json cfg;
    cfg["seed"] = 2026;
    cfg["synth"] = {
        {"n_participants", 1200},
        {"n_concepts", {12, 12, 12}},
        {"target_fraction", 0.5},
        {"background_prevalence", 0.02},
        {"planted",
         {{"per_stratum", 2}, {"target_prevalence", 0.35}, {"control_prevalence", 0.05}}},
    };
    cfg["selection"] = {
        {"quotas", {{"condition", 8}, {"procedure", 8}, {"medication", 8}}},
        {"k", 20},
        {"stage2", {{"n_estimators", 20}, {"max_depth", 3}}},
    };
    cfg["model"] = {{"n_estimators", 25}, {"max_depth", 3},        {"learning_rate", 0.3},
                    {"subsample", 0.9},  {"colsample_bytree", 0.9}};
    cfg["tuning"] = {{"enabled", true},
                     {"n_trials", 4},
                     {"n_startup", 2},
                     {"folds", 2},
                     {"space", {{"learning_rate", {0.05, 0.4}}, {"n_estimators", {10, 30}}}}};
    cfg["evaluation"] = {{"folds", 3}};
    std::string config_path = dir.file("config.json");
    write_text_file(config_path, cfg.dump(2) + "\n");

    std::vector<std::string> reports;
    int run = 0;
    for (int workers : {1, 1, 4}) {
        ++run;
        std::string in = dir.file(strfmt("in_%d", run));
        std::string out = dir.file(strfmt("out_%d", run));
        std::string log = dir.file(strfmt("run_%d.log", run));
        std::string command = strfmt("\"%s\" run --config \"%s\" --input \"%s\" --out \"%s\""
                                     " --workers %d > \"%s\" 2>&1",
                                     STRATA_CLI_PATH, config_path.c_str(), in.c_str(), out.c_str(),
                                     workers, log.c_str());
        int status = std::system(command.c_str());
        t.expect(status == 0, strfmt("run %d (workers=%d) exited with status %d", run, workers,
                                     status));
        if (status != 0) return;
        reports.push_back(read_text_file(out + "/report.json"));
    }
    t.expect(!reports[0].empty(), "report.json is empty");
    t.expect(reports[0] == reports[1], "reports differ between two identical single-worker runs");
    t.expect(reports[0] == reports[2], "reports differ between worker counts 1 and 4");
}

// --- check 13 ----------------------------------------------------------

void check_matching_balance(Check& t) {
    RngStream rng = RngStream::keyed(7, "confounded");
    std::vector<PersonSpec> people;
    Date index = parse_date("2020-09-01", "fixture");
    for (int i = 0; i < 250; ++i) {
        PersonSpec spec;
        spec.who = person(strfmt("T%04d", i), rng.bernoulli(0.70) ? Sex::female : Sex::male,
                          rng.bernoulli(0.60) ? "1950-03-03" : "1985-05-05",
                          rng.bernoulli(0.65) ? "race_b" : "race_a",
                          rng.bernoulli(0.55) ? "eth_b" : "eth_a");
        spec.events.push_back(event("CRS420", "2020-09-01"));
        spec.events.push_back(event("CRS421", "2020-10-01"));
        std::int64_t extra = rng.uniform_int(8, 20);
        for (std::int64_t j = 0; j < extra; ++j) {
            Event e;
            e.concept_code = strfmt("BG%02lld", static_cast<long long>(j));
            e.domain = Domain::condition;
            e.date = add_days(index, -7 * (j + 1));
            spec.events.push_back(e);
        }
        people.push_back(std::move(spec));
    }
    Date control_end = parse_date("2020-10-20", "fixture");
    for (int i = 0; i < 1000; ++i) {
        PersonSpec spec;
        spec.who = person(strfmt("C%04d", i), rng.bernoulli(0.40) ? Sex::female : Sex::male,
                          rng.bernoulli(0.30) ? "1950-03-03" : "1985-05-05",
                          rng.bernoulli(0.35) ? "race_b" : "race_a",
                          rng.bernoulli(0.30) ? "eth_b" : "eth_a");
        std::int64_t dates = rng.uniform_int(3, 16);
        for (std::int64_t j = 0; j < dates; ++j) {
            Event e;
            e.concept_code = strfmt("BG%02lld", static_cast<long long>(j));
            e.domain = Domain::condition;
            e.date = add_days(control_end, -10 * j);
            spec.events.push_back(e);
        }
        people.push_back(std::move(spec));
    }
    EventStore store = strata::testing::build_store(people);

    PhenotypeConfig pheno;
    pheno.crs_code_set = {"CRS420", "CRS421", "CRS422"};
    std::vector<CohortLabel> targets = phenotype(store, pheno);
    t.expect(targets.size() == 250, strfmt("phenotype found %zu targets, expected 250",
                                           targets.size()));

    MatchingData data = build_matching_input(store, targets, 730);
    t.expect(data.control_ids.size() == 1000,
             strfmt("candidate pool holds %zu controls, expected 1000", data.control_ids.size()));
    std::vector<std::vector<int>> rows = data.target_rows;
    rows.insert(rows.end(), data.control_rows.begin(), data.control_rows.end());
    std::vector<std::uint8_t> labels(rows.size(), 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(data.target_ids.size()),
              std::uint8_t{1});
    PropensityModel model = fit_propensity(data.schema, rows, labels);
    std::vector<ScoredPerson> scored_targets;
    for (std::size_t i = 0; i < data.target_ids.size(); ++i)
        scored_targets.push_back({data.target_ids[i], model.score(data.target_rows[i])});
    std::vector<ScoredPerson> scored_controls;
    for (std::size_t i = 0; i < data.control_ids.size(); ++i)
        scored_controls.push_back({data.control_ids[i], model.score(data.control_rows[i])});
    MatchResult match = match_by_score(scored_targets, scored_controls);
    t.expect(match.pairs.size() == 250,
             strfmt("matched %zu pairs, expected one control per target", match.pairs.size()));
    t.expect(match.unmatched_targets.empty(),
             strfmt("%zu targets went unmatched", match.unmatched_targets.size()));

    std::vector<CovariateBalance> balance = covariate_balance(data, match);
    t.expect(balance.size() == 5, strfmt("expected five covariates, got %zu", balance.size()));
    for (const CovariateBalance& b : balance) {
        std::printf("       %-16s pre %.3f post %.3f\n", b.covariate.c_str(), b.pre, b.post);
        t.expect(b.pre > 0.05,
                 strfmt("covariate %s pre-matching SMD %.3f, fixture should be confounded",
                        b.covariate.c_str(), b.pre));
        t.expect(b.post <= b.pre + 1e-12,
                 strfmt("covariate %s SMD rose from %.4f to %.4f after matching",
                        b.covariate.c_str(), b.pre, b.post));
    }

    std::vector<CohortLabel> cohort = assemble_cohort(targets, match);
    t.expect(cohort.size() == 500, strfmt("cohort holds %zu rows, expected 250 pairs", cohort.size()));
    std::vector<std::string> target_ids, control_ids, matched_to;
    for (const CohortLabel& row : cohort) {
        if (row.label == CohortGroup::target) {
            target_ids.push_back(row.person_id);
        } else {
            control_ids.push_back(row.person_id);
            matched_to.push_back(row.matched_to);
            t.expect(row.index_date == index, "control did not inherit its target's index date");
        }
    }
    auto unique_size = [](std::vector<std::string> v) {
        std::sort(v.begin(), v.end());
        return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
    };
    t.expect(target_ids.size() == 250 && unique_size(target_ids) == 250,
             "matched targets are not 250 distinct people");
    t.expect(control_ids.size() == 250 && unique_size(control_ids) == 250,
             "matched controls are not 250 distinct people");
    t.expect(unique_size(matched_to) == 250, "two controls share a target, matching is not 1:1");
}

// --- driver ------------------------------------------------------------

struct Entry {
    int id;
    const char* name;
    void (*fn)(Check&);
};

const Entry kChecks[] = {
    {1, "weighted AUC totals match the reference comparison", check_weighted_totals},
    {2, "cohort table reproduces the reference target shares", check_cohort_table},
    {3, "leaf weights match the closed form", check_leaf_weights},
    {4, "training log-loss never increases", check_loss_descent},
    {5, "missing-value routing matches brute force", check_default_direction},
    {6, "rank AUC equals the all-pairs oracle", check_auc_oracle},
    {7, "attributions sum exactly to the margin", check_local_accuracy},
    {8, "planted signals survive the full pipeline", check_planted_recovery},
    {9, "stratum models win only under heterogeneity", check_stratified_gain},
    {10, "TPE matches or beats random search", check_tpe_vs_random},
    {11, "Kruskal-Wallis value and null calibration", check_kruskal_wallis},
    {12, "reruns are byte-identical across worker counts", check_byte_identical_runs},
    {13, "propensity matching improves covariate balance", check_matching_balance},
};

int run_check(const Entry& entry) {
    Check check;
    auto start = std::chrono::steady_clock::now();
    try {
        entry.fn(check);
    } catch (const std::exception& e) {
        check.failures.push_back(strfmt("unexpected exception: %s", e.what()));
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %02d %s (%.2f s)\n", check.failures.empty() ? "PASS" : "FAIL", entry.id,
                entry.name, seconds);
    for (const std::string& f : check.failures) std::printf("       - %s\n", f.c_str());
    std::fflush(stdout);
    return check.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    int failed = 0;
    int ran = 0;
    for (const Entry& entry : kChecks) {
        if (argc > 1 && std::atoi(argv[1]) != entry.id) continue;
        ++ran;
        failed += run_check(entry);
    }
    if (ran == 0) {
        std::fprintf(stderr, "no check numbered %s\n", argv[1]);
        return 64;
    }
    if (ran > 1) std::printf("%d/%d checks passed\n", ran - failed, ran);
    return failed;
}
