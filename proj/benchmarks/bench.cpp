// Microbenchmarks for the hot paths: boosting, scoring, attribution, the
// rank statistics and TPE proposals.

#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "strata/boosting.hpp"
#include "strata/evaluate.hpp"
#include "strata/featurize.hpp"
#include "strata/rng.hpp"
#include "strata/select.hpp"
#include "strata/tune.hpp"

namespace {

using namespace strata;

RecencyFeatureMatrix random_matrix(std::uint64_t seed, int n_rows, int n_cols,
                                   double missing_rate) {
    RngStream rng = RngStream::keyed(seed, "bench");
    RecencyFeatureMatrix m;
    m.labels.resize(static_cast<std::size_t>(n_rows));
    for (int i = 0; i < n_rows; ++i) {
        m.row_ids.push_back(strfmt("P%06d", i));
        m.labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
    }
    for (int c = 0; c < n_cols; ++c) {
        FeatureColumn col;
        col.code = strfmt("C%04d", c);
        for (int i = 0; i < n_rows; ++i) {
            if (rng.bernoulli(missing_rate)) continue;
            std::int32_t value = static_cast<std::int32_t>(rng.uniform_int(0, 729));
            if (c < 3 && m.labels[static_cast<std::size_t>(i)]) value /= 2;
            col.cells.emplace_back(i, value);
        }
        m.columns.push_back(std::move(col));
    }
    return m;
}

GBDTParams bench_params(int n_estimators, int max_depth) {
    GBDTParams p;
    p.n_estimators = n_estimators;
    p.max_depth = max_depth;
    p.learning_rate = 0.1;
    p.subsample = 0.9;
    p.colsample_bytree = 0.8;
    return p;
}

void bm_gbdt_train(benchmark::State& state) {
    RecencyFeatureMatrix m =
        random_matrix(1, static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), 0.6);
    GBDTParams p = bench_params(50, 4);
    for (auto _ : state) {
        GBDTModel model = train(m, p);
        benchmark::DoNotOptimize(model.trees.size());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_gbdt_train)->Args({2000, 50})->Args({2000, 200})->Unit(benchmark::kMillisecond);

void bm_gbdt_predict(benchmark::State& state) {
    RecencyFeatureMatrix m = random_matrix(2, 5000, 100, 0.6);
    GBDTModel model = train(m, bench_params(100, 5));
    for (auto _ : state) {
        std::vector<double> margins = predict_margin(model, m);
        benchmark::DoNotOptimize(margins.data());
    }
    state.SetItemsProcessed(state.iterations() * 5000);
}
BENCHMARK(bm_gbdt_predict)->Unit(benchmark::kMillisecond);

void bm_path_contributions(benchmark::State& state) {
    RecencyFeatureMatrix m = random_matrix(3, 1000, 50, 0.6);
    GBDTModel model = train(m, bench_params(100, 5));
    std::int32_t row = 0;
    for (auto _ : state) {
        Attribution a = path_contributions(model, m, row);
        benchmark::DoNotOptimize(a.bias);
        row = (row + 1) % 1000;
    }
}
BENCHMARK(bm_path_contributions)->Unit(benchmark::kMicrosecond);

void bm_rank_auc(benchmark::State& state) {
    RngStream rng = RngStream::keyed(4, "bench-auc");
    std::size_t n = static_cast<std::size_t>(state.range(0));
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    for (auto _ : state) benchmark::DoNotOptimize(auc(scores, labels));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_rank_auc)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);

void bm_kruskal_wallis(benchmark::State& state) {
    RngStream rng = RngStream::keyed(5, "bench-kw");
    std::vector<std::vector<double>> groups(6, std::vector<double>(500));
    for (auto& g : groups)
        for (double& v : g) v = rng.uniform();
    for (auto _ : state) benchmark::DoNotOptimize(kruskal_wallis(groups).H);
}
BENCHMARK(bm_kruskal_wallis)->Unit(benchmark::kMicrosecond);

void bm_tpe_suggest(benchmark::State& state) {
    SearchSpace space = SearchSpace::defaults();
    TPEConfig config;
    RngStream rng = RngStream::keyed(6, "bench-tpe");
    std::vector<Trial> history;
    for (int i = 0; i < 100; ++i) {
        Trial trial;
        trial.point = tpe_suggest(history, space, config, rng);
        trial.objective = rng.uniform();
        trial.complete = true;
        history.push_back(std::move(trial));
    }
    for (auto _ : state) {
        std::vector<double> point = tpe_suggest(history, space, config, rng);
        benchmark::DoNotOptimize(point.data());
    }
}
BENCHMARK(bm_tpe_suggest)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
