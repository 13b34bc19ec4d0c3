#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "strata/tune.hpp"

using namespace strata;
using namespace strata::testing;

namespace {

SearchSpace quadratic_space() {
    SearchSpace space;
    space.params = {{"x", ParamKind::uniform, 0.0, 1.0}};
    return space;
}

}  // namespace

TEST_CASE("search space validation") {
    SearchSpace space = SearchSpace::defaults();
    CHECK_NOTHROW(space.validate());
    CHECK(space.index_of("learning_rate") >= 0);
    CHECK(space.index_of("no_such_dim") == -1);

    SearchSpace bad;
    bad.params = {{"x", ParamKind::uniform, 1.0, 0.0}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.params = {{"x", ParamKind::log_uniform, 0.0, 1.0}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.params = {{"x", ParamKind::uniform, 0.0, 1.0}, {"x", ParamKind::uniform, 0.0, 1.0}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.params = {};
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    TPEConfig cfg;
    cfg.n_trials = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = TPEConfig{};
    cfg.gamma_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("optimization is deterministic and stays in bounds") {
    auto objective = [](const std::vector<double>& p) {
        double x = p[0] - 0.3;
        return -(x * x);
    };
    SearchSpace space = quadratic_space();
    TPEConfig cfg;
    cfg.n_trials = 40;
    cfg.n_startup = 10;

    OptimizeResult a = optimize(objective, space, cfg, 123);
    OptimizeResult b = optimize(objective, space, cfg, 123);
    REQUIRE(a.history.size() == 40);
    REQUIRE(b.history.size() == 40);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].point[0] == b.history[i].point[0]);
        CHECK(a.history[i].objective == b.history[i].objective);
        CHECK(a.history[i].point[0] >= 0.0);
        CHECK(a.history[i].point[0] <= 1.0);
        CHECK(a.history[i].complete);
    }
    CHECK(a.best.objective == b.best.objective);

    // The reported best is the argmax over history.
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : a.history) best = std::max(best, t.objective);
    CHECK(a.best.objective == best);

    OptimizeResult c = optimize(objective, space, cfg, 124);
    bool any_differs = false;
    for (std::size_t i = 0; i < c.history.size(); ++i)
        any_differs = any_differs || c.history[i].point[0] != a.history[i].point[0];
    CHECK(any_differs);
}

TEST_CASE("guided trials concentrate near the optimum") {
    auto objective = [](const std::vector<double>& p) {
        double x = p[0] - 0.3;
        return -(x * x);
    };
    SearchSpace space = quadratic_space();
    TPEConfig cfg;
    cfg.n_trials = 60;
    cfg.n_startup = 15;

    OptimizeResult res = optimize(objective, space, cfg, 7);
    double startup_err = 0.0, guided_err = 0.0;
    for (int i = 0; i < 15; ++i) startup_err += std::abs(res.history[i].point[0] - 0.3);
    for (int i = 15; i < 60; ++i) guided_err += std::abs(res.history[i].point[0] - 0.3);
    startup_err /= 15.0;
    guided_err /= 45.0;
    CHECK(guided_err < startup_err);
    CHECK(std::abs(res.best.point[0] - 0.3) < 0.1);
}

TEST_CASE("integer dimensions emit integers and log dimensions respect bounds") {
    SearchSpace space;
    space.params = {{"n", ParamKind::int_uniform, 2.0, 9.0},
                    {"lr", ParamKind::log_uniform, 1e-3, 1.0}};
    TPEConfig cfg;
    cfg.n_trials = 50;
    cfg.n_startup = 10;
    auto objective = [](const std::vector<double>& p) { return -(p[0] - 5.0) * (p[0] - 5.0) - p[1]; };
    OptimizeResult res = optimize(objective, space, cfg, 42);
    for (const auto& t : res.history) {
        CHECK(t.point[0] == std::round(t.point[0]));
        CHECK(t.point[0] >= 2.0);
        CHECK(t.point[0] <= 9.0);
        CHECK(t.point[1] >= 1e-3);
        CHECK(t.point[1] <= 1.0);
    }
}

TEST_CASE("failed trials are recorded and excluded from the best") {
    auto objective = [](const std::vector<double>& p) {
        if (p[0] > 0.5) throw std::runtime_error("diverged");
        return p[0];
    };
    SearchSpace space = quadratic_space();
    TPEConfig cfg;
    cfg.n_trials = 30;
    cfg.n_startup = 8;
    OptimizeResult res = optimize(objective, space, cfg, 3);
    REQUIRE(res.history.size() == 30);
    int failed = 0;
    for (const auto& t : res.history) {
        if (!t.complete) {
            failed += 1;
            CHECK(t.objective == -std::numeric_limits<double>::infinity());
            CHECK(t.point[0] > 0.5);
        }
    }
    CHECK(failed > 0);
    CHECK(res.best.complete);
    CHECK(res.best.point[0] <= 0.5);

    auto always_fails = [](const std::vector<double>&) -> double {
        throw std::runtime_error("no");
    };
    CHECK_THROWS_AS(optimize(always_fails, space, cfg, 3), PipelineError);
}

TEST_CASE("suggestions remain uniform until startup completes") {
    SearchSpace space = quadratic_space();
    TPEConfig cfg;
    cfg.n_startup = 5;
    RngStream rng = RngStream::keyed(11, "tpe");
    std::vector<Trial> history;
    for (int i = 0; i < 4; ++i) {
        auto p = tpe_suggest(history, space, cfg, rng);
        REQUIRE(p.size() == 1);
        CHECK(p[0] >= 0.0);
        CHECK(p[0] <= 1.0);
        history.push_back({p, -p[0] * p[0], true});
    }
    // With history beyond startup, proposals still honor the bounds.
    for (int i = 0; i < 40; ++i) {
        auto p = tpe_suggest(history, space, cfg, rng);
        CHECK(p[0] >= 0.0);
        CHECK(p[0] <= 1.0);
        history.push_back({p, -(p[0] - 0.2) * (p[0] - 0.2), true});
    }
}

TEST_CASE("tuned points overlay the base parameters by name") {
    SearchSpace space;
    space.params = {{"n_estimators", ParamKind::int_uniform, 50, 400},
                    {"max_depth", ParamKind::int_uniform, 2, 8},
                    {"learning_rate", ParamKind::log_uniform, 0.01, 0.3},
                    {"subsample", ParamKind::uniform, 0.5, 1.0},
                    {"colsample_bytree", ParamKind::uniform, 0.5, 1.0},
                    {"reg_alpha", ParamKind::uniform, 0.0, 5.0}};
    GBDTParams base;
    base.gamma = 0.25;
    base.seed = 77;
    GBDTParams out = apply_point(space, {120, 4, 0.05, 0.8, 0.9, 1.5}, base);
    CHECK(out.n_estimators == 120);
    CHECK(out.max_depth == 4);
    CHECK(out.learning_rate == doctest::Approx(0.05));
    CHECK(out.subsample == doctest::Approx(0.8));
    CHECK(out.colsample_bytree == doctest::Approx(0.9));
    CHECK(out.reg_alpha == doctest::Approx(1.5));
    // Untuned fields pass through.
    CHECK(out.gamma == doctest::Approx(0.25));
    CHECK(out.seed == 77);

    SearchSpace partial;
    partial.params = {{"learning_rate", ParamKind::log_uniform, 0.01, 0.3}};
    GBDTParams narrow = apply_point(partial, {0.12}, base);
    CHECK(narrow.learning_rate == doctest::Approx(0.12));
    CHECK(narrow.n_estimators == base.n_estimators);

    SearchSpace unknown;
    unknown.params = {{"mystery", ParamKind::uniform, 0.0, 1.0}};
    CHECK_THROWS_AS(apply_point(unknown, {0.5}, base), ValidationError);
    CHECK_THROWS_AS(apply_point(partial, {0.1, 0.2}, base), ValidationError);
}

TEST_CASE("param kind names round trip") {
    CHECK(to_string(ParamKind::int_uniform) == "int_uniform");
    CHECK(to_string(ParamKind::uniform) == "uniform");
    CHECK(to_string(ParamKind::log_uniform) == "log_uniform");
}
