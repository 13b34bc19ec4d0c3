#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "strata/cohort.hpp"
#include "strata/stratum.hpp"
#include "strata/synth.hpp"

using namespace strata;
using strata::testing::TempDir;

namespace {

SynthConfig small_config(std::uint64_t seed) {
    SynthConfig c;
    c.n_participants = 3000;
    c.n_concepts_per_domain = {120, 150, 120};
    c.planted_signals = default_planted_signals(c.n_concepts_per_domain, 4, 0.35, 0.05);
    c.seed = seed;
    return c;
}

std::uint64_t event_digest(const SynthData& data) {
    std::uint64_t h = kFnvBasis;
    for (const auto& e : data.events) {
        h = fnv1a64(static_cast<std::uint64_t>(e.person), h);
        h = fnv1a64(static_cast<std::uint64_t>(e.concept_id), h);
        h = fnv1a64(static_cast<std::uint64_t>(e.date.days), h);
    }
    return h;
}

}  // namespace

TEST_CASE("synth is deterministic in the seed") {
    SynthData a = generate(small_config(11));
    SynthData b = generate(small_config(11));
    SynthData c = generate(small_config(12));
    CHECK(a.participants.size() == b.participants.size());
    CHECK(a.events.size() == b.events.size());
    CHECK(event_digest(a) == event_digest(b));
    CHECK(event_digest(a) != event_digest(c));
}

TEST_CASE("synth respects cohort composition") {
    SynthConfig config = small_config(5);
    config.n_participants = 8000;
    SynthData data = generate(config);
    REQUIRE(data.participants.size() == 8000);
    REQUIRE(data.truth.person_ids.size() == 8000);

    double targets = 0;
    for (auto y : data.truth.true_label) targets += y;
    CHECK(targets / 8000.0 == doctest::Approx(config.target_fraction).epsilon(0.05));

    // Stratum counts are allocated, not sampled, so shares are exact up to
    // rounding. Ages keep a margin that makes bins stable at this date.
    std::map<int, int> counts;
    Date reference = parse_date("2021-01-01", "test");
    for (const Participant& p : data.participants) {
        auto s = assign_stratum(p, reference);
        counts[s ? static_cast<int>(*s) : -1]++;
    }
    for (int s = 0; s < kNumStrata; ++s) {
        double want = config.strata_proportions[s] * 8000.0;
        CHECK(std::abs(counts[s] - want) <= 2.0);
    }
}

TEST_CASE("true targets carry a qualifying CRS code pair") {
    SynthConfig config = small_config(7);
    SynthData data = generate(config);
    TempDir dir;
    write_synth(data, {dir.file("p.csv"), dir.file("e.csv"), dir.file("g.csv"), dir.file("pl.csv")});
    EventStore store = EventStore::load(dir.file("p.csv"), dir.file("e.csv"));

    PhenotypeConfig ph;
    ph.crs_code_set = config.crs_codes;
    std::vector<CohortLabel> found = phenotype(store, ph);
    std::set<std::string> found_ids;
    for (const CohortLabel& t : found) found_ids.insert(t.person_id);

    std::size_t n_true = 0;
    std::size_t recovered = 0;
    for (std::size_t i = 0; i < data.truth.person_ids.size(); ++i) {
        if (!data.truth.true_label[i]) continue;
        n_true++;
        recovered += found_ids.count(data.truth.person_ids[i]);
    }
    REQUIRE(n_true > 0);
    // Every planted target qualifies; the rule may also catch no one else.
    CHECK(recovered == n_true);
    CHECK(found.size() == n_true);
}

TEST_CASE("planted signals separate targets from controls inside their stratum") {
    SynthConfig config = small_config(9);
    config.n_participants = 9000;
    SynthData data = generate(config);
    TempDir dir;
    write_synth(data, {dir.file("p.csv"), dir.file("e.csv"), dir.file("g.csv"), dir.file("pl.csv")});
    EventStore store = EventStore::load(dir.file("p.csv"), dir.file("e.csv"));

    // Use a signal planted in the largest stratum so the rate estimates are
    // tight.
    const PlantedSignal* chosen = nullptr;
    for (const PlantedSignal& s : config.planted_signals)
        if (s.stratum == StratumId::female_60plus) {
            chosen = &s;
            break;
        }
    REQUIRE(chosen != nullptr);
    const PlantedSignal& sig = *chosen;
    Date reference = parse_date("2021-01-01", "test");
    std::size_t target_n = 0, target_hits = 0, control_n = 0, control_hits = 0;
    for (std::size_t i = 0; i < data.truth.person_ids.size(); ++i) {
        auto who = store.require_person(data.truth.person_ids[i]);
        if (assign_stratum(store.participant(who), reference) != sig.stratum) continue;
        bool has = false;
        for (const Event& e : store.events_of(who))
            if (e.concept_code == sig.concept_code) has = true;
        if (data.truth.true_label[i]) {
            target_n++;
            target_hits += has;
        } else {
            control_n++;
            control_hits += has;
        }
    }
    REQUIRE(target_n > 50);
    REQUIRE(control_n > 50);
    double target_rate = static_cast<double>(target_hits) / target_n;
    double control_rate = static_cast<double>(control_hits) / control_n;
    CHECK(target_rate > 0.25);
    CHECK(control_rate < 0.12);
    CHECK(target_rate - control_rate > 0.15);
}

TEST_CASE("default planted signals pick distinct concepts per stratum") {
    auto signals = default_planted_signals({40, 40, 40}, 3, 0.3, 0.05);
    CHECK(signals.size() == 3 * kNumStrata);
    std::set<std::string> codes;
    std::map<StratumId, int> per_stratum;
    for (const PlantedSignal& s : signals) {
        codes.insert(s.concept_code);
        per_stratum[s.stratum]++;
    }
    CHECK(codes.size() == signals.size());
    for (StratumId s : kAllStrata) CHECK(per_stratum[s] == 3);
}

TEST_CASE("shared planted signals repeat the same concepts in every stratum") {
    auto signals = shared_planted_signals({40, 40, 40}, 5, 0.3, 0.05);
    CHECK(signals.size() == 5 * kNumStrata);
    std::map<std::string, int> per_code;
    for (const PlantedSignal& s : signals) per_code[s.concept_code]++;
    CHECK(per_code.size() == 5);
    for (const auto& [code, n] : per_code) CHECK(n == kNumStrata);
}

TEST_CASE("synth config validation") {
    SynthConfig c = small_config(1);
    c.target_fraction = 1.5;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_config(1);
    c.n_participants = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_NOTHROW(small_config(1).validate());
}
