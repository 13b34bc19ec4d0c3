#include "strata/synth.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "strata/common.hpp"
#include "strata/csv.hpp"
#include "strata/rng.hpp"

namespace strata {

namespace {

constexpr std::int64_t kAnchorSpreadDays = 240;
constexpr std::int64_t kLookbackDays = 730;

constexpr const char* kRaces[4] = {"white", "black", "asian", "other"};

// Demographic mixtures by bucket (six strata + remainder) and true label.
// Targets skew white and non-hispanic, so demographics are confounded with
// the outcome and matching has real imbalance to remove.
constexpr double kControlRace[7][4] = {
    {0.52, 0.22, 0.14, 0.12}, {0.57, 0.19, 0.13, 0.11}, {0.64, 0.16, 0.10, 0.10},
    {0.50, 0.24, 0.14, 0.12}, {0.58, 0.19, 0.12, 0.11}, {0.66, 0.15, 0.09, 0.10},
    {0.56, 0.20, 0.12, 0.12},
};
constexpr double kTargetRace[7][4] = {
    {0.68, 0.14, 0.10, 0.08}, {0.73, 0.11, 0.09, 0.07}, {0.80, 0.08, 0.06, 0.06},
    {0.66, 0.16, 0.10, 0.08}, {0.74, 0.11, 0.08, 0.07}, {0.82, 0.07, 0.05, 0.06},
    {0.72, 0.12, 0.08, 0.08},
};
constexpr double kHispanicBase[7] = {0.18, 0.12, 0.08, 0.22, 0.14, 0.09, 0.15};

// Age sampling ranges per bucket keep a 1.5-year margin inside each bin so a
// person's age group cannot flip within the anchor-date spread.
constexpr double kAgeLo[7] = {19.5, 41.5, 61.5, 19.5, 41.5, 61.5, 19.5};
constexpr double kAgeHi[7] = {38.5, 58.5, 84.0, 38.5, 58.5, 84.0, 84.0};

Date reference_date() {
    static const Date d = parse_date("2021-01-01", "synth reference date");
    return d;
}

int pick_index(RngStream& rng, const double* probs, int n) {
    double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return n - 1;
}

// Largest-remainder rounding of n * share; leftovers go to the largest
// fractional parts, ties to the lower bucket.
std::vector<int> allocate_counts(int n, const std::vector<double>& shares) {
    std::vector<int> counts(shares.size());
    std::vector<std::pair<double, std::size_t>> frac;
    int assigned = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        double exact = n * shares[i];
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        frac.emplace_back(exact - counts[i], i);
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < n - assigned; ++k) counts[frac[k % frac.size()].second] += 1;
    return counts;
}

}  // namespace

std::string concept_code_name(Domain d, int index) {
    const char prefix = d == Domain::condition ? 'C' : (d == Domain::procedure ? 'P' : 'M');
    return strfmt("%c%05d", prefix, index + 1);
}

double SynthConfig::stratum_target_rate(StratumId s) const {
    double rate = target_fraction * kDefaultStratumTargetRates[static_cast<int>(s)] / 0.5;
    return std::clamp(rate, 0.0, 1.0);
}

void SynthConfig::validate() const {
    if (n_participants < 1) throw ValidationError("synth: n_participants must be >= 1");
    std::int64_t total_concepts = 0;
    for (int d = 0; d < 3; ++d) {
        if (n_concepts_per_domain[d] < 0 || n_concepts_per_domain[d] > 99999) {
            throw ValidationError("synth: n_concepts_per_domain entries must be in [0, 99999]");
        }
        total_concepts += n_concepts_per_domain[d];
    }
    if (total_concepts < 1) throw ValidationError("synth: concept dictionary is empty");
    double share_sum = 0.0;
    for (double p : strata_proportions) {
        if (p < 0.0) throw ValidationError("synth: strata_proportions must be non-negative");
        share_sum += p;
    }
    if (share_sum > 1.0 + 1e-9) {
        throw ValidationError(strfmt("synth: strata_proportions sum to %.6f, must be <= 1", share_sum));
    }
    if (target_fraction < 0.0 || target_fraction > 1.0) {
        throw ValidationError("synth: target_fraction must be in [0, 1]");
    }
    if (background_prevalence < 0.0 || background_prevalence >= 1.0) {
        throw ValidationError("synth: background_prevalence must be in [0, 1)");
    }
    if (crs_codes.empty()) throw ValidationError("synth: crs_codes must not be empty");
    std::unordered_set<std::string> crs_set(crs_codes.begin(), crs_codes.end());
    if (crs_set.size() != crs_codes.size()) throw ValidationError("synth: duplicate crs_codes");

    std::unordered_set<std::string> dictionary;
    for (int d = 0; d < 3; ++d) {
        for (int i = 0; i < n_concepts_per_domain[d]; ++i) {
            dictionary.insert(concept_code_name(static_cast<Domain>(d), i));
        }
    }
    for (const auto& code : crs_codes) {
        if (dictionary.count(code)) {
            throw ValidationError("synth: crs_code '" + code + "' collides with the concept dictionary");
        }
    }
    std::unordered_set<std::string> seen_pairs;
    for (const auto& sig : planted_signals) {
        if (!dictionary.count(sig.concept_code)) {
            throw ValidationError("synth: planted concept '" + sig.concept_code +
                                  "' is not in the concept dictionary");
        }
        auto bad_prev = [](double p) { return !(p >= 0.0 && p <= 1.0); };
        if (bad_prev(sig.target_prevalence) || bad_prev(sig.control_prevalence)) {
            throw ValidationError("synth: planted prevalences must be in [0, 1]");
        }
        if (sig.target_prevalence == 0.0 && sig.control_prevalence == 0.0) {
            throw ValidationError("synth: planted concept '" + sig.concept_code +
                                  "' has zero prevalence in both groups");
        }
        if (!(sig.recency_mean_days >= 0.0 && sig.recency_mean_days < 700.0)) {
            throw ValidationError("synth: recency_mean_days must be in [0, 700)");
        }
        std::string key = std::string(to_string(sig.stratum)) + "/" + sig.concept_code;
        if (!seen_pairs.insert(key).second) {
            throw ValidationError("synth: planted concept '" + sig.concept_code +
                                  "' listed twice for stratum " + std::string(to_string(sig.stratum)));
        }
    }
}

std::vector<PlantedSignal> default_planted_signals(const std::array<int, 3>& n_concepts_per_domain,
                                                   int per_stratum, double target_prevalence,
                                                   double control_prevalence,
                                                   double recency_mean_days) {
    std::vector<PlantedSignal> out;
    for (int s = 0; s < kNumStrata; ++s) {
        for (int k = 0; k < per_stratum; ++k) {
            int g = s * per_stratum + k;
            int d = g % 3;
            int idx = g / 3;
            if (idx >= n_concepts_per_domain[d]) {
                throw ValidationError("synth: not enough dictionary concepts for the requested planted set");
            }
            out.push_back({kAllStrata[s], concept_code_name(static_cast<Domain>(d), idx),
                           target_prevalence, control_prevalence, recency_mean_days});
        }
    }
    return out;
}

std::vector<PlantedSignal> shared_planted_signals(const std::array<int, 3>& n_concepts_per_domain,
                                                  int count, double target_prevalence,
                                                  double control_prevalence,
                                                  double recency_mean_days) {
    std::vector<PlantedSignal> out;
    for (int g = 0; g < count; ++g) {
        int d = g % 3;
        int idx = g / 3;
        if (idx >= n_concepts_per_domain[d]) {
            throw ValidationError("synth: not enough dictionary concepts for the requested planted set");
        }
        for (int s = 0; s < kNumStrata; ++s) {
            out.push_back({kAllStrata[s], concept_code_name(static_cast<Domain>(d), idx),
                           target_prevalence, control_prevalence, recency_mean_days});
        }
    }
    return out;
}

SynthData generate(const SynthConfig& config) {
    config.validate();

    SynthData data;
    std::unordered_map<std::string, std::int32_t> code_index;
    for (int d = 0; d < 3; ++d) {
        for (int i = 0; i < config.n_concepts_per_domain[d]; ++i) {
            std::string code = concept_code_name(static_cast<Domain>(d), i);
            code_index.emplace(code, static_cast<std::int32_t>(data.concept_codes.size()));
            data.concept_codes.push_back(std::move(code));
            data.concept_domains.push_back(static_cast<Domain>(d));
        }
    }
    data.crs_codes = config.crs_codes;
    const auto n_dict = static_cast<std::int32_t>(data.concept_codes.size());

    struct PlantedRef {
        std::int32_t concept_id;
        double target_prevalence;
        double control_prevalence;
        double recency_mean_days;
    };
    std::array<std::vector<PlantedRef>, kNumStrata> planted_by_stratum;
    std::array<std::vector<std::uint8_t>, kNumStrata> planted_mask;
    for (auto& m : planted_mask) m.assign(n_dict, 0);
    for (const auto& sig : config.planted_signals) {
        int s = static_cast<int>(sig.stratum);
        std::int32_t c = code_index.at(sig.concept_code);
        planted_by_stratum[s].push_back(
            {c, sig.target_prevalence, sig.control_prevalence, sig.recency_mean_days});
        planted_mask[s][c] = 1;
    }

    std::vector<double> bucket_shares;
    bucket_shares.reserve(7);
    double sum_shares = 0.0;
    for (double p : config.strata_proportions) {
        bucket_shares.push_back(p);
        sum_shares += p;
    }
    bucket_shares.push_back(std::max(0.0, 1.0 - sum_shares));
    std::vector<int> counts = allocate_counts(config.n_participants, bucket_shares);

    const Date reference = reference_date();
    data.participants.reserve(config.n_participants);
    data.truth.person_ids.reserve(config.n_participants);
    data.truth.true_label.reserve(config.n_participants);
    data.truth.planted = config.planted_signals;

    double expected_events_per_person =
        2.5 + config.background_prevalence * static_cast<double>(n_dict) * 1.4;
    data.events.reserve(static_cast<std::size_t>(expected_events_per_person) * config.n_participants);

    std::int32_t person = 0;
    for (int bucket = 0; bucket < 7; ++bucket) {
        const bool in_strata = bucket < kNumStrata;
        const double rate = in_strata
                                ? config.stratum_target_rate(static_cast<StratumId>(bucket))
                                : config.target_fraction;
        for (int k = 0; k < counts[bucket]; ++k, ++person) {
            RngStream rng = RngStream::keyed(config.seed, "person", static_cast<std::uint64_t>(person));

            double age_years = rng.uniform(kAgeLo[bucket], kAgeHi[bucket]);
            Date anchor = add_days(reference, -rng.uniform_int(0, kAnchorSpreadDays));
            const bool target = rng.bernoulli(rate);
            int race = pick_index(rng, target ? kTargetRace[bucket] : kControlRace[bucket], 4);
            double hispanic_p = kHispanicBase[bucket] * (target ? 0.55 : 1.25);
            const bool hispanic = rng.bernoulli(std::min(hispanic_p, 0.95));

            Participant p;
            p.person_id = strfmt("p%07d", person + 1);
            p.sex_at_birth = bucket < 3 ? Sex::male
                                        : (in_strata ? Sex::female : Sex::other_unknown);
            p.birth_date = add_days(anchor, -static_cast<std::int64_t>(std::lround(age_years * 365.2425)));
            p.race = kRaces[race];
            p.ethnicity = hispanic ? "hispanic" : "not_hispanic";
            data.participants.push_back(std::move(p));
            data.truth.person_ids.push_back(data.participants.back().person_id);
            data.truth.true_label.push_back(target ? 1 : 0);

            auto emit = [&](std::int32_t concept_id, Date date) {
                data.events.push_back({person, concept_id, date});
            };

            if (!target && rng.bernoulli(0.01)) continue;  // sparse record, no events at all

            const auto n_crs = static_cast<std::int32_t>(data.crs_codes.size());
            auto crs_concept = [&] { return n_dict + static_cast<std::int32_t>(rng.uniform_int(0, n_crs - 1)); };
            if (target) {
                // Two or three qualifying codes inside a 511-day span starting
                // at the anchor, so the phenotype index date equals the anchor.
                emit(crs_concept(), anchor);
                emit(crs_concept(), add_days(anchor, rng.uniform_int(1, 510)));
                if (rng.bernoulli(0.3)) emit(crs_concept(), add_days(anchor, rng.uniform_int(0, 510)));
            } else {
                double u = rng.uniform();
                if (u < 0.12) {
                    emit(crs_concept(), add_days(anchor, -rng.uniform_int(0, 500)));
                } else if (u < 0.18) {
                    Date first = add_days(anchor, -rng.uniform_int(900, 1100));
                    emit(crs_concept(), first);
                    emit(crs_concept(), add_days(first, kLookbackDays + 1 + rng.uniform_int(10, 300)));
                }
            }

            if (in_strata) {
                for (const auto& sig : planted_by_stratum[bucket]) {
                    if (!rng.bernoulli(target ? sig.target_prevalence : sig.control_prevalence)) continue;
                    double mean = std::max(sig.recency_mean_days, 1e-9);
                    std::int64_t offset = std::min<std::int64_t>(rng.geometric(1.0 / (1.0 + mean)), 700);
                    Date last = add_days(anchor, -offset);
                    emit(sig.concept_id, last);
                    if (rng.bernoulli(0.4)) emit(sig.concept_id, add_days(last, -rng.uniform_int(30, 400)));
                }
            }

            const auto& mask = in_strata ? planted_mask[bucket] : planted_mask[0];
            for (std::int32_t c = 0; c < n_dict; ++c) {
                if (in_strata && mask[c]) continue;
                if (!rng.bernoulli(config.background_prevalence)) continue;
                Date last = add_days(anchor, -rng.uniform_int(0, kLookbackDays - 1));
                emit(c, last);
                // Targets accumulate more repeat visits than controls; repeat
                // occurrences are strictly older so group presence rates stay equal.
                int extras = target ? (rng.bernoulli(0.5) ? 1 : 0) + (rng.bernoulli(0.3) ? 1 : 0)
                                    : (rng.bernoulli(0.25) ? 1 : 0);
                for (int e = 0; e < extras; ++e) {
                    emit(c, add_days(last, -rng.uniform_int(1, 250)));
                }
            }
        }
    }
    return data;
}

void write_synth(const SynthData& data, const SynthPaths& paths) {
    CsvWriter people(paths.participants, {"person_id", "sex_at_birth", "birth_date", "race", "ethnicity"});
    for (const auto& p : data.participants) {
        people.row({p.person_id, std::string(to_string(p.sex_at_birth)), format_date(p.birth_date),
                    p.race, p.ethnicity});
    }
    people.close();

    CsvWriter events(paths.events, {"person_id", "concept_code", "domain", "event_date"});
    for (const auto& e : data.events) {
        events.row({data.participants[e.person].person_id, data.code_of(e.concept_id),
                    std::string(to_string(data.domain_of(e.concept_id))), format_date(e.date)});
    }
    events.close();

    CsvWriter truth(paths.ground_truth, {"person_id", "true_label"});
    for (std::size_t i = 0; i < data.truth.person_ids.size(); ++i) {
        truth.row({data.truth.person_ids[i], data.truth.true_label[i] ? "1" : "0"});
    }
    truth.close();

    CsvWriter planted(paths.planted_concepts,
                      {"stratum", "concept_code", "target_prevalence", "control_prevalence",
                       "recency_mean_days"});
    for (const auto& sig : data.truth.planted) {
        planted.row({std::string(to_string(sig.stratum)), sig.concept_code,
                     strfmt("%.6g", sig.target_prevalence), strfmt("%.6g", sig.control_prevalence),
                     strfmt("%.6g", sig.recency_mean_days)});
    }
    planted.close();
}

}  // namespace strata
