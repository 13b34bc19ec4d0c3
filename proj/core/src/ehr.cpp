#include "strata/ehr.hpp"

#include <algorithm>

#include "strata/common.hpp"
#include "strata/csv.hpp"

namespace strata {

std::string_view to_string(Sex s) {
    switch (s) {
        case Sex::male: return "male";
        case Sex::female: return "female";
        case Sex::other_unknown: return "other_unknown";
    }
    return "other_unknown";
}

std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::condition: return "condition";
        case Domain::procedure: return "procedure";
        case Domain::medication: return "medication";
    }
    return "condition";
}

Sex parse_sex(std::string_view text, std::string_view where) {
    if (text == "male") return Sex::male;
    if (text == "female") return Sex::female;
    if (text == "other_unknown") return Sex::other_unknown;
    throw ValidationError(strfmt("%.*s: unknown sex_at_birth '%.*s'",
                                 static_cast<int>(where.size()), where.data(),
                                 static_cast<int>(text.size()), text.data()));
}

Domain parse_domain(std::string_view text, std::string_view where) {
    if (text == "condition") return Domain::condition;
    if (text == "procedure") return Domain::procedure;
    if (text == "medication") return Domain::medication;
    throw ValidationError(strfmt("%.*s: unknown domain '%.*s'",
                                 static_cast<int>(where.size()), where.data(),
                                 static_cast<int>(text.size()), text.data()));
}

EventStore EventStore::load(const std::string& participants_path, const std::string& events_path) {
    EventStore store;

    CsvReader people(participants_path,
                     {"person_id", "sex_at_birth", "birth_date", "race", "ethnicity"});
    people.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", participants_path.c_str(), line);
        Participant p;
        p.person_id = std::string(f[0]);
        if (p.person_id.empty()) throw ValidationError(where + ": empty person_id");
        p.sex_at_birth = parse_sex(f[1], where);
        p.birth_date = parse_date(f[2], where);
        p.race = std::string(f[3]);
        p.ethnicity = std::string(f[4]);
        auto [it, inserted] =
            store.index_.emplace(p.person_id, static_cast<std::int32_t>(store.participants_.size()));
        if (!inserted) {
            throw ValidationError(where + ": duplicate person_id '" + p.person_id + "'");
        }
        store.participants_.push_back(std::move(p));
    });

    store.events_.resize(store.participants_.size());
    CsvReader events(events_path, {"person_id", "concept_code", "domain", "event_date"});
    events.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", events_path.c_str(), line);
        auto it = store.index_.find(std::string(f[0]));
        if (it == store.index_.end()) {
            throw ValidationError(strfmt("%s: event references unknown person_id '%.*s'",
                                         where.c_str(), static_cast<int>(f[0].size()), f[0].data()));
        }
        Event e;
        e.concept_code = std::string(f[1]);
        if (e.concept_code.empty()) throw ValidationError(where + ": empty concept_code");
        e.domain = parse_domain(f[2], where);
        e.date = parse_date(f[3], where);
        if (e.date < store.participants_[it->second].birth_date) {
            throw ValidationError(strfmt("%s: event on %s predates birth date %s of '%s'",
                                         where.c_str(), format_date(e.date).c_str(),
                                         format_date(store.participants_[it->second].birth_date).c_str(),
                                         store.participants_[it->second].person_id.c_str()));
        }
        store.events_[it->second].push_back(std::move(e));
        ++store.n_events_;
    });

    for (auto& list : store.events_) {
        std::stable_sort(list.begin(), list.end(),
                         [](const Event& a, const Event& b) { return a.date < b.date; });
    }
    return store;
}

std::optional<std::int32_t> EventStore::find_person(std::string_view person_id) const {
    auto it = index_.find(std::string(person_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::int32_t EventStore::require_person(std::string_view person_id) const {
    auto idx = find_person(person_id);
    if (!idx) {
        throw ValidationError(strfmt("unknown person_id '%.*s'",
                                     static_cast<int>(person_id.size()), person_id.data()));
    }
    return *idx;
}

std::span<const Event> EventStore::events_in_window(std::int32_t person, Date end_date,
                                                    std::int64_t window_days) const {
    if (window_days <= 0) throw ValidationError("window_days must be positive");
    const auto& list = events_[person];
    // (end - window, end]; compute the open lower bound in 64 bits to survive
    // very large windows.
    std::int64_t open_lo = static_cast<std::int64_t>(end_date.days) - window_days;
    auto first = std::upper_bound(list.begin(), list.end(), open_lo,
                                  [](std::int64_t lo, const Event& e) { return lo < e.date.days; });
    auto last = std::upper_bound(list.begin(), list.end(), end_date,
                                 [](Date end, const Event& e) { return end < e.date; });
    return {first, last};
}

std::span<const Event> EventStore::events_in_window(std::string_view person_id, Date end_date,
                                                    std::int64_t window_days) const {
    return events_in_window(require_person(person_id), end_date, window_days);
}

void EventStore::write(const std::string& participants_path, const std::string& events_path) const {
    CsvWriter people(participants_path, {"person_id", "sex_at_birth", "birth_date", "race", "ethnicity"});
    for (const auto& p : participants_) {
        people.row({p.person_id, std::string(to_string(p.sex_at_birth)), format_date(p.birth_date),
                    p.race, p.ethnicity});
    }
    people.close();
    CsvWriter out(events_path, {"person_id", "concept_code", "domain", "event_date"});
    for (std::size_t i = 0; i < events_.size(); ++i) {
        for (const auto& e : events_[i]) {
            out.row({participants_[i].person_id, e.concept_code, std::string(to_string(e.domain)),
                     format_date(e.date)});
        }
    }
    out.close();
}

}  // namespace strata
