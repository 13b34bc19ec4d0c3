#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "strata/dates.hpp"

namespace strata {

enum class Sex { male, female, other_unknown };
enum class Domain { condition, procedure, medication };

std::string_view to_string(Sex s);
std::string_view to_string(Domain d);
Sex parse_sex(std::string_view text, std::string_view where);
Domain parse_domain(std::string_view text, std::string_view where);

struct Participant {
    std::string person_id;
    Sex sex_at_birth = Sex::other_unknown;
    Date birth_date;
    std::string race;
    std::string ethnicity;
};

// One coded clinical event; person identity is implicit in the per-person
// grouping inside EventStore.
struct Event {
    std::string concept_code;
    Domain domain = Domain::condition;
    Date date;
};

// Immutable participant + coded-event tables. Events are grouped per person
// and sorted ascending by date, so windowed queries are contiguous ranges.
class EventStore {
public:
    static EventStore load(const std::string& participants_path, const std::string& events_path);

    std::size_t n_participants() const { return participants_.size(); }
    std::size_t n_events() const { return n_events_; }

    const Participant& participant(std::int32_t person) const { return participants_[person]; }
    std::span<const Participant> participants() const { return participants_; }

    std::optional<std::int32_t> find_person(std::string_view person_id) const;
    // Throws ValidationError if the id is unknown.
    std::int32_t require_person(std::string_view person_id) const;

    std::span<const Event> events_of(std::int32_t person) const { return events_[person]; }

    // Events with end_date - window_days < date <= end_date, date-sorted.
    // The lower bound is exclusive so an event on the index date has offset 0
    // while one exactly window_days earlier falls outside.
    std::span<const Event> events_in_window(std::int32_t person, Date end_date,
                                            std::int64_t window_days) const;
    std::span<const Event> events_in_window(std::string_view person_id, Date end_date,
                                            std::int64_t window_days) const;

    void write(const std::string& participants_path, const std::string& events_path) const;

private:
    EventStore() = default;

    std::vector<Participant> participants_;
    std::vector<std::vector<Event>> events_;
    std::unordered_map<std::string, std::int32_t> index_;
    std::size_t n_events_ = 0;
};

}  // namespace strata
