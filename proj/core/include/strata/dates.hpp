#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace strata {

// Calendar date, stored as whole days since 1970-01-01. All durations in the
// pipeline are whole days; there is no time-of-day anywhere.
struct Date {
    std::int32_t days = 0;

    auto operator<=>(const Date&) const = default;
};

// Parses strict YYYY-MM-DD. `where` is prepended to error messages
// (e.g. "events.csv line 12"). Throws ValidationError on bad input.
Date parse_date(std::string_view text, std::string_view where);

std::string format_date(Date d);

inline Date add_days(Date d, std::int64_t n) {
    return Date{static_cast<std::int32_t>(d.days + n)};
}

inline std::int64_t days_between(Date later, Date earlier) {
    return static_cast<std::int64_t>(later.days) - earlier.days;
}

// Completed years of age at `at` for someone born on `birth`.
int whole_years_between(Date birth, Date at);

}  // namespace strata
