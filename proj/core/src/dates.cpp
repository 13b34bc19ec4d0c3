#include "strata/dates.hpp"

#include <charconv>
#include <chrono>

#include "strata/common.hpp"

namespace strata {

namespace {

bool parse_int(std::string_view s, int& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::chrono::year_month_day to_ymd(Date d) {
    return std::chrono::year_month_day{
        std::chrono::sys_days{std::chrono::days{d.days}}};
}

}  // namespace

Date parse_date(std::string_view text, std::string_view where) {
    int y = 0, m = 0, d = 0;
    bool shape_ok = text.size() == 10 && text[4] == '-' && text[7] == '-' &&
                    parse_int(text.substr(0, 4), y) && parse_int(text.substr(5, 2), m) &&
                    parse_int(text.substr(8, 2), d);
    if (shape_ok) {
        std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
        if (ymd.ok()) {
            auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
            return Date{static_cast<std::int32_t>(days)};
        }
    }
    throw ValidationError(strfmt("%.*s: unparseable date '%.*s' (expected YYYY-MM-DD)",
                                 static_cast<int>(where.size()), where.data(),
                                 static_cast<int>(text.size()), text.data()));
}

std::string format_date(Date d) {
    auto ymd = to_ymd(d);
    return strfmt("%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

int whole_years_between(Date birth, Date at) {
    auto b = to_ymd(birth);
    auto a = to_ymd(at);
    int years = static_cast<int>(a.year()) - static_cast<int>(b.year());
    if (a.month() < b.month() || (a.month() == b.month() && a.day() < b.day())) --years;
    return years;
}

}  // namespace strata
