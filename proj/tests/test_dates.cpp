#include "doctest.h"

#include "strata/common.hpp"
#include "strata/dates.hpp"

using namespace strata;

TEST_CASE("date parse and format round trip") {
    for (const char* text : {"1970-01-01", "1999-12-31", "2000-02-29", "2020-02-29", "2023-06-05",
                             "1900-03-01", "2100-12-31"}) {
        Date d = parse_date(text, "test");
        CHECK(format_date(d) == text);
    }
}

TEST_CASE("date epoch anchoring") {
    CHECK(parse_date("1970-01-01", "test").days == 0);
    CHECK(parse_date("1970-01-02", "test").days == 1);
    CHECK(parse_date("1969-12-31", "test").days == -1);
    CHECK(parse_date("1972-02-29", "test").days == 365 + 365 + 31 + 28);
}

TEST_CASE("date rejects malformed input") {
    for (const char* text : {"", "1970-1-01", "1970-01-1", "19700101", "1970/01/01", "1970-13-01",
                             "1970-00-10", "1970-02-30", "2021-02-29", "1900-02-29", "x970-01-01",
                             "1970-01-011"}) {
        CHECK_THROWS_AS(parse_date(text, "test"), ValidationError);
    }
}

TEST_CASE("date arithmetic") {
    Date d = parse_date("2020-02-28", "test");
    CHECK(format_date(add_days(d, 1)) == "2020-02-29");
    CHECK(format_date(add_days(d, 2)) == "2020-03-01");
    CHECK(days_between(add_days(d, 730), d) == 730);
    CHECK(days_between(d, add_days(d, 5)) == -5);
    CHECK(d < add_days(d, 1));
}

TEST_CASE("whole years between respects the birthday") {
    Date birth = parse_date("1980-06-15", "test");
    CHECK(whole_years_between(birth, parse_date("2020-06-14", "test")) == 39);
    CHECK(whole_years_between(birth, parse_date("2020-06-15", "test")) == 40);
    CHECK(whole_years_between(birth, parse_date("2020-06-16", "test")) == 40);

    Date leap = parse_date("2000-02-29", "test");
    CHECK(whole_years_between(leap, parse_date("2001-02-28", "test")) == 0);
    CHECK(whole_years_between(leap, parse_date("2001-03-01", "test")) == 1);
}
