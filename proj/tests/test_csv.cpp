#include <string>
#include <vector>

#include "doctest.h"

#include "helpers.hpp"
#include "strata/common.hpp"
#include "strata/csv.hpp"

using namespace strata;
using strata::testing::TempDir;

TEST_CASE("csv writer and reader round trip") {
    TempDir dir;
    std::string path = dir.file("t.csv");
    {
        CsvWriter w(path, {"a", "b", "c"});
        w.row({"1", "two", "3.5"});
        w.row({"", "x", "y"});
        w.close();
    }
    CsvReader r(path, {"a", "b", "c"});
    CHECK(r.n_rows() == 2);
    std::vector<std::vector<std::string>> rows;
    r.for_each_row([&](std::size_t, const std::vector<std::string_view>& f) {
        rows.emplace_back(f.begin(), f.end());
    });
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == std::vector<std::string>{"1", "two", "3.5"});
    CHECK(rows[1] == std::vector<std::string>{"", "x", "y"});
}

TEST_CASE("csv reader validates the header") {
    TempDir dir;
    std::string path = dir.file("t.csv");
    write_text_file(path, "a,b\n1,2\n");
    CHECK_THROWS_AS(CsvReader(path, {"a", "c"}), ValidationError);
    CHECK_THROWS_AS(CsvReader(path, {"a", "b", "c"}), ValidationError);
    CHECK_NOTHROW(CsvReader(path, {"a", "b"}));
}

TEST_CASE("csv reader rejects ragged rows and reports the line") {
    TempDir dir;
    std::string path = dir.file("t.csv");
    write_text_file(path, "a,b\n1,2\n1,2,3\n");
    CsvReader r(path, {"a", "b"});
    std::string message;
    try {
        r.n_rows();
    } catch (const ValidationError& e) {
        message = e.what();
    }
    CHECK(message.find("line 3") != std::string::npos);
}

TEST_CASE("csv reader tolerates crlf and a missing final newline") {
    TempDir dir;
    std::string path = dir.file("t.csv");
    write_text_file(path, "a,b\r\n1,2\r\n3,4");
    CsvReader r(path, {"a", "b"});
    std::vector<std::string> seen;
    r.for_each_row([&](std::size_t, const std::vector<std::string_view>& f) {
        seen.emplace_back(std::string(f[0]) + "|" + std::string(f[1]));
    });
    CHECK(seen == std::vector<std::string>{"1|2", "3|4"});
}

TEST_CASE("missing file raises a validation error") {
    TempDir dir;
    CHECK_THROWS_AS(read_text_file(dir.file("absent.csv")), ValidationError);
    CHECK_THROWS_AS(CsvReader(dir.file("absent.csv"), {"a"}), ValidationError);
}

TEST_CASE("text file round trip preserves bytes") {
    TempDir dir;
    std::string path = dir.file("t.txt");
    std::string content = "line\n\nwith blank\nand no trailing newline";
    write_text_file(path, content);
    CHECK(read_text_file(path) == content);
}
