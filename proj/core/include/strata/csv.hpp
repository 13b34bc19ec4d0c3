#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace strata {

// Minimal comma-delimited reader for the pipeline's file contracts: UTF-8,
// first row is the header, fields contain no commas or quotes.
class CsvReader {
public:
    // Loads the whole file; throws ValidationError if missing or if the
    // header does not match `expected_header` exactly.
    CsvReader(const std::string& path, const std::vector<std::string>& expected_header);

    const std::string& path() const { return path_; }

    // Calls fn(line_number, fields) for every data row. Rows with a field
    // count different from the header raise ValidationError naming the line.
    void for_each_row(const std::function<void(std::size_t, const std::vector<std::string_view>&)>& fn) const;

    std::size_t n_rows() const;

private:
    std::string path_;
    std::string content_;
    std::size_t header_cols_ = 0;
    std::size_t body_offset_ = 0;
};

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<std::string>& fields);
    void close();

private:
    std::string path_;
    std::string buffer_;
    std::size_t cols_;
    bool open_ = true;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace strata
