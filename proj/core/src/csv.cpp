#include "strata/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "strata/common.hpp"

namespace strata {

namespace {

void split_line(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PipelineError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw PipelineError("short write: " + path);
}

CsvReader::CsvReader(const std::string& path, const std::vector<std::string>& expected_header)
    : path_(path), content_(read_text_file(path)) {
    std::size_t eol = content_.find('\n');
    std::string_view header = eol == std::string::npos
                                  ? std::string_view(content_)
                                  : std::string_view(content_).substr(0, eol);
    if (!header.empty() && header.back() == '\r') header.remove_suffix(1);
    std::vector<std::string_view> fields;
    split_line(header, fields);
    if (fields.size() != expected_header.size()) {
        throw ValidationError(strfmt("%s: expected %zu header columns, found %zu", path.c_str(),
                                     expected_header.size(), fields.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] != expected_header[i]) {
            throw ValidationError(strfmt("%s: header column %zu is '%.*s', expected '%s'",
                                         path.c_str(), i + 1, static_cast<int>(fields[i].size()),
                                         fields[i].data(), expected_header[i].c_str()));
        }
    }
    header_cols_ = expected_header.size();
    body_offset_ = eol == std::string::npos ? content_.size() : eol + 1;
}

void CsvReader::for_each_row(
    const std::function<void(std::size_t, const std::vector<std::string_view>&)>& fn) const {
    std::vector<std::string_view> fields;
    std::string_view body = std::string_view(content_).substr(body_offset_);
    std::size_t line_no = 1;  // header was line 1
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t eol = body.find('\n', pos);
        std::string_view line = eol == std::string_view::npos ? body.substr(pos)
                                                              : body.substr(pos, eol - pos);
        pos = eol == std::string_view::npos ? body.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        split_line(line, fields);
        if (fields.size() != header_cols_) {
            throw ValidationError(strfmt("%s line %zu: expected %zu fields, found %zu",
                                         path_.c_str(), line_no, header_cols_, fields.size()));
        }
        fn(line_no, fields);
    }
}

std::size_t CsvReader::n_rows() const {
    std::size_t n = 0;
    for_each_row([&n](std::size_t, const std::vector<std::string_view>&) { ++n; });
    return n;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), cols_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += header[i];
    }
    buffer_ += '\n';
}

CsvWriter::~CsvWriter() {
    if (open_) close();
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != cols_) {
        throw PipelineError(strfmt("%s: row has %zu fields, header has %zu", path_.c_str(),
                                   fields.size(), cols_));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += fields[i];
    }
    buffer_ += '\n';
}

void CsvWriter::close() {
    if (!open_) return;
    open_ = false;
    write_text_file(path_, buffer_);
}

}  // namespace strata
