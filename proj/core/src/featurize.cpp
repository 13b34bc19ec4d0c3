#include "strata/featurize.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "strata/common.hpp"
#include "strata/csv.hpp"

namespace strata {

std::int32_t RecencyFeatureMatrix::value(std::int32_t row, std::size_t column) const {
    const auto& cells = columns[column].cells;
    auto it = std::lower_bound(cells.begin(), cells.end(), row,
                               [](const auto& cell, std::int32_t r) { return cell.first < r; });
    return it != cells.end() && it->first == row ? it->second : kSentinel;
}

int RecencyFeatureMatrix::column_index(std::string_view code) const {
    auto it = std::lower_bound(columns.begin(), columns.end(), code,
                               [](const FeatureColumn& c, std::string_view key) { return c.code < key; });
    if (it == columns.end() || it->code != code) return -1;
    return static_cast<int>(it - columns.begin());
}

RecencyFeatureMatrix RecencyFeatureMatrix::restricted_to(const std::vector<std::string>& codes) const {
    std::unordered_set<std::string_view> keep(codes.begin(), codes.end());
    RecencyFeatureMatrix out;
    out.row_ids = row_ids;
    out.labels = labels;
    out.window_days = window_days;
    for (const auto& col : columns) {
        if (keep.count(col.code)) out.columns.push_back(col);
    }
    return out;
}

RecencyFeatureMatrix subset_rows(const RecencyFeatureMatrix& matrix,
                                 const std::vector<std::size_t>& rows) {
    RecencyFeatureMatrix out;
    out.window_days = matrix.window_days;
    out.row_ids.reserve(rows.size());
    out.labels.reserve(rows.size());
    std::vector<std::int32_t> remap(matrix.n_rows(), -1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= matrix.n_rows())
            throw ValidationError(strfmt("subset_rows: row %zu out of range", rows[i]));
        remap[rows[i]] = static_cast<std::int32_t>(i);
        out.row_ids.push_back(matrix.row_ids[rows[i]]);
        out.labels.push_back(matrix.labels[rows[i]]);
    }
    out.columns.reserve(matrix.columns.size());
    for (const auto& col : matrix.columns) {
        FeatureColumn c;
        c.code = col.code;
        c.domain = col.domain;
        for (const auto& [row, value] : col.cells)
            if (remap[row] >= 0) c.cells.emplace_back(remap[row], value);
        std::sort(c.cells.begin(), c.cells.end());
        out.columns.push_back(std::move(c));
    }
    return out;
}

RecencyFeatureMatrix encode_recency(const EventStore& store, const std::vector<CohortLabel>& cohort,
                                    std::int64_t window_days) {
    if (window_days <= 0) throw ValidationError("featurize: window_days must be > 0");

    RecencyFeatureMatrix matrix;
    matrix.window_days = window_days;
    matrix.row_ids.reserve(cohort.size());
    matrix.labels.reserve(cohort.size());

    std::unordered_map<std::string, std::size_t> column_of;
    std::map<std::string_view, std::pair<std::int32_t, Domain>> row_values;
    for (std::int32_t row = 0; row < static_cast<std::int32_t>(cohort.size()); ++row) {
        const CohortLabel& member = cohort[row];
        std::int32_t person = store.require_person(member.person_id);
        matrix.row_ids.push_back(member.person_id);
        matrix.labels.push_back(member.label == CohortGroup::target ? 1 : 0);

        row_values.clear();
        for (const Event& e : store.events_in_window(person, member.index_date, window_days)) {
            // Events arrive date-ascending, so the surviving value is the most
            // recent occurrence.
            row_values[e.concept_code] = {
                static_cast<std::int32_t>(days_between(member.index_date, e.date)), e.domain};
        }
        for (const auto& [code, cell] : row_values) {
            auto [it, inserted] = column_of.try_emplace(std::string(code), matrix.columns.size());
            if (inserted) matrix.columns.push_back({std::string(code), cell.second, {}});
            FeatureColumn& col = matrix.columns[it->second];
            col.domain = std::min(col.domain, cell.second);
            col.cells.emplace_back(row, cell.first);
        }
    }

    std::sort(matrix.columns.begin(), matrix.columns.end(),
              [](const FeatureColumn& a, const FeatureColumn& b) { return a.code < b.code; });
    return matrix;
}

RecencyFeatureMatrix strip_leakage(RecencyFeatureMatrix matrix,
                                   const std::vector<std::string>& crs_code_set) {
    std::unordered_set<std::string_view> crs(crs_code_set.begin(), crs_code_set.end());
    const bool had_columns = !matrix.columns.empty();
    std::erase_if(matrix.columns, [&](const FeatureColumn& c) { return crs.count(c.code) != 0; });
    if (had_columns && matrix.columns.empty()) {
        log::warn("featurize: every column was a leakage code; the matrix is now empty");
    }
    return matrix;
}

void write_features(const RecencyFeatureMatrix& matrix, const std::string& features_path,
                    const std::string& columns_path) {
    CsvWriter columns(columns_path, {"concept_code", "domain"});
    for (const auto& col : matrix.columns) {
        columns.row({col.code, std::string(to_string(col.domain))});
    }
    columns.close();

    // Row-major so each person's features are contiguous in the file.
    std::vector<std::vector<std::pair<std::size_t, std::int32_t>>> by_row(matrix.n_rows());
    for (std::size_t c = 0; c < matrix.columns.size(); ++c) {
        for (const auto& [row, value] : matrix.columns[c].cells) by_row[row].emplace_back(c, value);
    }
    CsvWriter features(features_path, {"person_id", "concept_code", "recency_days"});
    for (std::size_t row = 0; row < by_row.size(); ++row) {
        for (const auto& [c, value] : by_row[row]) {
            features.row({matrix.row_ids[row], matrix.columns[c].code, strfmt("%d", value)});
        }
    }
    features.close();
}

RecencyFeatureMatrix read_features(const std::string& features_path, const std::string& columns_path,
                                   const std::vector<CohortLabel>& cohort, std::int64_t window_days) {
    RecencyFeatureMatrix matrix;
    matrix.window_days = window_days;
    std::unordered_map<std::string_view, std::int32_t> row_of;
    for (const auto& member : cohort) {
        matrix.row_ids.push_back(member.person_id);
        matrix.labels.push_back(member.label == CohortGroup::target ? 1 : 0);
    }
    for (std::int32_t r = 0; r < static_cast<std::int32_t>(matrix.row_ids.size()); ++r) {
        if (!row_of.emplace(matrix.row_ids[r], r).second) {
            throw ValidationError("featurize: duplicate person_id '" + matrix.row_ids[r] +
                                  "' in cohort");
        }
    }

    std::unordered_map<std::string, std::size_t> column_of;
    CsvReader columns(columns_path, {"concept_code", "domain"});
    columns.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", columns_path.c_str(), line);
        auto [it, inserted] = column_of.emplace(std::string(f[0]), matrix.columns.size());
        if (!inserted) throw ValidationError(where + ": duplicate concept_code");
        matrix.columns.push_back({std::string(f[0]), parse_domain(f[1], where), {}});
    });

    CsvReader features(features_path, {"person_id", "concept_code", "recency_days"});
    features.for_each_row([&](std::size_t line, const std::vector<std::string_view>& f) {
        std::string where = strfmt("%s line %zu", features_path.c_str(), line);
        auto row_it = row_of.find(f[0]);
        if (row_it == row_of.end()) {
            throw ValidationError(strfmt("%s: person_id '%.*s' is not in the cohort", where.c_str(),
                                         static_cast<int>(f[0].size()), f[0].data()));
        }
        auto col_it = column_of.find(std::string(f[1]));
        if (col_it == column_of.end()) {
            throw ValidationError(strfmt("%s: concept_code '%.*s' is not in the column file",
                                         where.c_str(), static_cast<int>(f[1].size()), f[1].data()));
        }
        std::int32_t value = 0;
        auto [p, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), value);
        if (ec != std::errc() || p != f[2].data() + f[2].size() || value < 0 ||
            value > window_days) {
            throw ValidationError(where + ": recency_days must be an integer in [0, window_days]");
        }
        matrix.columns[col_it->second].cells.emplace_back(row_it->second, value);
    });

    for (auto& col : matrix.columns) {
        std::sort(col.cells.begin(), col.cells.end());
    }
    std::sort(matrix.columns.begin(), matrix.columns.end(),
              [](const FeatureColumn& a, const FeatureColumn& b) { return a.code < b.code; });
    return matrix;
}

}  // namespace strata
