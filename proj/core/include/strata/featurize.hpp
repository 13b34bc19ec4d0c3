#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/cohort.hpp"
#include "strata/ehr.hpp"

namespace strata {

inline constexpr std::int32_t kSentinel = 999999;

struct FeatureColumn {
    std::string code;
    Domain domain = Domain::condition;
    // (row, recency_days), sorted ascending by row; rows not listed hold the
    // sentinel implicitly.
    std::vector<std::pair<std::int32_t, std::int32_t>> cells;
};

// Sparse person-by-concept matrix of recency values: days from the most
// recent in-window occurrence back to the index date, or kSentinel when the
// concept never occurs inside the window.
struct RecencyFeatureMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::uint8_t> labels;
    std::int64_t window_days = 730;
    std::vector<FeatureColumn> columns;  // sorted by code

    std::size_t n_rows() const { return row_ids.size(); }
    std::size_t n_columns() const { return columns.size(); }

    std::int32_t value(std::int32_t row, std::size_t column) const;
    int column_index(std::string_view code) const;  // -1 if absent

    // Same rows, only the listed columns (matrix column order preserved).
    RecencyFeatureMatrix restricted_to(const std::vector<std::string>& codes) const;
};

// Rows restricted to `rows`, in the given order; every column is kept (empty
// columns stay so models trained on any subset share one feature list).
RecencyFeatureMatrix subset_rows(const RecencyFeatureMatrix& matrix,
                                 const std::vector<std::size_t>& rows);

// Rows follow the cohort list. A column exists for every concept observed
// in-window for at least one cohort member.
RecencyFeatureMatrix encode_recency(const EventStore& store, const std::vector<CohortLabel>& cohort,
                                    std::int64_t window_days = 730);

// Drops every column whose code is in crs_code_set; warns if nothing is left.
RecencyFeatureMatrix strip_leakage(RecencyFeatureMatrix matrix,
                                   const std::vector<std::string>& crs_code_set);

// Sparse triplet dump plus a column sidecar (code, domain) so the schema
// survives the round trip.
void write_features(const RecencyFeatureMatrix& matrix, const std::string& features_path,
                    const std::string& columns_path);
RecencyFeatureMatrix read_features(const std::string& features_path, const std::string& columns_path,
                                   const std::vector<CohortLabel>& cohort, std::int64_t window_days);

}  // namespace strata
