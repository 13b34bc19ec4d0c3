#pragma once

// Shared fixture builders for the unit and acceptance suites.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "strata/boosting.hpp"
#include "strata/common.hpp"
#include "strata/csv.hpp"
#include "strata/ehr.hpp"
#include "strata/featurize.hpp"

namespace strata::testing {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<unsigned> counter{0};
        path = std::filesystem::temp_directory_path() /
               strfmt("strata_test_%d_%u", static_cast<int>(::getpid()), counter++);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }
};

// Dense rows (kSentinel = absent) to the sparse matrix form. Default codes
// are C000, C001, ... in the condition domain; row ids index order.
inline RecencyFeatureMatrix make_matrix(const std::vector<std::vector<std::int32_t>>& rows,
                                        const std::vector<std::uint8_t>& labels,
                                        std::vector<std::string> codes = {}) {
    RecencyFeatureMatrix m;
    std::size_t n_cols = rows.empty() ? codes.size() : rows.front().size();
    if (codes.empty())
        for (std::size_t c = 0; c < n_cols; ++c) codes.push_back(strfmt("C%03zu", c));
    m.labels = labels;
    for (std::size_t i = 0; i < rows.size(); ++i) m.row_ids.push_back(strfmt("P%05zu", i));
    for (std::size_t c = 0; c < n_cols; ++c) {
        FeatureColumn col;
        col.code = codes[c];
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i][c] != kSentinel)
                col.cells.emplace_back(static_cast<std::int32_t>(i), rows[i][c]);
        m.columns.push_back(std::move(col));
    }
    std::sort(m.columns.begin(), m.columns.end(),
              [](const FeatureColumn& a, const FeatureColumn& b) { return a.code < b.code; });
    return m;
}

inline std::vector<std::vector<std::int32_t>> dense_of(const RecencyFeatureMatrix& m) {
    std::vector<std::vector<std::int32_t>> d(m.n_rows(),
                                             std::vector<std::int32_t>(m.n_columns(), kSentinel));
    for (std::size_t c = 0; c < m.n_columns(); ++c)
        for (const auto& [row, value] : m.columns[c].cells) d[row][c] = value;
    return d;
}

// Independent routing oracle: sentinel follows default_left, everything else
// compares value < threshold.
inline double walk_tree(const Tree& tree, const std::vector<std::int32_t>& row) {
    int n = 0;
    while (!tree.nodes[n].is_leaf()) {
        const TreeNode& node = tree.nodes[n];
        std::int32_t v = row[node.feature];
        if (v == kSentinel)
            n = node.default_left ? node.left : node.right;
        else
            n = v < node.threshold ? node.left : node.right;
    }
    return tree.nodes[n].weight;
}

inline double walk_margin(const GBDTModel& model, const std::vector<std::int32_t>& row) {
    double margin = model.base_margin();
    for (const Tree& t : model.trees) margin += model.params.learning_rate * walk_tree(t, row);
    return margin;
}

inline int leaf_index(const Tree& tree, const std::vector<std::int32_t>& row) {
    int n = 0;
    while (!tree.nodes[n].is_leaf()) {
        const TreeNode& node = tree.nodes[n];
        std::int32_t v = row[node.feature];
        if (v == kSentinel)
            n = node.default_left ? node.left : node.right;
        else
            n = v < node.threshold ? node.left : node.right;
    }
    return n;
}

// Row indices reaching each node, root included.
inline std::vector<std::vector<int>> node_rows(const Tree& tree,
                                               const std::vector<std::vector<std::int32_t>>& dense) {
    std::vector<std::vector<int>> out(tree.nodes.size());
    for (int i = 0; i < static_cast<int>(dense.size()); ++i) {
        int n = 0;
        out[0].push_back(i);
        while (!tree.nodes[n].is_leaf()) {
            const TreeNode& node = tree.nodes[n];
            std::int32_t v = dense[i][node.feature];
            if (v == kSentinel)
                n = node.default_left ? node.left : node.right;
            else
                n = v < node.threshold ? node.left : node.right;
            out[n].push_back(i);
        }
    }
    return out;
}

inline double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

struct PersonSpec {
    Participant who;
    std::vector<Event> events;
};

inline Participant person(std::string id, Sex sex, std::string_view birth,
                          std::string race = "race_a", std::string ethnicity = "eth_a") {
    Participant p;
    p.person_id = std::move(id);
    p.sex_at_birth = sex;
    p.birth_date = parse_date(birth, "fixture");
    p.race = std::move(race);
    p.ethnicity = std::move(ethnicity);
    return p;
}

inline Event event(std::string code, std::string_view date, Domain domain = Domain::condition) {
    Event e;
    e.concept_code = std::move(code);
    e.domain = domain;
    e.date = parse_date(date, "fixture");
    return e;
}

// The store only loads from disk by design, so fixtures round-trip through a
// scratch directory.
inline EventStore build_store(const std::vector<PersonSpec>& people) {
    TempDir dir;
    CsvWriter pw(dir.file("participants.csv"),
                 {"person_id", "sex_at_birth", "birth_date", "race", "ethnicity"});
    for (const PersonSpec& p : people)
        pw.row({p.who.person_id, std::string(to_string(p.who.sex_at_birth)),
                format_date(p.who.birth_date), p.who.race, p.who.ethnicity});
    pw.close();
    CsvWriter ew(dir.file("events.csv"), {"person_id", "concept_code", "domain", "event_date"});
    for (const PersonSpec& p : people)
        for (const Event& e : p.events)
            ew.row({p.who.person_id, e.concept_code, std::string(to_string(e.domain)),
                    format_date(e.date)});
    ew.close();
    return EventStore::load(dir.file("participants.csv"), dir.file("events.csv"));
}

}  // namespace strata::testing
