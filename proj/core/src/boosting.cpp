#include "strata/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "strata/common.hpp"
#include "strata/csv.hpp"
#include "strata/rng.hpp"

namespace strata {

namespace {

double sigmoid(double m) { return 1.0 / (1.0 + std::exp(-m)); }

double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

double leaf_weight(double G, double H, const GBDTParams& p) {
    double denom = H + p.reg_lambda;
    if (denom <= 0.0) return 0.0;  // empty leaf with lambda = 0
    return -soft_threshold(G, p.reg_alpha) / denom;
}

double split_gain(double GL, double HL, double GR, double HR, double GN, double HN,
                  const GBDTParams& p) {
    auto term = [&](double G, double H) { return G * G / (H + p.reg_lambda); };
    return 0.5 * (term(GL, HL) + term(GR, HR) - term(GN, HN)) - p.gamma;
}

struct Candidate {
    bool valid = false;
    double gain = 0.0;
    int column = 0;  // matrix/global column index
    double threshold = 0.0;
    bool default_left = true;
    double GL = 0.0, HL = 0.0, GR = 0.0, HR = 0.0;
};

// Total order so the chosen split is independent of evaluation schedule.
bool better(const Candidate& a, const Candidate& b) {
    if (a.valid != b.valid) return a.valid;
    if (!a.valid) return false;
    if (a.gain != b.gain) return a.gain > b.gain;
    if (a.column != b.column) return a.column < b.column;
    if (a.threshold != b.threshold) return a.threshold < b.threshold;
    return a.default_left && !b.default_left;
}

struct ColumnEntry {
    double value;
    std::int32_t rank;  // canonical row rank (by row id), breaks value ties
    std::int32_t row;
};

struct ScanState {
    double G = 0.0;
    double H = 0.0;
    double prev = 0.0;
    bool any = false;
};

int route(const TreeNode& node, std::int32_t value) {
    if (value == kSentinel) return node.default_left ? node.left : node.right;
    return static_cast<double>(value) < node.threshold ? node.left : node.right;
}

int leaf_of(const Tree& tree, const RecencyFeatureMatrix& matrix, const std::vector<int>& col_map,
            std::int32_t row) {
    int nid = 0;
    while (!tree.nodes[nid].is_leaf()) {
        nid = route(tree.nodes[nid], matrix.value(row, col_map[tree.nodes[nid].feature]));
    }
    return nid;
}

std::vector<int> map_features(const GBDTModel& model, const RecencyFeatureMatrix& matrix) {
    std::vector<int> col_map(model.feature_names.size());
    for (std::size_t f = 0; f < model.feature_names.size(); ++f) {
        int c = matrix.column_index(model.feature_names[f]);
        if (c < 0) {
            throw ValidationError("boosting: matrix lacks trained feature '" +
                                  model.feature_names[f] + "'");
        }
        col_map[f] = c;
    }
    return col_map;
}

// Cover-weighted expected value per node, leaves up.
std::vector<double> expected_values(const Tree& tree) {
    std::vector<double> expected(tree.nodes.size(), 0.0);
    for (std::size_t nid = tree.nodes.size(); nid-- > 0;) {
        const TreeNode& node = tree.nodes[nid];
        if (node.is_leaf()) {
            expected[nid] = node.weight;
            continue;
        }
        double cl = tree.nodes[node.left].cover;
        double cr = tree.nodes[node.right].cover;
        expected[nid] = cl + cr > 0.0
                            ? (cl * expected[node.left] + cr * expected[node.right]) / (cl + cr)
                            : 0.5 * (expected[node.left] + expected[node.right]);
    }
    return expected;
}

}  // namespace

void GBDTParams::validate() const {
    // Zero rounds is legal: the model is then the base_score prior.
    if (n_estimators < 0) throw ValidationError("boosting: n_estimators must be >= 0");
    if (max_depth < 1) throw ValidationError("boosting: max_depth must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
        throw ValidationError("boosting: learning_rate must be in (0, 1]");
    }
    if (!(subsample > 0.0 && subsample <= 1.0)) {
        throw ValidationError("boosting: subsample must be in (0, 1]");
    }
    if (!(colsample_bytree > 0.0 && colsample_bytree <= 1.0)) {
        throw ValidationError("boosting: colsample_bytree must be in (0, 1]");
    }
    if (reg_alpha < 0.0 || reg_lambda < 0.0 || gamma < 0.0 || min_child_weight < 0.0) {
        throw ValidationError("boosting: reg_alpha, reg_lambda, gamma, min_child_weight must be >= 0");
    }
    if (!(base_score > 0.0 && base_score < 1.0)) {
        throw ValidationError("boosting: base_score must be in (0, 1)");
    }
}

double GBDTModel::base_margin() const {
    return std::log(params.base_score / (1.0 - params.base_score));
}

GBDTModel train(const RecencyFeatureMatrix& matrix, const GBDTParams& params, int workers) {
    params.validate();
    const auto n = static_cast<std::int32_t>(matrix.n_rows());
    const auto n_cols = static_cast<int>(matrix.n_columns());
    if (n == 0) throw ValidationError("boosting: empty matrix");

    // Canonical row order by row id: all cross-row reductions follow it, so
    // training does not depend on the storage order of rows.
    std::vector<std::int32_t> row_at_rank(n);
    std::iota(row_at_rank.begin(), row_at_rank.end(), 0);
    std::sort(row_at_rank.begin(), row_at_rank.end(), [&](std::int32_t a, std::int32_t b) {
        return matrix.row_ids[a] < matrix.row_ids[b];
    });
    std::vector<std::int32_t> rank_of(n);
    for (std::int32_t r = 0; r < n; ++r) rank_of[row_at_rank[r]] = r;
    std::vector<std::uint64_t> row_key(n);
    for (std::int32_t i = 0; i < n; ++i) row_key[i] = fnv1a64(matrix.row_ids[i]);

    std::vector<std::vector<ColumnEntry>> entries(n_cols);
    for (int c = 0; c < n_cols; ++c) {
        entries[c].reserve(matrix.columns[c].cells.size());
        for (const auto& [row, value] : matrix.columns[c].cells) {
            entries[c].push_back({static_cast<double>(value), rank_of[row], row});
        }
        std::sort(entries[c].begin(), entries[c].end(), [](const ColumnEntry& a, const ColumnEntry& b) {
            if (a.value != b.value) return a.value < b.value;
            return a.rank < b.rank;
        });
    }

    GBDTModel model;
    model.params = params;
    model.feature_names.reserve(n_cols);
    for (const auto& col : matrix.columns) model.feature_names.push_back(col.code);

    std::vector<double> margins(n, model.base_margin());
    std::vector<double> g(n), h(n);
    std::vector<std::uint8_t> sampled(n);
    std::vector<std::int32_t> row_node(n);

    for (int t = 0; t < params.n_estimators; ++t) {
        for (std::int32_t i = 0; i < n; ++i) {
            double p = sigmoid(margins[i]);
            g[i] = p - (matrix.labels[i] ? 1.0 : 0.0);
            h[i] = p * (1.0 - p);
        }
        for (std::int32_t i = 0; i < n; ++i) {
            sampled[i] = params.subsample >= 1.0 ||
                                 keyed_uniform01(params.seed, row_key[i],
                                                 static_cast<std::uint64_t>(t)) < params.subsample
                             ? 1
                             : 0;
        }

        std::vector<int> sel_cols(n_cols);
        std::iota(sel_cols.begin(), sel_cols.end(), 0);
        if (params.colsample_bytree < 1.0 && n_cols > 1) {
            auto k = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(params.colsample_bytree * n_cols - 1e-9)));
            RngStream cs = RngStream::keyed(params.seed, "colsample", static_cast<std::uint64_t>(t));
            for (std::size_t i = 0; i < k && i + 1 < sel_cols.size(); ++i) {
                auto j = static_cast<std::size_t>(
                    cs.uniform_int(static_cast<std::int64_t>(i),
                                   static_cast<std::int64_t>(sel_cols.size()) - 1));
                std::swap(sel_cols[i], sel_cols[j]);
            }
            sel_cols.resize(std::min(k, sel_cols.size()));
            std::sort(sel_cols.begin(), sel_cols.end());
        }

        Tree tree;
        double G0 = 0.0, H0 = 0.0;
        for (std::int32_t r = 0; r < n; ++r) {
            std::int32_t row = row_at_rank[r];
            if (!sampled[row]) continue;
            G0 += g[row];
            H0 += h[row];
        }
        tree.nodes.push_back({});
        tree.nodes[0].cover = H0;
        std::vector<std::pair<double, double>> node_stats{{G0, H0}};
        std::fill(row_node.begin(), row_node.end(), -1);
        for (std::int32_t i = 0; i < n; ++i) {
            if (sampled[i]) row_node[i] = 0;
        }

        std::vector<int> frontier{0};
        for (int depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
            const auto n_frontier = frontier.size();
            std::vector<int> node_slot(tree.nodes.size(), -1);
            for (std::size_t s = 0; s < n_frontier; ++s) node_slot[frontier[s]] = static_cast<int>(s);

            std::vector<Candidate> col_best(sel_cols.size() * n_frontier);
            parallel_for(sel_cols.size(), workers, [&](std::size_t begin, std::size_t end) {
                std::vector<ScanState> states(n_frontier);
                for (std::size_t ci = begin; ci < end; ++ci) {
                    const int c = sel_cols[ci];
                    const auto& col = entries[c];
                    Candidate* best = &col_best[ci * n_frontier];

                    auto consider = [&](int slot, double threshold, bool default_left, double GL,
                                        double HL, double GR, double HR) {
                        if (HL < params.min_child_weight || HR < params.min_child_weight) return;
                        double gain = split_gain(GL, HL, GR, HR, node_stats[frontier[slot]].first,
                                                 node_stats[frontier[slot]].second, params);
                        if (!(gain > 0.0)) return;  // also drops NaN from 0/0 corner cases
                        Candidate cand{true, gain, c, threshold, default_left, GL, HL, GR, HR};
                        if (better(cand, best[slot])) best[slot] = cand;
                    };

                    // Forward: sentinel rows routed right of every threshold.
                    std::fill(states.begin(), states.end(), ScanState{});
                    for (const auto& e : col) {
                        std::int32_t nid = row_node[e.row];
                        if (nid < 0) continue;
                        int slot = node_slot[nid];
                        if (slot < 0) continue;
                        ScanState& st = states[slot];
                        if (st.any && e.value != st.prev) {
                            double GN = node_stats[nid].first, HN = node_stats[nid].second;
                            consider(slot, 0.5 * (st.prev + e.value), false, st.G, st.H, GN - st.G,
                                     HN - st.H);
                        }
                        st.G += g[e.row];
                        st.H += h[e.row];
                        st.prev = e.value;
                        st.any = true;
                    }
                    // Backward: sentinel rows routed left.
                    std::fill(states.begin(), states.end(), ScanState{});
                    for (auto it = col.rbegin(); it != col.rend(); ++it) {
                        const auto& e = *it;
                        std::int32_t nid = row_node[e.row];
                        if (nid < 0) continue;
                        int slot = node_slot[nid];
                        if (slot < 0) continue;
                        ScanState& st = states[slot];
                        if (st.any && e.value != st.prev) {
                            double GN = node_stats[nid].first, HN = node_stats[nid].second;
                            consider(slot, 0.5 * (st.prev + e.value), true, GN - st.G, HN - st.H,
                                     st.G, st.H);
                        }
                        st.G += g[e.row];
                        st.H += h[e.row];
                        st.prev = e.value;
                        st.any = true;
                    }
                }
            });

            std::vector<Candidate> chosen(n_frontier);
            for (std::size_t ci = 0; ci < sel_cols.size(); ++ci) {
                for (std::size_t s = 0; s < n_frontier; ++s) {
                    if (better(col_best[ci * n_frontier + s], chosen[s])) {
                        chosen[s] = col_best[ci * n_frontier + s];
                    }
                }
            }

            std::vector<int> next_frontier;
            for (std::size_t s = 0; s < n_frontier; ++s) {
                int nid = frontier[s];
                const Candidate& best = chosen[s];
                if (!best.valid) {
                    tree.nodes[nid].weight =
                        leaf_weight(node_stats[nid].first, node_stats[nid].second, params);
                    continue;
                }
                // Child ids are fixed before the push_backs: those may grow
                // tree.nodes, so no reference into it survives them.
                const int left_id = static_cast<int>(tree.nodes.size());
                const int right_id = left_id + 1;
                {
                    TreeNode& node = tree.nodes[nid];
                    node.feature = best.column;
                    node.threshold = best.threshold;
                    node.default_left = best.default_left;
                    node.gain = best.gain;
                    node.left = left_id;
                    node.right = right_id;
                }
                TreeNode left, right;
                left.cover = best.HL;
                right.cover = best.HR;
                tree.nodes.push_back(left);
                tree.nodes.push_back(right);
                node_stats.push_back({best.GL, best.HL});
                node_stats.push_back({best.GR, best.HR});
                next_frontier.push_back(left_id);
                next_frontier.push_back(right_id);
            }

            if (!next_frontier.empty()) {
                for (std::int32_t i = 0; i < n; ++i) {
                    std::int32_t nid = row_node[i];
                    if (nid < 0 || tree.nodes[nid].is_leaf()) continue;
                    const TreeNode& node = tree.nodes[nid];
                    row_node[i] = route(node, matrix.value(i, node.feature));
                }
            }
            frontier = std::move(next_frontier);
        }
        for (int nid : frontier) {
            tree.nodes[nid].weight = leaf_weight(node_stats[nid].first, node_stats[nid].second, params);
        }

        std::vector<int> col_map(n_cols);
        std::iota(col_map.begin(), col_map.end(), 0);
        for (std::int32_t i = 0; i < n; ++i) {
            int leaf = row_node[i] >= 0 && tree.nodes[row_node[i]].is_leaf()
                           ? row_node[i]
                           : leaf_of(tree, matrix, col_map, i);
            margins[i] += params.learning_rate * tree.nodes[leaf].weight;
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

std::vector<double> predict_margin(const GBDTModel& model, const RecencyFeatureMatrix& matrix) {
    std::vector<int> col_map = map_features(model, matrix);
    std::vector<double> margins(matrix.n_rows(), model.base_margin());
    for (std::int32_t row = 0; row < static_cast<std::int32_t>(matrix.n_rows()); ++row) {
        double acc = 0.0;
        for (const Tree& tree : model.trees) {
            acc += tree.nodes[leaf_of(tree, matrix, col_map, row)].weight;
        }
        margins[row] += model.params.learning_rate * acc;
    }
    return margins;
}

std::vector<double> predict_proba(const GBDTModel& model, const RecencyFeatureMatrix& matrix) {
    std::vector<double> out = predict_margin(model, matrix);
    for (double& m : out) m = sigmoid(m);
    return out;
}

double mean_logloss(const std::vector<double>& proba, const std::vector<std::uint8_t>& labels) {
    if (proba.size() != labels.size() || proba.empty()) {
        throw ValidationError("logloss: probability/label length mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < proba.size(); ++i) {
        double p = std::clamp(proba[i], 1e-15, 1.0 - 1e-15);
        total += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return total / static_cast<double>(proba.size());
}

std::vector<double> gain_importance(const GBDTModel& model) {
    std::vector<double> importance(model.feature_names.size(), 0.0);
    for (const Tree& tree : model.trees) {
        for (const TreeNode& node : tree.nodes) {
            if (!node.is_leaf()) importance[node.feature] += node.gain;
        }
    }
    return importance;
}

namespace {

void saabas_row(const GBDTModel& model, const std::vector<std::vector<double>>& expected,
                const RecencyFeatureMatrix& matrix, const std::vector<int>& col_map,
                std::int32_t row, Attribution& out) {
    out.bias = model.base_margin();
    out.contributions.assign(model.feature_names.size(), 0.0);
    const double eta = model.params.learning_rate;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        const Tree& tree = model.trees[t];
        out.bias += eta * expected[t][0];
        int nid = 0;
        while (!tree.nodes[nid].is_leaf()) {
            const TreeNode& node = tree.nodes[nid];
            int child = route(node, matrix.value(row, col_map[node.feature]));
            out.contributions[node.feature] += eta * (expected[t][child] - expected[t][nid]);
            nid = child;
        }
    }
}

std::vector<std::vector<double>> all_expected(const GBDTModel& model) {
    std::vector<std::vector<double>> expected;
    expected.reserve(model.trees.size());
    for (const Tree& tree : model.trees) expected.push_back(expected_values(tree));
    return expected;
}

struct PathElement {
    int feature = -1;
    double zero_fraction = 1.0;
    double one_fraction = 1.0;
    double pweight = 1.0;
};

void extend_path(std::vector<PathElement>& path, double zero_fraction, double one_fraction,
                 int feature) {
    path.push_back({feature, zero_fraction, one_fraction, path.empty() ? 1.0 : 0.0});
    const auto l = static_cast<int>(path.size()) - 1;
    for (int i = l - 1; i >= 0; --i) {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / (l + 1);
        path[i].pweight = zero_fraction * path[i].pweight * (l - i) / (l + 1);
    }
}

double unwound_sum(const std::vector<PathElement>& path, int i) {
    const auto l = static_cast<int>(path.size()) - 1;
    double next = path[l].pweight;
    double total = 0.0;
    const double one = path[i].one_fraction;
    const double zero = path[i].zero_fraction;
    for (int j = l - 1; j >= 0; --j) {
        if (one != 0.0) {
            double t = next * (l + 1) / ((j + 1) * one);
            total += t;
            next = path[j].pweight - t * zero * (l - j) / (l + 1);
        } else {
            total += path[j].pweight * (l + 1) / (zero * (l - j));
        }
    }
    return total;
}

std::vector<PathElement> unwind_path(std::vector<PathElement> path, int i) {
    const auto l = static_cast<int>(path.size()) - 1;
    double next = path[l].pweight;
    const double one = path[i].one_fraction;
    const double zero = path[i].zero_fraction;
    for (int j = l - 1; j >= 0; --j) {
        if (one != 0.0) {
            double t = next * (l + 1) / ((j + 1) * one);
            next = path[j].pweight - t * zero * (l - j) / (l + 1);
            path[j].pweight = t;
        } else {
            path[j].pweight = path[j].pweight * (l + 1) / (zero * (l - j));
        }
    }
    for (int j = i; j < l; ++j) {
        path[j].feature = path[j + 1].feature;
        path[j].zero_fraction = path[j + 1].zero_fraction;
        path[j].one_fraction = path[j + 1].one_fraction;
    }
    path.pop_back();
    return path;
}

void tree_shap_recurse(const Tree& tree, const RecencyFeatureMatrix& matrix,
                       const std::vector<int>& col_map, std::int32_t row, int nid,
                       std::vector<PathElement> path, double zero_fraction, double one_fraction,
                       int feature, double scale, std::vector<double>& phi) {
    extend_path(path, zero_fraction, one_fraction, feature);
    const TreeNode& node = tree.nodes[nid];
    if (node.is_leaf()) {
        for (int i = 1; i < static_cast<int>(path.size()); ++i) {
            phi[path[i].feature] += unwound_sum(path, i) *
                                    (path[i].one_fraction - path[i].zero_fraction) * scale *
                                    node.weight;
        }
        return;
    }
    int hot = route(node, matrix.value(row, col_map[node.feature]));
    int cold = hot == node.left ? node.right : node.left;
    double cover = node.cover > 0.0 ? node.cover : 1.0;
    double hot_fraction = tree.nodes[hot].cover / cover;
    double cold_fraction = tree.nodes[cold].cover / cover;

    double incoming_zero = 1.0;
    double incoming_one = 1.0;
    for (int i = 1; i < static_cast<int>(path.size()); ++i) {
        if (path[i].feature == node.feature) {
            incoming_zero = path[i].zero_fraction;
            incoming_one = path[i].one_fraction;
            path = unwind_path(std::move(path), i);
            break;
        }
    }
    tree_shap_recurse(tree, matrix, col_map, row, hot, path, incoming_zero * hot_fraction,
                      incoming_one, node.feature, scale, phi);
    tree_shap_recurse(tree, matrix, col_map, row, cold, std::move(path),
                      incoming_zero * cold_fraction, 0.0, node.feature, scale, phi);
}

}  // namespace

Attribution path_contributions(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                               std::int32_t row) {
    std::vector<int> col_map = map_features(model, matrix);
    Attribution out;
    saabas_row(model, all_expected(model), matrix, col_map, row, out);
    return out;
}

Attribution shap_contributions(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                               std::int32_t row) {
    std::vector<int> col_map = map_features(model, matrix);
    auto expected = all_expected(model);
    Attribution out;
    out.bias = model.base_margin();
    out.contributions.assign(model.feature_names.size(), 0.0);
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        out.bias += model.params.learning_rate * expected[t][0];
        tree_shap_recurse(model.trees[t], matrix, col_map, row, 0, {}, 1.0, 1.0, -1,
                          model.params.learning_rate, out.contributions);
    }
    return out;
}

std::vector<double> mean_abs_contributions(const GBDTModel& model,
                                           const RecencyFeatureMatrix& matrix, int workers) {
    const auto n = static_cast<std::int32_t>(matrix.n_rows());
    const auto n_features = model.feature_names.size();
    if (n == 0) return std::vector<double>(n_features, 0.0);
    std::vector<int> col_map = map_features(model, matrix);
    auto expected = all_expected(model);

    // Fixed-size blocks reduced in index order keep the sum independent of
    // the worker count.
    constexpr std::int32_t kBlock = 256;
    const auto n_blocks = static_cast<std::size_t>((n + kBlock - 1) / kBlock);
    std::vector<std::vector<double>> partial(n_blocks);
    parallel_for(n_blocks, workers, [&](std::size_t begin, std::size_t end) {
        Attribution scratch;
        for (std::size_t b = begin; b < end; ++b) {
            partial[b].assign(n_features, 0.0);
            std::int32_t lo = static_cast<std::int32_t>(b) * kBlock;
            std::int32_t hi = std::min<std::int32_t>(lo + kBlock, n);
            for (std::int32_t row = lo; row < hi; ++row) {
                saabas_row(model, expected, matrix, col_map, row, scratch);
                for (std::size_t f = 0; f < n_features; ++f) {
                    partial[b][f] += std::abs(scratch.contributions[f]);
                }
            }
        }
    });
    std::vector<double> mean(n_features, 0.0);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        for (std::size_t f = 0; f < n_features; ++f) mean[f] += partial[b][f];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    return mean;
}

void save_model(const GBDTModel& model, const std::string& path) {
    std::ostringstream out;
    out << "strata_gbdt 1\n";
    const GBDTParams& p = model.params;
    out << strfmt("params %d %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %llu\n",
                  p.n_estimators, p.max_depth, p.learning_rate, p.subsample, p.colsample_bytree,
                  p.reg_alpha, p.reg_lambda, p.gamma, p.min_child_weight, p.base_score,
                  static_cast<unsigned long long>(p.seed));
    out << "features " << model.feature_names.size() << "\n";
    for (const auto& name : model.feature_names) out << name << "\n";
    out << "trees " << model.trees.size() << "\n";
    for (const Tree& tree : model.trees) {
        out << "tree " << tree.nodes.size() << "\n";
        for (const TreeNode& n : tree.nodes) {
            out << strfmt("%d %.17g %d %d %d %.17g %.17g %.17g\n", n.feature, n.threshold,
                          n.default_left ? 1 : 0, n.left, n.right, n.weight, n.cover, n.gain);
        }
    }
    write_text_file(path, out.str());
}

GBDTModel load_model(const std::string& path) {
    std::istringstream in(read_text_file(path));
    auto fail = [&](const std::string& what) -> std::runtime_error {
        return ValidationError("model file " + path + ": " + what);
    };
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "strata_gbdt" || version != 1) {
        throw fail("not a version-1 model file");
    }
    GBDTModel model;
    GBDTParams& p = model.params;
    std::string token;
    unsigned long long seed = 0;
    if (!(in >> token) || token != "params" ||
        !(in >> p.n_estimators >> p.max_depth >> p.learning_rate >> p.subsample >>
          p.colsample_bytree >> p.reg_alpha >> p.reg_lambda >> p.gamma >> p.min_child_weight >>
          p.base_score >> seed)) {
        throw fail("malformed params line");
    }
    p.seed = seed;
    std::size_t n_features = 0;
    if (!(in >> token >> n_features) || token != "features") throw fail("malformed features header");
    model.feature_names.resize(n_features);
    for (auto& name : model.feature_names) {
        if (!(in >> name)) throw fail("truncated feature list");
    }
    std::size_t n_trees = 0;
    if (!(in >> token >> n_trees) || token != "trees") throw fail("malformed trees header");
    model.trees.resize(n_trees);
    for (Tree& tree : model.trees) {
        std::size_t n_nodes = 0;
        if (!(in >> token >> n_nodes) || token != "tree" || n_nodes == 0) {
            throw fail("malformed tree header");
        }
        tree.nodes.resize(n_nodes);
        for (TreeNode& n : tree.nodes) {
            int default_left = 0;
            if (!(in >> n.feature >> n.threshold >> default_left >> n.left >> n.right >> n.weight >>
                  n.cover >> n.gain)) {
                throw fail("truncated node table");
            }
            n.default_left = default_left != 0;
            if (n.feature >= static_cast<int>(n_features)) throw fail("node feature out of range");
            if (!n.is_leaf() &&
                (n.left < 0 || n.right < 0 || n.left >= static_cast<int>(n_nodes) ||
                 n.right >= static_cast<int>(n_nodes))) {
                throw fail("node child out of range");
            }
        }
    }
    return model;
}

}  // namespace strata
