#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/featurize.hpp"

namespace strata {

struct GBDTParams {
    int n_estimators = 100;
    int max_depth = 6;
    double learning_rate = 0.1;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    double reg_alpha = 0.0;
    double reg_lambda = 1.0;
    double gamma = 0.0;
    double min_child_weight = 1.0;
    double base_score = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// Flattened binary tree; node 0 is the root. Internal nodes carry a split,
// leaves carry a weight. `cover` is the hessian mass of the training rows
// that reached the node; `gain` is the realized split gain (gamma already
// subtracted, so accepted splits have gain > 0).
struct TreeNode {
    int feature = -1;  // index into GBDTModel::feature_names; -1 for leaves
    double threshold = 0.0;
    bool default_left = true;  // where sentinel (missing) rows go
    int left = -1;
    int right = -1;
    double weight = 0.0;
    double cover = 0.0;
    double gain = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct GBDTModel {
    GBDTParams params;
    std::vector<std::string> feature_names;  // training matrix column codes
    std::vector<Tree> trees;

    double base_margin() const;
};

// Second-order boosting on binary log-loss: per round, g = p - y and
// h = p(1 - p) on the running margin, exact greedy splits over sorted
// non-sentinel values with the sentinel routed to whichever side gains more,
// leaf weight -T_alpha(G) / (H + lambda). Deterministic for a fixed seed
// regardless of worker count and of training row order (per-row subsampling
// and tie-breaking key on row ids, not positions).
GBDTModel train(const RecencyFeatureMatrix& matrix, const GBDTParams& params, int workers = 1);

// Margins are base_margin + learning_rate * sum of leaf weights. The matrix
// must contain every column the model was trained on.
std::vector<double> predict_margin(const GBDTModel& model, const RecencyFeatureMatrix& matrix);
std::vector<double> predict_proba(const GBDTModel& model, const RecencyFeatureMatrix& matrix);

double mean_logloss(const std::vector<double>& proba, const std::vector<std::uint8_t>& labels);

// Per feature, the sum of realized split gains over all trees; aligned with
// model.feature_names.
std::vector<double> gain_importance(const GBDTModel& model);

struct Attribution {
    double bias = 0.0;                  // margin units
    std::vector<double> contributions;  // aligned with feature_names
};

// Exact path attribution: each split credits its feature with the change in
// the cover-weighted expected subtree value. Satisfies local accuracy:
// bias + sum(contributions) = predict margin, exactly.
Attribution path_contributions(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                               std::int32_t row);

// Path-dependent TreeSHAP over the recorded covers; slower, same local
// accuracy, spreads credit over all features on a path.
Attribution shap_contributions(const GBDTModel& model, const RecencyFeatureMatrix& matrix,
                               std::int32_t row);

// Mean |path contribution| per feature over all rows, aligned with
// feature_names.
std::vector<double> mean_abs_contributions(const GBDTModel& model,
                                           const RecencyFeatureMatrix& matrix, int workers = 1);

// Self-describing text format; round-trips to bit-identical predictions.
void save_model(const GBDTModel& model, const std::string& path);
GBDTModel load_model(const std::string& path);

}  // namespace strata
