#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nexus::mvtb {

// Split gains closer than this fraction of the node SSE are ties, resolved by
// (feature, threshold) order.
inline constexpr double kTieTolerance = 1e-10;

struct Hyperparams {
    int n_trees = 1000;  // boosting iterations; each iteration updates one outcome
    int depth = 3;
    double shrinkage = 0.05;
    double bag_fraction = 0.5;
    int min_node = 5;
    std::uint64_t seed = 20240601;

    void validate() const;  // throws InputError
};

// CART regression tree stored as flat node arrays. Node 0 is the root;
// feature < 0 marks a leaf. Rows with x[feature] <= threshold go left.
struct RegressionTree {
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<double> value;  // mean residual of the node's sample
    std::vector<double> gain;   // SSE reduction of the split (0 for leaves)

    template <typename Derived>
    double predict(const Eigen::MatrixBase<Derived>& row) const {
        int n = 0;
        while (feature[n] >= 0) n = row(feature[n]) <= threshold[n] ? left[n] : right[n];
        return value[n];
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
    int node_count() const { return static_cast<int>(feature.size()); }
    int leaf_count() const;
    int max_depth() const;
};

// Greedy depth-limited least-squares tree over `rows` (all rows if empty).
// Split candidates are midpoints between consecutive distinct values; both
// children must keep at least `min_node` rows; a split must cut the node SSE
// by more than 1e-12 of itself; ties resolve to the lowest feature index, then
// the lowest threshold.
RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual, int depth, int min_node,
                        std::span<const Eigen::Index> rows = {});

struct Update {
    int outcome = 0;
    double shrinkage = 0.0;
    RegressionTree tree;
};

struct IterationLog {
    int selected = 0;
    std::vector<double> scores;  // S_k per candidate outcome
    Eigen::MatrixXd terms;       // terms(k, j) = Cov_n(R_j, h_k)^2; rows sum to scores
};

struct Model {
    std::vector<std::string> feature_names;
    std::vector<std::string> outcome_names;
    Eigen::VectorXd y_mean;
    Eigen::VectorXd y_std;
    Hyperparams hyper;
    std::vector<Update> updates;
    std::vector<IterationLog> log;

    int n_outcomes() const { return static_cast<int>(y_mean.size()); }
    int n_features() const { return static_cast<int>(feature_names.size()); }
};

// Joint boosting of the q columns of Y. Each iteration fits one candidate tree
// per outcome on a shared bag and keeps only the candidate whose fitted values
// explain the most residual covariance across all outcomes.
Model fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Hyperparams& hyper,
          std::vector<std::string> feature_names = {}, std::vector<std::string> outcome_names = {});

// X columns must be in the model's feature order.
Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& X);

// Reorders columns by name first; throws InputError if a model feature is missing.
Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& X, std::span<const std::string> column_names);

// Percent of split SSE reduction per (feature, outcome); columns sum to 100
// or are all zero when an outcome received no splits.
Eigen::MatrixXd relative_influence(const Model& model);

struct CovarianceExplained {
    std::vector<std::string> pair_labels;  // "water:water", "water:electricity", ...
    std::vector<std::pair<int, int>> pairs;
    Eigen::MatrixXd values;  // features x pairs
    double total = 0.0;
};

// Replays the fitted updates on (X, Y) and attributes each iteration's
// selection score to features (by the selected tree's split-gain shares) and
// to outcome pairs (by its per-outcome covariance terms).
CovarianceExplained covariance_explained(const Model& model, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

std::string to_json(const Model& model);
Model from_json(const std::string& text);

}  // namespace nexus::mvtb
