#include "nexus/mvtb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "nexus/error.hpp"
#include "nexus/rng.hpp"

namespace nexus::mvtb {

void Hyperparams::validate() const {
    if (n_trees < 0) throw InputError("n_trees must be >= 0");
    if (depth < 1) throw InputError("depth must be >= 1");
    if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw InputError("shrinkage must be in (0, 1]");
    if (!(bag_fraction > 0.0 && bag_fraction <= 1.0)) throw InputError("bag_fraction must be in (0, 1]");
    if (min_node < 1) throw InputError("min_node must be >= 1");
}

Eigen::VectorXd RegressionTree::predict(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(X.row(i));
    return out;
}

int RegressionTree::leaf_count() const {
    return static_cast<int>(std::count_if(feature.begin(), feature.end(), [](int f) { return f < 0; }));
}

int RegressionTree::max_depth() const {
    std::vector<int> d(feature.size(), 0);
    int best = 0;
    for (std::size_t n = 0; n < feature.size(); ++n) {
        if (feature[n] < 0) continue;
        d[static_cast<std::size_t>(left[n])] = d[n] + 1;
        d[static_cast<std::size_t>(right[n])] = d[n] + 1;
        best = std::max(best, d[n] + 1);
    }
    return best;
}

namespace {

struct TreeBuilder {
    const Eigen::MatrixXd& X;
    const Eigen::VectorXd& r;
    int max_depth;
    int min_node;
    RegressionTree tree;

    int add_node(double value) {
        tree.feature.push_back(-1);
        tree.threshold.push_back(0.0);
        tree.left.push_back(-1);
        tree.right.push_back(-1);
        tree.value.push_back(value);
        tree.gain.push_back(0.0);
        return static_cast<int>(tree.feature.size()) - 1;
    }

    // `rows` is ascending; leaf means are summed in that order.
    void grow(int node, std::vector<Eigen::Index> rows, int depth) {
        const auto n = static_cast<Eigen::Index>(rows.size());
        if (depth >= max_depth || n < 2 * min_node) return;

        double sum = 0.0;
        double lo = r(rows.front());
        double hi = lo;
        for (auto i : rows) {
            sum += r(i);
            lo = std::min(lo, r(i));
            hi = std::max(hi, r(i));
        }
        if (lo == hi) return;
        const double mean = sum / static_cast<double>(n);
        double sse = 0.0;
        for (auto i : rows) sse += (r(i) - mean) * (r(i) - mean);
        const double parent_term = sum * sum / static_cast<double>(n);

        struct Candidate {
            int feature;
            double threshold;
            double gain;
        };
        std::vector<Candidate> cands;
        double top = 1e-12 * sse;
        std::vector<Eigen::Index> order(rows);
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            order = rows;
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return X(a, j) < X(b, j); });
            double left_sum = 0.0;
            for (Eigen::Index t = 1; t < n; ++t) {
                left_sum += r(order[t - 1]);
                const double xa = X(order[t - 1], j);
                const double xb = X(order[t], j);
                if (!(xa < xb) || t < min_node || n - t < min_node) continue;
                const double right_sum = sum - left_sum;
                const double gain = left_sum * left_sum / static_cast<double>(t) +
                                    right_sum * right_sum / static_cast<double>(n - t) - parent_term;
                if (gain <= 1e-12 * sse) continue;
                double mid = 0.5 * (xa + xb);
                if (!(mid < xb)) mid = xa;
                cands.push_back({static_cast<int>(j), mid, gain});
                top = std::max(top, gain);
            }
        }
        if (cands.empty()) return;
        // Gains within tie_tol of the best count as ties; the earliest wins.
        const double tie_tol = kTieTolerance * sse;
        const auto pick = std::find_if(cands.begin(), cands.end(), [&](const Candidate& c) { return c.gain >= top - tie_tol; });
        const int best_feature = pick->feature;
        const double best_threshold = pick->threshold;
        const double best_gain = pick->gain;

        std::vector<Eigen::Index> left_rows;
        std::vector<Eigen::Index> right_rows;
        double left_sum = 0.0;
        double right_sum = 0.0;
        for (auto i : rows) {
            if (X(i, best_feature) <= best_threshold) {
                left_rows.push_back(i);
                left_sum += r(i);
            } else {
                right_rows.push_back(i);
                right_sum += r(i);
            }
        }
        const int l = add_node(left_sum / static_cast<double>(left_rows.size()));
        const int rr = add_node(right_sum / static_cast<double>(right_rows.size()));
        tree.feature[node] = best_feature;
        tree.threshold[node] = best_threshold;
        tree.left[node] = l;
        tree.right[node] = rr;
        tree.gain[node] = best_gain;
        grow(l, std::move(left_rows), depth + 1);
        grow(rr, std::move(right_rows), depth + 1);
    }
};

double cov_n(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double n = static_cast<double>(a.size());
    return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / n;
}

}  // namespace

RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual, int depth, int min_node,
                        std::span<const Eigen::Index> rows) {
    std::vector<Eigen::Index> sample;
    if (rows.empty()) {
        sample.resize(static_cast<std::size_t>(X.rows()));
        std::iota(sample.begin(), sample.end(), Eigen::Index{0});
    } else {
        sample.assign(rows.begin(), rows.end());
        std::sort(sample.begin(), sample.end());
    }
    if (sample.empty()) throw DataError("fit_tree: empty sample");
    double sum = 0.0;
    for (auto i : sample) sum += residual(i);
    TreeBuilder b{X, residual, depth, min_node, {}};
    b.add_node(sum / static_cast<double>(sample.size()));
    b.grow(0, std::move(sample), 0);
    return std::move(b.tree);
}

Model fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Hyperparams& hyper,
          std::vector<std::string> feature_names, std::vector<std::string> outcome_names) {
    hyper.validate();
    const Eigen::Index n = X.rows();
    const Eigen::Index q = Y.cols();
    if (Y.rows() != n) throw InputError("X and Y row counts differ");
    if (q < 1) throw InputError("Y must have at least one column");
    if (n < 2 * hyper.min_node) throw DataError("need at least 2*min_node rows to fit");
    if (!X.allFinite() || !Y.allFinite()) throw InputError("non-finite training data");

    Model m;
    m.hyper = hyper;
    m.feature_names = std::move(feature_names);
    m.outcome_names = std::move(outcome_names);
    if (m.feature_names.empty()) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) m.feature_names.push_back("x" + std::to_string(j));
    }
    if (m.outcome_names.empty()) {
        for (Eigen::Index k = 0; k < q; ++k) m.outcome_names.push_back("y" + std::to_string(k));
    }
    if (static_cast<Eigen::Index>(m.feature_names.size()) != X.cols()) throw InputError("feature name count mismatch");
    if (static_cast<Eigen::Index>(m.outcome_names.size()) != q) throw InputError("outcome name count mismatch");

    // Sequential sums in row order keep the standardization constants
    // reproducible independently of Eigen's vectorized reductions.
    m.y_mean.resize(q);
    m.y_std.resize(q);
    Eigen::MatrixXd Z(n, q);
    for (Eigen::Index k = 0; k < q; ++k) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) sum += Y(i, k);
        m.y_mean(k) = sum / static_cast<double>(n);
        double ss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ss += (Y(i, k) - m.y_mean(k)) * (Y(i, k) - m.y_mean(k));
        const double var = ss / static_cast<double>(n - 1);
        if (!(var > 0.0)) throw DataError("outcome '" + m.outcome_names[static_cast<std::size_t>(k)] + "' has zero variance");
        m.y_std(k) = std::sqrt(var);
        Z.col(k) = (Y.col(k).array() - m.y_mean(k)) / m.y_std(k);
    }

    Rng rng(hyper.seed);
    const auto bag_size = static_cast<std::size_t>(std::ceil(hyper.bag_fraction * static_cast<double>(n)));
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, q);
    m.updates.reserve(static_cast<std::size_t>(hyper.n_trees));
    m.log.reserve(static_cast<std::size_t>(hyper.n_trees));

    std::vector<RegressionTree> candidates(static_cast<std::size_t>(q));
    std::vector<Eigen::VectorXd> fitted(static_cast<std::size_t>(q));
    for (int it = 0; it < hyper.n_trees; ++it) {
        const auto bag_idx = draw_without_replacement(rng, static_cast<std::size_t>(n), bag_size);
        const std::vector<Eigen::Index> bag(bag_idx.begin(), bag_idx.end());
        const Eigen::MatrixXd R = Z - F;

        IterationLog entry;
        entry.terms.resize(q, q);
        entry.scores.assign(static_cast<std::size_t>(q), 0.0);
        for (Eigen::Index k = 0; k < q; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            candidates[ku] = fit_tree(X, R.col(k), hyper.depth, hyper.min_node, bag);
            fitted[ku] = candidates[ku].predict(X);
            double s = 0.0;
            for (Eigen::Index j = 0; j < q; ++j) {
                const double c = cov_n(R.col(j), fitted[ku]);
                entry.terms(k, j) = c * c;
                s += c * c;
            }
            entry.scores[ku] = s;
        }
        int best = 0;
        for (int k = 1; k < q; ++k) {
            if (entry.scores[static_cast<std::size_t>(k)] > entry.scores[static_cast<std::size_t>(best)]) best = k;
        }
        entry.selected = best;
        const auto bu = static_cast<std::size_t>(best);
        F.col(best) += hyper.shrinkage * fitted[bu];
        m.updates.push_back({best, hyper.shrinkage, std::move(candidates[bu])});
        m.log.push_back(std::move(entry));
    }
    return m;
}

Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.n_features()) {
        throw InputError("predict: expected " + std::to_string(model.n_features()) + " feature columns, got " +
                         std::to_string(X.cols()));
    }
    const Eigen::Index q = model.n_outcomes();
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(X.rows(), q);
    for (const auto& u : model.updates) F.col(u.outcome) += u.shrinkage * u.tree.predict(X);
    Eigen::MatrixXd out(X.rows(), q);
    for (Eigen::Index k = 0; k < q; ++k) out.col(k) = (model.y_mean(k) + model.y_std(k) * F.col(k).array()).matrix();
    return out;
}

Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& X, std::span<const std::string> column_names) {
    if (static_cast<Eigen::Index>(column_names.size()) != X.cols()) throw InputError("column name count mismatch");
    Eigen::MatrixXd ordered(X.rows(), model.n_features());
    for (int j = 0; j < model.n_features(); ++j) {
        const auto& name = model.feature_names[static_cast<std::size_t>(j)];
        const auto it = std::find(column_names.begin(), column_names.end(), name);
        if (it == column_names.end()) throw InputError("missing feature column '" + name + "'");
        ordered.col(j) = X.col(it - column_names.begin());
    }
    return predict(model, ordered);
}

Eigen::MatrixXd relative_influence(const Model& model) {
    Eigen::MatrixXd inf = Eigen::MatrixXd::Zero(model.n_features(), model.n_outcomes());
    for (const auto& u : model.updates) {
        for (int n = 0; n < u.tree.node_count(); ++n) {
            const auto nu = static_cast<std::size_t>(n);
            if (u.tree.feature[nu] >= 0) inf(u.tree.feature[nu], u.outcome) += u.tree.gain[nu];
        }
    }
    for (Eigen::Index k = 0; k < inf.cols(); ++k) {
        const double total = inf.col(k).sum();
        if (total > 0.0) inf.col(k) *= 100.0 / total;
    }
    return inf;
}

CovarianceExplained covariance_explained(const Model& model, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    const int q = model.n_outcomes();
    if (Y.cols() != q || Y.rows() != X.rows()) throw InputError("covariance_explained: shape mismatch");
    if (X.cols() != model.n_features()) throw InputError("covariance_explained: feature count mismatch");
    CovarianceExplained out;
    for (int a = 0; a < q; ++a) {
        for (int b = a; b < q; ++b) {
            out.pairs.emplace_back(a, b);
            out.pair_labels.push_back(model.outcome_names[static_cast<std::size_t>(a)] + ":" +
                                      model.outcome_names[static_cast<std::size_t>(b)]);
        }
    }
    if (model.updates.empty()) {
        out.values.resize(0, 0);
        return out;
    }
    out.values = Eigen::MatrixXd::Zero(model.n_features(), static_cast<Eigen::Index>(out.pairs.size()));
    const auto pair_index = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        return static_cast<Eigen::Index>(
            std::find(out.pairs.begin(), out.pairs.end(), std::pair{a, b}) - out.pairs.begin());
    };

    Eigen::MatrixXd Z(X.rows(), q);
    for (int k = 0; k < q; ++k) Z.col(k) = (Y.col(k).array() - model.y_mean(k)) / model.y_std(k);
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(X.rows(), q);
    Eigen::VectorXd share(model.n_features());
    for (const auto& u : model.updates) {
        const Eigen::VectorXd h = u.tree.predict(X);
        share.setZero();
        for (int n = 0; n < u.tree.node_count(); ++n) {
            const auto nu = static_cast<std::size_t>(n);
            if (u.tree.feature[nu] >= 0) share(u.tree.feature[nu]) += u.tree.gain[nu];
        }
        const double gsum = share.sum();
        if (gsum > 0.0) {
            share /= gsum;
            for (int j = 0; j < q; ++j) {
                const double c = cov_n(Z.col(j) - F.col(j), h);
                out.values.col(pair_index(u.outcome, j)) += (c * c) * share;
            }
        }
        F.col(u.outcome) += u.shrinkage * h;
    }
    out.total = out.values.sum();
    return out;
}

namespace {

template <typename T>
std::vector<T> vec_from(const Eigen::VectorXd& v) {
    return std::vector<T>(v.data(), v.data() + v.size());
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string to_json(const Model& model) {
    using nlohmann::json;
    json updates = json::array();
    for (const auto& u : model.updates) {
        updates.push_back({{"outcome", u.outcome},
                           {"shrinkage", u.shrinkage},
                           {"feature", u.tree.feature},
                           {"threshold", u.tree.threshold},
                           {"left", u.tree.left},
                           {"right", u.tree.right},
                           {"value", u.tree.value},
                           {"gain", u.tree.gain}});
    }
    json log = json::array();
    for (const auto& e : model.log) {
        std::vector<double> terms(e.terms.data(), e.terms.data() + e.terms.size());
        log.push_back({{"selected", e.selected}, {"scores", e.scores}, {"terms_colmajor", terms}});
    }
    const auto& h = model.hyper;
    json j{{"format", "nexus-mvtb"},
           {"version", 1},
           {"feature_names", model.feature_names},
           {"outcome_names", model.outcome_names},
           {"y_mean", vec_from<double>(model.y_mean)},
           {"y_std", vec_from<double>(model.y_std)},
           {"hyperparams",
            {{"n_trees", h.n_trees},
             {"depth", h.depth},
             {"shrinkage", h.shrinkage},
             {"bag_fraction", h.bag_fraction},
             {"min_node", h.min_node},
             {"seed", h.seed}}},
           {"updates", updates},
           {"log", log}};
    return j.dump() + "\n";
}

Model from_json(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("model json: ") + e.what());
    }
    try {
        if (j.at("format") != "nexus-mvtb") throw InputError("model json: unknown format");
        if (j.at("version").get<int>() != 1) throw InputError("model json: unsupported version");
        Model m;
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.outcome_names = j.at("outcome_names").get<std::vector<std::string>>();
        m.y_mean = to_vector(j.at("y_mean").get<std::vector<double>>());
        m.y_std = to_vector(j.at("y_std").get<std::vector<double>>());
        const auto& h = j.at("hyperparams");
        m.hyper.n_trees = h.at("n_trees");
        m.hyper.depth = h.at("depth");
        m.hyper.shrinkage = h.at("shrinkage");
        m.hyper.bag_fraction = h.at("bag_fraction");
        m.hyper.min_node = h.at("min_node");
        m.hyper.seed = h.at("seed").get<std::uint64_t>();
        const auto q = static_cast<Eigen::Index>(m.outcome_names.size());
        if (m.y_mean.size() != q || m.y_std.size() != q) throw InputError("model json: outcome size mismatch");
        for (const auto& u : j.at("updates")) {
            Update up;
            up.outcome = u.at("outcome");
            up.shrinkage = u.at("shrinkage");
            up.tree.feature = u.at("feature").get<std::vector<int>>();
            up.tree.threshold = u.at("threshold").get<std::vector<double>>();
            up.tree.left = u.at("left").get<std::vector<int>>();
            up.tree.right = u.at("right").get<std::vector<int>>();
            up.tree.value = u.at("value").get<std::vector<double>>();
            up.tree.gain = u.at("gain").get<std::vector<double>>();
            const auto nodes = up.tree.feature.size();
            if (up.outcome < 0 || up.outcome >= q || nodes == 0 || up.tree.threshold.size() != nodes ||
                up.tree.left.size() != nodes || up.tree.right.size() != nodes || up.tree.value.size() != nodes ||
                up.tree.gain.size() != nodes) {
                throw InputError("model json: malformed tree");
            }
            for (std::size_t n = 0; n < nodes; ++n) {
                if (up.tree.feature[n] >= static_cast<int>(m.feature_names.size())) {
                    throw InputError("model json: feature index out of range");
                }
                if (up.tree.feature[n] >= 0 &&
                    (up.tree.left[n] <= static_cast<int>(n) || up.tree.right[n] <= static_cast<int>(n) ||
                     up.tree.left[n] >= static_cast<int>(nodes) || up.tree.right[n] >= static_cast<int>(nodes))) {
                    throw InputError("model json: bad child index");
                }
            }
            m.updates.push_back(std::move(up));
        }
        for (const auto& e : j.at("log")) {
            IterationLog l;
            l.selected = e.at("selected");
            l.scores = e.at("scores").get<std::vector<double>>();
            const auto terms = e.at("terms_colmajor").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(terms.size()) != q * q) throw InputError("model json: bad log terms");
            l.terms = Eigen::Map<const Eigen::MatrixXd>(terms.data(), q, q);
            m.log.push_back(std::move(l));
        }
        return m;
    } catch (const json::exception& e) {
        throw InputError(std::string("model json: ") + e.what());
    }
}

}  // namespace nexus::mvtb
