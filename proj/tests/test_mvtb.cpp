#include <doctest.h>

#include <cmath>
#include <limits>

#include "nexus/error.hpp"
#include "nexus/mvtb.hpp"
#include "nexus/rng.hpp"
#include "nexus/synth.hpp"

using namespace nexus;
using namespace nexus::mvtb;

namespace {

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index n, Eigen::Index p) {
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.uniform();
    }
    return X;
}

// Best depth-1 SSE over every feature and every split between sorted values.
double exhaustive_best_sse(const Eigen::MatrixXd& X, const Eigen::VectorXd& r, int min_node) {
    const auto sse = [](const std::vector<double>& v) {
        if (v.empty()) return 0.0;
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s;
    };
    std::vector<double> all(r.data(), r.data() + r.size());
    double best = sse(all);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        for (Eigen::Index t = 0; t < X.rows(); ++t) {
            std::vector<double> l;
            std::vector<double> g;
            for (Eigen::Index i = 0; i < X.rows(); ++i) (X(i, j) <= X(t, j) ? l : g).push_back(r(i));
            if (static_cast<int>(l.size()) < min_node || static_cast<int>(g.size()) < min_node) continue;
            best = std::min(best, sse(l) + sse(g));
        }
    }
    return best;
}

double split_sse(const RegressionTree& t, const Eigen::MatrixXd& X, const Eigen::VectorXd& r) {
    const Eigen::VectorXd fit = t.predict(X);
    return (r - fit).squaredNorm();
}

Hyperparams small(int trees, std::uint64_t seed = 1) {
    Hyperparams h;
    h.n_trees = trees;
    h.seed = seed;
    return h;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
    Hyperparams h;
    CHECK_NOTHROW(h.validate());
    CHECK(h.n_trees == 1000);
    CHECK(h.depth == 3);
    CHECK(h.shrinkage == 0.05);
    CHECK(h.bag_fraction == 0.5);
    CHECK(h.min_node == 5);
    h.shrinkage = 0.0;
    CHECK_THROWS_AS(h.validate(), InputError);
    h = {};
    h.bag_fraction = 1.5;
    CHECK_THROWS_AS(h.validate(), InputError);
    h = {};
    h.depth = 0;
    CHECK_THROWS_AS(h.validate(), InputError);
}

TEST_CASE("constant residual gives a single leaf") {
    Rng rng(1);
    const Eigen::MatrixXd X = uniform_matrix(rng, 40, 3);
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(40, 2.5);
    const auto t = fit_tree(X, r, 3, 5);
    CHECK(t.node_count() == 1);
    CHECK(t.value[0] == 2.5);
    CHECK(t.predict(X) == r);
}

TEST_CASE("step function splits at the midpoint") {
    Eigen::MatrixXd X(10, 2);
    Eigen::VectorXd r(10);
    for (int i = 0; i < 10; ++i) {
        X(i, 0) = i + 1;
        X(i, 1) = (i * 7) % 10;
        r(i) = X(i, 0) <= 5 ? 0.0 : 1.0;
    }
    const auto t = fit_tree(X, r, 1, 1);
    REQUIRE(t.node_count() == 3);
    CHECK(t.feature[0] == 0);
    CHECK(t.threshold[0] == 5.5);
    CHECK(t.value[t.left[0]] == 0.0);
    CHECK(t.value[t.right[0]] == 1.0);
    CHECK(t.gain[0] == doctest::Approx(2.5));
}

TEST_CASE("min_node equal to n keeps one leaf") {
    Rng rng(2);
    const Eigen::MatrixXd X = uniform_matrix(rng, 30, 4);
    const Eigen::VectorXd r = X.col(0);
    CHECK(fit_tree(X, r, 3, 30).node_count() == 1);
    CHECK(fit_tree(X, r, 3, 16).node_count() == 1);
}

TEST_CASE("ties go to the lowest feature index") {
    Eigen::MatrixXd X(12, 3);
    Eigen::VectorXd r(12);
    for (int i = 0; i < 12; ++i) {
        X(i, 0) = 0.0;
        X(i, 1) = i;
        X(i, 2) = i;
        r(i) = i < 6 ? -1.0 : 1.0;
    }
    const auto t = fit_tree(X, r, 1, 1);
    CHECK(t.feature[0] == 1);
    CHECK(t.threshold[0] == 5.5);
}

TEST_CASE("depth-1 split is optimal over every candidate") {
    for (std::uint64_t s = 0; s < 25; ++s) {
        Rng rng(100 + s);
        const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.below(181));
        const Eigen::MatrixXd X = uniform_matrix(rng, n, 4);
        Eigen::VectorXd r(n);
        for (Eigen::Index i = 0; i < n; ++i) r(i) = std::sin(6.0 * X(i, 1)) + X(i, 3) + 0.3 * rng.normal();
        const int min_node = 1 + static_cast<int>(rng.below(8));
        const auto t = fit_tree(X, r, 1, min_node);
        const double oracle = exhaustive_best_sse(X, r, min_node);
        CHECK(split_sse(t, X, r) <= oracle * (1.0 + 1e-12) + 1e-12);
    }
}

TEST_CASE("trees respect depth and leaf size") {
    Rng rng(4);
    const Eigen::MatrixXd X = uniform_matrix(rng, 200, 5);
    Eigen::VectorXd r(200);
    for (int i = 0; i < 200; ++i) r(i) = X(i, 0) * X(i, 1) + rng.normal();
    for (int depth = 1; depth <= 4; ++depth) {
        const auto t = fit_tree(X, r, depth, 7);
        CHECK(t.max_depth() <= depth);
        CHECK(t.leaf_count() <= (1 << depth));
        std::vector<int> count(static_cast<std::size_t>(t.node_count()), 0);
        for (int i = 0; i < 200; ++i) {
            int node = 0;
            while (t.feature[static_cast<std::size_t>(node)] >= 0) {
                const auto nu = static_cast<std::size_t>(node);
                node = X(i, t.feature[nu]) <= t.threshold[nu] ? t.left[nu] : t.right[nu];
            }
            ++count[static_cast<std::size_t>(node)];
        }
        for (int n = 0; n < t.node_count(); ++n) {
            if (t.feature[static_cast<std::size_t>(n)] < 0) CHECK(count[static_cast<std::size_t>(n)] >= 7);
        }
    }
}

TEST_CASE("zero iterations predict the training means") {
    Rng rng(5);
    const Eigen::MatrixXd X = uniform_matrix(rng, 50, 3);
    Eigen::MatrixXd Y = uniform_matrix(rng, 50, 2);
    const auto m = fit(X, Y, small(0));
    const Eigen::MatrixXd P = predict(m, X);
    for (int k = 0; k < 2; ++k) CHECK((P.col(k).array() == m.y_mean(k)).all());
    CHECK(m.y_mean(0) == doctest::Approx(Y.col(0).mean()));
    CHECK((relative_influence(m).array() == 0.0).all());
    CHECK(covariance_explained(m, X, Y).values.size() == 0);
}

TEST_CASE("single outcome matches the univariate oracle bit for bit") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng(mix_seed(77, s));
        const Eigen::MatrixXd X = uniform_matrix(rng, 200, 5);
        Eigen::VectorXd y(200);
        for (int i = 0; i < 200; ++i) y(i) = 3.0 * X(i, 0) + std::sin(5.0 * X(i, 2)) + 0.2 * rng.normal();
        auto h = small(60, s);
        const auto m = fit(X, y, h);
        const auto o = synth::oracle_univariate_boost(X, y, h);
        const Eigen::MatrixXd p = predict(m, X);
        CHECK(p.col(0) == o.predictions);
        for (const auto& entry : m.log) CHECK(entry.selected == 0);
    }
}

TEST_CASE("identical outcomes tie on the first iteration and select the first") {
    Rng rng(6);
    const Eigen::MatrixXd X = uniform_matrix(rng, 80, 3);
    Eigen::MatrixXd Y(80, 2);
    for (int i = 0; i < 80; ++i) Y(i, 0) = Y(i, 1) = X(i, 1) + 0.1 * rng.normal();
    const auto m = fit(X, Y, small(20));
    // Residuals only coincide before the first update.
    CHECK(m.log.front().scores[0] == m.log.front().scores[1]);
    CHECK(m.log.front().selected == 0);
}

TEST_CASE("selection scores are non-negative sums of their terms") {
    Rng rng(7);
    const Eigen::MatrixXd X = uniform_matrix(rng, 120, 4);
    Eigen::MatrixXd Y(120, 2);
    for (int i = 0; i < 120; ++i) {
        Y(i, 0) = X(i, 0) + 0.2 * rng.normal();
        Y(i, 1) = X(i, 0) * X(i, 3) + 0.2 * rng.normal();
    }
    const auto m = fit(X, Y, small(50));
    for (const auto& e : m.log) {
        for (int k = 0; k < 2; ++k) {
            CHECK(e.scores[static_cast<std::size_t>(k)] >= 0.0);
            CHECK(std::abs(e.terms.row(k).sum() - e.scores[static_cast<std::size_t>(k)]) <=
                  1e-12 * std::max(1.0, e.scores[static_cast<std::size_t>(k)]));
        }
        CHECK(e.scores[static_cast<std::size_t>(e.selected)] >= e.scores[static_cast<std::size_t>(1 - e.selected)]);
    }
}

TEST_CASE("full-sample boosting never raises the selected outcome's SSE") {
    Rng rng(8);
    const Eigen::MatrixXd X = uniform_matrix(rng, 150, 5);
    Eigen::MatrixXd Y(150, 2);
    for (int i = 0; i < 150; ++i) {
        Y(i, 0) = X(i, 0) + X(i, 1) + 0.1 * rng.normal();
        Y(i, 1) = X(i, 1) - X(i, 4) + 0.1 * rng.normal();
    }
    Hyperparams h = small(200);
    h.bag_fraction = 1.0;
    const auto m = fit(X, Y, h);
    Eigen::MatrixXd Z(150, 2);
    for (int k = 0; k < 2; ++k) Z.col(k) = (Y.col(k).array() - m.y_mean(k)) / m.y_std(k);
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(150, 2);
    for (const auto& u : m.updates) {
        const double before = (Z.col(u.outcome) - F.col(u.outcome)).squaredNorm();
        F.col(u.outcome) += u.shrinkage * u.tree.predict(X);
        const double after = (Z.col(u.outcome) - F.col(u.outcome)).squaredNorm();
        CHECK(after <= before * (1.0 + 1e-12));
    }
}

TEST_CASE("univariate oracle drives residuals to zero with unit shrinkage") {
    Rng rng(9);
    const Eigen::MatrixXd X = uniform_matrix(rng, 64, 1);
    const Eigen::VectorXd y = X.col(0).array().square();
    Hyperparams h = small(8);
    h.shrinkage = 1.0;
    h.bag_fraction = 1.0;
    h.depth = 6;
    h.min_node = 1;
    const auto o = synth::oracle_univariate_boost(X, y, h);
    for (std::size_t i = 1; i < o.sse_trace.size(); ++i) CHECK(o.sse_trace[i] <= o.sse_trace[i - 1]);
    CHECK(o.sse_trace.back() < 1e-20);
    CHECK((o.predictions - y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fit is deterministic") {
    Rng rng(10);
    const Eigen::MatrixXd X = uniform_matrix(rng, 90, 4);
    const Eigen::MatrixXd Y = uniform_matrix(rng, 90, 2);
    const auto a = fit(X, Y, small(40, 3));
    const auto b = fit(X, Y, small(40, 3));
    CHECK(to_json(a) == to_json(b));
    CHECK(predict(a, X) == predict(b, X));
    const auto c = fit(X, Y, small(40, 4));
    CHECK(to_json(a) != to_json(c));
}

TEST_CASE("shift and scale of an outcome carry through") {
    Rng rng(11);
    const Eigen::MatrixXd X = uniform_matrix(rng, 100, 3);
    Eigen::MatrixXd Y(100, 2);
    for (int i = 0; i < 100; ++i) {
        Y(i, 0) = X(i, 0) + 0.1 * rng.normal();
        Y(i, 1) = X(i, 2) * X(i, 1) + 0.1 * rng.normal();
    }
    const auto h = small(80);
    const Eigen::MatrixXd base = predict(fit(X, Y, h), X);

    Eigen::MatrixXd shifted = Y;
    shifted.col(1).array() += 1000.0;
    const Eigen::MatrixXd ps = predict(fit(X, shifted, h), X);
    CHECK((ps.col(1).array() - 1000.0 - base.col(1).array()).abs().maxCoeff() < 1e-9);
    CHECK((ps.col(0) - base.col(0)).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::MatrixXd scaled = Y;
    scaled.col(0) *= 4.0;
    const Eigen::MatrixXd pc = predict(fit(X, scaled, h), X);
    CHECK((pc.col(0) - 4.0 * base.col(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("influence recovers the driving features") {
    Rng rng(12);
    const Eigen::MatrixXd X = uniform_matrix(rng, 300, 6);
    Eigen::MatrixXd Y(300, 2);
    for (int i = 0; i < 300; ++i) {
        Y(i, 0) = 2.0 * X(i, 0) + X(i, 1) + 0.05 * rng.normal();
        Y(i, 1) = X(i, 0) - 2.0 * X(i, 1) + 0.05 * rng.normal();
    }
    const auto m = fit(X, Y, small(300));
    const Eigen::MatrixXd inf = relative_influence(m);
    for (int k = 0; k < 2; ++k) {
        CHECK(inf.col(k).sum() == doctest::Approx(100.0));
        CHECK(inf(0, k) + inf(1, k) >= 95.0);
    }
}

TEST_CASE("single-feature influence and attribution") {
    Rng rng(13);
    const Eigen::MatrixXd X = uniform_matrix(rng, 80, 1);
    Eigen::MatrixXd Y(80, 2);
    for (int i = 0; i < 80; ++i) {
        Y(i, 0) = X(i, 0) + 0.1 * rng.normal();
        Y(i, 1) = -X(i, 0) + 0.1 * rng.normal();
    }
    const auto m = fit(X, Y, small(40));
    const Eigen::MatrixXd inf = relative_influence(m);
    for (int k = 0; k < 2; ++k) {
        if (inf.col(k).sum() > 0) CHECK(inf(0, k) == doctest::Approx(100.0));
    }
    const auto ce = covariance_explained(m, X, Y);
    CHECK(ce.pair_labels == std::vector<std::string>{"y0:y0", "y0:y1", "y1:y1"});
    CHECK(ce.values.row(0).sum() == doctest::Approx(ce.total));
    CHECK(ce.total > 0.0);
}

TEST_CASE("disjoint drivers leave little cross-outcome attribution") {
    Rng rng(14);
    const Eigen::MatrixXd X = uniform_matrix(rng, 300, 4);
    Eigen::MatrixXd Y(300, 2);
    for (int i = 0; i < 300; ++i) {
        Y(i, 0) = X(i, 0) + 0.05 * rng.normal();
        Y(i, 1) = X(i, 3) + 0.05 * rng.normal();
    }
    const auto m = fit(X, Y, small(300));
    const auto ce = covariance_explained(m, X, Y);
    REQUIRE(ce.pairs.size() == 3);
    CHECK(ce.values.col(1).sum() <= 0.05 * ce.total);
    // The attribution replays the logged scores of the selected candidates.
    double logged = 0.0;
    for (const auto& e : m.log) logged += e.scores[static_cast<std::size_t>(e.selected)];
    CHECK(ce.total == doctest::Approx(logged).epsilon(1e-9));
}

TEST_CASE("named prediction reorders columns") {
    Rng rng(15);
    const Eigen::MatrixXd X = uniform_matrix(rng, 60, 3);
    const Eigen::MatrixXd Y = uniform_matrix(rng, 60, 2);
    const auto m = fit(X, Y, small(30), {"a", "b", "c"}, {"water", "electricity"});
    Eigen::MatrixXd swapped(60, 3);
    swapped << X.col(2), X.col(0), X.col(1);
    const std::vector<std::string> names{"c", "a", "b"};
    CHECK(predict(m, swapped, names) == predict(m, X));
    const std::vector<std::string> missing{"c", "a", "z"};
    CHECK_THROWS_AS(predict(m, swapped, missing), InputError);
    CHECK_THROWS_AS(predict(m, swapped.leftCols(2)), InputError);
}

TEST_CASE("model json round trip") {
    Rng rng(16);
    const Eigen::MatrixXd X = uniform_matrix(rng, 70, 3);
    const Eigen::MatrixXd Y = uniform_matrix(rng, 70, 2);
    const auto m = fit(X, Y, small(25), {"a", "b", "c"}, {"water", "electricity"});
    const auto back = from_json(to_json(m));
    CHECK(predict(back, X) == predict(m, X));
    CHECK(back.feature_names == m.feature_names);
    CHECK(back.hyper.seed == m.hyper.seed);
    CHECK(to_json(back) == to_json(m));
    CHECK_THROWS_AS(from_json("{\"format\":\"other\"}"), InputError);
    CHECK_THROWS_AS(from_json("not json"), InputError);
}

TEST_CASE("fit input errors") {
    Rng rng(17);
    const Eigen::MatrixXd X = uniform_matrix(rng, 30, 2);
    Eigen::MatrixXd Y = uniform_matrix(rng, 30, 2);
    Y.col(1).setConstant(1.0);
    CHECK_THROWS_AS(fit(X, Y, small(5)), DataError);
    CHECK_THROWS_AS(fit(X.topRows(8), Y.topRows(8), small(5)), DataError);
    CHECK_THROWS_AS(fit(X, Y.topRows(10), small(5)), InputError);
    Eigen::MatrixXd bad = X;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fit(bad, uniform_matrix(rng, 30, 2), small(5)), InputError);
}
