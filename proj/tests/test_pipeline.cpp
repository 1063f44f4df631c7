#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nexus/error.hpp"
#include "nexus/pipeline.hpp"
#include "nexus/rng.hpp"
#include "nexus/synth.hpp"

using namespace nexus;
using namespace nexus::pipeline;

namespace {

TrainingTable random_table(Rng& rng, Eigen::Index n, auto&& response) {
    TrainingTable t;
    for (auto name : feature_names()) t.feature_names.emplace_back(name);
    t.X.resize(n, kFeatureCount);
    t.Y.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        t.keys.push_back({"c", 2000 + static_cast<int>(i / 4), 6 + static_cast<int>(i % 4)});
        for (int j = 0; j < kFeatureCount; ++j) t.X(i, j) = rng.uniform();
        const auto y = response(t.X.row(i), rng);
        t.Y(i, 0) = y.first;
        t.Y(i, 1) = y.second;
    }
    return t;
}

mvtb::Hyperparams quick(int trees) {
    mvtb::Hyperparams h;
    h.n_trees = trees;
    return h;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("fold assignment") {
    const auto ten = kfold_splits(10, 5, 1);
    for (int f = 0; f < 5; ++f) CHECK(std::count(ten.begin(), ten.end(), f) == 2);
    CHECK(kfold_splits(10, 5, 1) == ten);
    CHECK(kfold_splits(10, 5, 2) != ten);

    const auto eleven = kfold_splits(11, 5, 3);
    std::multiset<long> sizes;
    for (int f = 0; f < 5; ++f) sizes.insert(std::count(eleven.begin(), eleven.end(), f));
    CHECK(sizes == std::multiset<long>{2, 2, 2, 2, 3});

    CHECK_THROWS_AS(kfold_splits(4, 5, 1), DataError);
    CHECK_THROWS_AS(kfold_splits(10, 1, 1), InputError);
}

TEST_CASE("r2 hand examples") {
    const Eigen::Vector3d y(1.0, 2.0, 4.0);
    CHECK(r2(y, y) == 1.0);
    const Eigen::Vector3d mean = Eigen::Vector3d::Constant(7.0 / 3.0);
    CHECK(r2(y, mean) == doctest::Approx(0.0).epsilon(1e-15));
    const Eigen::Vector2d a(0.0, 1.0);
    const Eigen::Vector2d b(1.0, 0.0);
    CHECK(r2(a, b) == -3.0);
    const Eigen::Vector2d flat(2.0, 2.0);
    CHECK_THROWS_AS(r2(flat, a), DataError);
}

TEST_CASE("nrmse hand examples") {
    const Eigen::Vector2d y(2.0, 2.0);
    CHECK(nrmse(y, y) == 0.0);
    const Eigen::Vector2d yhat(1.0, 3.0);
    CHECK(nrmse(y, yhat) == 0.5);
    const Eigen::Vector3d u(1.0, 2.0, 6.0);
    const Eigen::Vector3d v(2.0, 1.0, 5.0);
    CHECK(nrmse((4.0 * u).eval(), (4.0 * v).eval()) == nrmse(u, v));
    const Eigen::Vector2d neg(-1.0, 1.0);
    CHECK_THROWS_AS(nrmse(neg, yhat), DataError);
}

TEST_CASE("cross-validation covers every row once and is reproducible") {
    Rng rng(1);
    const auto t = random_table(rng, 48, [](const auto& x, Rng& g) {
        return std::pair{1.0 + x(1) + 0.1 * g.normal(), 2.0 + x(4) + 0.1 * g.normal()};
    });
    const auto a = cross_validate_city("c", t, quick(100), 5, 9);
    CHECK(a.folds.size() == 5);
    CHECK(a.fold_of_row.size() == 48);
    for (int f = 0; f < 5; ++f) {
        const auto n = std::count(a.fold_of_row.begin(), a.fold_of_row.end(), f);
        CHECK((n == 9 || n == 10));
    }
    CHECK(a.out_of_fold.rows() == 48);
    CHECK(a.pooled[0].r2 == doctest::Approx(r2(t.Y.col(0), a.out_of_fold.col(0))));
    const auto b = cross_validate_city("c", t, quick(100), 5, 9);
    CHECK(a.out_of_fold == b.out_of_fold);
    CHECK(a.pooled[1].nrmse == b.pooled[1].nrmse);

    const auto model = mvtb::fit(t.X, t.Y, quick(100));
    const Eigen::MatrixXd in_sample = mvtb::predict(model, t.X);
    for (int k = 0; k < 2; ++k) CHECK(a.pooled[k].r2 <= r2(t.Y.col(k), in_sample.col(k)));
}

TEST_CASE("pure-noise outcomes score near zero") {
    Rng rng(2);
    const auto t = random_table(rng, 48, [](const auto&, Rng& g) {
        return std::pair{5.0 + g.normal(), 5.0 + g.normal()};
    });
    const auto rep = cross_validate_city("c", t, {}, 5, 4);
    CHECK(rep.pooled[0].r2 <= 0.1);
    CHECK(rep.pooled[1].r2 <= 0.1);
}

TEST_CASE("synthetic low-noise city cross-validates well") {
    synth::SynthConfig cfg;
    cfg.n_cities = 1;
    cfg.n_regions = 1;
    const auto g = synth::generate(cfg);
    const auto climate = index_climate(g.bundle.climate, cfg.climate);
    const auto prepared = prepare_city(g.bundle, climate, g.bundle.cities[0], {});
    CHECK(prepared.table.rows() == 48);
    CHECK(prepared.mean_summer_electricity_pc > 0.0);
    const auto rep = cross_validate_city(prepared.city_id, prepared.table, {}, 5, 11);
    CHECK(rep.pooled[0].r2 >= 0.8);
    CHECK(rep.pooled[1].r2 >= 0.8);
    CHECK(rep.pooled[0].nrmse >= 0.0);
}

TEST_CASE("regional selection clamps to the floor") {
    Rng rng(3);
    std::vector<TrainingTable> cities;
    for (int c = 0; c < 3; ++c) {
        cities.push_back(random_table(rng, 48, [](const auto& x, Rng& g) {
            return std::pair{2.0 * x(1) + 0.02 * g.normal(), x(1) + x(7) + 0.02 * g.normal()};
        }));
    }
    const auto sel = select_regional_variables("ENC", cities, quick(400));
    REQUIRE(sel.features.size() == 4);
    const std::set<std::string> top{sel.features[0], sel.features[1]};
    CHECK(top == std::set<std::string>{std::string(feature_names()[1]), std::string(feature_names()[7])});
    CHECK(sel.ranking.size() == 17);
    double total = 0.0;
    for (const auto& [name, pct] : sel.ranking) total += pct;
    CHECK(total == doctest::Approx(100.0));
    for (std::size_t i = 1; i < sel.ranking.size(); ++i) CHECK(sel.ranking[i - 1].second >= sel.ranking[i].second);
}

TEST_CASE("regional selection clamps to the ceiling") {
    Rng rng(4);
    const std::array<int, 8> used{0, 2, 4, 6, 8, 10, 12, 14};
    std::vector<TrainingTable> cities;
    for (int c = 0; c < 4; ++c) {
        cities.push_back(random_table(rng, 48, [&](const auto& x, Rng& g) {
            double s = 0.0;
            for (int j : used) s += x(j);
            return std::pair{s + 0.01 * g.normal(), s + 0.01 * g.normal()};
        }));
    }
    const auto sel = select_regional_variables("SE", cities, quick(400));
    REQUIRE(sel.features.size() == 6);
    for (const auto& f : sel.features) {
        CHECK(std::find(used.begin(), used.end(), feature_index(f)) != used.end());
    }
    CHECK_THROWS_AS(select_regional_variables("SE", std::span<const TrainingTable>{}, quick(10)), DataError);
}

TEST_CASE("single-city region follows that city's ranking") {
    Rng rng(5);
    const auto t = random_table(rng, 48, [](const auto& x, Rng& g) {
        return std::pair{x(0) + 0.05 * g.normal(), x(0) + 0.5 * x(5) + 0.05 * g.normal()};
    });
    const std::array<TrainingTable, 1> one{t};
    const auto sel = select_regional_variables("W", one, quick(200));
    const auto model = mvtb::fit(t.X, t.Y, quick(200), t.feature_names, {"water", "electricity"});
    const Eigen::MatrixXd inf = mvtb::relative_influence(model);
    Eigen::Index best = 0;
    inf.rowwise().mean().maxCoeff(&best);
    CHECK(sel.features[0] == t.feature_names[static_cast<std::size_t>(best)]);
    CHECK(sel.ranking[0].second == doctest::Approx(inf.row(best).mean()));
}

TEST_CASE("percent change and identity projection") {
    CHECK(percent_change(100.0, 112.0) == doctest::Approx(12.0));
    CHECK(percent_change(3.7, 3.7) == 0.0);
    CHECK(percent_change(2.0 * 3.7, 2.0 * 4.1) == doctest::Approx(percent_change(3.7, 4.1)).epsilon(1e-14));
    CHECK_THROWS_AS(percent_change(0.0, 1.0), DataError);

    Rng rng(6);
    const auto t = random_table(rng, 48, [](const auto& x, Rng& g) {
        return std::pair{10.0 + x(1) + 0.1 * g.normal(), 10.0 + x(2) + 0.1 * g.normal()};
    });
    const auto model = mvtb::fit(t.X, t.Y, quick(100));
    const auto same = project_with_analog(model, t.X, t.X);
    for (const auto& o : same.outcomes) CHECK(o.pct_change == 0.0);

    Eigen::MatrixXd warmer = t.X;
    warmer.col(1).array() += 0.5;
    const auto warm = project_with_analog(model, t.X, warmer);
    CHECK(warm.outcomes[0].pct_change > 0.0);
}

TEST_CASE("analog feature rows follow the observed grid") {
    synth::SynthConfig cfg;
    cfg.n_cities = 1;
    cfg.n_regions = 1;
    const auto g = synth::generate(cfg);
    const auto climate = index_climate(g.bundle.climate, cfg.climate);
    const auto prepared = prepare_city(g.bundle, climate, g.bundle.cities[0], {});
    const std::vector<std::string> names{"tdry_max", "precip_total"};
    const auto own = analog_feature_matrix(climate.at("city01"), prepared.table.keys, names);
    const auto sub = select_features(prepared.table, names);
    CHECK(own == sub.X);
    const auto warm = analog_feature_matrix(climate.at("city01_warm"), prepared.table.keys, names);
    CHECK((warm.col(0) - own.col(0)).mean() == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(warm.col(1).sum() == doctest::Approx(0.8 * own.col(1).sum()).epsilon(1e-3));

    std::vector<RowKey> late{{"city01", 2030, 7}};
    CHECK_THROWS_AS(analog_feature_matrix(climate.at("city01"), late, names), DataError);
}

TEST_CASE("ssp totals") {
    auto t = ssp_total_demand(0.0, 4.3e6, 1.0, 1.0);
    CHECK(t.projected_total == 4.3e6);
    CHECK(t.delta == 0.0);
    t = ssp_total_demand(12.0, 4.3e6, 1.0, 1.0);
    CHECK(t.projected_total == doctest::Approx(4.816e6).epsilon(1e-12));
    t = ssp_total_demand(12.0, 4.3e6, 1.0, 1.183);
    CHECK(std::abs(t.projected_total - 5.7e6) <= 0.02 * 5.7e6);

    const auto two_step = ssp_total_demand(0.0, ssp_total_demand(7.0, 1e6, 2.0, 3.0).projected_total, 5.0, 6.0);
    const auto one_step = ssp_total_demand(7.0, 1e6, 1.0, 3.0 / 2.0 * 6.0 / 5.0);
    CHECK(two_step.projected_total == doctest::Approx(one_step.projected_total).epsilon(1e-14));
    CHECK_THROWS_AS(ssp_total_demand(1.0, 0.0, 1.0, 1.0), DataError);
}

TEST_CASE("emissions and equivalences") {
    const EmissionsConfig cfg;
    CHECK(co2e_delta(1.4e6, cfg) == doctest::Approx(604800.0));
    CHECK(co2e_delta(0.0, cfg) == 0.0);
    EmissionsConfig alt = cfg;
    alt.co2e_factor = 0.4375;
    CHECK(co2e_delta(4.8e6, alt) == doctest::Approx(2.1e6));

    const auto eq = equivalences(3.8e6, 4.3e6, cfg);
    const double per_turbine = 1.5 * 0.247 * 730.0;
    CHECK(eq.turbines == static_cast<long long>(std::ceil(3.8e6 / per_turbine)));
    CHECK(eq.turbines == 14050);
    CHECK(eq.forest_km2 == doctest::Approx(4.3e6 / 207.56));
    CHECK(std::abs(eq.forest_km2 - 20717.0) <= 0.02 * 20717.0);
    CHECK(equivalences(1.4e6, 0.0, cfg).dam_days == doctest::Approx(1.4e6 / 11024.0));
    CHECK(std::round(equivalences(1.4e6, 0.0, cfg).dam_days) == 127.0);

    const auto neg = equivalences(-5.0e5, -2.0e5, cfg);
    CHECK(neg.turbines == 0);
    CHECK(neg.forest_km2 == 0.0);
    CHECK(neg.dam_days == 0.0);

    alt.forest_rate = 0.0;
    CHECK_THROWS_AS(alt.validate(), InputError);
}

TEST_CASE("report writing and summary medians") {
    ReportSet rs;
    const std::array<double, 3> r2w{0.9, 0.5, 0.7};
    const std::array<double, 3> r2e{0.6, 0.8, 0.85};
    for (int c = 0; c < 3; ++c) {
        MetricsReport m;
        m.city_id = "c" + std::to_string(c);
        m.pooled = {{r2w[static_cast<std::size_t>(c)], 0.1 * (c + 1)}, {r2e[static_cast<std::size_t>(c)], 0.05}};
        m.folds.push_back({1, m.pooled});
        rs.metrics.push_back(m);
    }
    for (const std::string city : {"b", "a"}) {
        for (Scenario s : {Scenario::rcp85, Scenario::rcp45}) {
            rs.projections.push_back({city, s, city + "_x", {{10.0, 11.0, 10.0}, {1.0, 1.02, 2.0}}});
        }
    }
    const auto dir = std::filesystem::temp_directory_path() / "nexus_reports";
    std::filesystem::remove_all(dir);
    write_reports(rs, dir);

    std::ifstream pin(dir / outputs::projections);
    std::string line;
    std::getline(pin, line);
    CHECK(line == "city_id,scenario,outcome,baseline_mean,projected_mean,pct_change");
    int rows = 0;
    std::string first_city;
    while (std::getline(pin, line)) {
        if (rows++ == 0) first_city = line.substr(0, line.find(','));
    }
    CHECK(rows == 2 * 2 * 2);
    CHECK(first_city == "a");

    std::ifstream min(dir / outputs::metrics);
    const auto back = read_metrics_csv(min);
    REQUIRE(back.size() == 3);
    std::vector<double> water;
    for (const auto& m : back) water.push_back(m.pooled[0].r2);
    std::sort(water.begin(), water.end());
    const auto summary = nlohmann::json::parse(slurp(dir / outputs::summary));
    CHECK(summary["metrics"]["water"]["median_r2"].get<double>() == water[1]);
    CHECK(summary["metrics"]["electricity"]["median_r2"].get<double>() == 0.8);
    CHECK(summary["projections"]["rcp85"]["water"]["median_pct_change"].get<double>() == doctest::Approx(10.0));

    std::ifstream prin(dir / outputs::projections);
    const auto proj = read_projections_csv(prin);
    CHECK(proj.size() == 4);
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(write_reports(ReportSet{}, dir), DataError);
    CHECK(median({3.0, 1.0, 2.0, 10.0}) == 2.5);
}
