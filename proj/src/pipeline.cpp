#include "nexus/pipeline.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "nexus/csv.hpp"
#include "nexus/rng.hpp"

namespace nexus::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::array<std::string_view, 5> kMetricsHeader{"city_id", "outcome", "fold", "r2", "nrmse"};
constexpr std::array<std::string_view, 6> kProjectionsHeader{"city_id",        "scenario",       "outcome",
                                                             "baseline_mean",  "projected_mean", "pct_change"};
constexpr std::array<std::string_view, 10> kTotalsHeader{
    "city_id", "ssp",    "scenario",   "current_total_mwh", "projected_total_mwh",
    "delta_mwh", "co2e_t", "turbines", "forest_km2",        "dam_days"};
constexpr std::array<std::string_view, 4> kInfluenceHeader{"city_id", "feature", "outcome", "relative_influence_pct"};
constexpr std::array<std::string_view, 7> kAnalogsHeader{"target_city_id", "scenario", "candidate_id", "distance",
                                                         "sigma",          "saturated", "rank"};

std::string outcome_name(std::size_t k) { return std::string(outcome_names()[k]); }

std::size_t outcome_at(const std::string& s, std::size_t line) {
    const auto names = outcome_names();
    const auto it = std::find(names.begin(), names.end(), s);
    if (it == names.end()) csv::fail(line, "unknown outcome '" + s + "'");
    return static_cast<std::size_t>(it - names.begin());
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

OutcomeMetrics metrics_or_nan(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    OutcomeMetrics m{kNaN, kNaN};
    try {
        m.r2 = r2(y, yhat);
    } catch (const DataError&) {
    }
    try {
        m.nrmse = nrmse(y, yhat);
    } catch (const DataError&) {
    }
    return m;
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    writer(out);
    if (!out) throw InputError("write failed: " + path.string());
}

}  // namespace

std::vector<int> kfold_splits(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2) throw InputError("kfold_splits: k must be >= 2");
    if (n < static_cast<std::size_t>(k)) {
        throw DataError("kfold_splits: n = " + std::to_string(n) + " is smaller than k = " + std::to_string(k));
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<int> fold(n);
    for (std::size_t pos = 0; pos < n; ++pos) fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    return fold;
}

MetricsReport cross_validate_city(const std::string& city_id, const TrainingTable& table,
                                  const mvtb::Hyperparams& hyper, int k, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(table.rows());
    if (n < 2 * static_cast<std::size_t>(k)) {
        throw DataError("cross-validation for " + city_id + " needs at least " + std::to_string(2 * k) + " rows");
    }
    MetricsReport rep;
    rep.city_id = city_id;
    rep.fold_of_row = kfold_splits(n, k, seed);
    rep.out_of_fold = Eigen::MatrixXd::Zero(table.Y.rows(), table.Y.cols());
    std::vector<std::string> outcomes;
    for (Eigen::Index j = 0; j < table.Y.cols(); ++j) outcomes.push_back(outcome_name(static_cast<std::size_t>(j)));

    for (int f = 0; f < k; ++f) {
        std::vector<Eigen::Index> train;
        std::vector<Eigen::Index> test;
        for (std::size_t i = 0; i < n; ++i) (rep.fold_of_row[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
        mvtb::Hyperparams h = hyper;
        h.seed = mix_seed(hyper.seed, static_cast<std::uint64_t>(f));
        const auto model = mvtb::fit(take_rows(table.X, train), take_rows(table.Y, train), h, table.feature_names,
                                     outcomes);
        const Eigen::MatrixXd pred = mvtb::predict(model, take_rows(table.X, test));
        const Eigen::MatrixXd obs = take_rows(table.Y, test);
        FoldMetrics fm{f + 1, {}};
        for (Eigen::Index j = 0; j < obs.cols(); ++j) fm.outcomes.push_back(metrics_or_nan(obs.col(j), pred.col(j)));
        rep.folds.push_back(std::move(fm));
        for (std::size_t i = 0; i < test.size(); ++i) rep.out_of_fold.row(test[i]) = pred.row(static_cast<Eigen::Index>(i));
    }
    for (Eigen::Index j = 0; j < table.Y.cols(); ++j) {
        rep.pooled.push_back({r2(table.Y.col(j), rep.out_of_fold.col(j)), nrmse(table.Y.col(j), rep.out_of_fold.col(j))});
    }
    return rep;
}

RegionalVariableSet select_regional_variables(const std::string& region, std::span<const TrainingTable> city_tables,
                                              const mvtb::Hyperparams& hyper, const SelectionConfig& config) {
    if (city_tables.empty()) throw DataError("region " + region + " has no usable city");
    if (config.min_vars < 1 || config.max_vars < config.min_vars) throw InputError("invalid selection bounds");
    const auto pooled = concat_tables(city_tables);
    std::vector<std::string> outcomes;
    for (Eigen::Index j = 0; j < pooled.Y.cols(); ++j) outcomes.push_back(outcome_name(static_cast<std::size_t>(j)));
    const auto model = mvtb::fit(pooled.X, pooled.Y, hyper, pooled.feature_names, outcomes);
    const Eigen::MatrixXd inf = mvtb::relative_influence(model);

    RegionalVariableSet out;
    out.region = region;
    for (Eigen::Index f = 0; f < inf.rows(); ++f) {
        out.ranking.emplace_back(pooled.feature_names[static_cast<std::size_t>(f)], inf.row(f).mean());
    }
    std::sort(out.ranking.begin(), out.ranking.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::size_t count = out.ranking.size();
    double cum = 0.0;
    for (std::size_t i = 0; i < out.ranking.size(); ++i) {
        cum += out.ranking[i].second;
        if (cum >= config.cumulative_pct - 1e-9) {
            count = i + 1;
            break;
        }
    }
    count = std::clamp(count, static_cast<std::size_t>(config.min_vars), static_cast<std::size_t>(config.max_vars));
    count = std::min(count, out.ranking.size());
    for (std::size_t i = 0; i < count; ++i) out.features.push_back(out.ranking[i].first);
    return out;
}

double percent_change(double baseline, double projected) {
    if (!(baseline > 0.0)) throw DataError("percent change needs a positive baseline");
    return 100.0 * (projected - baseline) / baseline;
}

ProjectionResult project_with_analog(const mvtb::Model& model, const Eigen::MatrixXd& observed_X,
                                     const Eigen::MatrixXd& analog_X) {
    if (observed_X.rows() == 0 || analog_X.rows() == 0) throw DataError("projection needs non-empty feature tables");
    const Eigen::MatrixXd base = mvtb::predict(model, observed_X);
    const Eigen::MatrixXd proj = mvtb::predict(model, analog_X);
    ProjectionResult r;
    for (Eigen::Index k = 0; k < base.cols(); ++k) {
        OutcomeProjection o;
        o.baseline_mean = base.col(k).mean();
        o.projected_mean = proj.col(k).mean();
        o.pct_change = percent_change(o.baseline_mean, o.projected_mean);
        r.outcomes.push_back(o);
    }
    return r;
}

Eigen::MatrixXd analog_feature_matrix(const LocationClimate& analog, std::span<const RowKey> keys,
                                      std::span<const std::string> feature_names) {
    std::vector<int> cols;
    for (const auto& name : feature_names) {
        const int idx = feature_index(name);
        if (idx < 0) throw InputError("unknown feature '" + name + "'");
        cols.push_back(idx);
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(keys.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!analog.has_month(keys[i].year, keys[i].month)) {
            throw DataError("missing analog climate coverage: " + analog.location_id() + " " +
                            std::to_string(keys[i].year) + "-" + std::to_string(keys[i].month));
        }
        const auto row = analog.month_features(keys[i].year, keys[i].month);
        for (std::size_t j = 0; j < cols.size(); ++j) {
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row.values(cols[j]);
        }
    }
    return X;
}

void EmissionsConfig::validate() const {
    if (!(co2e_factor > 0 && turbine_rating_mw > 0 && capacity_factor > 0 && hours_per_month > 0 && forest_rate > 0 &&
          dam_daily_output_mwh > 0)) {
        throw InputError("emissions config values must all be positive");
    }
}

TotalsCore ssp_total_demand(double pct_change, double current_total, double pop_now, double pop_future) {
    if (!(current_total > 0.0 && pop_now > 0.0 && pop_future > 0.0)) {
        throw DataError("ssp_total_demand: totals and populations must be positive");
    }
    if (!(pct_change > -100.0)) throw DataError("ssp_total_demand: percent change must exceed -100");
    TotalsCore t;
    t.current_total = current_total;
    t.projected_total = current_total * (1.0 + pct_change / 100.0) * (pop_future / pop_now);
    t.delta = t.projected_total - t.current_total;
    return t;
}

double co2e_delta(double delta_mwh, const EmissionsConfig& config) { return delta_mwh * config.co2e_factor; }

EquivalenceReport equivalences(double delta_mwh, double co2e_t, const EmissionsConfig& config) {
    // Reductions carry no equivalence; only added demand is expressed as new capacity.
    const double added = std::max(delta_mwh, 0.0);
    const double monthly_turbine_mwh = config.turbine_rating_mw * config.capacity_factor * config.hours_per_month;
    EquivalenceReport r;
    r.turbines = static_cast<long long>(std::ceil(added / monthly_turbine_mwh));
    r.forest_km2 = std::max(co2e_t, 0.0) / config.forest_rate;
    r.dam_days = added / config.dam_daily_output_mwh;
    return r;
}

std::vector<InfluenceRow> influence_rows(const std::string& city_id, const mvtb::Model& model) {
    const Eigen::MatrixXd inf = mvtb::relative_influence(model);
    std::vector<InfluenceRow> rows;
    for (Eigen::Index k = 0; k < inf.cols(); ++k) {
        for (Eigen::Index f = 0; f < inf.rows(); ++f) {
            rows.push_back({city_id, model.feature_names[static_cast<std::size_t>(f)],
                            model.outcome_names[static_cast<std::size_t>(k)], inf(f, k)});
        }
    }
    return rows;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> reports) {
    csv::write_header(out, kMetricsHeader);
    for (const auto& rep : reports) {
        for (std::size_t k = 0; k < rep.pooled.size(); ++k) {
            for (const auto& f : rep.folds) {
                const std::array<std::string, 5> row{rep.city_id, outcome_name(k), std::to_string(f.fold),
                                                     csv::fmt(f.outcomes[k].r2), csv::fmt(f.outcomes[k].nrmse)};
                csv::write_row(out, row);
            }
            const std::array<std::string, 5> row{rep.city_id, outcome_name(k), "pooled", csv::fmt(rep.pooled[k].r2),
                                                 csv::fmt(rep.pooled[k].nrmse)};
            csv::write_row(out, row);
        }
    }
}

void write_projections_csv(std::ostream& out, std::span<const ProjectionResult> results) {
    csv::write_header(out, kProjectionsHeader);
    for (const auto& r : results) {
        for (std::size_t k = 0; k < r.outcomes.size(); ++k) {
            const auto& o = r.outcomes[k];
            const std::array<std::string, 6> row{r.city_id,           std::string(to_string(r.scenario)),
                                                 outcome_name(k),     csv::fmt(o.baseline_mean),
                                                 csv::fmt(o.projected_mean), csv::fmt(o.pct_change)};
            csv::write_row(out, row);
        }
    }
}

void write_totals_csv(std::ostream& out, std::span<const TotalsResult> results) {
    csv::write_header(out, kTotalsHeader);
    for (const auto& t : results) {
        const std::array<std::string, 10> row{t.city_id,
                                              "SSP" + std::to_string(t.ssp),
                                              std::string(to_string(t.scenario)),
                                              csv::fmt(t.core.current_total),
                                              csv::fmt(t.core.projected_total),
                                              csv::fmt(t.core.delta),
                                              csv::fmt(t.co2e_t),
                                              std::to_string(t.eq.turbines),
                                              csv::fmt(t.eq.forest_km2),
                                              csv::fmt(t.eq.dam_days)};
        csv::write_row(out, row);
    }
}

void write_influence_csv(std::ostream& out, std::span<const InfluenceRow> rows) {
    csv::write_header(out, kInfluenceHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 4> row{r.city_id, r.feature, r.outcome, csv::fmt(r.pct)};
        csv::write_row(out, row);
    }
}

void write_analogs_csv(std::ostream& out, std::span<const RankedAnalogs> ranked) {
    analog::write_ranked_header(out);
    for (const auto& r : ranked) analog::write_ranked_rows(out, r.query, r.results);
}

double median(std::vector<double> values) {
    std::erase_if(values, [](double v) { return std::isnan(v); });
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string summary_json(const ReportSet& reports) {
    using nlohmann::json;
    json root = json::object();
    const auto finite_or_null = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    if (!reports.metrics.empty()) {
        json m = json::object();
        for (std::size_t k = 0; k < outcome_names().size(); ++k) {
            std::vector<double> r2s;
            std::vector<double> errs;
            for (const auto& rep : reports.metrics) {
                if (k < rep.pooled.size()) {
                    r2s.push_back(rep.pooled[k].r2);
                    errs.push_back(rep.pooled[k].nrmse);
                }
            }
            m[outcome_name(k)] = {{"median_r2", finite_or_null(median(r2s))},
                                  {"median_nrmse", finite_or_null(median(errs))},
                                  {"n_cities", r2s.size()}};
        }
        root["metrics"] = m;
    }
    if (!reports.projections.empty()) {
        json p = json::object();
        for (Scenario s : {Scenario::rcp45, Scenario::rcp85}) {
            json sc = json::object();
            for (std::size_t k = 0; k < outcome_names().size(); ++k) {
                std::vector<double> pct;
                for (const auto& r : reports.projections) {
                    if (r.scenario == s && k < r.outcomes.size()) pct.push_back(r.outcomes[k].pct_change);
                }
                if (!pct.empty()) {
                    sc[outcome_name(k)] = {{"median_pct_change", finite_or_null(median(pct))}, {"n_cities", pct.size()}};
                }
            }
            if (!sc.empty()) p[std::string(to_string(s))] = sc;
        }
        root["projections"] = p;
    }
    return root.dump(2) + "\n";
}

void write_reports(const ReportSet& reports, const std::filesystem::path& out_dir) {
    if (reports.empty()) throw DataError("no results to write");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw InputError("cannot create output directory " + out_dir.string() + ": " + ec.message());

    ReportSet sorted = reports;
    std::stable_sort(sorted.metrics.begin(), sorted.metrics.end(),
                     [](const auto& a, const auto& b) { return a.city_id < b.city_id; });
    std::stable_sort(sorted.projections.begin(), sorted.projections.end(), [](const auto& a, const auto& b) {
        return std::tie(a.city_id, a.scenario) < std::tie(b.city_id, b.scenario);
    });
    std::stable_sort(sorted.totals.begin(), sorted.totals.end(), [](const auto& a, const auto& b) {
        return std::tie(a.city_id, a.ssp, a.scenario) < std::tie(b.city_id, b.ssp, b.scenario);
    });
    std::stable_sort(sorted.influence.begin(), sorted.influence.end(),
                     [](const auto& a, const auto& b) { return a.city_id < b.city_id; });
    std::stable_sort(sorted.analogs.begin(), sorted.analogs.end(), [](const auto& a, const auto& b) {
        return std::tie(a.query.target_city_id, a.query.scenario) < std::tie(b.query.target_city_id, b.query.scenario);
    });

    if (!sorted.metrics.empty()) {
        write_file(out_dir / outputs::metrics, [&](std::ostream& o) { write_metrics_csv(o, sorted.metrics); });
        write_file(out_dir / outputs::summary, [&](std::ostream& o) { o << summary_json(sorted); });
    }
    if (!sorted.projections.empty()) {
        write_file(out_dir / outputs::projections, [&](std::ostream& o) { write_projections_csv(o, sorted.projections); });
    }
    if (!sorted.totals.empty()) {
        write_file(out_dir / outputs::totals, [&](std::ostream& o) { write_totals_csv(o, sorted.totals); });
    }
    if (!sorted.influence.empty()) {
        write_file(out_dir / outputs::influence, [&](std::ostream& o) { write_influence_csv(o, sorted.influence); });
    }
    if (!sorted.analogs.empty()) {
        write_file(out_dir / outputs::analogs, [&](std::ostream& o) { write_analogs_csv(o, sorted.analogs); });
    }
}

std::vector<MetricsReport> read_metrics_csv(std::istream& in) {
    std::vector<MetricsReport> out;
    const auto n_out = outcome_names().size();
    for (const auto& row : csv::read_table(in, kMetricsHeader)) {
        const auto& f = row.fields;
        if (out.empty() || out.back().city_id != f[0]) {
            out.push_back({f[0], {}, std::vector<OutcomeMetrics>(n_out, {kNaN, kNaN}), {}, {}});
        }
        auto& rep = out.back();
        const auto k = outcome_at(f[1], row.line);
        const auto parse = [&](const std::string& s, std::string_view col) {
            return s == "nan" ? kNaN : csv::to_double(s, row.line, col);
        };
        const OutcomeMetrics m{parse(f[3], "r2"), parse(f[4], "nrmse")};
        if (f[2] == "pooled") {
            rep.pooled[k] = m;
            continue;
        }
        const int fold = static_cast<int>(csv::to_int(f[2], row.line, "fold"));
        auto it = std::find_if(rep.folds.begin(), rep.folds.end(), [&](const auto& x) { return x.fold == fold; });
        if (it == rep.folds.end()) {
            rep.folds.push_back({fold, std::vector<OutcomeMetrics>(n_out, {kNaN, kNaN})});
            it = rep.folds.end() - 1;
        }
        it->outcomes[k] = m;
    }
    return out;
}

std::vector<ProjectionResult> read_projections_csv(std::istream& in) {
    std::vector<ProjectionResult> out;
    for (const auto& row : csv::read_table(in, kProjectionsHeader)) {
        const auto& f = row.fields;
        Scenario s;
        try {
            s = parse_scenario(f[1]);
        } catch (const InputError& e) {
            csv::fail(row.line, e.what());
        }
        if (out.empty() || out.back().city_id != f[0] || out.back().scenario != s) {
            out.push_back({f[0], s, {}, std::vector<OutcomeProjection>(outcome_names().size())});
        }
        const auto k = outcome_at(f[2], row.line);
        out.back().outcomes[k] = {csv::to_double(f[3], row.line, "baseline_mean"),
                                  csv::to_double(f[4], row.line, "projected_mean"),
                                  csv::to_double(f[5], row.line, "pct_change")};
    }
    return out;
}

std::vector<RankedAnalogs> read_analogs_csv(std::istream& in) {
    std::vector<RankedAnalogs> out;
    for (const auto& row : csv::read_table(in, kAnalogsHeader)) {
        const auto& f = row.fields;
        Scenario s;
        try {
            s = parse_scenario(f[1]);
        } catch (const InputError& e) {
            csv::fail(row.line, e.what());
        }
        if (out.empty() || out.back().query.target_city_id != f[0] || out.back().query.scenario != s) {
            RankedAnalogs r;
            r.query.target_city_id = f[0];
            r.query.scenario = s;
            out.push_back(std::move(r));
        }
        if (f[5] != "true" && f[5] != "false") csv::fail(row.line, "saturated must be true or false");
        out.back().results.push_back({f[2], csv::to_double(f[3], row.line, "distance"),
                                      csv::to_double(f[4], row.line, "sigma"), f[5] == "true",
                                      static_cast<int>(csv::to_int(f[6], row.line, "rank"))});
    }
    return out;
}

PreparedCity prepare_city(const DatasetBundle& bundle, const std::map<std::string, LocationClimate>& climate,
                          const CityRecord& city, const PrepareOptions& options) {
    const auto in_period = [&](const DemandSeries& s) {
        DemandSeries out = s;
        std::erase_if(out.values, [&](const auto& kv) {
            return kv.first.year < options.period.start_year || kv.first.year > options.period.end_year;
        });
        return out;
    };
    const auto water_pc = to_per_capita(in_period(make_series(bundle.demand, city.city_id, Sector::water)), bundle.population);
    const auto elec_pc =
        to_per_capita(in_period(make_series(bundle.demand, city.city_id, Sector::electricity)), bundle.population);
    const auto water = detrend(water_pc);
    const auto elec = detrend(elec_pc);

    const auto cit = climate.find(city.city_id);
    if (cit == climate.end()) throw DataError("no climate records for " + city.city_id);
    std::vector<MonthlyFeatureRow> rows;
    for (int y = options.period.start_year; y <= options.period.end_year; ++y) {
        for (int m : options.summer_months) {
            if (cit->second.has_month(y, m)) rows.push_back(cit->second.month_features(y, m));
        }
    }

    PreparedCity p;
    p.city_id = city.city_id;
    p.region = city.region;
    p.table = build_training_table(rows, water, elec, options.summer_months);
    double sum = 0.0;
    int n = 0;
    for (const auto& [ym, v] : elec_pc.values) {
        if (std::find(options.summer_months.begin(), options.summer_months.end(), ym.month) !=
            options.summer_months.end()) {
            sum += v;
            ++n;
        }
    }
    if (n == 0) throw DataError("no summer electricity data for " + city.city_id);
    p.mean_summer_electricity_pc = sum / n;
    return p;
}

}  // namespace nexus::pipeline
