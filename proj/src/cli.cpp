#include "nexus/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nexus/analog.hpp"
#include "nexus/csv.hpp"
#include "nexus/error.hpp"
#include "nexus/parallel.hpp"
#include "nexus/rng.hpp"

namespace nexus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kValidation = "validation.json";
constexpr std::string_view kSelected = "selected_variables.csv";
constexpr std::string_view kModels = "models";

constexpr std::array<std::string_view, 4> kSelectedHeader{"region", "rank", "feature", "mean_influence_pct"};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename Writer>
void write_text(const fs::path& p, Writer&& writer) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write " + p.string());
    writer(out);
    if (!out) throw InputError("write failed: " + p.string());
}

void require(const fs::path& p, std::string_view what) {
    if (!fs::exists(p)) throw PrerequisiteError("missing prerequisite " + p.string() + " (" + std::string(what) + ")");
}

template <typename T>
void maybe(const json& j, const char* key, T& target) {
    if (j.contains(key)) target = j.at(key).get<T>();
}

struct Context {
    RunConfig cfg;
    std::vector<std::string> cities;  // --city filter (empty = all)
    std::vector<Scenario> scenarios;  // --scenario filter applied over cfg.scenarios
    std::ostream& out;
    std::ostream& err;

    bool in_scope(const std::string& id) const {
        return cities.empty() || std::find(cities.begin(), cities.end(), id) != cities.end();
    }
    pipeline::PrepareOptions prepare_options() const { return {cfg.period, cfg.summer_months, cfg.climate}; }
    mvtb::Hyperparams hyper() const {
        auto h = cfg.hyper;
        h.seed = cfg.seed;
        return h;
    }
};

std::vector<std::string> excluded_from_validation(const fs::path& p) {
    json j;
    try {
        j = json::parse(read_text(p));
    } catch (const json::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
    std::vector<std::string> out;
    for (const auto& c : j.at("cities")) {
        if (c.at("excluded").get<bool>()) out.push_back(c.at("city_id").get<std::string>());
    }
    return out;
}

struct Prepared {
    DatasetBundle bundle;
    std::map<std::string, LocationClimate> climate;
    std::vector<pipeline::PreparedCity> cities;  // sorted by city_id
};

// Loads the bundle and prepares every usable registry city (validated, not excluded).
Prepared prepare(const Context& ctx, bool only_scope) {
    const auto& cfg = ctx.cfg;
    require(cfg.out_dir / kValidation, "run `validate` first");
    const auto excluded = excluded_from_validation(cfg.out_dir / kValidation);
    Prepared p;
    p.bundle = load_bundle(cfg.data_dir);
    p.climate = index_climate(p.bundle.climate, cfg.climate);
    std::vector<CityRecord> todo;
    for (const auto& c : p.bundle.cities) {
        if (std::find(excluded.begin(), excluded.end(), c.city_id) != excluded.end()) continue;
        if (only_scope && !ctx.in_scope(c.city_id)) continue;
        todo.push_back(c);
    }
    std::sort(todo.begin(), todo.end(), [](const auto& a, const auto& b) { return a.city_id < b.city_id; });
    p.cities.resize(todo.size());
    const auto opts = ctx.prepare_options();
    parallel_for(todo.size(), cfg.jobs, [&](std::size_t i) {
        p.cities[i] = pipeline::prepare_city(p.bundle, p.climate, todo[i], opts);
    });
    return p;
}

std::map<std::string, std::vector<std::string>> read_selected(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open " + p.string());
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& row : csv::read_table(in, kSelectedHeader)) out[row.fields[0]].push_back(row.fields[2]);
    return out;
}

void write_debug_tables(const Context& ctx, const std::vector<pipeline::PreparedCity>& cities) {
    if (!ctx.cfg.debug_dumps) return;
    const auto dir = ctx.cfg.out_dir / "debug";
    fs::create_directories(dir);
    for (const auto& c : cities) {
        write_text(dir / ("features_" + c.city_id + ".csv"),
                   [&](std::ostream& o) { write_training_table_csv(o, c.table); });
    }
}

// ---------------------------------------------------------------- commands

int cmd_validate(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto bundle = load_bundle(cfg.data_dir);
    for (const auto& w : bundle.warnings) ctx.err << "warning: " << w << '\n';
    auto report = validate_bundle(bundle, cfg.period, cfg.summer_months, cfg.coverage);
    if (!ctx.cities.empty()) {
        std::erase_if(report.cities, [&](const auto& c) { return !ctx.in_scope(c.city_id); });
    }
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / kValidation, [&](std::ostream& o) { o << validation_report_json(report); });
    for (const auto& c : report.cities) {
        if (c.excluded) ctx.out << "excluded: " << c.city_id << '\n';
    }
    ctx.out << "validated " << report.cities.size() << " cities\n";
    return report.all_usable() ? kOk : kExcluded;
}

int cmd_train(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto prep = prepare(ctx, false);
    const auto hyper = ctx.hyper();

    std::map<std::string, std::vector<const pipeline::PreparedCity*>> by_region;
    for (const auto& c : prep.cities) by_region[c.region].push_back(&c);
    std::set<std::string> wanted_regions;
    for (const auto& c : prep.cities) {
        if (ctx.in_scope(c.city_id)) wanted_regions.insert(c.region);
    }

    std::vector<std::string> regions(wanted_regions.begin(), wanted_regions.end());
    std::vector<pipeline::RegionalVariableSet> selected(regions.size());
    parallel_for(regions.size(), cfg.jobs, [&](std::size_t i) {
        std::vector<TrainingTable> tables;
        for (const auto* c : by_region[regions[i]]) tables.push_back(c->table);
        selected[i] = pipeline::select_regional_variables(regions[i], tables, hyper, cfg.selection);
    });
    std::map<std::string, std::vector<std::string>> features_for;
    for (const auto& s : selected) features_for[s.region] = s.features;

    fs::create_directories(cfg.out_dir / kModels);
    write_text(cfg.out_dir / kSelected, [&](std::ostream& o) {
        csv::write_header(o, kSelectedHeader);
        for (const auto& s : selected) {
            for (std::size_t r = 0; r < s.features.size(); ++r) {
                const auto it = std::find_if(s.ranking.begin(), s.ranking.end(),
                                             [&](const auto& kv) { return kv.first == s.features[r]; });
                const std::array<std::string, 4> row{s.region, std::to_string(r + 1), s.features[r],
                                                     csv::fmt(it->second)};
                csv::write_row(o, row);
            }
        }
    });

    std::vector<const pipeline::PreparedCity*> scope;
    for (const auto& c : prep.cities) {
        if (ctx.in_scope(c.city_id)) scope.push_back(&c);
    }
    std::vector<mvtb::Model> models(scope.size());
    parallel_for(scope.size(), cfg.jobs, [&](std::size_t i) {
        const auto t = select_features(scope[i]->table, features_for.at(scope[i]->region));
        std::vector<std::string> outcomes(outcome_names().begin(), outcome_names().end());
        models[i] = mvtb::fit(t.X, t.Y, hyper, t.feature_names, outcomes);
    });
    pipeline::ReportSet rep;
    for (std::size_t i = 0; i < scope.size(); ++i) {
        write_text(cfg.out_dir / kModels / (scope[i]->city_id + ".json"),
                   [&](std::ostream& o) { o << mvtb::to_json(models[i]); });
        const auto rows = pipeline::influence_rows(scope[i]->city_id, models[i]);
        rep.influence.insert(rep.influence.end(), rows.begin(), rows.end());
    }
    std::vector<pipeline::PreparedCity> dumped;
    for (const auto* c : scope) dumped.push_back(*c);
    write_debug_tables(ctx, dumped);
    if (!rep.empty()) pipeline::write_reports(rep, cfg.out_dir);
    ctx.out << "trained " << scope.size() << " city models across " << regions.size() << " regions\n";
    return kOk;
}

int cmd_evaluate(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require(cfg.out_dir / kSelected, "run `train` first");
    const auto selected = read_selected(cfg.out_dir / kSelected);
    auto prep = prepare(ctx, true);
    const auto hyper = ctx.hyper();
    pipeline::ReportSet rep;
    rep.metrics.resize(prep.cities.size());
    parallel_for(prep.cities.size(), cfg.jobs, [&](std::size_t i) {
        const auto& c = prep.cities[i];
        const auto it = selected.find(c.region);
        if (it == selected.end()) throw PrerequisiteError("no selected variables for region " + c.region);
        const auto t = select_features(c.table, it->second);
        rep.metrics[i] = pipeline::cross_validate_city(c.city_id, t, hyper, cfg.k_folds, mix_seed(cfg.seed, 0xCF));
    });
    if (rep.empty()) throw DataError("no cities to evaluate");
    pipeline::write_reports(rep, cfg.out_dir);
    ctx.out << "evaluated " << rep.metrics.size() << " cities\n";
    return kOk;
}

std::vector<Scenario> active_scenarios(const Context& ctx) {
    std::vector<Scenario> out;
    for (auto s : ctx.cfg.scenarios) {
        if (ctx.scenarios.empty() || std::find(ctx.scenarios.begin(), ctx.scenarios.end(), s) != ctx.scenarios.end()) {
            out.push_back(s);
        }
    }
    return out;
}

int cmd_analogs(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    require(cfg.data_dir / files::future_normals, "analog search needs future normals");
    const auto bundle = load_bundle(cfg.data_dir);
    const auto climate = index_climate(bundle.climate, cfg.climate);

    std::vector<std::string> ids;
    for (const auto& [id, loc] : climate) ids.push_back(id);
    std::vector<std::optional<SeasonalNormals>> normals(ids.size());
    parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
        try {
            normals[i] = climate.at(ids[i]).seasonal_normals(cfg.period.start_year, cfg.period.end_year);
        } catch (const DataError& e) {
            normals[i].reset();
        }
    });
    std::vector<SeasonalNormals> pool_all;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (normals[i]) {
            pool_all.push_back(*normals[i]);
        } else {
            ctx.err << "warning: " << ids[i] << " lacks complete years for seasonal normals; not a candidate\n";
        }
    }
    if (cfg.debug_dumps) {
        fs::create_directories(cfg.out_dir / "debug");
        for (const auto& n : pool_all) {
            write_text(cfg.out_dir / "debug" / ("normals_" + n.location_id + ".csv"), [&](std::ostream& o) {
                write_normals_csv(o, std::span<const SeasonalNormals>(&n, 1));
            });
        }
    }

    const auto scenarios = active_scenarios(ctx);
    std::vector<FutureNormalsRecord> queries;
    for (const auto& f : *bundle.future_normals) {
        if (ctx.in_scope(f.city_id) &&
            std::find(scenarios.begin(), scenarios.end(), f.scenario) != scenarios.end()) {
            queries.push_back(f);
        }
    }
    pipeline::ReportSet rep;
    rep.analogs.resize(queries.size());
    parallel_for(queries.size(), cfg.jobs, [&](std::size_t i) {
        std::vector<SeasonalNormals> pool;
        for (const auto& n : pool_all) {
            if (n.location_id != queries[i].city_id) pool.push_back(n);
        }
        analog::AnalogQuery q{queries[i].city_id, queries[i].scenario, queries[i].mean12};
        rep.analogs[i] = {q, analog::rank_analogs(q, pool)};
    });
    if (rep.empty()) throw DataError("no analog queries in scope");
    pipeline::write_reports(rep, cfg.out_dir);
    ctx.out << "ranked analogs for " << rep.analogs.size() << " city-scenarios\n";
    return kOk;
}

int cmd_project(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    const bool have_map = fs::exists(cfg.data_dir / files::analogs);
    const auto ranked_path = cfg.out_dir / pipeline::outputs::analogs;
    if (!have_map) require(ranked_path, "need data analogs.csv or run `analogs`");
    auto prep = prepare(ctx, true);

    // (city, scenario) -> analog location
    std::map<std::pair<std::string, Scenario>, std::string> chosen;
    if (have_map) {
        for (const auto& a : prep.bundle.analogs) {
            if (a.source == cfg.analog_source) chosen[{a.target_city_id, a.scenario}] = a.analog_id;
        }
    } else {
        std::ifstream in(ranked_path, std::ios::binary);
        for (const auto& r : pipeline::read_analogs_csv(in)) {
            for (const auto& res : r.results) {
                if (res.rank == 1) chosen[{r.query.target_city_id, r.query.scenario}] = res.candidate_id;
            }
        }
    }

    struct Job {
        const pipeline::PreparedCity* city;
        Scenario scenario;
        std::string analog_id;
    };
    std::vector<Job> jobs;
    const auto scenarios = active_scenarios(ctx);
    for (const auto& c : prep.cities) {
        require(cfg.out_dir / kModels / (c.city_id + ".json"), "run `train` first");
        for (auto s : scenarios) {
            const auto it = chosen.find({c.city_id, s});
            if (it == chosen.end()) {
                ctx.err << "warning: no " << to_string(s) << " analog for " << c.city_id << '\n';
                continue;
            }
            jobs.push_back({&c, s, it->second});
        }
    }

    pipeline::ReportSet rep;
    rep.projections.resize(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const auto& j = jobs[i];
        const auto model = mvtb::from_json(read_text(cfg.out_dir / kModels / (j.city->city_id + ".json")));
        const auto loc = prep.climate.find(j.analog_id);
        if (loc == prep.climate.end()) {
            throw DataError("missing analog climate coverage: no records for " + j.analog_id);
        }
        const auto observed = select_features(j.city->table, model.feature_names);
        const auto analog_X = pipeline::analog_feature_matrix(loc->second, observed.keys, model.feature_names);
        auto r = pipeline::project_with_analog(model, observed.X, analog_X);
        r.city_id = j.city->city_id;
        r.scenario = j.scenario;
        r.analog_id = j.analog_id;
        rep.projections[i] = std::move(r);
    });
    if (rep.empty()) throw DataError("no projections in scope");
    pipeline::write_reports(rep, cfg.out_dir);
    ctx.out << "projected " << rep.projections.size() << " city-scenarios\n";
    return kOk;
}

int cmd_totals(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    cfg.emissions.validate();
    const auto proj_path = cfg.out_dir / pipeline::outputs::projections;
    require(proj_path, "run `project` first");
    require(cfg.data_dir / files::ssp, "SSP populations");
    std::ifstream in(proj_path, std::ios::binary);
    const auto projections = pipeline::read_projections_csv(in);
    auto prep = prepare(ctx, true);

    std::map<std::tuple<std::string, int, int>, double> ssp_pop;
    for (const auto& s : *prep.bundle.ssp) ssp_pop[{s.city_id, s.ssp, s.year}] = s.population;
    std::map<std::string, const pipeline::PreparedCity*> cities;
    for (const auto& c : prep.cities) cities[c.city_id] = &c;
    const auto scenarios = active_scenarios(ctx);

    pipeline::ReportSet rep;
    for (const auto& p : projections) {
        const auto cit = cities.find(p.city_id);
        if (cit == cities.end()) continue;
        if (std::find(scenarios.begin(), scenarios.end(), p.scenario) == scenarios.end()) continue;
        const double pct = p.outcomes.at(1).pct_change;
        for (int ssp = 1; ssp <= 5; ++ssp) {
            const auto now = ssp_pop.find({p.city_id, ssp, cfg.ssp_base_year});
            const auto fut = ssp_pop.find({p.city_id, ssp, cfg.ssp_target_year});
            if (now == ssp_pop.end() || fut == ssp_pop.end()) continue;
            pipeline::TotalsResult t;
            t.city_id = p.city_id;
            t.ssp = ssp;
            t.scenario = p.scenario;
            const double current = cit->second->mean_summer_electricity_pc * now->second;
            t.core = pipeline::ssp_total_demand(pct, current, now->second, fut->second);
            t.co2e_t = pipeline::co2e_delta(t.core.delta, cfg.emissions);
            t.eq = pipeline::equivalences(t.core.delta, t.co2e_t, cfg.emissions);
            rep.totals.push_back(t);
        }
    }
    if (rep.empty()) throw DataError("no SSP totals could be computed (check ssp.csv base/target years)");
    pipeline::write_reports(rep, cfg.out_dir);
    ctx.out << "wrote " << rep.totals.size() << " totals rows\n";
    return kOk;
}

int cmd_synth(const Context& ctx) {
    auto sc = ctx.cfg.synth;
    sc.seed = ctx.cfg.seed;
    sc.start_year = ctx.cfg.period.start_year;
    sc.end_year = ctx.cfg.period.end_year;
    sc.summer_months = ctx.cfg.summer_months;
    sc.climate = ctx.cfg.climate;
    sc.ssp_base_year = ctx.cfg.ssp_base_year;
    sc.ssp_target_year = ctx.cfg.ssp_target_year;
    const auto g = synth::generate(sc);
    synth::write_generated(g, sc, ctx.cfg.data_dir);
    ctx.out << "generated " << sc.n_cities << " cities into " << ctx.cfg.data_dir.string() << '\n';
    return kOk;
}

constexpr std::string_view kCommonKeys = "data_dir, out_dir, study_period.{start,end}, seed, jobs";
constexpr std::string_view kClimateKeys = "summer_months, wet_day_threshold_mm, max_gap_days, min_month_fraction";
constexpr std::string_view kModelKeys = "hyperparams.{n_trees,depth,shrinkage,bag_fraction,min_node}";

std::string keys_footer(std::initializer_list<std::string_view> groups) {
    std::string s = "Config keys read: ";
    bool first = true;
    for (auto g : groups) {
        if (!first) s += ", ";
        s += g;
        first = false;
    }
    return s;
}

}  // namespace

void RunConfig::validate() const {
    if (period.start_year > period.end_year) throw InputError("study_period: start must be <= end");
    if (summer_months.empty()) throw InputError("summer_months must not be empty");
    for (int m : summer_months) {
        if (m < 1 || m > 12) throw InputError("summer_months must lie in 1..12");
    }
    if (k_folds < 2) throw InputError("k_folds must be >= 2");
    if (jobs < 1) throw InputError("jobs must be >= 1");
    if (!(climate.wet_day_threshold_mm >= 0)) throw InputError("wet_day_threshold_mm must be >= 0");
    if (climate.max_gap_days < 0) throw InputError("max_gap_days must be >= 0");
    if (!(climate.min_month_fraction > 0 && climate.min_month_fraction <= 1)) {
        throw InputError("min_month_fraction must be in (0, 1]");
    }
    if (!(coverage.summer_demand >= 0 && coverage.summer_demand <= 1 && coverage.climate_days >= 0 &&
          coverage.climate_days <= 1)) {
        throw InputError("coverage thresholds must be in [0, 1]");
    }
    if (selection.min_vars < 1 || selection.max_vars < selection.min_vars || selection.max_vars > kFeatureCount) {
        throw InputError("selection bounds must satisfy 1 <= min_vars <= max_vars <= 17");
    }
    if (analog_source != "ensemble" && analog_source.rfind("gcm:", 0) != 0) {
        throw InputError("analog_source must be 'ensemble' or 'gcm:<name>'");
    }
    hyper.validate();
    emissions.validate();
}

namespace {

// Unknown keys are almost always typos; failing beats silently using a default.
void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
    if (!j.is_object()) throw InputError("config: " + where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw InputError("config: unknown key '" + where + k + "'");
        }
    }
}

}  // namespace

RunConfig parse_config(const std::string& json_text, RunConfig c) {
    json j;
    try {
        j = json::parse(json_text);
        reject_unknown(j,
                       {"data_dir", "out_dir", "study_period", "summer_months", "wet_day_threshold_mm", "max_gap_days",
                        "min_month_fraction", "coverage", "hyperparams", "k_folds", "selection", "scenarios",
                        "analog_source", "ssp", "emissions", "synth", "seed", "jobs", "debug_dumps"},
                       "");
        if (j.contains("study_period")) reject_unknown(j["study_period"], {"start", "end"}, "study_period.");
        if (j.contains("coverage")) reject_unknown(j["coverage"], {"summer_demand", "climate_days"}, "coverage.");
        if (j.contains("hyperparams")) {
            reject_unknown(j["hyperparams"], {"n_trees", "depth", "shrinkage", "bag_fraction", "min_node"},
                           "hyperparams.");
        }
        if (j.contains("selection")) {
            reject_unknown(j["selection"], {"cumulative_pct", "min_vars", "max_vars"}, "selection.");
        }
        if (j.contains("ssp")) reject_unknown(j["ssp"], {"base_year", "target_year"}, "ssp.");
        if (j.contains("emissions")) {
            reject_unknown(j["emissions"],
                           {"co2e_factor", "turbine_rating_mw", "capacity_factor", "hours_per_month", "forest_rate",
                            "dam_daily_output_mwh"},
                           "emissions.");
        }
        if (j.contains("synth")) {
            reject_unknown(j["synth"], {"n_cities", "n_regions", "noise_sigma", "trend_slope", "trend"}, "synth.");
        }
        maybe(j, "data_dir", c.data_dir);
        maybe(j, "out_dir", c.out_dir);
        if (j.contains("study_period")) {
            maybe(j["study_period"], "start", c.period.start_year);
            maybe(j["study_period"], "end", c.period.end_year);
        }
        maybe(j, "summer_months", c.summer_months);
        maybe(j, "wet_day_threshold_mm", c.climate.wet_day_threshold_mm);
        maybe(j, "max_gap_days", c.climate.max_gap_days);
        maybe(j, "min_month_fraction", c.climate.min_month_fraction);
        if (j.contains("coverage")) {
            maybe(j["coverage"], "summer_demand", c.coverage.summer_demand);
            maybe(j["coverage"], "climate_days", c.coverage.climate_days);
        }
        if (j.contains("hyperparams")) {
            const auto& h = j["hyperparams"];
            maybe(h, "n_trees", c.hyper.n_trees);
            maybe(h, "depth", c.hyper.depth);
            maybe(h, "shrinkage", c.hyper.shrinkage);
            maybe(h, "bag_fraction", c.hyper.bag_fraction);
            maybe(h, "min_node", c.hyper.min_node);
        }
        maybe(j, "k_folds", c.k_folds);
        if (j.contains("selection")) {
            maybe(j["selection"], "cumulative_pct", c.selection.cumulative_pct);
            maybe(j["selection"], "min_vars", c.selection.min_vars);
            maybe(j["selection"], "max_vars", c.selection.max_vars);
        }
        if (j.contains("scenarios")) {
            c.scenarios.clear();
            for (const auto& s : j["scenarios"]) c.scenarios.push_back(parse_scenario(s.get<std::string>()));
        }
        maybe(j, "analog_source", c.analog_source);
        if (j.contains("ssp")) {
            maybe(j["ssp"], "base_year", c.ssp_base_year);
            maybe(j["ssp"], "target_year", c.ssp_target_year);
        }
        if (j.contains("emissions")) {
            const auto& e = j["emissions"];
            maybe(e, "co2e_factor", c.emissions.co2e_factor);
            maybe(e, "turbine_rating_mw", c.emissions.turbine_rating_mw);
            maybe(e, "capacity_factor", c.emissions.capacity_factor);
            maybe(e, "hours_per_month", c.emissions.hours_per_month);
            maybe(e, "forest_rate", c.emissions.forest_rate);
            maybe(e, "dam_daily_output_mwh", c.emissions.dam_daily_output_mwh);
        }
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            maybe(s, "n_cities", c.synth.n_cities);
            maybe(s, "n_regions", c.synth.n_regions);
            maybe(s, "noise_sigma", c.synth.noise_sigma);
            maybe(s, "trend_slope", c.synth.trend_slope);
            maybe(s, "trend", c.synth.trend);
        }
        maybe(j, "seed", c.seed);
        maybe(j, "jobs", c.jobs);
        maybe(j, "debug_dumps", c.debug_dumps);
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    return c;
}

std::string config_json(const RunConfig& c) {
    std::vector<std::string> scen;
    for (auto s : c.scenarios) scen.emplace_back(to_string(s));
    const json j{
        {"data_dir", c.data_dir.string()},
        {"out_dir", c.out_dir.string()},
        {"study_period", {{"start", c.period.start_year}, {"end", c.period.end_year}}},
        {"summer_months", c.summer_months},
        {"wet_day_threshold_mm", c.climate.wet_day_threshold_mm},
        {"max_gap_days", c.climate.max_gap_days},
        {"min_month_fraction", c.climate.min_month_fraction},
        {"coverage", {{"summer_demand", c.coverage.summer_demand}, {"climate_days", c.coverage.climate_days}}},
        {"hyperparams",
         {{"n_trees", c.hyper.n_trees},
          {"depth", c.hyper.depth},
          {"shrinkage", c.hyper.shrinkage},
          {"bag_fraction", c.hyper.bag_fraction},
          {"min_node", c.hyper.min_node}}},
        {"k_folds", c.k_folds},
        {"selection",
         {{"cumulative_pct", c.selection.cumulative_pct},
          {"min_vars", c.selection.min_vars},
          {"max_vars", c.selection.max_vars}}},
        {"scenarios", scen},
        {"analog_source", c.analog_source},
        {"ssp", {{"base_year", c.ssp_base_year}, {"target_year", c.ssp_target_year}}},
        {"emissions",
         {{"co2e_factor", c.emissions.co2e_factor},
          {"turbine_rating_mw", c.emissions.turbine_rating_mw},
          {"capacity_factor", c.emissions.capacity_factor},
          {"hours_per_month", c.emissions.hours_per_month},
          {"forest_rate", c.emissions.forest_rate},
          {"dam_daily_output_mwh", c.emissions.dam_daily_output_mwh}}},
        {"synth",
         {{"n_cities", c.synth.n_cities},
          {"n_regions", c.synth.n_regions},
          {"noise_sigma", c.synth.noise_sigma},
          {"trend_slope", c.synth.trend_slope},
          {"trend", c.synth.trend}}},
        {"seed", c.seed},
        {"jobs", c.jobs},
        {"debug_dumps", c.debug_dumps}};
    return j.dump(2) + "\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Climate-analog projections of coupled urban water and electricity demand", "nexus"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    int jobs = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> cities;
    std::vector<std::string> scenario_flags;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--data-dir", data_dir, "input data directory (config: data_dir)");
    app.add_option("--out", out_dir, "output directory (config: out_dir)");
    auto* jobs_opt = app.add_option("--jobs", jobs, "concurrent city work units (config: jobs)")->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "master seed (config: seed)");

    const auto add_scope = [&](CLI::App* sub) {
        sub->add_option("--city", cities, "restrict to these city ids");
        sub->add_option("--scenario", scenario_flags, "restrict to rcp45 and/or rcp85")
            ->check(CLI::IsMember({"rcp45", "rcp85"}));
    };
    const std::string common(kCommonKeys);
    auto* validate = app.add_subcommand("validate", "check coverage and write validation.json");
    validate->footer(keys_footer({kCommonKeys, "summer_months", "coverage.{summer_demand,climate_days}"}));
    validate->add_option("--city", cities, "restrict the report to these city ids");
    auto* train = app.add_subcommand("train", "regional variable selection and final city models");
    train->footer(keys_footer({kCommonKeys, kClimateKeys, kModelKeys,
                               "selection.{cumulative_pct,min_vars,max_vars}, debug_dumps"}));
    train->add_option("--city", cities, "restrict final models to these city ids");
    auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation metrics");
    evaluate->footer(keys_footer({kCommonKeys, kClimateKeys, kModelKeys, "k_folds"}));
    evaluate->add_option("--city", cities, "restrict to these city ids");
    auto* analogs = app.add_subcommand("analogs", "rank analog candidates by sigma dissimilarity");
    analogs->footer(keys_footer({kCommonKeys, kClimateKeys, "scenarios, debug_dumps"}));
    add_scope(analogs);
    auto* project = app.add_subcommand("project", "analog-substitution demand projections");
    project->footer(keys_footer({kCommonKeys, kClimateKeys, "scenarios, analog_source"}));
    add_scope(project);
    auto* totals = app.add_subcommand("totals", "SSP-scaled electricity totals and equivalences");
    totals->footer(keys_footer({kCommonKeys, kClimateKeys, "scenarios, ssp.{base_year,target_year}",
                                "emissions.{co2e_factor,turbine_rating_mw,capacity_factor,hours_per_month,"
                                "forest_rate,dam_daily_output_mwh}"}));
    add_scope(totals);
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic input bundle with ground truth");
    synth_cmd->footer(keys_footer({"data_dir, study_period.{start,end}, seed", kClimateKeys,
                                   "ssp.{base_year,target_year}, synth.{n_cities,n_regions,noise_sigma,trend_slope,trend}"}));

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::ostringstream o;
        std::ostringstream eo;
        const int code = app.exit(e, o, eo);
        out << o.str();
        err << eo.str();
        return code == 0 ? kOk : kInputError;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = parse_config(read_text(config_path));
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (jobs_opt->count()) cfg.jobs = jobs;
        if (seed_opt->count()) cfg.seed = seed;
        cfg.validate();

        Context ctx{cfg, cities, {}, out, err};
        for (const auto& s : scenario_flags) ctx.scenarios.push_back(parse_scenario(s));

        if (validate->parsed()) return cmd_validate(ctx);
        if (train->parsed()) return cmd_train(ctx);
        if (evaluate->parsed()) return cmd_evaluate(ctx);
        if (analogs->parsed()) return cmd_analogs(ctx);
        if (project->parsed()) return cmd_project(ctx);
        if (totals->parsed()) return cmd_totals(ctx);
        if (synth_cmd->parsed()) return cmd_synth(ctx);
        return kInputError;
    } catch (const PrerequisiteError& e) {
        err << "error: " << e.what() << '\n';
        return kMissingPrerequisite;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kNumericFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kNumericFailure;
    }
}

}  // namespace nexus::cli
