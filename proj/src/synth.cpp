#include "nexus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <span>
#include <tuple>

#include <json.hpp>

#include "nexus/csv.hpp"
#include "nexus/error.hpp"
#include "nexus/rng.hpp"

namespace nexus::synth {

namespace {

using std::chrono::sys_days;

// Values pass through the canonical CSV float format so that in-memory data
// matches what a reader of the emitted files sees.
double round_trip(double x) { return std::strtod(csv::fmt(x).c_str(), nullptr); }
double hundredths(double x) { return round_trip(std::round(x * 100.0) / 100.0); }

struct Regime {
    double t_mean;
    double t_amp;
    double dew_offset;  // seasonal mean depression below dry bulb
    double wet_offset;
    double rh_mean;
    double wet_prob;
    double rain_mm;
    double wind;
};

// Two response templates, alternated across regions. Both outcomes follow a
// heat hinge on tdry_max; electricity adds a dry bulb x humidity interaction.
RegionTruth region_template(int r, const std::string& code) {
    RegionTruth t;
    t.region = code;
    if (r % 2 == 0) {
        t.electricity = {0.9, {{"tdry_max", 27.0, 9.0, 0.25, true}, {"rh_mean", 60.0, 10.0, 0.0, false}}, 0.025};
        t.water = {11.0, {{"tdry_max", 27.0, 9.0, 0.15, true}}, 0.0};
    } else {
        t.electricity = {0.7, {{"tdry_max", 19.0, 9.0, 0.18, true}, {"rh_mean", 60.0, 10.0, 0.0, false}}, 0.025};
        t.water = {9.0, {{"tdry_max", 19.0, 9.0, 0.15, true}}, 0.0};
    }
    std::set<std::string> all;
    for (const auto& f : t.water.features()) all.insert(f);
    for (const auto& f : t.electricity.features()) all.insert(f);
    t.true_features.assign(all.begin(), all.end());
    return t;
}

Regime regime_for(int region, Rng& rng) {
    if (region % 2 == 0) {
        return {19.0 + 1.5 * rng.normal(), 8.0, 7.0, 4.0, 64.0 + 4.0 * rng.normal(), 0.30, 9.0, 3.5};
    }
    return {11.0 + 1.5 * rng.normal(), 12.0, 9.0, 5.0, 62.0 + 4.0 * rng.normal(), 0.33, 7.0, 4.5};
}

// Each climate variable follows its own monthly anomaly and daily noise around
// a shared seasonal cycle; humidity variables are not derived from dry bulb, so
// no monthly statistic is a deterministic function of others. Only the
// orderings tdew <= twet <= tdry are imposed.
std::vector<ClimateDailyRecord> daily_climate(const std::string& id, const Regime& g, std::span<const int> summer,
                                              sys_days first, sys_days last, Rng& rng) {
    std::vector<ClimateDailyRecord> out;
    int cur_month = -1;
    double a_t = 0.0, spread = 0.0, a_d = 0.0, a_wb = 0.0, a_h = 0.0, a_w = 0.0, a_p = 0.0, intensity = 1.0;
    double spike = 0.0;
    int wave_start = 0;
    for (sys_days d = first; d <= last; d += std::chrono::days{1}) {
        const Date ymd{d};
        const int month = static_cast<int>(static_cast<unsigned>(ymd.month()));
        const int day = static_cast<int>(static_cast<unsigned>(ymd.day()));
        if (month != cur_month) {
            cur_month = month;
            // Outside the modelled months anomalies are damped so that
            // year-to-year swings in annual demand come from summer climate.
            const double k = std::find(summer.begin(), summer.end(), month) != summer.end() ? 1.0 : 0.3;
            a_t = k * (5.0 * rng.uniform() - 2.5);
            spread = 1.0 + k * 2.0 * rng.uniform();
            a_d = k * 2.0 * rng.normal();
            a_wb = k * 1.5 * rng.normal();
            a_h = k * 7.0 * rng.normal();
            a_w = 0.7 * rng.normal();
            a_p = 0.10 * rng.normal();
            intensity = std::exp(0.35 * rng.normal());
            spike = k * 18.0 * rng.uniform();
            wave_start = 1 + static_cast<int>(rng.below(25));
        }
        const double doy = static_cast<double>((d - sys_days{ymd.year() / std::chrono::January / 1}).count());
        const double season = std::sin(2.0 * std::numbers::pi * (doy - 105.0) / 365.25);
        const bool heatwave = day >= wave_start && day < wave_start + 3;
        const double base = g.t_mean + g.t_amp * season;

        ClimateDailyRecord r;
        r.city_id = id;
        r.date = ymd;
        r.tdry = hundredths(base + a_t + spread * rng.normal() + (heatwave ? spike : 0.0));
        r.tdew = hundredths(std::min(base - g.dew_offset + a_d + 1.5 * rng.normal(), r.tdry - 0.5));
        r.twet = hundredths(std::clamp(base - g.wet_offset + a_wb + 1.0 * rng.normal(), r.tdew, r.tdry));
        r.rh = hundredths(std::clamp(g.rh_mean + a_h + 8.0 * rng.normal(), 5.0, 100.0));
        r.wind = hundredths(std::max(0.1, g.wind + a_w + rng.normal()));
        const double p = std::clamp(g.wet_prob + a_p, 0.05, 0.8);
        const double u = rng.uniform();
        const double amount = rng.uniform();
        r.precip = u < p ? hundredths(-g.rain_mm * intensity * std::log(1.0 - amount)) : 0.0;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ClimateDailyRecord> shifted(const std::vector<ClimateDailyRecord>& base, const std::string& id,
                                        double dt, double precip_factor) {
    std::vector<ClimateDailyRecord> out = base;
    for (auto& r : out) {
        r.city_id = id;
        r.tdry = hundredths(r.tdry + dt);
        r.twet = hundredths(r.twet + dt);
        r.tdew = hundredths(std::min(r.tdew + dt, r.tdry));
        r.precip = hundredths(r.precip * precip_factor);
    }
    return out;
}

double trend_factor(const SynthConfig& c, int year) {
    if (!c.trend.empty()) return c.trend[static_cast<std::size_t>(year - c.start_year)];
    const double mid = 0.5 * (c.start_year + c.end_year);
    return 1.0 + c.trend_slope * (year - mid);
}

}  // namespace

void SynthConfig::validate() const {
    if (n_cities < 1) throw InputError("synth: n_cities must be >= 1");
    if (n_regions < 1 || n_regions > static_cast<int>(known_region_codes().size())) {
        throw InputError("synth: n_regions must be in 1..9");
    }
    if (end_year - start_year < 2) throw InputError("synth: need at least 3 years");
    if (noise_sigma < 0) throw InputError("synth: noise_sigma must be >= 0");
    if (summer_months.empty()) throw InputError("synth: at least one summer month required");
    for (int m : summer_months) {
        if (m < 1 || m > 12) throw InputError("synth: summer month out of range");
    }
    if (!trend.empty() && static_cast<int>(trend.size()) != end_year - start_year + 1) {
        throw InputError("synth: trend needs one multiplier per study year");
    }
    for (double t : trend) {
        if (!(t > 0)) throw InputError("synth: trend multipliers must be positive");
    }
}

double Response::operator()(const FeatureVector& x) const {
    double g = 1.0;
    std::array<double, 2> u{0.0, 0.0};
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        const double raw = x(feature_index(t.feature)) - t.center;
        const double v = (t.hinge ? std::max(0.0, raw) : raw) / t.scale;
        if (i < 2) u[i] = v;
        g += t.coef * v;
    }
    g += interaction * u[0] * u[1];
    return base * std::max(g, 0.1);
}

std::vector<std::string> Response::features() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].coef != 0.0 || (i < 2 && interaction != 0.0)) out.push_back(terms[i].feature);
    }
    return out;
}

const RegionTruth& GroundTruth::region(const std::string& code) const {
    for (const auto& r : regions) {
        if (r.region == code) return r;
    }
    throw InputError("ground truth has no region " + code);
}

Generated generate(const SynthConfig& config) {
    config.validate();
    Generated out;
    auto& b = out.bundle;
    // Warm and cool region codes alternate to match the two response templates.
    const std::array<std::string_view, 9> order{"SE", "ENC", "S", "NE", "SW", "NW", "C", "WNC", "W"};
    for (int r = 0; r < config.n_regions; ++r) {
        out.truth.regions.push_back(region_template(r, std::string(order[static_cast<std::size_t>(r)])));
    }

    const sys_days first{std::chrono::year{config.start_year - 1} / std::chrono::December / 1};
    const sys_days last{std::chrono::year{config.end_year} / std::chrono::December / 31};

    std::vector<FutureNormalsRecord> future;
    std::vector<SspRecord> ssp;
    for (int i = 0; i < config.n_cities; ++i) {
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
        const int region = i % config.n_regions;
        const auto& truth = out.truth.regions[static_cast<std::size_t>(region)];
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "city%02d", i + 1);
        const std::string id = idbuf;

        CityRecord city;
        city.city_id = id;
        city.name = "Synthetic City " + std::to_string(i + 1);
        city.state = "ZZ";
        city.lat = hundredths(region % 2 == 0 ? 29.0 + 5.0 * rng.uniform() : 40.0 + 6.0 * rng.uniform());
        city.lon = hundredths(-120.0 + 45.0 * rng.uniform());
        city.region = truth.region;
        b.cities.push_back(city);

        const Regime regime = regime_for(region, rng);
        auto climate = daily_climate(id, regime, config.summer_months, first, last, rng);
        const std::string warm_id = id + "_warm";
        const std::string mild_id = id + "_mild";
        auto warm = shifted(climate, warm_id, config.warm_shift_c, config.warm_precip_factor);
        auto mild = shifted(climate, mild_id, config.mild_shift_c, config.mild_precip_factor);

        const LocationClimate obs(id, climate, config.climate);
        const LocationClimate warm_loc(warm_id, warm, config.climate);
        const LocationClimate mild_loc(mild_id, mild, config.climate);

        // Summer signal spread per outcome sets the noise scale.
        const std::array<const Response*, 2> responses{&truth.water, &truth.electricity};
        std::array<double, 2> signal_sd{};
        for (std::size_t k = 0; k < 2; ++k) {
            std::vector<double> vals;
            for (int y = config.start_year; y <= config.end_year; ++y) {
                for (int m : config.summer_months) vals.push_back((*responses[k])(obs.month_features(y, m).values));
            }
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            signal_sd[k] = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
        }

        const double pop0 = std::round(300000.0 + 1700000.0 * rng.uniform());
        for (int y = config.start_year; y <= config.end_year; ++y) {
            const double growth = std::pow(1.01, y - config.start_year);
            const double water_pop = std::round(pop0 * 0.97 * growth);
            const double elec_pop = std::round(pop0 * 1.05 * growth);
            b.population.push_back({id, Sector::water, y, water_pop});
            b.population.push_back({id, Sector::electricity, y, elec_pop});
            for (int m = 1; m <= 12; ++m) {
                const auto feats = obs.month_features(y, m).values;
                for (std::size_t k = 0; k < 2; ++k) {
                    const double g = (*responses[k])(feats);
                    const double noise = config.noise_sigma * signal_sd[k] * rng.normal();
                    const Sector s = k == 0 ? Sector::water : Sector::electricity;
                    const double pop = k == 0 ? water_pop : elec_pop;
                    const double value = round_trip(std::max(0.0, pop * trend_factor(config, y) * (g + noise)));
                    b.demand.push_back({id, s, y, m, value, std::string(unit_for(s))});
                }
            }
        }

        CityTruth ct{id, truth.region, warm_id, mild_id, {}};
        for (auto [scenario, loc] : {std::pair{Scenario::rcp85, &warm_loc}, std::pair{Scenario::rcp45, &mild_loc}}) {
            std::array<double, 2> pct{};
            for (std::size_t k = 0; k < 2; ++k) {
                double base_sum = 0.0;
                double proj_sum = 0.0;
                for (int y = config.start_year; y <= config.end_year; ++y) {
                    for (int m : config.summer_months) {
                        base_sum += (*responses[k])(obs.month_features(y, m).values);
                        proj_sum += (*responses[k])(loc->month_features(y, m).values);
                    }
                }
                pct[k] = 100.0 * (proj_sum - base_sum) / base_sum;
            }
            ct.pct_change[scenario] = pct;
            future.push_back({id, scenario, loc->seasonal_normals(config.start_year, config.end_year).mean12});
            b.analogs.push_back({id, scenario, loc->location_id(), "ensemble"});
        }
        out.truth.cities.push_back(std::move(ct));

        const std::array<double, 5> ssp_ratio{1.08, 1.15, 1.02, 1.05, 1.30};
        const double county_now = std::round(pop0 * 1.6 * std::pow(1.01, config.ssp_base_year - config.start_year));
        for (int s = 1; s <= 5; ++s) {
            const double ratio = ssp_ratio[static_cast<std::size_t>(s - 1)] * (1.0 + 0.02 * rng.normal());
            ssp.push_back({id, s, config.ssp_base_year, county_now});
            ssp.push_back({id, s, config.ssp_target_year, std::round(county_now * ratio)});
        }

        b.climate.insert(b.climate.end(), climate.begin(), climate.end());
        b.climate.insert(b.climate.end(), warm.begin(), warm.end());
        b.climate.insert(b.climate.end(), mild.begin(), mild.end());
    }
    for (auto& f : future) {
        for (int j = 0; j < 12; ++j) f.mean12(j) = round_trip(f.mean12(j));
    }
    b.future_normals = std::move(future);
    b.ssp = std::move(ssp);
    return out;
}

std::string ground_truth_json(const GroundTruth& truth, const SynthConfig& config) {
    using nlohmann::json;
    const auto response_json = [](const Response& r) {
        json terms = json::array();
        for (const auto& t : r.terms) {
            terms.push_back({{"feature", t.feature},
                             {"center", t.center},
                             {"scale", t.scale},
                             {"coef", t.coef},
                             {"hinge", t.hinge}});
        }
        return json{{"base", r.base}, {"terms", terms}, {"interaction", r.interaction}};
    };
    json regions = json::array();
    for (const auto& r : truth.regions) {
        regions.push_back({{"region", r.region},
                           {"true_features", r.true_features},
                           {"water", response_json(r.water)},
                           {"electricity", response_json(r.electricity)}});
    }
    json cities = json::array();
    for (const auto& c : truth.cities) {
        json pct = json::object();
        for (const auto& [s, v] : c.pct_change) pct[std::string(to_string(s))] = {{"water", v[0]}, {"electricity", v[1]}};
        cities.push_back({{"city_id", c.city_id},
                          {"region", c.region},
                          {"analogs", {{"rcp85", c.warm_analog}, {"rcp45", c.mild_analog}}},
                          {"pct_change", pct}});
    }
    json cfg{{"n_cities", config.n_cities},   {"n_regions", config.n_regions},     {"start_year", config.start_year},
             {"end_year", config.end_year},   {"noise_sigma", config.noise_sigma}, {"trend_slope", config.trend_slope},
             {"trend", config.trend},         {"seed", config.seed},               {"summer_months", config.summer_months},
             {"warm_shift_c", config.warm_shift_c}, {"warm_precip_factor", config.warm_precip_factor},
             {"mild_shift_c", config.mild_shift_c}, {"mild_precip_factor", config.mild_precip_factor}};
    return json{{"config", cfg}, {"regions", regions}, {"cities", cities}}.dump(2) + "\n";
}

void write_generated(const Generated& g, const SynthConfig& config, const std::filesystem::path& dir) {
    save_bundle(g.bundle, dir);
    std::ofstream out(dir / "ground_truth.json", std::ios::binary);
    if (!out) throw InputError("cannot write ground_truth.json");
    out << ground_truth_json(g.truth, config);
}

// ---------------------------------------------------------------------------
// Oracles

namespace {

struct OracleNode {
    int feature = -1;
    double threshold = 0.0;
    double value = 0.0;
    std::unique_ptr<OracleNode> left;
    std::unique_ptr<OracleNode> right;

    double eval(const Eigen::MatrixXd& X, Eigen::Index i) const {
        const OracleNode* n = this;
        while (n->feature >= 0) n = X(i, n->feature) <= n->threshold ? n->left.get() : n->right.get();
        return n->value;
    }
};

double mean_of(const std::vector<Eigen::Index>& rows, const std::vector<double>& r) {
    double s = 0.0;
    for (auto i : rows) s += r[static_cast<std::size_t>(i)];
    return s / static_cast<double>(rows.size());
}

double sse_of(const std::vector<Eigen::Index>& rows, const std::vector<double>& r) {
    const double m = mean_of(rows, r);
    double s = 0.0;
    for (auto i : rows) s += (r[static_cast<std::size_t>(i)] - m) * (r[static_cast<std::size_t>(i)] - m);
    return s;
}

std::unique_ptr<OracleNode> oracle_tree(const Eigen::MatrixXd& X, const std::vector<double>& r,
                                        const std::vector<Eigen::Index>& rows, int depth_left, int min_node) {
    auto node = std::make_unique<OracleNode>();
    node->value = mean_of(rows, r);
    const auto n = static_cast<int>(rows.size());
    if (depth_left == 0 || n < 2 * min_node) return node;
    bool constant = true;
    for (auto i : rows) constant = constant && r[static_cast<std::size_t>(i)] == r[static_cast<std::size_t>(rows[0])];
    if (constant) return node;

    const double parent = sse_of(rows, r);
    std::vector<std::tuple<int, double, double>> found;
    double top = 1e-12 * parent;
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
        std::vector<double> vals;
        for (auto i : rows) vals.push_back(X(i, f));
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t v = 1; v < vals.size(); ++v) {
            double t = 0.5 * (vals[v - 1] + vals[v]);
            if (!(t < vals[v])) t = vals[v - 1];
            std::vector<Eigen::Index> l;
            std::vector<Eigen::Index> rr;
            for (auto i : rows) (X(i, f) <= t ? l : rr).push_back(i);
            if (static_cast<int>(l.size()) < min_node || static_cast<int>(rr.size()) < min_node) continue;
            const double gain = parent - sse_of(l, r) - sse_of(rr, r);
            if (gain > 1e-12 * parent) {
                found.emplace_back(static_cast<int>(f), t, gain);
                top = std::max(top, gain);
            }
        }
    }
    int best_f = -1;
    double best_t = 0.0;
    for (const auto& [f, t, g] : found) {
        if (g >= top - mvtb::kTieTolerance * parent) {
            best_f = f;
            best_t = t;
            break;
        }
    }
    if (best_f < 0) return node;
    std::vector<Eigen::Index> l;
    std::vector<Eigen::Index> rr;
    for (auto i : rows) (X(i, best_f) <= best_t ? l : rr).push_back(i);
    node->feature = best_f;
    node->threshold = best_t;
    node->left = oracle_tree(X, r, l, depth_left - 1, min_node);
    node->right = oracle_tree(X, r, rr, depth_left - 1, min_node);
    return node;
}

}  // namespace

OracleBoostResult oracle_univariate_boost(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const mvtb::Hyperparams& hyper) {
    const auto n = static_cast<std::size_t>(y.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += y(static_cast<Eigen::Index>(i));
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y(static_cast<Eigen::Index>(i)) - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    std::vector<double> z(n);
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) z[i] = (y(static_cast<Eigen::Index>(i)) - mean) / sd;

    Rng rng(hyper.seed);
    const auto bag_size = static_cast<std::size_t>(std::ceil(hyper.bag_fraction * static_cast<double>(n)));
    OracleBoostResult out;
    std::vector<double> resid(n);
    for (int m = 0; m < hyper.n_trees; ++m) {
        std::vector<Eigen::Index> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<Eigen::Index>(i);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.below(i))]);
        std::vector<Eigen::Index> bag(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(bag_size));
        std::sort(bag.begin(), bag.end());

        for (std::size_t i = 0; i < n; ++i) resid[i] = z[i] - score[i];
        const auto tree = oracle_tree(X, resid, bag, hyper.depth, hyper.min_node);
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            score[i] += hyper.shrinkage * tree->eval(X, static_cast<Eigen::Index>(i));
            sse += (z[i] - score[i]) * (z[i] - score[i]);
        }
        out.sse_trace.push_back(sse);
    }
    out.predictions.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) out.predictions(static_cast<Eigen::Index>(i)) = mean + sd * score[i];
    return out;
}

namespace {

double chi_pdf(double t, int k) {
    const double log_norm = (0.5 * k - 1.0) * std::log(2.0) + std::lgamma(0.5 * k);
    if (t == 0.0) return k == 1 ? std::exp(-log_norm) : 0.0;
    return std::exp((k - 1) * std::log(t) - 0.5 * t * t - log_norm);
}

double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double oracle_chi(double x, int k) {
    if (x <= 0.0) return 0.0;
    const auto f = [k](double t) { return chi_pdf(t, k); };
    // Short panels keep each adaptive call on a smooth stretch.
    double total = 0.0;
    const int panels = static_cast<int>(std::ceil(x / 0.5));
    for (int p = 0; p < panels; ++p) {
        const double a = x * p / panels;
        const double b = x * (p + 1) / panels;
        const double fa = f(a);
        const double fb = f(b);
        const double fm = f(0.5 * (a + b));
        const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson(f, a, b, fa, fm, fb, whole, 1e-15, 40);
    }
    return total;
}

}  // namespace nexus::synth
