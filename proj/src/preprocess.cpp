#include "nexus/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "nexus/csv.hpp"
#include "nexus/error.hpp"

namespace nexus {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "tdry_min", "tdry_max", "tdry_mean", "twet_min", "twet_max", "twet_mean", "tdew_min", "tdew_max", "tdew_mean",
    "rh_min",   "rh_max",   "rh_mean",   "wind_min", "wind_max", "wind_mean", "precip_total", "wet_days"};

constexpr std::array<std::string_view, kOutcomeCount> kOutcomeNames{"water", "electricity"};

using std::chrono::sys_days;

int days_in_month(int year, int month) {
    const auto last = std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} / std::chrono::last;
    return static_cast<int>(static_cast<unsigned>(std::chrono::year_month_day{last}.day()));
}

}  // namespace

std::span<const std::string_view> feature_names() { return kFeatureNames; }
std::span<const std::string_view> outcome_names() { return kOutcomeNames; }

int feature_index(std::string_view name) {
    const auto it = std::find(kFeatureNames.begin(), kFeatureNames.end(), name);
    return it == kFeatureNames.end() ? -1 : static_cast<int>(it - kFeatureNames.begin());
}

DemandSeries make_series(std::span<const DemandRecord> records, const std::string& city_id, Sector sector) {
    DemandSeries s{city_id, sector, {}, SeriesStage::raw};
    for (const auto& r : records) {
        if (r.city_id == city_id && r.sector == sector) s.values[{r.year, r.month}] = r.value;
    }
    return s;
}

DemandSeries to_per_capita(const DemandSeries& raw, std::span<const PopulationRecord> population) {
    if (raw.stage != SeriesStage::raw) throw DataError("to_per_capita expects a raw series");
    std::map<int, double> pop;
    for (const auto& p : population) {
        if (p.city_id == raw.city_id && p.sector == raw.sector) pop[p.year] = p.service_population;
    }
    DemandSeries out{raw.city_id, raw.sector, {}, SeriesStage::per_capita};
    for (const auto& [ym, v] : raw.values) {
        const auto it = pop.find(ym.year);
        if (it == pop.end()) {
            throw DataError("missing " + std::string(to_string(raw.sector)) + " service population for " +
                            raw.city_id + " in " + std::to_string(ym.year));
        }
        out.values[ym] = v / it->second;
    }
    return out;
}

DemandSeries detrend(const DemandSeries& per_capita) {
    if (per_capita.stage != SeriesStage::per_capita) throw DataError("detrend expects a per-capita series");
    std::map<int, std::pair<double, int>> by_year;
    double total = 0.0;
    for (const auto& [ym, v] : per_capita.values) {
        auto& [sum, n] = by_year[ym.year];
        sum += v;
        ++n;
        total += v;
    }
    if (by_year.size() < 2) {
        throw DataError("detrend needs at least two years of data for " + per_capita.city_id);
    }
    for (const auto& [y, acc] : by_year) {
        if (acc.second < 6) {
            throw DataError("detrend needs at least six months in year " + std::to_string(y) + " for " +
                            per_capita.city_id);
        }
        if (acc.first == 0.0) {
            throw DataError("zero mean consumption in year " + std::to_string(y) + " for " + per_capita.city_id);
        }
    }
    const double grand_mean = total / static_cast<double>(per_capita.values.size());
    DemandSeries out{per_capita.city_id, per_capita.sector, {}, SeriesStage::detrended};
    for (const auto& [ym, v] : per_capita.values) {
        const auto& [sum, n] = by_year[ym.year];
        const double year_mean = sum / n;
        out.values[ym] = v * (grand_mean / year_mean);
    }
    return out;
}

std::vector<ClimateDailyRecord> fill_gaps(std::span<const ClimateDailyRecord> daily, int max_gap_days) {
    std::vector<ClimateDailyRecord> sorted(daily.begin(), daily.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return sys_days{a.date} < sys_days{b.date}; });
    std::vector<ClimateDailyRecord> out;
    out.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0) {
            const auto& a = sorted[i - 1];
            const auto& b = sorted[i];
            const auto span = (sys_days{b.date} - sys_days{a.date}).count();
            const auto missing = span - 1;
            if (missing >= 1 && missing <= max_gap_days) {
                for (int k = 1; k <= missing; ++k) {
                    const double w = static_cast<double>(k) / static_cast<double>(span);
                    auto lerp = [w](double x, double y) { return x + w * (y - x); };
                    ClimateDailyRecord r;
                    r.city_id = a.city_id;
                    r.date = Date{sys_days{a.date} + std::chrono::days{k}};
                    r.tdry = lerp(a.tdry, b.tdry);
                    r.twet = lerp(a.twet, b.twet);
                    r.tdew = std::min(lerp(a.tdew, b.tdew), r.tdry);
                    r.rh = lerp(a.rh, b.rh);
                    r.wind = lerp(a.wind, b.wind);
                    r.precip = lerp(a.precip, b.precip);
                    out.push_back(std::move(r));
                }
            }
        }
        out.push_back(sorted[i]);
    }
    return out;
}

LocationClimate::LocationClimate(std::string location_id, std::span<const ClimateDailyRecord> daily,
                                 const ClimateOptions& options)
    : id_(std::move(location_id)), options_(options), days_(fill_gaps(daily, options.max_gap_days)) {}

std::span<const ClimateDailyRecord> LocationClimate::month_span(int year, int month) const {
    const auto ym = std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)};
    const sys_days lo{ym / 1};
    const sys_days hi{ym / std::chrono::last};
    const auto first = std::lower_bound(days_.begin(), days_.end(), lo,
                                        [](const auto& r, sys_days d) { return sys_days{r.date} < d; });
    const auto last = std::upper_bound(first, days_.end(), hi,
                                       [](sys_days d, const auto& r) { return d < sys_days{r.date}; });
    return {first, last};
}

bool LocationClimate::has_month(int year, int month) const {
    const auto n = month_span(year, month).size();
    return static_cast<double>(n) >= options_.min_month_fraction * days_in_month(year, month);
}

MonthlyFeatureRow LocationClimate::month_features(int year, int month) const {
    const auto days = month_span(year, month);
    const int expected = days_in_month(year, month);
    if (static_cast<double>(days.size()) < options_.min_month_fraction * expected) {
        throw DataError("insufficient climate days for " + id_ + " " + std::to_string(year) + "-" +
                        std::to_string(month) + ": " + std::to_string(days.size()) + " of " +
                        std::to_string(expected));
    }
    MonthlyFeatureRow row{id_, year, month, FeatureVector::Zero()};
    auto& v = row.values;
    const std::array<double ClimateDailyRecord::*, 5> vars{&ClimateDailyRecord::tdry, &ClimateDailyRecord::twet,
                                                           &ClimateDailyRecord::tdew, &ClimateDailyRecord::rh,
                                                           &ClimateDailyRecord::wind};
    for (std::size_t k = 0; k < vars.size(); ++k) {
        double lo = days.front().*vars[k];
        double hi = lo;
        double sum = 0.0;
        for (const auto& d : days) {
            const double x = d.*vars[k];
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            sum += x;
        }
        const double mean = std::clamp(sum / static_cast<double>(days.size()), lo, hi);
        v(3 * k) = lo;
        v(3 * k + 1) = hi;
        v(3 * k + 2) = mean;
    }
    double precip = 0.0;
    int wet = 0;
    for (const auto& d : days) {
        precip += d.precip;
        if (d.precip >= options_.wet_day_threshold_mm) ++wet;
    }
    v(15) = precip;
    v(16) = wet;
    return row;
}

AcrossYearStats across_year_stats(std::span<const Season12d> annual) {
    if (annual.size() < 2) throw DataError("need at least two years for across-year statistics");
    Season12d mean = Season12d::Zero();
    for (const auto& a : annual) mean += a;
    mean /= static_cast<double>(annual.size());
    Season12d ss = Season12d::Zero();
    for (const auto& a : annual) ss += (a - mean).array().square().matrix();
    return {mean, (ss / static_cast<double>(annual.size() - 1)).cwiseSqrt()};
}

SeasonalNormals LocationClimate::seasonal_normals(int first_year, int last_year, double icv_floor) const {
    // Season s of year y: DJF = Dec(y-1), Jan(y), Feb(y); then MAM, JJA, SON.
    constexpr std::array<std::array<std::pair<int, int>, 3>, 4> kSeasons{{
        {{{-1, 12}, {0, 1}, {0, 2}}},
        {{{0, 3}, {0, 4}, {0, 5}}},
        {{{0, 6}, {0, 7}, {0, 8}}},
        {{{0, 9}, {0, 10}, {0, 11}}},
    }};
    std::vector<Season12d> annual;
    for (int y = first_year; y <= last_year; ++y) {
        Season12d v;
        bool complete = true;
        for (int s = 0; s < 4 && complete; ++s) {
            double tmin = 0.0;
            double tmax = 0.0;
            double prcp = 0.0;
            for (const auto& [dy, m] : kSeasons[s]) {
                if (!has_month(y + dy, m)) {
                    complete = false;
                    break;
                }
                const auto row = month_features(y + dy, m);
                tmin += row.values(0);
                tmax += row.values(1);
                prcp += row.values(15);
            }
            v(3 * s) = tmin / 3.0;
            v(3 * s + 1) = tmax / 3.0;
            v(3 * s + 2) = prcp;
        }
        if (complete) annual.push_back(v);
    }
    if (annual.size() < 3) {
        throw DataError("seasonal normals for " + id_ + " need at least 3 complete years, found " +
                        std::to_string(annual.size()));
    }
    const auto stats = across_year_stats(annual);
    SeasonalNormals n;
    n.location_id = id_;
    n.epoch = std::to_string(first_year) + "-" + std::to_string(last_year);
    n.mean12 = stats.mean;
    n.icv12 = stats.sd.cwiseMax(icv_floor);
    n.n_years = static_cast<int>(annual.size());
    return n;
}

std::map<std::string, LocationClimate> index_climate(std::span<const ClimateDailyRecord> daily,
                                                     const ClimateOptions& options) {
    std::map<std::string, std::vector<ClimateDailyRecord>> grouped;
    for (const auto& r : daily) grouped[r.city_id].push_back(r);
    std::map<std::string, LocationClimate> out;
    for (auto& [id, recs] : grouped) out.emplace(id, LocationClimate(id, recs, options));
    return out;
}

MonthlyFeatureRow monthly_features(std::span<const ClimateDailyRecord> daily, const std::string& city_id, int year,
                                   int month, const ClimateOptions& options) {
    std::vector<ClimateDailyRecord> mine;
    for (const auto& r : daily) {
        if (r.city_id == city_id) mine.push_back(r);
    }
    return LocationClimate(city_id, mine, options).month_features(year, month);
}

SeasonalNormals seasonal_normals(std::span<const ClimateDailyRecord> daily, const std::string& location_id,
                                 int first_year, int last_year, const ClimateOptions& options, double icv_floor) {
    std::vector<ClimateDailyRecord> mine;
    for (const auto& r : daily) {
        if (r.city_id == location_id) mine.push_back(r);
    }
    return LocationClimate(location_id, mine, options).seasonal_normals(first_year, last_year, icv_floor);
}

TrainingTable build_training_table(std::span<const MonthlyFeatureRow> features, const DemandSeries& water,
                                   const DemandSeries& electricity, std::span<const int> summer_months,
                                   std::size_t min_rows) {
    if (water.stage != SeriesStage::detrended || electricity.stage != SeriesStage::detrended) {
        throw DataError("training table needs detrended water and electricity series");
    }
    const auto is_summer = [&](int m) {
        return std::find(summer_months.begin(), summer_months.end(), m) != summer_months.end();
    };
    std::vector<const MonthlyFeatureRow*> rows;
    std::set<std::tuple<std::string, int, int>> seen;
    for (const auto& f : features) {
        if (f.city_id != water.city_id || !is_summer(f.month)) continue;
        if (!water.values.count({f.year, f.month}) || !electricity.values.count({f.year, f.month})) continue;
        if (!seen.emplace(f.city_id, f.year, f.month).second) continue;
        rows.push_back(&f);
    }
    std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
        return std::tie(a->year, a->month) < std::tie(b->year, b->month);
    });
    if (rows.size() < min_rows) {
        throw DataError("training table for " + water.city_id + " has " + std::to_string(rows.size()) +
                        " rows, need " + std::to_string(min_rows));
    }
    TrainingTable t;
    t.feature_names.assign(kFeatureNames.begin(), kFeatureNames.end());
    t.X.resize(static_cast<Eigen::Index>(rows.size()), kFeatureCount);
    t.Y.resize(static_cast<Eigen::Index>(rows.size()), kOutcomeCount);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        t.keys.push_back({rows[i]->city_id, rows[i]->year, rows[i]->month});
        t.X.row(r) = rows[i]->values.transpose();
        t.Y(r, 0) = water.values.at({rows[i]->year, rows[i]->month});
        t.Y(r, 1) = electricity.values.at({rows[i]->year, rows[i]->month});
    }
    return t;
}

TrainingTable select_features(const TrainingTable& table, std::span<const std::string> names) {
    TrainingTable t;
    t.keys = table.keys;
    t.Y = table.Y;
    t.X.resize(table.X.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto it = std::find(table.feature_names.begin(), table.feature_names.end(), names[j]);
        if (it == table.feature_names.end()) throw InputError("unknown feature column '" + names[j] + "'");
        t.X.col(static_cast<Eigen::Index>(j)) = table.X.col(it - table.feature_names.begin());
        t.feature_names.push_back(names[j]);
    }
    return t;
}

TrainingTable concat_tables(std::span<const TrainingTable> tables) {
    if (tables.empty()) throw DataError("no tables to concatenate");
    TrainingTable t;
    t.feature_names = tables.front().feature_names;
    Eigen::Index n = 0;
    for (const auto& x : tables) {
        if (x.feature_names != t.feature_names) throw DataError("feature mismatch while pooling tables");
        n += x.rows();
    }
    t.X.resize(n, static_cast<Eigen::Index>(t.feature_names.size()));
    t.Y.resize(n, kOutcomeCount);
    Eigen::Index at = 0;
    for (const auto& x : tables) {
        t.X.middleRows(at, x.rows()) = x.X;
        t.Y.middleRows(at, x.rows()) = x.Y;
        t.keys.insert(t.keys.end(), x.keys.begin(), x.keys.end());
        at += x.rows();
    }
    return t;
}

void write_training_table_csv(std::ostream& out, const TrainingTable& table) {
    std::vector<std::string> header{"city_id", "year", "month"};
    header.insert(header.end(), table.feature_names.begin(), table.feature_names.end());
    header.insert(header.end(), kOutcomeNames.begin(), kOutcomeNames.end());
    csv::write_row(out, header);
    for (Eigen::Index i = 0; i < table.rows(); ++i) {
        const auto& k = table.keys[static_cast<std::size_t>(i)];
        std::vector<std::string> f{k.city_id, std::to_string(k.year), std::to_string(k.month)};
        for (Eigen::Index j = 0; j < table.X.cols(); ++j) f.push_back(csv::fmt(table.X(i, j)));
        for (Eigen::Index j = 0; j < table.Y.cols(); ++j) f.push_back(csv::fmt(table.Y(i, j)));
        csv::write_row(out, f);
    }
}

void write_normals_csv(std::ostream& out, std::span<const SeasonalNormals> normals) {
    static constexpr std::array<std::string_view, 12> kCols{
        "djf_tmin_c", "djf_tmax_c", "djf_prcp_mm", "mam_tmin_c", "mam_tmax_c", "mam_prcp_mm",
        "jja_tmin_c", "jja_tmax_c", "jja_prcp_mm", "son_tmin_c", "son_tmax_c", "son_prcp_mm"};
    std::vector<std::string> header{"location_id", "epoch", "n_years"};
    for (auto c : kCols) header.emplace_back(c);
    for (auto c : kCols) header.push_back("icv_" + std::string(c));
    csv::write_row(out, header);
    for (const auto& n : normals) {
        std::vector<std::string> f{n.location_id, n.epoch, std::to_string(n.n_years)};
        for (int i = 0; i < 12; ++i) f.push_back(csv::fmt(n.mean12(i)));
        for (int i = 0; i < 12; ++i) f.push_back(csv::fmt(n.icv12(i)));
        csv::write_row(out, f);
    }
}

}  // namespace nexus
