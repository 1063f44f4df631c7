#include "nexus/ingest.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include <json.hpp>

#include "nexus/csv.hpp"
#include "nexus/error.hpp"

namespace nexus {

namespace {

constexpr std::array<std::string_view, 6> kDemandHeader{"city_id", "sector", "year", "month", "value", "unit"};
constexpr std::array<std::string_view, 8> kClimateHeader{"city_id", "date",   "tdry_c",  "twet_c",
                                                         "tdew_c",  "rh_pct", "wind_ms", "precip_mm"};
constexpr std::array<std::string_view, 6> kRegistryHeader{"city_id", "name", "state", "lat", "lon", "region"};
constexpr std::array<std::string_view, 4> kPopulationHeader{"city_id", "sector", "year", "service_population"};
constexpr std::array<std::string_view, 4> kAnalogHeader{"target_city_id", "scenario", "analog_id", "source"};
constexpr std::array<std::string_view, 4> kSspHeader{"city_id", "ssp", "year", "population"};
constexpr std::array<std::string_view, 14> kFutureNormalsHeader{
    "city_id",    "scenario",   "djf_tmin_c", "djf_tmax_c", "djf_prcp_mm", "mam_tmin_c", "mam_tmax_c",
    "mam_prcp_mm", "jja_tmin_c", "jja_tmax_c", "jja_prcp_mm", "son_tmin_c", "son_tmax_c", "son_prcp_mm"};

constexpr std::array<std::string_view, 9> kRegions{"NE", "ENC", "C", "SE", "WNC", "S", "SW", "NW", "W"};

std::string require_key(const std::string& s, std::size_t line, std::string_view column) {
    if (s.empty()) csv::fail(line, "empty " + std::string(column));
    return s;
}

int to_month(const std::string& s, std::size_t line) {
    const auto m = csv::to_int(s, line, "month");
    if (m < 1 || m > 12) csv::fail(line, "month out of range: " + s);
    return static_cast<int>(m);
}

Sector sector_at(const std::string& s, std::size_t line) {
    try {
        return parse_sector(s);
    } catch (const InputError& e) {
        csv::fail(line, e.what());
    }
}

Scenario scenario_at(const std::string& s, std::size_t line) {
    try {
        return parse_scenario(s);
    } catch (const InputError& e) {
        csv::fail(line, e.what());
    }
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    writer(out);
    if (!out) throw InputError("write failed: " + path.string());
}

template <typename Parser>
auto read_file(const std::filesystem::path& path, Parser&& parser) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return parser(in);
    } catch (const InputError& e) {
        throw InputError(path.filename().string() + ": " + e.what());
    }
}

}  // namespace

std::string_view to_string(Sector s) { return s == Sector::water ? "water" : "electricity"; }
std::string_view to_string(Scenario s) { return s == Scenario::rcp45 ? "rcp45" : "rcp85"; }
std::string_view unit_for(Sector s) { return s == Sector::water ? "m3" : "MWh"; }

Sector parse_sector(std::string_view s) {
    if (s == "water") return Sector::water;
    if (s == "electricity") return Sector::electricity;
    throw InputError("unknown sector '" + std::string(s) + "'");
}

Scenario parse_scenario(std::string_view s) {
    if (s == "rcp45") return Scenario::rcp45;
    if (s == "rcp85") return Scenario::rcp85;
    throw InputError("unknown scenario '" + std::string(s) + "'");
}

Date parse_iso_date(std::string_view s) {
    auto digits = [&](std::size_t pos, std::size_t n) {
        int v = 0;
        for (std::size_t i = pos; i < pos + n; ++i) {
            if (s[i] < '0' || s[i] > '9') throw InputError("date format: expected YYYY-MM-DD, got '" + std::string(s) + "'");
            v = v * 10 + (s[i] - '0');
        }
        return v;
    };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
        throw InputError("date format: expected YYYY-MM-DD, got '" + std::string(s) + "'");
    }
    const Date d{std::chrono::year{digits(0, 4)}, std::chrono::month{static_cast<unsigned>(digits(5, 2))},
                 std::chrono::day{static_cast<unsigned>(digits(8, 2))}};
    if (!d.ok()) throw InputError("invalid calendar date '" + std::string(s) + "'");
    return d;
}

std::string format_iso_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                  static_cast<unsigned>(d.day()));
    return buf;
}

std::span<const std::string_view> known_region_codes() { return kRegions; }

std::vector<DemandRecord> parse_demand_csv(std::istream& in) {
    std::vector<DemandRecord> out;
    std::set<std::tuple<std::string, Sector, int, int>> seen;
    for (const auto& row : csv::read_table(in, kDemandHeader)) {
        const auto& f = row.fields;
        DemandRecord r;
        r.city_id = require_key(f[0], row.line, "city_id");
        r.sector = sector_at(f[1], row.line);
        r.year = static_cast<int>(csv::to_int(f[2], row.line, "year"));
        r.month = to_month(f[3], row.line);
        r.value = csv::to_double(f[4], row.line, "value");
        r.unit = f[5];
        if (r.value < 0) csv::fail(row.line, "negative demand value");
        if (r.unit != unit_for(r.sector)) {
            csv::fail(row.line, "unit mismatch for sector " + std::string(to_string(r.sector)) + ": expected " +
                                    std::string(unit_for(r.sector)) + ", got " + r.unit);
        }
        if (!seen.emplace(r.city_id, r.sector, r.year, r.month).second) {
            csv::fail(row.line, "duplicate (" + r.city_id + ", " + std::string(to_string(r.sector)) + ", " +
                                    std::to_string(r.year) + ", " + std::to_string(r.month) + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ClimateDailyRecord> parse_climate_csv(std::istream& in) {
    std::vector<ClimateDailyRecord> out;
    std::set<std::pair<std::string, std::chrono::sys_days>> seen;
    for (const auto& row : csv::read_table(in, kClimateHeader)) {
        const auto& f = row.fields;
        ClimateDailyRecord r;
        r.city_id = require_key(f[0], row.line, "city_id");
        try {
            r.date = parse_iso_date(f[1]);
        } catch (const InputError& e) {
            csv::fail(row.line, e.what());
        }
        r.tdry = csv::to_double(f[2], row.line, "tdry_c");
        r.twet = csv::to_double(f[3], row.line, "twet_c");
        r.tdew = csv::to_double(f[4], row.line, "tdew_c");
        r.rh = csv::to_double(f[5], row.line, "rh_pct");
        r.wind = csv::to_double(f[6], row.line, "wind_ms");
        r.precip = csv::to_double(f[7], row.line, "precip_mm");
        if (r.rh < 0.0 || r.rh > 100.0) csv::fail(row.line, "rh out of range [0,100]: " + f[5]);
        if (r.precip < 0.0) csv::fail(row.line, "negative precip: " + f[7]);
        if (r.tdew > r.tdry) csv::fail(row.line, "dew point above dry-bulb temperature");
        if (r.wind < 0.0) csv::fail(row.line, "negative wind speed");
        if (!seen.emplace(r.city_id, std::chrono::sys_days{r.date}).second) {
            csv::fail(row.line, "duplicate (" + r.city_id + ", " + f[1] + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<CityRecord> parse_registry_csv(std::istream& in, std::vector<std::string>* warnings) {
    std::vector<CityRecord> out;
    std::set<std::string> seen;
    for (const auto& row : csv::read_table(in, kRegistryHeader)) {
        const auto& f = row.fields;
        CityRecord r{require_key(f[0], row.line, "city_id"), f[1], f[2], csv::to_double(f[3], row.line, "lat"),
                     csv::to_double(f[4], row.line, "lon"), f[5]};
        if (r.lat < -90 || r.lat > 90) csv::fail(row.line, "lat out of range");
        if (r.lon < -180 || r.lon > 180) csv::fail(row.line, "lon out of range");
        if (r.region.empty()) csv::fail(row.line, "empty region");
        if (!seen.insert(r.city_id).second) csv::fail(row.line, "duplicate city_id " + r.city_id);
        if (warnings && std::find(kRegions.begin(), kRegions.end(), r.region) == kRegions.end()) {
            warnings->push_back("line " + std::to_string(row.line) + ": unknown region code '" + r.region + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<PopulationRecord> parse_population_csv(std::istream& in) {
    std::vector<PopulationRecord> out;
    std::set<std::tuple<std::string, Sector, int>> seen;
    for (const auto& row : csv::read_table(in, kPopulationHeader)) {
        const auto& f = row.fields;
        PopulationRecord r{require_key(f[0], row.line, "city_id"), sector_at(f[1], row.line),
                           static_cast<int>(csv::to_int(f[2], row.line, "year")),
                           csv::to_double(f[3], row.line, "service_population")};
        if (r.service_population <= 0) csv::fail(row.line, "service_population must be positive");
        if (!seen.emplace(r.city_id, r.sector, r.year).second) {
            csv::fail(row.line, "duplicate (" + r.city_id + ", " + f[1] + ", " + f[2] + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<AnalogMapRecord> parse_analog_csv(std::istream& in) {
    std::vector<AnalogMapRecord> out;
    std::set<std::tuple<std::string, Scenario, std::string>> seen;
    for (const auto& row : csv::read_table(in, kAnalogHeader)) {
        const auto& f = row.fields;
        AnalogMapRecord r{require_key(f[0], row.line, "target_city_id"), scenario_at(f[1], row.line),
                          require_key(f[2], row.line, "analog_id"), f[3]};
        const bool gcm = r.source.size() > 4 && r.source.compare(0, 4, "gcm:") == 0;
        if (r.source != "ensemble" && !gcm) {
            csv::fail(row.line, "source must be 'ensemble' or 'gcm:<name>', got '" + r.source + "'");
        }
        if (!seen.emplace(r.target_city_id, r.scenario, r.source).second) {
            csv::fail(row.line, "duplicate (" + r.target_city_id + ", " + f[1] + ", " + r.source + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SspRecord> parse_ssp_csv(std::istream& in) {
    std::vector<SspRecord> out;
    std::set<std::tuple<std::string, int, int>> seen;
    for (const auto& row : csv::read_table(in, kSspHeader)) {
        const auto& f = row.fields;
        SspRecord r;
        r.city_id = require_key(f[0], row.line, "city_id");
        if (f[1].size() != 4 || f[1].compare(0, 3, "SSP") != 0 || f[1][3] < '1' || f[1][3] > '5') {
            csv::fail(row.line, "ssp out of range (SSP1..SSP5): " + f[1]);
        }
        r.ssp = f[1][3] - '0';
        r.year = static_cast<int>(csv::to_int(f[2], row.line, "year"));
        r.population = csv::to_double(f[3], row.line, "population");
        if (r.population <= 0) csv::fail(row.line, "population must be positive");
        if (!seen.emplace(r.city_id, r.ssp, r.year).second) {
            csv::fail(row.line, "duplicate (" + r.city_id + ", " + f[1] + ", " + f[2] + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<FutureNormalsRecord> parse_future_normals_csv(std::istream& in) {
    std::vector<FutureNormalsRecord> out;
    std::set<std::pair<std::string, Scenario>> seen;
    for (const auto& row : csv::read_table(in, kFutureNormalsHeader)) {
        const auto& f = row.fields;
        FutureNormalsRecord r;
        r.city_id = require_key(f[0], row.line, "city_id");
        r.scenario = scenario_at(f[1], row.line);
        for (int i = 0; i < 12; ++i) r.mean12(i) = csv::to_double(f[2 + i], row.line, kFutureNormalsHeader[2 + i]);
        if (!seen.emplace(r.city_id, r.scenario).second) {
            csv::fail(row.line, "duplicate (" + r.city_id + ", " + f[1] + ")");
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_demand_csv(std::ostream& out, std::span<const DemandRecord> rows) {
    csv::write_header(out, kDemandHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 6> f{r.city_id, std::string(to_string(r.sector)), std::to_string(r.year),
                                           std::to_string(r.month), csv::fmt(r.value), r.unit};
        csv::write_row(out, f);
    }
}

void write_climate_csv(std::ostream& out, std::span<const ClimateDailyRecord> rows) {
    csv::write_header(out, kClimateHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 8> f{r.city_id,       format_iso_date(r.date), csv::fmt(r.tdry),
                                           csv::fmt(r.twet), csv::fmt(r.tdew),        csv::fmt(r.rh),
                                           csv::fmt(r.wind), csv::fmt(r.precip)};
        csv::write_row(out, f);
    }
}

void write_registry_csv(std::ostream& out, std::span<const CityRecord> rows) {
    csv::write_header(out, kRegistryHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 6> f{r.city_id, r.name, r.state, csv::fmt(r.lat), csv::fmt(r.lon), r.region};
        csv::write_row(out, f);
    }
}

void write_population_csv(std::ostream& out, std::span<const PopulationRecord> rows) {
    csv::write_header(out, kPopulationHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 4> f{r.city_id, std::string(to_string(r.sector)), std::to_string(r.year),
                                           csv::fmt(r.service_population)};
        csv::write_row(out, f);
    }
}

void write_analog_csv(std::ostream& out, std::span<const AnalogMapRecord> rows) {
    csv::write_header(out, kAnalogHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 4> f{r.target_city_id, std::string(to_string(r.scenario)), r.analog_id,
                                           r.source};
        csv::write_row(out, f);
    }
}

void write_ssp_csv(std::ostream& out, std::span<const SspRecord> rows) {
    csv::write_header(out, kSspHeader);
    for (const auto& r : rows) {
        const std::array<std::string, 4> f{r.city_id, "SSP" + std::to_string(r.ssp), std::to_string(r.year),
                                           csv::fmt(r.population)};
        csv::write_row(out, f);
    }
}

void write_future_normals_csv(std::ostream& out, std::span<const FutureNormalsRecord> rows) {
    csv::write_header(out, kFutureNormalsHeader);
    for (const auto& r : rows) {
        std::vector<std::string> f{r.city_id, std::string(to_string(r.scenario))};
        for (int i = 0; i < 12; ++i) f.push_back(csv::fmt(r.mean12(i)));
        csv::write_row(out, f);
    }
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
    DatasetBundle b;
    b.cities = read_file(dir / files::cities, [&](std::istream& in) { return parse_registry_csv(in, &b.warnings); });
    b.demand = read_file(dir / files::demand, [](std::istream& in) { return parse_demand_csv(in); });
    b.population = read_file(dir / files::population, [](std::istream& in) { return parse_population_csv(in); });
    b.climate = read_file(dir / files::climate, [](std::istream& in) { return parse_climate_csv(in); });
    if (std::filesystem::exists(dir / files::analogs)) {
        b.analogs = read_file(dir / files::analogs, [](std::istream& in) { return parse_analog_csv(in); });
    }
    if (std::filesystem::exists(dir / files::future_normals)) {
        b.future_normals =
            read_file(dir / files::future_normals, [](std::istream& in) { return parse_future_normals_csv(in); });
    }
    if (std::filesystem::exists(dir / files::ssp)) {
        b.ssp = read_file(dir / files::ssp, [](std::istream& in) { return parse_ssp_csv(in); });
    }
    return b;
}

void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / files::cities, [&](std::ostream& o) { write_registry_csv(o, b.cities); });
    write_file(dir / files::demand, [&](std::ostream& o) { write_demand_csv(o, b.demand); });
    write_file(dir / files::population, [&](std::ostream& o) { write_population_csv(o, b.population); });
    write_file(dir / files::climate, [&](std::ostream& o) { write_climate_csv(o, b.climate); });
    if (!b.analogs.empty()) write_file(dir / files::analogs, [&](std::ostream& o) { write_analog_csv(o, b.analogs); });
    if (b.future_normals) {
        write_file(dir / files::future_normals, [&](std::ostream& o) { write_future_normals_csv(o, *b.future_normals); });
    }
    if (b.ssp) write_file(dir / files::ssp, [&](std::ostream& o) { write_ssp_csv(o, *b.ssp); });
}

bool ValidationReport::all_usable() const {
    return std::none_of(cities.begin(), cities.end(), [](const auto& c) { return c.excluded; });
}

std::vector<std::string> ValidationReport::included_cities() const {
    std::vector<std::string> out;
    for (const auto& c : cities) {
        if (!c.excluded) out.push_back(c.city_id);
    }
    return out;
}

ValidationReport validate_bundle(const DatasetBundle& bundle, const StudyPeriod& period,
                                 std::span<const int> summer_months, const CoverageThresholds& thresholds) {
    using std::chrono::sys_days;

    std::set<std::string> city_ids;
    std::set<std::string> registered;
    for (const auto& c : bundle.cities) {
        city_ids.insert(c.city_id);
        registered.insert(c.city_id);
    }
    std::map<std::tuple<std::string, Sector, int, int>, double> demand;
    for (const auto& d : bundle.demand) {
        city_ids.insert(d.city_id);
        demand.emplace(std::tuple{d.city_id, d.sector, d.year, d.month}, d.value);
    }
    std::set<std::tuple<std::string, Sector, int>> pop;
    for (const auto& p : bundle.population) pop.emplace(p.city_id, p.sector, p.year);
    std::map<std::string, std::set<sys_days>> climate_days;
    for (const auto& c : bundle.climate) climate_days[c.city_id].insert(sys_days{c.date});

    const auto is_summer = [&](int m) {
        return std::find(summer_months.begin(), summer_months.end(), m) != summer_months.end();
    };
    const sys_days first{std::chrono::year{period.start_year} / std::chrono::January / 1};
    const sys_days last{std::chrono::year{period.end_year} / std::chrono::December / 31};

    ValidationReport report;
    for (const auto& id : city_ids) {
        CityValidation cv;
        cv.city_id = id;
        if (!registered.count(id)) cv.reasons.push_back("not in city registry");

        for (Sector s : {Sector::water, Sector::electricity}) {
            int summer_total = 0;
            int summer_present = 0;
            double annual_sum = 0.0;
            double summer_sum = 0.0;
            bool any_full_year = false;
            for (int y = period.start_year; y <= period.end_year; ++y) {
                bool full_year = true;
                double year_sum = 0.0;
                double year_summer = 0.0;
                for (int m = 1; m <= 12; ++m) {
                    const auto it = demand.find({id, s, y, m});
                    const bool present = it != demand.end();
                    if (!present) {
                        cv.missing_demand.push_back({s, y, m});
                        full_year = false;
                    } else {
                        year_sum += it->second;
                        if (is_summer(m)) year_summer += it->second;
                    }
                    if (is_summer(m)) {
                        ++summer_total;
                        if (present) ++summer_present;
                    }
                }
                if (full_year) {
                    any_full_year = true;
                    annual_sum += year_sum;
                    summer_sum += year_summer;
                }
                if (!pop.count({id, s, y})) cv.missing_population.push_back({s, y});
            }
            const double coverage = summer_total ? static_cast<double>(summer_present) / summer_total : 0.0;
            std::optional<double> share;
            if (any_full_year && annual_sum > 0) share = summer_sum / annual_sum;
            if (s == Sector::water) {
                cv.summer_coverage_water = coverage;
                cv.summer_share_water = share;
            } else {
                cv.summer_coverage_electricity = coverage;
                cv.summer_share_electricity = share;
            }
            if (coverage < thresholds.summer_demand) {
                cv.reasons.push_back(std::string(to_string(s)) + " summer demand coverage below threshold");
            }
        }

        const auto cit = climate_days.find(id);
        long long expected = 0;
        long long present = 0;
        for (sys_days d = first; d <= last; d += std::chrono::days{1}) {
            ++expected;
            if (cit != climate_days.end() && cit->second.count(d)) {
                ++present;
            } else {
                cv.missing_climate_days.push_back(Date{d});
            }
        }
        cv.climate_coverage = expected ? static_cast<double>(present) / static_cast<double>(expected) : 0.0;
        if (cv.climate_coverage < thresholds.climate_days) cv.reasons.push_back("climate day coverage below threshold");
        if (!cv.missing_population.empty()) cv.reasons.push_back("missing service population years");

        cv.excluded = !cv.reasons.empty();
        report.cities.push_back(std::move(cv));
    }

    for (const auto& a : bundle.analogs) {
        if (!climate_days.count(a.analog_id)) {
            report.bundle_issues.push_back("analog '" + a.analog_id + "' for " + a.target_city_id + " (" +
                                           std::string(to_string(a.scenario)) + ") has no daily climate records");
        }
        if (!registered.count(a.target_city_id)) {
            report.bundle_issues.push_back("analog target '" + a.target_city_id + "' not in city registry");
        }
    }
    return report;
}

std::string validation_report_json(const ValidationReport& report) {
    using nlohmann::json;
    json cities = json::array();
    for (const auto& c : report.cities) {
        json gaps = json::array();
        for (const auto& g : c.missing_demand) gaps.push_back({to_string(g.sector), g.year, g.month});
        json pops = json::array();
        for (const auto& g : c.missing_population) pops.push_back({to_string(g.sector), g.year});
        json days = json::array();
        for (const auto& d : c.missing_climate_days) days.push_back(format_iso_date(d));
        json j{{"city_id", c.city_id},
               {"excluded", c.excluded},
               {"reasons", c.reasons},
               {"missing_demand", gaps},
               {"missing_population", pops},
               {"missing_climate_days", days},
               {"summer_coverage_water", c.summer_coverage_water},
               {"summer_coverage_electricity", c.summer_coverage_electricity},
               {"climate_coverage", c.climate_coverage}};
        j["summer_share_water"] = c.summer_share_water ? json(*c.summer_share_water) : json(nullptr);
        j["summer_share_electricity"] = c.summer_share_electricity ? json(*c.summer_share_electricity) : json(nullptr);
        cities.push_back(std::move(j));
    }
    json root{{"cities", cities}, {"bundle_issues", report.bundle_issues}, {"all_usable", report.all_usable()}};
    return root.dump(2) + "\n";
}

}  // namespace nexus
