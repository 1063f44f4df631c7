#pragma once

#include <chrono>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace nexus {

enum class Sector { water, electricity };
enum class Scenario { rcp45, rcp85 };

std::string_view to_string(Sector s);
std::string_view to_string(Scenario s);
std::string_view unit_for(Sector s);  // "m3" or "MWh"
Sector parse_sector(std::string_view s);
Scenario parse_scenario(std::string_view s);

using Date = std::chrono::year_month_day;
Date parse_iso_date(std::string_view s);  // YYYY-MM-DD; throws InputError
std::string format_iso_date(const Date& d);

// Twelve seasonal values, season-major (DJF, MAM, JJA, SON) x (tmin, tmax, prcp).
template <typename Scalar>
using Season12 = Eigen::Matrix<Scalar, 12, 1>;
using Season12d = Season12<double>;

struct CityRecord {
    std::string city_id;
    std::string name;
    std::string state;
    double lat = 0.0;
    double lon = 0.0;
    std::string region;
};

struct DemandRecord {
    std::string city_id;
    Sector sector = Sector::water;
    int year = 0;
    int month = 0;
    double value = 0.0;
    std::string unit;
};

struct PopulationRecord {
    std::string city_id;
    Sector sector = Sector::water;
    int year = 0;
    double service_population = 0.0;
};

struct ClimateDailyRecord {
    std::string city_id;
    Date date{};
    double tdry = 0.0;    // degC
    double twet = 0.0;    // degC
    double tdew = 0.0;    // degC
    double rh = 0.0;      // percent
    double wind = 0.0;    // m/s
    double precip = 0.0;  // mm/day
};

struct AnalogMapRecord {
    std::string target_city_id;
    Scenario scenario = Scenario::rcp85;
    std::string analog_id;
    std::string source;  // "ensemble" or "gcm:<name>"
};

struct SspRecord {
    std::string city_id;
    int ssp = 1;  // 1..5
    int year = 0;
    double population = 0.0;
};

struct FutureNormalsRecord {
    std::string city_id;
    Scenario scenario = Scenario::rcp85;
    Season12d mean12 = Season12d::Zero();
};

// Known NOAA climate-region codes; anything else parses with a warning.
std::span<const std::string_view> known_region_codes();

std::vector<DemandRecord> parse_demand_csv(std::istream& in);
std::vector<ClimateDailyRecord> parse_climate_csv(std::istream& in);
std::vector<CityRecord> parse_registry_csv(std::istream& in, std::vector<std::string>* warnings = nullptr);
std::vector<PopulationRecord> parse_population_csv(std::istream& in);
std::vector<AnalogMapRecord> parse_analog_csv(std::istream& in);
std::vector<SspRecord> parse_ssp_csv(std::istream& in);
std::vector<FutureNormalsRecord> parse_future_normals_csv(std::istream& in);

void write_demand_csv(std::ostream& out, std::span<const DemandRecord> rows);
void write_climate_csv(std::ostream& out, std::span<const ClimateDailyRecord> rows);
void write_registry_csv(std::ostream& out, std::span<const CityRecord> rows);
void write_population_csv(std::ostream& out, std::span<const PopulationRecord> rows);
void write_analog_csv(std::ostream& out, std::span<const AnalogMapRecord> rows);
void write_ssp_csv(std::ostream& out, std::span<const SspRecord> rows);
void write_future_normals_csv(std::ostream& out, std::span<const FutureNormalsRecord> rows);

// File names inside a data directory.
namespace files {
inline constexpr std::string_view cities = "cities.csv";
inline constexpr std::string_view demand = "demand.csv";
inline constexpr std::string_view population = "population.csv";
inline constexpr std::string_view climate = "climate.csv";
inline constexpr std::string_view analogs = "analogs.csv";
inline constexpr std::string_view future_normals = "future_normals.csv";
inline constexpr std::string_view ssp = "ssp.csv";
}  // namespace files

struct DatasetBundle {
    std::vector<CityRecord> cities;
    std::vector<DemandRecord> demand;
    std::vector<PopulationRecord> population;
    std::vector<ClimateDailyRecord> climate;
    std::vector<AnalogMapRecord> analogs;
    std::optional<std::vector<FutureNormalsRecord>> future_normals;
    std::optional<std::vector<SspRecord>> ssp;
    std::vector<std::string> warnings;
};

// Loads the required tables (cities, demand, population, climate) and any
// optional ones present. Errors carry the offending file name.
DatasetBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

struct StudyPeriod {
    int start_year = 2007;
    int end_year = 2018;
};

struct CoverageThresholds {
    double summer_demand = 0.80;  // fraction of study-period summer months
    double climate_days = 0.95;   // fraction of study-period days
};

struct DemandGap {
    Sector sector;
    int year;
    int month;
    friend bool operator==(const DemandGap&, const DemandGap&) = default;
};

struct PopulationGap {
    Sector sector;
    int year;
    friend bool operator==(const PopulationGap&, const PopulationGap&) = default;
};

struct CityValidation {
    std::string city_id;
    std::vector<DemandGap> missing_demand;
    std::vector<Date> missing_climate_days;
    std::vector<PopulationGap> missing_population;
    double summer_coverage_water = 0.0;
    double summer_coverage_electricity = 0.0;
    double climate_coverage = 0.0;
    // Share of annual consumption falling in the summer months, reported only.
    std::optional<double> summer_share_water;
    std::optional<double> summer_share_electricity;
    bool excluded = false;
    std::vector<std::string> reasons;
    friend bool operator==(const CityValidation&, const CityValidation&) = default;
};

struct ValidationReport {
    std::vector<CityValidation> cities;      // sorted by city_id
    std::vector<std::string> bundle_issues;  // e.g. analog ids without climate data
    bool all_usable() const;
    std::vector<std::string> included_cities() const;
    friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

ValidationReport validate_bundle(const DatasetBundle& bundle, const StudyPeriod& period,
                                 std::span<const int> summer_months,
                                 const CoverageThresholds& thresholds = {});

std::string validation_report_json(const ValidationReport& report);

}  // namespace nexus
