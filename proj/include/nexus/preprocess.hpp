#pragma once

#include <compare>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "nexus/ingest.hpp"

namespace nexus {

struct YearMonth {
    int year = 0;
    int month = 0;
    friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

enum class SeriesStage { raw, per_capita, detrended };

struct DemandSeries {
    std::string city_id;
    Sector sector = Sector::water;
    std::map<YearMonth, double> values;
    SeriesStage stage = SeriesStage::raw;
};

// Collects one city/sector's records into a raw series.
DemandSeries make_series(std::span<const DemandRecord> records, const std::string& city_id, Sector sector);

// value(y, m) / service_population(y). Throws DataError if a year has no population.
DemandSeries to_per_capita(const DemandSeries& raw, std::span<const PopulationRecord> population);

// Ratio de-trending: each year's values are rescaled by (overall mean / that year's mean),
// removing slow non-climatic drift while keeping the within-year shape.
DemandSeries detrend(const DemandSeries& per_capita);

inline constexpr int kFeatureCount = 17;
using FeatureVector = Eigen::Matrix<double, kFeatureCount, 1>;

// tdry, twet, tdew, rh, wind each as {min, max, mean}, then precip_total, wet_days.
std::span<const std::string_view> feature_names();
int feature_index(std::string_view name);  // -1 if unknown

struct MonthlyFeatureRow {
    std::string city_id;
    int year = 0;
    int month = 0;
    FeatureVector values = FeatureVector::Zero();
};

struct ClimateOptions {
    double wet_day_threshold_mm = 1.0;
    int max_gap_days = 3;
    double min_month_fraction = 0.90;
};

// Linear interpolation across runs of at most `max_gap_days` missing days.
// Input is one location's records; output is sorted by date.
std::vector<ClimateDailyRecord> fill_gaps(std::span<const ClimateDailyRecord> daily, int max_gap_days);

struct SeasonalNormals {
    std::string location_id;
    std::string epoch;
    Season12d mean12 = Season12d::Zero();
    Season12d icv12 = Season12d::Ones();
    int n_years = 0;
};

inline constexpr double kIcvFloor = 1e-6;

// Gap-filled daily climate of one location with month/season aggregation.
class LocationClimate {
public:
    LocationClimate(std::string location_id, std::span<const ClimateDailyRecord> daily, const ClimateOptions& options);

    const std::string& location_id() const { return id_; }
    const std::vector<ClimateDailyRecord>& days() const { return days_; }

    bool has_month(int year, int month) const;
    // Throws DataError when fewer than min_month_fraction of the days are available.
    MonthlyFeatureRow month_features(int year, int month) const;

    SeasonalNormals seasonal_normals(int first_year, int last_year, double icv_floor = kIcvFloor) const;

private:
    std::span<const ClimateDailyRecord> month_span(int year, int month) const;

    std::string id_;
    ClimateOptions options_;
    std::vector<ClimateDailyRecord> days_;
};

// Groups records by location id.
std::map<std::string, LocationClimate> index_climate(std::span<const ClimateDailyRecord> daily,
                                                     const ClimateOptions& options);

MonthlyFeatureRow monthly_features(std::span<const ClimateDailyRecord> daily, const std::string& city_id, int year,
                                   int month, const ClimateOptions& options = {});

SeasonalNormals seasonal_normals(std::span<const ClimateDailyRecord> daily, const std::string& location_id,
                                 int first_year, int last_year, const ClimateOptions& options = {},
                                 double icv_floor = kIcvFloor);

struct AcrossYearStats {
    Season12d mean;
    Season12d sd;  // n-1 denominator
};
AcrossYearStats across_year_stats(std::span<const Season12d> annual);

struct RowKey {
    std::string city_id;
    int year = 0;
    int month = 0;
    friend auto operator<=>(const RowKey&, const RowKey&) = default;
};

inline constexpr int kOutcomeCount = 2;  // water, electricity
std::span<const std::string_view> outcome_names();

struct TrainingTable {
    std::vector<std::string> feature_names;
    std::vector<RowKey> keys;
    Eigen::MatrixXd X;  // rows x features
    Eigen::MatrixXd Y;  // rows x (water, electricity)

    Eigen::Index rows() const { return X.rows(); }
};

inline constexpr std::size_t kMinTrainingRows = 24;

TrainingTable build_training_table(std::span<const MonthlyFeatureRow> features, const DemandSeries& water,
                                   const DemandSeries& electricity, std::span<const int> summer_months,
                                   std::size_t min_rows = kMinTrainingRows);

// Column subset in the given order. Throws InputError on an unknown name.
TrainingTable select_features(const TrainingTable& table, std::span<const std::string> names);

// Row-wise concatenation; all tables must share feature names.
TrainingTable concat_tables(std::span<const TrainingTable> tables);

void write_training_table_csv(std::ostream& out, const TrainingTable& table);
void write_normals_csv(std::ostream& out, std::span<const SeasonalNormals> normals);

}  // namespace nexus
