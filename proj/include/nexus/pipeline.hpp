#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nexus/analog.hpp"
#include "nexus/error.hpp"
#include "nexus/ingest.hpp"
#include "nexus/mvtb.hpp"
#include "nexus/preprocess.hpp"

namespace nexus::pipeline {

// Fold index per row: a seeded permutation dealt round-robin into k folds.
std::vector<int> kfold_splits(std::size_t n, int k, std::uint64_t seed);

// 1 - SSE / SST. Throws DataError when y has zero variance.
template <typename A, typename B>
double r2(const Eigen::MatrixBase<A>& y, const Eigen::MatrixBase<B>& yhat) {
    const double mean = y.mean();
    const double sst = (y.array() - mean).square().sum();
    if (!(sst > 0.0)) throw DataError("r2: observations have zero variance");
    return 1.0 - (y - yhat).squaredNorm() / sst;
}

// RMSE / mean(y). Throws DataError when mean(y) <= 0.
template <typename A, typename B>
double nrmse(const Eigen::MatrixBase<A>& y, const Eigen::MatrixBase<B>& yhat) {
    const double mean = y.mean();
    if (!(mean > 0.0)) throw DataError("nrmse: mean of observations must be positive");
    return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.size())) / mean;
}

struct OutcomeMetrics {
    double r2 = 0.0;
    double nrmse = 0.0;
};

struct FoldMetrics {
    int fold = 0;
    std::vector<OutcomeMetrics> outcomes;  // NaN where a fold is degenerate
};

struct MetricsReport {
    std::string city_id;
    std::vector<FoldMetrics> folds;
    std::vector<OutcomeMetrics> pooled;
    std::vector<int> fold_of_row;
    Eigen::MatrixXd out_of_fold;  // pooled held-out predictions, rows x outcomes
};

MetricsReport cross_validate_city(const std::string& city_id, const TrainingTable& table,
                                  const mvtb::Hyperparams& hyper, int k, std::uint64_t seed);

struct SelectionConfig {
    double cumulative_pct = 90.0;
    int min_vars = 4;
    int max_vars = 6;
};

struct RegionalVariableSet {
    std::string region;
    std::vector<std::string> features;  // selected, most influential first
    std::vector<std::pair<std::string, double>> ranking;  // all features with mean influence (%)
};

// Pools the region's city tables, fits once, averages relative influence over
// the outcomes and keeps the shortest prefix reaching `cumulative_pct`,
// clamped to [min_vars, max_vars]. Equal influence ties break by name.
RegionalVariableSet select_regional_variables(const std::string& region, std::span<const TrainingTable> city_tables,
                                              const mvtb::Hyperparams& hyper, const SelectionConfig& config = {});

double percent_change(double baseline, double projected);

struct OutcomeProjection {
    double baseline_mean = 0.0;
    double projected_mean = 0.0;
    double pct_change = 0.0;
};

struct ProjectionResult {
    std::string city_id;
    Scenario scenario = Scenario::rcp85;
    std::string analog_id;
    std::vector<OutcomeProjection> outcomes;  // water, electricity
};

ProjectionResult project_with_analog(const mvtb::Model& model, const Eigen::MatrixXd& observed_X,
                                     const Eigen::MatrixXd& analog_X);

// Analog feature rows on the observed (year, month) grid, in the given column order.
Eigen::MatrixXd analog_feature_matrix(const LocationClimate& analog, std::span<const RowKey> keys,
                                      std::span<const std::string> feature_names);

struct EmissionsConfig {
    double co2e_factor = 0.432;          // t CO2e per MWh
    double turbine_rating_mw = 1.5;
    double capacity_factor = 0.247;
    double hours_per_month = 730.0;
    double forest_rate = 207.56;         // t CO2e sequestered per km2 per month
    double dam_daily_output_mwh = 11024.0;

    void validate() const;
};

struct TotalsCore {
    double current_total = 0.0;
    double projected_total = 0.0;
    double delta = 0.0;
};

TotalsCore ssp_total_demand(double pct_change, double current_total, double pop_now, double pop_future);

double co2e_delta(double delta_mwh, const EmissionsConfig& config);

struct EquivalenceReport {
    long long turbines = 0;
    double forest_km2 = 0.0;
    double dam_days = 0.0;
};

EquivalenceReport equivalences(double delta_mwh, double co2e_t, const EmissionsConfig& config);

struct TotalsResult {
    std::string city_id;
    int ssp = 0;
    Scenario scenario = Scenario::rcp85;
    TotalsCore core;
    double co2e_t = 0.0;
    EquivalenceReport eq;
};

struct InfluenceRow {
    std::string city_id;
    std::string feature;
    std::string outcome;
    double pct = 0.0;
};

std::vector<InfluenceRow> influence_rows(const std::string& city_id, const mvtb::Model& model);

struct RankedAnalogs {
    analog::AnalogQuery query;
    std::vector<analog::AnalogResult> results;
};

struct ReportSet {
    std::vector<MetricsReport> metrics;
    std::vector<ProjectionResult> projections;
    std::vector<TotalsResult> totals;
    std::vector<InfluenceRow> influence;
    std::vector<RankedAnalogs> analogs;

    bool empty() const {
        return metrics.empty() && projections.empty() && totals.empty() && influence.empty() && analogs.empty();
    }
};

namespace outputs {
inline constexpr std::string_view metrics = "metrics.csv";
inline constexpr std::string_view projections = "projections.csv";
inline constexpr std::string_view totals = "totals.csv";
inline constexpr std::string_view influence = "influence.csv";
inline constexpr std::string_view analogs = "analogs_ranked.csv";
inline constexpr std::string_view summary = "summary.json";
}  // namespace outputs

void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> reports);
void write_projections_csv(std::ostream& out, std::span<const ProjectionResult> results);
void write_totals_csv(std::ostream& out, std::span<const TotalsResult> results);
void write_influence_csv(std::ostream& out, std::span<const InfluenceRow> rows);
void write_analogs_csv(std::ostream& out, std::span<const RankedAnalogs> ranked);

// Medians across cities of pooled metrics and of projected percent changes.
std::string summary_json(const ReportSet& reports);

// Writes each non-empty section to its file (sorted by city for stable
// output); summary.json accompanies metrics. Throws DataError when everything
// is empty and InputError when the directory cannot be written.
void write_reports(const ReportSet& reports, const std::filesystem::path& out_dir);

std::vector<MetricsReport> read_metrics_csv(std::istream& in);
std::vector<ProjectionResult> read_projections_csv(std::istream& in);
std::vector<RankedAnalogs> read_analogs_csv(std::istream& in);

double median(std::vector<double> values);

// ----- per-city preparation from a loaded bundle -----

struct PrepareOptions {
    StudyPeriod period;
    std::vector<int> summer_months{6, 7, 8, 9};
    ClimateOptions climate;
};

struct PreparedCity {
    std::string city_id;
    std::string region;
    TrainingTable table;                       // all 17 features
    double mean_summer_electricity_pc = 0.0;  // MWh/person/month, not detrended
};

PreparedCity prepare_city(const DatasetBundle& bundle, const std::map<std::string, LocationClimate>& climate,
                          const CityRecord& city, const PrepareOptions& options);

}  // namespace nexus::pipeline
