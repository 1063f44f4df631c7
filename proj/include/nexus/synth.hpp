#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nexus/ingest.hpp"
#include "nexus/mvtb.hpp"
#include "nexus/preprocess.hpp"

namespace nexus::synth {

struct SynthConfig {
    int n_cities = 8;
    int n_regions = 2;
    int start_year = 2007;
    int end_year = 2018;
    std::vector<int> summer_months{6, 7, 8, 9};
    double noise_sigma = 0.05;  // noise std as a fraction of the summer signal std
    double trend_slope = 0.02;  // c_y = 1 + slope * (y - mid-year); ignored when trend is set
    std::vector<double> trend;  // optional explicit c_y per study year
    double warm_shift_c = 3.0;  // rcp85 analog: +3 degC, precip x0.8
    double warm_precip_factor = 0.8;
    double mild_shift_c = 1.5;  // rcp45 analog
    double mild_precip_factor = 0.9;
    int ssp_base_year = 2020;
    int ssp_target_year = 2080;
    ClimateOptions climate;
    std::uint64_t seed = 7;

    void validate() const;  // throws InputError
};

// Linear + interaction response on a handful of monthly features:
//   g = base * (1 + sum_i coef_i * (x_i - center_i) / scale_i
//              + interaction * u_a * u_b), floored at 0.1 * base.
struct Term {
    std::string feature;
    double center = 0.0;
    double scale = 1.0;
    double coef = 0.0;
    bool hinge = false;  // use max(0, x - center) instead of (x - center)
};

struct Response {
    double base = 1.0;
    std::vector<Term> terms;
    // Product of the first two terms' standardized inputs.
    double interaction = 0.0;

    double operator()(const FeatureVector& x) const;
    std::vector<std::string> features() const;
};

struct RegionTruth {
    std::string region;
    Response water;
    Response electricity;
    std::vector<std::string> true_features;  // union of both outcomes, sorted
};

struct CityTruth {
    std::string city_id;
    std::string region;
    std::string warm_analog;
    std::string mild_analog;
    // pct_change[scenario][outcome] from evaluating g on observed vs analog months.
    std::map<Scenario, std::array<double, 2>> pct_change;
};

struct GroundTruth {
    std::vector<RegionTruth> regions;
    std::vector<CityTruth> cities;
    const RegionTruth& region(const std::string& code) const;
};

struct Generated {
    DatasetBundle bundle;
    GroundTruth truth;
};

Generated generate(const SynthConfig& config);

std::string ground_truth_json(const GroundTruth& truth, const SynthConfig& config);
void write_generated(const Generated& g, const SynthConfig& config, const std::filesystem::path& dir);

// ----- independent oracles -----

struct OracleBoostResult {
    Eigen::VectorXd predictions;     // on the training rows
    std::vector<double> sse_trace;   // training SSE of the standardized residual after each iteration
};

// Plain univariate gradient boosting coded separately from mvtb: brute-force
// split enumeration with two-pass SSE, same bagging and PRNG rules.
OracleBoostResult oracle_univariate_boost(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          const mvtb::Hyperparams& hyper);

// Chi CDF by adaptive Simpson integration of the chi density.
double oracle_chi(double x, int k);

}  // namespace nexus::synth
