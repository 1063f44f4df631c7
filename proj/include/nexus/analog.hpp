#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nexus/ingest.hpp"
#include "nexus/preprocess.hpp"

namespace nexus::analog {

inline constexpr int kDims = 12;
inline constexpr double kSigmaCap = 10.0;
inline constexpr double kUnderflow = 1e-300;

struct AnalogQuery {
    std::string target_city_id;
    Scenario scenario = Scenario::rcp85;
    Season12d future12 = Season12d::Zero();
};

struct AnalogResult {
    std::string candidate_id;
    double distance = 0.0;
    double sigma = 0.0;
    bool saturated = false;
    int rank = 0;
};

// (future - candidate mean) / candidate ICV, componentwise.
template <typename Derived, typename MeanDerived, typename IcvDerived>
auto standardize_anomaly(const Eigen::MatrixBase<Derived>& future, const Eigen::MatrixBase<MeanDerived>& mean,
                         const Eigen::MatrixBase<IcvDerived>& icv) {
    return ((future - mean).array() / icv.array()).matrix().eval();
}

inline Season12d standardize_anomaly(const Season12d& future, const SeasonalNormals& candidate) {
    return standardize_anomaly(future, candidate.mean12, candidate.icv12);
}

template <typename Derived>
typename Derived::Scalar sed_distance(const Eigen::MatrixBase<Derived>& z) {
    return z.norm();
}

// Regularized incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// CDF and survival function of the chi distribution with k degrees of freedom.
double chi_cdf(double x, int k);
double chi_sf(double x, int k);

struct Sigma {
    double sigma = 0.0;
    bool saturated = false;
};

// Maps a k-dimensional standardized distance onto the 1-dof scale: the sigma
// whose two-sided normal tail probability equals the chi_k tail of D.
Sigma sigma_dissimilarity(double distance, int k = kDims);

// Ranks the pool by sigma ascending; ties go to the lexicographically smaller id.
std::vector<AnalogResult> rank_analogs(const AnalogQuery& query, std::span<const SeasonalNormals> pool);

void write_ranked_header(std::ostream& out);
void write_ranked_rows(std::ostream& out, const AnalogQuery& query, std::span<const AnalogResult> results);

}  // namespace nexus::analog
