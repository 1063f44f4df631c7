#include "nexus/analog.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "nexus/csv.hpp"
#include "nexus/error.hpp"

namespace nexus::analog {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kTiny = std::numeric_limits<double>::min() / kEps;
constexpr int kMaxIter = 10000;

// Power series for P(a, x); converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < kMaxIter; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a, x) (modified Lentz); used for x >= a + 1.
double gamma_q_fraction(double a, double x) {
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_p(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw NumericError("gamma_p: invalid arguments");
    if (x == 0.0) return 0.0;
    return x < a + 1.0 ? gamma_p_series(a, x) : 1.0 - gamma_q_fraction(a, x);
}

double gamma_q(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw NumericError("gamma_q: invalid arguments");
    if (x == 0.0) return 1.0;
    return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_fraction(a, x);
}

double chi_cdf(double x, int k) {
    if (k < 1) throw NumericError("chi_cdf: k must be >= 1");
    if (x <= 0.0) return 0.0;
    return gamma_p(0.5 * k, 0.5 * x * x);
}

double chi_sf(double x, int k) {
    if (k < 1) throw NumericError("chi_sf: k must be >= 1");
    if (x <= 0.0) return 1.0;
    return gamma_q(0.5 * k, 0.5 * x * x);
}

Sigma sigma_dissimilarity(double distance, int k) {
    if (!(distance >= 0.0)) throw NumericError("sigma_dissimilarity: distance must be >= 0");
    if (distance == 0.0) return {0.0, false};
    const double tail = chi_sf(distance, k);
    if (tail < kUnderflow) return {kSigmaCap, true};
    const double cdf = chi_cdf(distance, k);

    // Compare on whichever side of the distribution carries the precision.
    const bool use_cdf = cdf <= 0.5;
    const auto below = [&](double s) { return use_cdf ? chi_cdf(s, 1) < cdf : chi_sf(s, 1) > tail; };

    double lo = 0.0;
    double hi = std::max(1.0, distance);
    while (below(hi)) {
        lo = hi;
        hi *= 2.0;
    }
    // Relative stop so that tiny sigmas stay strictly ordered in D.
    while (hi - lo > 1e-11 * std::min(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (below(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double sigma = 0.5 * (lo + hi);
    if (sigma >= kSigmaCap) return {kSigmaCap, true};
    return {sigma, false};
}

std::vector<AnalogResult> rank_analogs(const AnalogQuery& query, std::span<const SeasonalNormals> pool) {
    if (pool.empty()) throw DataError("analog pool is empty for " + query.target_city_id);
    if (!query.future12.allFinite()) throw InputError("non-finite future normals for " + query.target_city_id);
    std::vector<AnalogResult> out;
    out.reserve(pool.size());
    for (const auto& c : pool) {
        const Season12d z = standardize_anomaly(query.future12, c);
        const double d = sed_distance(z);
        const auto s = sigma_dissimilarity(d, kDims);
        out.push_back({c.location_id, d, s.sigma, s.saturated, 0});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.sigma != b.sigma) return a.sigma < b.sigma;
        return a.candidate_id < b.candidate_id;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
    return out;
}

void write_ranked_header(std::ostream& out) {
    static constexpr std::array<std::string_view, 7> kHeader{"target_city_id", "scenario", "candidate_id", "distance",
                                                             "sigma",          "saturated", "rank"};
    csv::write_header(out, kHeader);
}

void write_ranked_rows(std::ostream& out, const AnalogQuery& query, std::span<const AnalogResult> results) {
    for (const auto& r : results) {
        const std::array<std::string, 7> f{query.target_city_id,
                                           std::string(to_string(query.scenario)),
                                           r.candidate_id,
                                           csv::fmt(r.distance),
                                           csv::fmt(r.sigma),
                                           r.saturated ? "true" : "false",
                                           std::to_string(r.rank)};
        csv::write_row(out, f);
    }
}

}  // namespace nexus::analog
