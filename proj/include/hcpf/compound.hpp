#pragma once

// Compound Poisson X+ = X_1 + ... + X_N with N ~ Po(rate) and i.i.d.
// additive-EDM elements, so X+ | N = n has dispersion n * kappa. Densities
// are exact sums over n = 1..truncation evaluated in log space.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "hcpf/edm.hpp"
#include "hcpf/error.hpp"
#include "hcpf/special.hpp"

namespace hcpf {

inline constexpr double default_tail_tolerance = 1e-12;
inline constexpr long default_truncation_cap = 128;

/// P(N > n) for N ~ Po(rate).
inline double poisson_upper_tail(double rate, long n) {
    if (n < 0)
        return 1.0;
    return boost::math::gamma_p(static_cast<double>(n) + 1.0, rate);
}

struct CompoundSpec {
    ElementSpec element;
    double rate = 1.0;
    long truncation = 1;

    /// Validated construction; rejects a truncation whose Poisson tail
    /// mass exceeds `tail_tolerance`.
    static CompoundSpec make(const ElementSpec& element, double rate, long truncation,
                             double tail_tolerance = default_tail_tolerance) {
        CompoundSpec s{element, rate, truncation};
        s.validate();
        const double tail = poisson_upper_tail(rate, truncation);
        if (!(tail < tail_tolerance))
            throw InvalidParameter("truncation " + std::to_string(truncation) +
                                   " leaves Poisson tail mass " + std::to_string(tail) +
                                   " at rate " + std::to_string(rate));
        return s;
    }

    void validate() const {
        element.validate();
        if (!(rate > 0.0) || !std::isfinite(rate))
            throw InvalidParameter("compound rate must be positive");
        if (truncation < 1)
            throw InvalidParameter("truncation must be at least 1");
    }
};

inline double prob_zero(double rate) {
    if (!(rate >= 0.0))
        throw InvalidParameter("rate must be non-negative");
    return std::exp(-rate);
}

namespace detail {

/// log sum_{n=1}^{N} p(y; theta, n kappa) Po(n | rate).
inline double log_positive_count_mass(const CompoundSpec& s, double y) {
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(s.truncation));
    for (long n = 1; n <= s.truncation; ++n) {
        const double ld =
            log_density(s.element.with_kappa(static_cast<double>(n) * s.element.kappa), y);
        terms.push_back(ld == special::neg_inf
                            ? ld
                            : ld + special::poisson_log_pmf(static_cast<double>(n), s.rate));
    }
    return special::log_sum_exp(terms);
}

} // namespace detail

/// Log density (or mass) of X+ at y. Zero carries the e^-rate atom; for
/// elements that can themselves be zero the n >= 1 terms are added to it.
inline double log_marginal_density(const CompoundSpec& s, double y) {
    s.validate();
    if (y == 0.0) {
        if (!zero_in_support(s.element))
            return -s.rate;
        return special::log_add_exp(-s.rate, detail::log_positive_count_mass(s, 0.0));
    }
    return detail::log_positive_count_mass(s, y);
}

/// Log density of the non-missing response: the n-sum with zero-truncated
/// Poisson weights Po(n | rate) / (1 - e^-rate), n >= 1.
inline double log_truncated_density(const CompoundSpec& s, double y) {
    s.validate();
    if (y == 0.0 && !zero_in_support(s.element))
        return special::neg_inf;
    const double m = detail::log_positive_count_mass(s, y);
    return m == special::neg_inf ? m : m - special::log1mexp(s.rate);
}

/// E[X++] = rate / (1 - e^-rate) * E[X].
inline double truncated_mean(const CompoundSpec& s) {
    s.validate();
    return s.rate / -std::expm1(-s.rate) * mean(s.element);
}

template <class Rng> double sample(const CompoundSpec& s, Rng& rng) {
    s.validate();
    std::poisson_distribution<long> count(s.rate);
    const long n = count(rng);
    if (n == 0)
        return 0.0;
    return sample(s.element.with_kappa(static_cast<double>(n) * s.element.kappa), rng);
}

/// Smallest truncation N satisfying, in order:
///  - the Po(max_rate) tail beyond N is below the tail tolerance;
///  - for elements with a bounded per-term increment (point mass, ZTP,
///    binomial) every response up to max_response has a feasible n <= N;
///  - the unnormalized count weights at (max_response, max_rate) have
///    decayed below the tail tolerance relative to their peak by N.
/// Throws ConfigError when the answer exceeds `cap`.
inline long choose_truncation(const ElementSpec& element, double max_rate,
                              double max_response, long cap = default_truncation_cap,
                              double tail_tolerance = default_tail_tolerance) {
    element.validate();
    if (!(max_rate > 0.0) || !std::isfinite(max_rate))
        throw InvalidParameter("max_rate must be positive");
    auto over_cap = [&](long n, const char* why) {
        throw ConfigError("truncation " + std::to_string(n) + " needed for " + why +
                          " exceeds the cap of " + std::to_string(cap) +
                          " (max response " + std::to_string(max_response) +
                          ", max rate " + std::to_string(max_rate) + ")");
    };

    long n = 1;
    while (!(poisson_upper_tail(max_rate, n) < tail_tolerance)) {
        if (++n > cap)
            over_cap(n, "the Poisson tail");
    }

    const bool bounded_increment =
        element.point_mass || element.family == EdmFamily::ZeroTruncatedPoisson ||
        element.family == EdmFamily::Binomial;
    if (bounded_increment && max_response > 0.0) {
        const long need = static_cast<long>(std::ceil(max_response / element.kappa - 1e-9));
        if (need > cap)
            over_cap(need, "response support");
        n = std::max(n, need);
    }

    if (max_response != 0.0 && std::isfinite(max_response)) {
        const double log_rate = std::log(max_rate);
        const double log_tol = std::log(tail_tolerance);
        double peak = special::neg_inf;
        double prev = special::neg_inf;
        long settled = 0;
        for (long m = 1; m <= cap + 1; ++m) {
            const double w = log_poisson_weight(element, max_response, log_rate, m);
            peak = std::max(peak, w);
            if (peak != special::neg_inf && w - peak < log_tol && w <= prev) {
                settled = m - 1;
                break;
            }
            prev = w;
        }
        if (settled == 0 && peak != special::neg_inf)
            over_cap(cap + 1, "the count posterior");
        n = std::max(n, settled);
    }
    return n;
}

struct DensityGridPoint {
    double rate;
    double y;
    double log_density;
};

/// Zero-truncated compound log densities over a (rate, y) grid.
inline std::vector<DensityGridPoint> density_grid(const ElementSpec& element,
                                                  const std::vector<double>& rates,
                                                  const std::vector<double>& ys,
                                                  long truncation) {
    std::vector<DensityGridPoint> out;
    out.reserve(rates.size() * ys.size());
    for (double r : rates) {
        const CompoundSpec s{element, r, truncation};
        for (double y : ys)
            out.push_back({r, y, log_truncated_density(s, y)});
    }
    return out;
}

} // namespace hcpf
