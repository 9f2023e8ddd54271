#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace hcpf::special {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();
inline constexpr double log_two_pi = 1.8378770664093454835606594728112;

inline double log_gamma(double x) { return std::lgamma(x); }

inline double log_factorial(double n) { return std::lgamma(n + 1.0); }

inline double digamma(double x) { return boost::math::digamma(x); }

inline double trigamma(double x) { return boost::math::trigamma(x); }

/// log(1 - e^{-x}) for x > 0, accurate at both ends.
inline double log1mexp(double x) {
    return x < 0.6931471805599453 ? std::log(-std::expm1(-x))
                                  : std::log1p(-std::exp(-x));
}

/// log(e^x - 1) for x > 0.
inline double log_expm1(double x) {
    return x > 30.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
}

inline double log_sum_exp(std::span<const double> v) {
    double m = neg_inf;
    for (double x : v)
        m = std::max(m, x);
    if (m == neg_inf)
        return neg_inf;
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
    if (a == neg_inf)
        return b;
    if (b == neg_inf)
        return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double poisson_log_pmf(double n, double rate) {
    if (n == 0.0)
        return -rate;
    return n * std::log(rate) - rate - log_factorial(n);
}

inline bool is_integer(double x, double tol = 1e-9) {
    return std::isfinite(x) && std::abs(x - std::round(x)) <= tol;
}

} // namespace hcpf::special
