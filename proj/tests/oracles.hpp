#pragma once

// Reference values computed without the library: textbook densities in
// native parameters, n-fold sums via closed-form convolution identities or
// explicit convolution, and brute-force compound sums.

#include <cmath>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/inverse_gaussian.hpp>
#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>

namespace oracle {

enum class Fam { Normal, Gamma, InvGauss, Poisson, Binomial, NegBinomial, Ztp };

/// Native parameters of one element: (mean, variance), (shape, rate),
/// (mean, shape), (rate), (trials, prob), (count, success prob), (rate).
struct Native {
    Fam fam;
    double a;
    double b = 0.0;
};

/// pmf of a single zero-truncated Poisson.
inline double ztp_pmf(double lambda, long x) {
    if (x < 1)
        return 0.0;
    return std::exp(x * std::log(lambda) - lambda - std::lgamma(x + 1.0)) / -std::expm1(-lambda);
}

/// pmf of the sum of m independent ZTP(lambda) draws, by repeated convolution.
inline std::vector<double> ztp_sum_pmf(double lambda, long m, long xmax) {
    std::vector<double> one(xmax + 1, 0.0);
    for (long x = 1; x <= xmax; ++x)
        one[x] = ztp_pmf(lambda, x);
    std::vector<double> acc(xmax + 1, 0.0);
    acc[0] = 1.0;
    for (long r = 0; r < m; ++r) {
        std::vector<double> next(xmax + 1, 0.0);
        for (long x = 0; x <= xmax; ++x)
            for (long j = 1; j <= x; ++j)
                next[x] += acc[x - j] * one[j];
        acc = next;
    }
    return acc;
}

/// Density (or pmf) of the sum of m i.i.d. copies of the element.
inline double sum_density(const Native& e, long m, double x) {
    namespace bm = boost::math;
    const double dm = static_cast<double>(m);
    switch (e.fam) {
    case Fam::Normal:
        return bm::pdf(bm::normal(dm * e.a, std::sqrt(dm * e.b)), x);
    case Fam::Gamma:
        return x <= 0.0 ? 0.0 : bm::pdf(bm::gamma_distribution<>(dm * e.a, 1.0 / e.b), x);
    case Fam::InvGauss:
        return x <= 0.0 ? 0.0 : bm::pdf(bm::inverse_gaussian(dm * e.a, dm * dm * e.b), x);
    case Fam::Poisson:
        return x < 0.0 ? 0.0 : bm::pdf(bm::poisson(dm * e.a), x);
    case Fam::Binomial:
        return (x < 0.0 || x > dm * e.a) ? 0.0 : bm::pdf(bm::binomial(dm * e.a, e.b), x);
    case Fam::NegBinomial:
        // Boost counts failures before r successes with success prob q;
        // here p is the per-trial probability of the counted outcome.
        return x < 0.0 ? 0.0 : bm::pdf(bm::negative_binomial(dm * e.a, 1.0 - e.b), x);
    case Fam::Ztp: {
        const long xi = std::lround(x);
        if (xi < m)
            return 0.0;
        return ztp_sum_pmf(e.a, m, xi)[xi];
    }
    }
    return 0.0;
}

inline double element_density(const Native& e, double x) { return sum_density(e, 1, x); }

inline double poisson_pmf(double rate, long n) {
    return std::exp(n * std::log(rate) - rate - std::lgamma(n + 1.0));
}

/// Brute-force zero-truncated compound density: sum over n = 1..nmax of
/// Po(n | rate) / (1 - e^-rate) times the n-fold sum density.
inline double truncated_compound_density(const Native& e, double rate, double y, long nmax) {
    double acc = 0.0;
    for (long n = 1; n <= nmax; ++n)
        acc += poisson_pmf(rate, n) * sum_density(e, n, y);
    return acc / -std::expm1(-rate);
}

/// Brute-force marginal: the zero atom plus the positive-count terms.
inline double marginal_compound_density(const Native& e, double rate, double y, long nmax) {
    double acc = y == 0.0 ? std::exp(-rate) : 0.0;
    for (long n = 1; n <= nmax; ++n)
        acc += poisson_pmf(rate, n) * sum_density(e, n, y);
    return acc;
}

/// Normalized posterior over n = 0..nmax of the latent count given y.
inline std::vector<double> count_posterior(const Native& e, double rate, double y, long nmax) {
    std::vector<double> w(nmax + 1, 0.0);
    if (y == 0.0)
        w[0] = std::exp(-rate);
    for (long n = 1; n <= nmax; ++n)
        w[n] = poisson_pmf(rate, n) * sum_density(e, n, y);
    double z = 0.0;
    for (double v : w)
        z += v;
    for (double& v : w)
        v /= z;
    return w;
}

/// Element mean and variance in native parameters.
inline double native_mean(const Native& e) {
    switch (e.fam) {
    case Fam::Normal: return e.a;
    case Fam::Gamma: return e.a / e.b;
    case Fam::InvGauss: return e.a;
    case Fam::Poisson: return e.a;
    case Fam::Binomial: return e.a * e.b;
    case Fam::NegBinomial: return e.a * e.b / (1.0 - e.b);
    case Fam::Ztp: return e.a / -std::expm1(-e.a);
    }
    return 0.0;
}

inline double native_variance(const Native& e) {
    switch (e.fam) {
    case Fam::Normal: return e.b;
    case Fam::Gamma: return e.a / (e.b * e.b);
    case Fam::InvGauss: return e.a * e.a * e.a / e.b;
    case Fam::Poisson: return e.a;
    case Fam::Binomial: return e.a * e.b * (1.0 - e.b);
    case Fam::NegBinomial: return e.a * e.b / ((1.0 - e.b) * (1.0 - e.b));
    case Fam::Ztp: {
        const double m = e.a / -std::expm1(-e.a);
        return m * (1.0 + e.a - m);
    }
    }
    return 0.0;
}

} // namespace oracle
