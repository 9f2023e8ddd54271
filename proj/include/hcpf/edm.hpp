#pragma once

// Additive exponential dispersion models:
//   p(x; theta, kappa) = exp(x * theta - kappa * Psi(theta)) * h(x, kappa)
// Sums of independent members sharing theta stay in the family with the
// dispersions added, which is what the compound Poisson layer relies on.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "hcpf/error.hpp"
#include "hcpf/special.hpp"

namespace hcpf {

enum class EdmFamily : std::uint8_t {
    Normal,
    Gamma,
    InverseGaussian,
    Poisson,
    Binomial,
    NegativeBinomial,
    ZeroTruncatedPoisson,
};

inline constexpr std::array<EdmFamily, 7> all_families = {
    EdmFamily::Normal,           EdmFamily::Gamma,
    EdmFamily::InverseGaussian,  EdmFamily::Poisson,
    EdmFamily::Binomial,         EdmFamily::NegativeBinomial,
    EdmFamily::ZeroTruncatedPoisson,
};

inline std::string_view family_name(EdmFamily f) {
    switch (f) {
    case EdmFamily::Normal: return "normal";
    case EdmFamily::Gamma: return "gamma";
    case EdmFamily::InverseGaussian: return "invgauss";
    case EdmFamily::Poisson: return "poisson";
    case EdmFamily::Binomial: return "binomial";
    case EdmFamily::NegativeBinomial: return "negbinomial";
    case EdmFamily::ZeroTruncatedPoisson: return "ztp";
    }
    throw InvalidParameter("unknown EDM family tag");
}

inline EdmFamily parse_family(std::string_view name) {
    for (EdmFamily f : all_families)
        if (family_name(f) == name)
            return f;
    throw InvalidParameter("unknown family '" + std::string(name) + "'");
}

inline bool is_discrete(EdmFamily f) {
    return f == EdmFamily::Poisson || f == EdmFamily::Binomial ||
           f == EdmFamily::NegativeBinomial ||
           f == EdmFamily::ZeroTruncatedPoisson;
}

/// Families whose kappa counts summed terms and must stay integral.
inline bool requires_integer_kappa(EdmFamily f) {
    return f == EdmFamily::Binomial || f == EdmFamily::NegativeBinomial ||
           f == EdmFamily::ZeroTruncatedPoisson;
}

inline bool theta_in_domain(EdmFamily f, double theta) {
    if (!std::isfinite(theta))
        return false;
    switch (f) {
    case EdmFamily::Gamma:
    case EdmFamily::InverseGaussian:
    case EdmFamily::NegativeBinomial:
        return theta < 0.0;
    default:
        return true;
    }
}

/// Element distribution of a compound Poisson variable.
///
/// `point_mass` marks the degenerate distribution at kappa (delta_1 when
/// kappa = 1). It is not one of the seven families and exists only so that
/// HPF can be expressed as a special case; `family` and `theta` are ignored
/// when it is set.
struct ElementSpec {
    EdmFamily family = EdmFamily::Poisson;
    double theta = 0.0;
    double kappa = 1.0;
    bool point_mass = false;

    static ElementSpec degenerate_at_one() {
        return ElementSpec{EdmFamily::Poisson, 0.0, 1.0, true};
    }

    ElementSpec with_kappa(double k) const {
        ElementSpec s = *this;
        s.kappa = k;
        return s;
    }

    void validate() const {
        if (!(kappa > 0.0) || !std::isfinite(kappa))
            throw InvalidParameter("dispersion kappa must be positive, got " +
                                   std::to_string(kappa));
        if (point_mass)
            return;
        if (!theta_in_domain(family, theta))
            throw InvalidParameter("theta=" + std::to_string(theta) +
                                   " outside the domain of " +
                                   std::string(family_name(family)));
        if (requires_integer_kappa(family) && !special::is_integer(kappa))
            throw InvalidParameter(std::string(family_name(family)) +
                                   " requires an integer kappa, got " +
                                   std::to_string(kappa));
    }

    friend bool operator==(const ElementSpec&, const ElementSpec&) = default;
};

/// True when a single element draw can be exactly zero.
inline bool zero_in_support(const ElementSpec& s) {
    if (s.point_mass)
        return false;
    return s.family == EdmFamily::Poisson || s.family == EdmFamily::Binomial ||
           s.family == EdmFamily::NegativeBinomial;
}

inline bool is_discrete(const ElementSpec& s) {
    return s.point_mass || is_discrete(s.family);
}

// Native parametrizations.
namespace native {
struct Normal {
    double mean;
    double variance;
};
struct Gamma {
    double shape;
    double rate;
};
struct InverseGaussian {
    double mean;
    double shape;
};
struct Poisson {
    double rate;
};
struct Binomial {
    double trials;
    double prob;
};
struct NegativeBinomial {
    double count;
    double prob; // success probability p, theta = log p
};
struct ZeroTruncatedPoisson {
    double rate;
};
} // namespace native

using NativeParams =
    std::variant<native::Normal, native::Gamma, native::InverseGaussian,
                 native::Poisson, native::Binomial, native::NegativeBinomial,
                 native::ZeroTruncatedPoisson>;

inline EdmFamily family_of(const NativeParams& p) {
    return static_cast<EdmFamily>(p.index());
}

/// Builds native parameters from an ordered list (as typed on a command line).
inline NativeParams make_native(EdmFamily f, std::span<const double> v) {
    const std::size_t need =
        (f == EdmFamily::Poisson || f == EdmFamily::ZeroTruncatedPoisson) ? 1
                                                                          : 2;
    if (v.size() != need)
        throw InvalidParameter(std::string(family_name(f)) + " takes " +
                               std::to_string(need) + " native parameter(s)");
    switch (f) {
    case EdmFamily::Normal: return native::Normal{v[0], v[1]};
    case EdmFamily::Gamma: return native::Gamma{v[0], v[1]};
    case EdmFamily::InverseGaussian: return native::InverseGaussian{v[0], v[1]};
    case EdmFamily::Poisson: return native::Poisson{v[0]};
    case EdmFamily::Binomial: return native::Binomial{v[0], v[1]};
    case EdmFamily::NegativeBinomial: return native::NegativeBinomial{v[0], v[1]};
    case EdmFamily::ZeroTruncatedPoisson: return native::ZeroTruncatedPoisson{v[0]};
    }
    throw InvalidParameter("unknown EDM family tag");
}

inline std::vector<double> native_values(const NativeParams& p) {
    return std::visit(
        [](const auto& n) -> std::vector<double> {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, native::Normal>)
                return {n.mean, n.variance};
            else if constexpr (std::is_same_v<T, native::Gamma>)
                return {n.shape, n.rate};
            else if constexpr (std::is_same_v<T, native::InverseGaussian>)
                return {n.mean, n.shape};
            else if constexpr (std::is_same_v<T, native::Poisson>)
                return {n.rate};
            else if constexpr (std::is_same_v<T, native::Binomial>)
                return {n.trials, n.prob};
            else if constexpr (std::is_same_v<T, native::NegativeBinomial>)
                return {n.count, n.prob};
            else
                return {n.rate};
        },
        p);
}

// ---------------------------------------------------------------------------
// Log-partition and its derivatives

inline void require_theta(EdmFamily f, double theta) {
    if (!theta_in_domain(f, theta))
        throw InvalidParameter("theta=" + std::to_string(theta) +
                               " outside the domain of " +
                               std::string(family_name(f)));
}

inline double log_partition(EdmFamily f, double theta) {
    require_theta(f, theta);
    switch (f) {
    case EdmFamily::Normal: return 0.5 * theta * theta;
    case EdmFamily::Gamma: return -std::log(-theta);
    case EdmFamily::InverseGaussian: return -std::sqrt(-2.0 * theta);
    case EdmFamily::Poisson: return std::exp(theta);
    case EdmFamily::Binomial:
        return theta > 0.0 ? theta + std::log1p(std::exp(-theta))
                           : std::log1p(std::exp(theta));
    case EdmFamily::NegativeBinomial: return -special::log1mexp(-theta);
    case EdmFamily::ZeroTruncatedPoisson:
        return special::log_expm1(std::exp(theta));
    }
    throw InvalidParameter("unknown EDM family tag");
}

/// Psi'(theta): the mean of the unit-dispersion member.
inline double log_partition_d1(EdmFamily f, double theta) {
    require_theta(f, theta);
    switch (f) {
    case EdmFamily::Normal: return theta;
    case EdmFamily::Gamma: return -1.0 / theta;
    case EdmFamily::InverseGaussian: return 1.0 / std::sqrt(-2.0 * theta);
    case EdmFamily::Poisson: return std::exp(theta);
    case EdmFamily::Binomial: return 1.0 / (1.0 + std::exp(-theta));
    case EdmFamily::NegativeBinomial: return 1.0 / std::expm1(-theta);
    case EdmFamily::ZeroTruncatedPoisson: {
        const double lam = std::exp(theta);
        return lam / -std::expm1(-lam);
    }
    }
    throw InvalidParameter("unknown EDM family tag");
}

/// Psi''(theta): the variance of the unit-dispersion member.
inline double log_partition_d2(EdmFamily f, double theta) {
    require_theta(f, theta);
    switch (f) {
    case EdmFamily::Normal: return 1.0;
    case EdmFamily::Gamma: return 1.0 / (theta * theta);
    case EdmFamily::InverseGaussian: return std::pow(-2.0 * theta, -1.5);
    case EdmFamily::Poisson: return std::exp(theta);
    case EdmFamily::Binomial: {
        const double p = 1.0 / (1.0 + std::exp(-theta));
        return p * (1.0 - p);
    }
    case EdmFamily::NegativeBinomial: {
        const double q = -std::expm1(theta);
        return std::exp(theta) / (q * q);
    }
    case EdmFamily::ZeroTruncatedPoisson: {
        const double lam = std::exp(theta);
        // lam e^lam (e^lam - 1 - lam) / (e^lam - 1)^2, written in e^-lam
        const double a = -std::expm1(-lam);
        const double b = a - lam * std::exp(-lam);
        return lam * b / (a * a);
    }
    }
    throw InvalidParameter("unknown EDM family tag");
}

// ---------------------------------------------------------------------------
// Base measure

namespace detail {

/// log h(x, k) for the k-fold zero-truncated Poisson, for every k in
/// [0, kmax], by the positive recurrence h(x,k) = k/x (h(x-1,k) + h(x-1,k-1)).
inline std::vector<double> ztp_log_base_measure_row(long x, long kmax) {
    using special::neg_inf;
    std::vector<double> row(static_cast<std::size_t>(kmax) + 1, neg_inf);
    row[0] = 0.0; // h(0, 0) = 1
    std::vector<double> next(row.size());
    for (long xx = 1; xx <= x; ++xx) {
        next[0] = neg_inf;
        const double lx = std::log(static_cast<double>(xx));
        for (long k = 1; k <= kmax; ++k) {
            const double s = special::log_add_exp(row[k], row[k - 1]);
            next[k] = s == neg_inf ? neg_inf
                                   : std::log(static_cast<double>(k)) - lx + s;
        }
        row.swap(next);
    }
    return row;
}

/// Alternating-sum evaluation of log h(x, k) for the k-fold ZTP. Returns
/// NaN when cancellation would cost more than about three digits.
inline double ztp_log_base_measure_alternating(long x, long k) {
    const double dx = static_cast<double>(x);
    std::vector<double> mags;
    mags.reserve(static_cast<std::size_t>(k));
    double top = special::neg_inf;
    for (long j = 0; j < k; ++j) {
        const double m = dx * std::log(static_cast<double>(k - j)) +
                         special::log_factorial(static_cast<double>(k)) -
                         special::log_factorial(static_cast<double>(j)) -
                         special::log_factorial(static_cast<double>(k - j));
        mags.push_back(m);
        top = std::max(top, m);
    }
    double signed_sum = 0.0;
    double abs_sum = 0.0;
    for (long j = 0; j < k; ++j) {
        const double t = std::exp(mags[j] - top);
        signed_sum += (j % 2 == 0) ? t : -t;
        abs_sum += t;
    }
    if (!(signed_sum > 0.0) || abs_sum / signed_sum > 1e3)
        return std::numeric_limits<double>::quiet_NaN();
    return top + std::log(signed_sum) - special::log_factorial(dx);
}

inline double ztp_log_base_measure(long x, long k) {
    if (x < k)
        return special::neg_inf;
    if (k <= 30) {
        const double v = ztp_log_base_measure_alternating(x, k);
        if (!std::isnan(v))
            return v;
    }
    return ztp_log_base_measure_row(x, k).back();
}

} // namespace detail

/// log h(x, kappa). Points outside the support give -inf.
inline double log_base_measure(EdmFamily f, double x, double kappa) {
    using special::log_gamma;
    using special::neg_inf;
    if (!(kappa > 0.0) || !std::isfinite(kappa))
        throw InvalidParameter("dispersion kappa must be positive");
    if (!std::isfinite(x))
        return neg_inf;
    switch (f) {
    case EdmFamily::Normal:
        return -x * x / (2.0 * kappa) - 0.5 * (special::log_two_pi + std::log(kappa));
    case EdmFamily::Gamma:
        if (x <= 0.0)
            return neg_inf;
        return (kappa - 1.0) * std::log(x) - log_gamma(kappa);
    case EdmFamily::InverseGaussian:
        if (x <= 0.0)
            return neg_inf;
        return std::log(kappa) - 0.5 * (special::log_two_pi + 3.0 * std::log(x)) -
               kappa * kappa / (2.0 * x);
    case EdmFamily::Poisson:
        if (x < 0.0 || !special::is_integer(x))
            return neg_inf;
        x = std::round(x);
        return (x == 0.0 ? 0.0 : x * std::log(kappa)) - special::log_factorial(x);
    case EdmFamily::Binomial:
        if (x < 0.0 || !special::is_integer(x) || x > kappa + 1e-9)
            return neg_inf;
        x = std::round(x);
        return log_gamma(kappa + 1.0) - special::log_factorial(x) -
               log_gamma(kappa - x + 1.0);
    case EdmFamily::NegativeBinomial:
        if (x < 0.0 || !special::is_integer(x))
            return neg_inf;
        x = std::round(x);
        return log_gamma(x + kappa) - special::log_factorial(x) - log_gamma(kappa);
    case EdmFamily::ZeroTruncatedPoisson:
        if (!special::is_integer(x) || !special::is_integer(kappa))
            return neg_inf;
        return detail::ztp_log_base_measure(std::lround(x), std::lround(kappa));
    }
    throw InvalidParameter("unknown EDM family tag");
}

inline double log_density(const ElementSpec& s, double x) {
    s.validate();
    if (s.point_mass)
        return x == s.kappa ? 0.0 : special::neg_inf;
    const double lh = log_base_measure(s.family, x, s.kappa);
    if (lh == special::neg_inf)
        return lh;
    return x * s.theta - s.kappa * log_partition(s.family, s.theta) + lh;
}

// ---------------------------------------------------------------------------
// Parameter conversion

inline ElementSpec to_edm(const NativeParams& p) {
    auto bad = [](const char* what) { throw InvalidParameter(what); };
    ElementSpec s{family_of(p), 0.0, 1.0, false};
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, native::Normal>) {
                if (!(n.variance > 0.0) || !std::isfinite(n.mean))
                    bad("normal: variance must be positive");
                s.theta = n.mean / n.variance;
                s.kappa = n.variance;
            } else if constexpr (std::is_same_v<T, native::Gamma>) {
                if (!(n.shape > 0.0) || !(n.rate > 0.0))
                    bad("gamma: shape and rate must be positive");
                s.theta = -n.rate;
                s.kappa = n.shape;
            } else if constexpr (std::is_same_v<T, native::InverseGaussian>) {
                if (!(n.mean > 0.0) || !(n.shape > 0.0))
                    bad("invgauss: mean and shape must be positive");
                s.theta = -n.shape / (2.0 * n.mean * n.mean);
                s.kappa = std::sqrt(n.shape);
            } else if constexpr (std::is_same_v<T, native::Poisson>) {
                if (!(n.rate > 0.0))
                    bad("poisson: rate must be positive");
                s.theta = std::log(n.rate);
            } else if constexpr (std::is_same_v<T, native::Binomial>) {
                if (!(n.trials >= 1.0) || !special::is_integer(n.trials))
                    bad("binomial: trials must be a positive integer");
                if (!(n.prob > 0.0 && n.prob < 1.0))
                    bad("binomial: p must lie in (0,1)");
                s.theta = std::log(n.prob) - std::log1p(-n.prob);
                s.kappa = n.trials;
            } else if constexpr (std::is_same_v<T, native::NegativeBinomial>) {
                if (!(n.count >= 1.0) || !special::is_integer(n.count))
                    bad("negbinomial: r must be a positive integer");
                if (!(n.prob > 0.0 && n.prob < 1.0))
                    bad("negbinomial: p must lie in (0,1)");
                s.theta = std::log(n.prob);
                s.kappa = n.count;
            } else {
                if (!(n.rate > 0.0))
                    bad("ztp: rate must be positive");
                s.theta = std::log(n.rate);
            }
        },
        p);
    s.validate();
    return s;
}

inline NativeParams from_edm(const ElementSpec& s) {
    s.validate();
    if (s.point_mass)
        throw InvalidParameter("the point mass has no native parametrization");
    const double th = s.theta;
    const double k = s.kappa;
    switch (s.family) {
    case EdmFamily::Normal: return native::Normal{th * k, k};
    case EdmFamily::Gamma: return native::Gamma{k, -th};
    case EdmFamily::InverseGaussian:
        return native::InverseGaussian{k / std::sqrt(-2.0 * th), k * k};
    case EdmFamily::Poisson: return native::Poisson{k * std::exp(th)};
    case EdmFamily::Binomial:
        return native::Binomial{k, 1.0 / (1.0 + std::exp(-th))};
    case EdmFamily::NegativeBinomial:
        return native::NegativeBinomial{k, std::exp(th)};
    case EdmFamily::ZeroTruncatedPoisson:
        if (k != 1.0)
            throw InvalidParameter("a k-fold ZTP sum with k > 1 has no native form");
        return native::ZeroTruncatedPoisson{std::exp(th)};
    }
    throw InvalidParameter("unknown EDM family tag");
}

// ---------------------------------------------------------------------------
// Moments

inline double mean(const ElementSpec& s) {
    s.validate();
    if (s.point_mass)
        return s.kappa;
    return s.kappa * log_partition_d1(s.family, s.theta);
}

inline double variance(const ElementSpec& s) {
    s.validate();
    if (s.point_mass)
        return 0.0;
    return s.kappa * log_partition_d2(s.family, s.theta);
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

template <class Rng> double sample_inverse_gaussian(double mu, double lambda, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double nu = normal(rng);
    const double y = nu * nu;
    const double x = mu + mu * mu * y / (2.0 * lambda) -
                     mu / (2.0 * lambda) *
                         std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
    return unif(rng) <= mu / (mu + x) ? x : mu * mu / x;
}

/// One ZTP(lambda) draw: the first arrival of a unit Poisson process
/// conditioned to land in [0, lambda], plus the arrivals after it.
template <class Rng> long sample_ztp_single(double lambda, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double first = -std::log1p(unif(rng) * std::expm1(-lambda));
    const double rest = std::max(0.0, lambda - first);
    if (rest <= 0.0)
        return 1;
    std::poisson_distribution<long> pois(rest);
    return 1 + pois(rng);
}

} // namespace detail

/// One draw from the element distribution with dispersion `s.kappa`.
template <class Rng> double sample(const ElementSpec& s, Rng& rng) {
    s.validate();
    if (s.point_mass)
        return s.kappa;
    const double th = s.theta;
    const double k = s.kappa;
    switch (s.family) {
    case EdmFamily::Normal: {
        std::normal_distribution<double> d(k * th, std::sqrt(k));
        return d(rng);
    }
    case EdmFamily::Gamma: {
        std::gamma_distribution<double> d(k, -1.0 / th);
        return d(rng);
    }
    case EdmFamily::InverseGaussian:
        return detail::sample_inverse_gaussian(k / std::sqrt(-2.0 * th), k * k, rng);
    case EdmFamily::Poisson: {
        std::poisson_distribution<long long> d(k * std::exp(th));
        return static_cast<double>(d(rng));
    }
    case EdmFamily::Binomial: {
        std::binomial_distribution<long long> d(std::llround(k),
                                                1.0 / (1.0 + std::exp(-th)));
        return static_cast<double>(d(rng));
    }
    case EdmFamily::NegativeBinomial: {
        // std counts failures before k successes with success prob 1 - p.
        std::negative_binomial_distribution<long long> d(std::llround(k),
                                                         -std::expm1(th));
        return static_cast<double>(d(rng));
    }
    case EdmFamily::ZeroTruncatedPoisson: {
        const double lam = std::exp(th);
        long total = 0;
        for (long j = 0, m = std::lround(k); j < m; ++j)
            total += detail::sample_ztp_single(lam, rng);
        return static_cast<double>(total);
    }
    }
    throw InvalidParameter("unknown EDM family tag");
}

// ---------------------------------------------------------------------------
// Maximum-likelihood fitting

namespace detail {

struct SampleSummary {
    double n = 0.0;
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
};

inline SampleSummary summarize(std::span<const double> xs) {
    SampleSummary s;
    s.n = static_cast<double>(xs.size());
    s.min = s.max = xs.front();
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.mean = sum / s.n;
    return s;
}

inline std::map<long, double> count_histogram(std::span<const double> xs) {
    std::map<long, double> h;
    for (double x : xs)
        h[std::lround(x)] += 1.0;
    return h;
}

} // namespace detail

/// Maximum-likelihood native parameters from i.i.d. samples.
inline NativeParams mle_fit(EdmFamily f, std::span<const double> xs) {
    const std::string name(family_name(f));
    if (xs.size() < 2)
        throw FitError(name + " fit needs at least two samples, got " +
                       std::to_string(xs.size()));
    for (double x : xs) {
        if (!std::isfinite(x))
            throw FitError(name + " fit: non-finite sample");
        if (is_discrete(f) && !special::is_integer(x))
            throw FitError(name + " fit: sample " + std::to_string(x) +
                           " is not an integer");
    }
    const auto sum = detail::summarize(xs);

    switch (f) {
    case EdmFamily::Normal: {
        double ss = 0.0;
        for (double x : xs)
            ss += (x - sum.mean) * (x - sum.mean);
        if (!(ss > 0.0))
            throw FitError("normal fit: all samples are equal");
        return native::Normal{sum.mean, ss / sum.n};
    }
    case EdmFamily::Gamma: {
        if (sum.min <= 0.0)
            throw FitError("gamma fit: samples must be positive");
        double mean_log = 0.0;
        for (double x : xs)
            mean_log += std::log(x);
        mean_log /= sum.n;
        const double stat = std::log(sum.mean) - mean_log;
        if (!(stat > 1e-14))
            throw FitError("gamma fit: samples have no spread");
        // Newton on log a - digamma(a) = stat from the usual closed-form start.
        double a = (3.0 - stat + std::sqrt((stat - 3.0) * (stat - 3.0) + 24.0 * stat)) /
                   (12.0 * stat);
        for (int it = 0; it < 100; ++it) {
            const double g = std::log(a) - special::digamma(a) - stat;
            const double dg = 1.0 / a - special::trigamma(a);
            double next = a - g / dg;
            if (!(next > 0.0))
                next = 0.5 * a;
            const bool done = std::abs(next - a) <= 1e-13 * a;
            a = next;
            if (done)
                break;
        }
        return native::Gamma{a, a / sum.mean};
    }
    case EdmFamily::InverseGaussian: {
        if (sum.min <= 0.0)
            throw FitError("invgauss fit: samples must be positive");
        double acc = 0.0;
        for (double x : xs)
            acc += 1.0 / x - 1.0 / sum.mean;
        if (!(acc > 0.0))
            throw FitError("invgauss fit: samples have no spread");
        return native::InverseGaussian{sum.mean, sum.n / acc};
    }
    case EdmFamily::Poisson:
        if (sum.min < 0.0)
            throw FitError("poisson fit: negative sample");
        if (!(sum.mean > 0.0))
            throw FitError("poisson fit: all samples are zero");
        return native::Poisson{sum.mean};
    case EdmFamily::Binomial: {
        if (sum.min < 0.0)
            throw FitError("binomial fit: negative sample");
        if (!(sum.mean > 0.0))
            throw FitError("binomial fit: all samples are zero");
        const auto hist = detail::count_histogram(xs);
        const long lo = std::max(1L, std::lround(sum.max));
        const long hi = std::max(lo, 4 * std::lround(sum.max));
        double best_ll = special::neg_inf;
        long best_r = 0;
        for (long r = lo; r <= hi; ++r) {
            const double p = sum.mean / static_cast<double>(r);
            if (!(p < 1.0))
                continue;
            double ll = 0.0;
            const double dr = static_cast<double>(r);
            for (auto [y, c] : hist) {
                const double dy = static_cast<double>(y);
                ll += c * (special::log_gamma(dr + 1.0) - special::log_factorial(dy) -
                           special::log_gamma(dr - dy + 1.0) + dy * std::log(p) +
                           (dr - dy) * std::log1p(-p));
            }
            if (ll > best_ll) {
                best_ll = ll;
                best_r = r;
            }
        }
        if (best_r == 0)
            throw FitError("binomial fit: no admissible trial count");
        return native::Binomial{static_cast<double>(best_r),
                                sum.mean / static_cast<double>(best_r)};
    }
    case EdmFamily::NegativeBinomial: {
        if (sum.min < 0.0)
            throw FitError("negbinomial fit: negative sample");
        if (!(sum.mean > 0.0))
            throw FitError("negbinomial fit: all samples are zero");
        const auto hist = detail::count_histogram(xs);
        const long hi = std::max(1L, 4 * std::lround(sum.max));
        double best_ll = special::neg_inf;
        long best_r = 1;
        for (long r = 1; r <= hi; ++r) {
            const double dr = static_cast<double>(r);
            const double p = sum.mean / (dr + sum.mean);
            double ll = 0.0;
            for (auto [y, c] : hist) {
                const double dy = static_cast<double>(y);
                ll += c * (special::log_gamma(dy + dr) - special::log_factorial(dy) -
                           special::log_gamma(dr) + dy * std::log(p) +
                           dr * std::log1p(-p));
            }
            if (ll > best_ll) {
                best_ll = ll;
                best_r = r;
            }
        }
        const double dr = static_cast<double>(best_r);
        return native::NegativeBinomial{dr, sum.mean / (dr + sum.mean)};
    }
    case EdmFamily::ZeroTruncatedPoisson: {
        if (sum.min < 1.0)
            throw FitError("ztp fit: samples must be >= 1");
        if (!(sum.mean > 1.0))
            throw FitError("ztp fit: all samples equal one");
        // Solve lambda / (1 - e^-lambda) = mean.
        double lam = sum.mean;
        for (int it = 0; it < 200; ++it) {
            const double q = -std::expm1(-lam);
            const double g = lam / q - sum.mean;
            const double dg = (q - lam * std::exp(-lam)) / (q * q);
            double next = lam - g / dg;
            if (!(next > 0.0))
                next = 0.5 * lam;
            const bool done = std::abs(next - lam) <= 1e-14 * lam;
            lam = next;
            if (done)
                break;
        }
        return native::ZeroTruncatedPoisson{lam};
    }
    }
    throw InvalidParameter("unknown EDM family tag");
}

// ---------------------------------------------------------------------------
// Variational weights of the latent count

/// Unnormalized log q(n) for n >= 1, one closed form per family. As a
/// function of n this is log p(y; theta, n*kappa) + n log(rate) - log n! up
/// to an additive constant.
inline double log_poisson_weight(const ElementSpec& s, double y, double log_rate,
                                 long n) {
    using special::log_factorial;
    using special::log_gamma;
    using special::neg_inf;
    if (n < 1)
        throw InvalidParameter("count weights are defined for n >= 1 only");
    s.validate();
    const double dn = static_cast<double>(n);
    const double poisson_part = dn * log_rate - log_factorial(dn);

    if (s.point_mass)
        return y == dn * s.kappa ? poisson_part : neg_inf;

    switch (s.family) {
    case EdmFamily::Normal: {
        const double var = s.kappa;
        const double mu = s.theta * s.kappa;
        return -(dn * dn * mu * mu + y * y) / (2.0 * dn * var) + poisson_part -
               0.5 * std::log(dn);
    }
    case EdmFamily::Gamma: {
        if (y <= 0.0)
            return neg_inf;
        const double a = s.kappa;
        const double b = -s.theta;
        return dn * (a * std::log(b) + a * std::log(y) + log_rate) -
               log_gamma(dn * a) - log_factorial(dn);
    }
    case EdmFamily::InverseGaussian: {
        if (y <= 0.0)
            return neg_inf;
        const auto ig = std::get<native::InverseGaussian>(from_edm(s));
        return dn * ig.shape / ig.mean - dn * dn * ig.shape / (2.0 * y) +
               dn * log_rate - log_factorial(dn - 1.0);
    }
    case EdmFamily::Poisson: {
        if (y < 0.0 || !special::is_integer(y))
            return neg_inf;
        const double lam = std::exp(s.theta);
        // kappa-fold Poisson has rate n*kappa*lam.
        const double nk = dn * s.kappa;
        return -nk * lam + std::round(y) * std::log(nk) + poisson_part;
    }
    case EdmFamily::Binomial: {
        const double nr = dn * s.kappa;
        if (y < 0.0 || !special::is_integer(y) || y > nr + 1e-9)
            return neg_inf;
        const double yy = std::round(y);
        const double log1mp = -log_partition(EdmFamily::Binomial, s.theta);
        return log_gamma(nr + 1.0) + nr * log1mp + dn * log_rate - log_factorial(dn) -
               log_gamma(nr - yy + 1.0);
    }
    case EdmFamily::NegativeBinomial: {
        if (y < 0.0 || !special::is_integer(y))
            return neg_inf;
        const double nr = dn * s.kappa;
        const double yy = std::round(y);
        const double log1mp = special::log1mexp(-s.theta);
        return log_gamma(yy + nr) + nr * log1mp + dn * log_rate - log_factorial(dn) -
               log_gamma(nr);
    }
    case EdmFamily::ZeroTruncatedPoisson: {
        if (!special::is_integer(y))
            return neg_inf;
        const long yy = std::lround(y);
        const long m = n * std::lround(s.kappa);
        if (yy < m)
            return neg_inf;
        const double lam = std::exp(s.theta);
        // sum_j (-1)^j (m-j)^y / (j! (m-j)!) = h(y,m) y! / m!, and the m!
        // cancels against the binomial normalization of the m-fold sum.
        const double alt = detail::ztp_log_base_measure(yy, m) +
                           log_factorial(static_cast<double>(yy));
        return dn * log_rate - dn * s.kappa * special::log_expm1(lam) + alt -
               log_factorial(dn);
    }
    }
    throw InvalidParameter("unknown EDM family tag");
}

} // namespace hcpf
