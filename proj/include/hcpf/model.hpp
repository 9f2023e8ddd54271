#pragma once

// The hierarchical generative model:
//   r_u ~ Ga(rho, rho/varrho),    s_uk ~ Ga(eta, r_u)
//   w_i ~ Ga(omega, omega/varpi), v_ik ~ Ga(zeta, w_i)
//   n_ui ~ Po(sum_k s_uk v_ik),   y_ui ~ p(theta, n_ui * kappa)
// and the mean-field Gamma variational state used by the SVI fit.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hcpf/binary_io.hpp"
#include "hcpf/compound.hpp"
#include "hcpf/data.hpp"
#include "hcpf/edm.hpp"
#include "hcpf/error.hpp"

namespace hcpf {

enum class TrainingSource : std::uint8_t { FullMatrix, NonmissingOnly };

struct Hyperparams {
    double eta = 0.0;    // user factor shape
    double zeta = 0.0;   // item factor shape
    double rho = 0.01;   // user activity shape
    double varrho = 0.1; // user activity mean
    double omega = 0.01; // item popularity shape
    double varpi = 0.1;  // item popularity mean
    std::size_t K = 160;
    ElementSpec element;
    double tau = 10000.0; // learning-rate delay
    double xi = 0.7;      // learning-rate power

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw InvalidParameter(std::string(name) + " must be positive and finite");
        };
        positive(eta, "eta");
        positive(zeta, "zeta");
        positive(rho, "rho");
        positive(varrho, "varrho");
        positive(omega, "omega");
        positive(varpi, "varpi");
        positive(tau, "tau");
        if (K < 1)
            throw InvalidParameter("K must be at least 1");
        if (!(xi > 0.5 && xi < 1.0))
            throw InvalidParameter("xi must lie in (0.5, 1.0)");
        element.validate();
    }

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// Expected latent count per cell implied by a missing-cell fraction:
/// the inversion of P(X+ = 0) = e^-rate.
inline double expected_count_from_sparsity(double sparsity) {
    if (!(sparsity > 0.0 && sparsity < 1.0))
        throw InvalidParameter("sparsity must lie in (0,1), got " + std::to_string(sparsity));
    return -std::log(sparsity);
}

/// Missing fraction assumed when training on non-missing entries only.
inline constexpr double nonmissing_only_sparsity = 0.001;

/// Heavy-tailed defaults with equal factor contributions, chosen so that the
/// prior mean rate K (eta/varrho)(zeta/varpi) equals E[n_ui].
inline Hyperparams default_hyperparams(double sparsity, const ElementSpec& element_mle,
                                       std::size_t K = 160,
                                       TrainingSource source = TrainingSource::FullMatrix) {
    if (!(sparsity > 0.0 && sparsity < 1.0))
        throw InvalidParameter("sparsity must lie in (0,1), got " + std::to_string(sparsity));
    if (K < 1)
        throw InvalidParameter("K must be at least 1");
    element_mle.validate();
    const double s = source == TrainingSource::NonmissingOnly ? nonmissing_only_sparsity : sparsity;
    const double expected_n = expected_count_from_sparsity(s);

    Hyperparams h;
    h.varpi = h.varrho = 0.1;
    h.omega = h.rho = 0.01;
    h.K = K;
    h.eta = h.varrho * std::sqrt(expected_n / static_cast<double>(K));
    h.zeta = h.varpi * std::sqrt(expected_n / static_cast<double>(K));
    h.element = element_mle;
    // Counting families keep their integral kappa.
    if (source == TrainingSource::NonmissingOnly && !element_mle.point_mass &&
        !requires_integer_kappa(element_mle.family))
        h.element.kappa = element_mle.kappa / expected_n;
    h.tau = 10000.0;
    h.xi = 0.7;
    return h;
}

/// Sets both factor shapes to `shape` and rescales varrho and varpi so the
/// prior mean rate K (eta/varrho)(zeta/varpi) is unchanged. Very small
/// shapes make each factor's digamma term so steep that the initial jitter
/// decides which factors a row can ever use; moderate shapes let small
/// matrices separate their factors.
inline Hyperparams with_factor_shape(Hyperparams h, double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape))
        throw InvalidParameter("factor shape must be positive and finite");
    h.varrho *= shape / h.eta;
    h.varpi *= shape / h.zeta;
    h.eta = h.zeta = shape;
    return h;
}

/// Priors for generating synthetic data. The fitting defaults above put
/// almost all activity mass near zero, which makes simulated rates overflow;
/// here activities concentrate around their mean (shape `activity_shape`)
/// and sparse factors (shape `factor_shape`) give the matrix block
/// structure, with the prior mean rate equal to -log(sparsity).
inline Hyperparams simulation_hyperparams(double sparsity, const ElementSpec& element,
                                          std::size_t K, double factor_shape = 0.1,
                                          double activity_shape = 10.0) {
    if (!(activity_shape > 0.0))
        throw InvalidParameter("simulation prior shapes must be positive");
    Hyperparams h = with_factor_shape(default_hyperparams(sparsity, element, K), factor_shape);
    h.rho = h.omega = activity_shape;
    return h;
}

/// Largest per-cell rate simulate() accepts before giving up.
inline constexpr double max_simulated_rate = 1e12;

struct LatentState {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t K = 0;
    std::vector<double> user_activity;   // r_u
    std::vector<double> user_factors;    // s_uk, row-major [u][k]
    std::vector<double> item_popularity; // w_i
    std::vector<double> item_factors;    // v_ik, row-major [i][k]

    double rate(std::size_t u, std::size_t i) const {
        double r = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            r += user_factors[u * K + k] * item_factors[i * K + k];
        return r;
    }
};

namespace detail {

/// Gamma(shape, rate) draw that stays strictly positive for tiny shapes
/// (drawn in log space and floored at the smallest normal double).
template <class Rng> double sample_positive_gamma(double shape, double rate, Rng& rng) {
    double x;
    if (shape >= 1.0) {
        std::gamma_distribution<double> g(shape, 1.0 / rate);
        x = g(rng);
    } else {
        std::gamma_distribution<double> g(shape + 1.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        double u = unif(rng);
        while (u == 0.0)
            u = unif(rng);
        x = std::exp(std::log(g(rng)) + std::log(u) / shape - std::log(rate));
    }
    return std::max(x, std::numeric_limits<double>::min());
}

} // namespace detail

/// Draws the full hierarchy; cells with n_ui = 0 (or a zero response) are
/// left out of the dataset.
template <class Rng>
std::pair<LatentState, SparseDataset> simulate(const Hyperparams& h, std::size_t n_users,
                                               std::size_t n_items, Rng& rng) {
    h.validate();
    if (n_users == 0 || n_items == 0)
        throw InvalidParameter("simulate needs at least one user and one item");
    const std::size_t K = h.K;
    LatentState z{n_users, n_items, K, {}, {}, {}, {}};
    z.user_activity.resize(n_users);
    z.user_factors.resize(n_users * K);
    z.item_popularity.resize(n_items);
    z.item_factors.resize(n_items * K);
    for (std::size_t u = 0; u < n_users; ++u) {
        z.user_activity[u] = detail::sample_positive_gamma(h.rho, h.rho / h.varrho, rng);
        for (std::size_t k = 0; k < K; ++k)
            z.user_factors[u * K + k] = detail::sample_positive_gamma(h.eta, z.user_activity[u], rng);
    }
    for (std::size_t i = 0; i < n_items; ++i) {
        z.item_popularity[i] = detail::sample_positive_gamma(h.omega, h.omega / h.varpi, rng);
        for (std::size_t k = 0; k < K; ++k)
            z.item_factors[i * K + k] = detail::sample_positive_gamma(h.zeta, z.item_popularity[i], rng);
    }

    SparseDataset ds;
    ds.n_users = n_users;
    ds.n_items = n_items;
    for (std::size_t u = 0; u < n_users; ++u)
        ds.user_ids.push_back("u" + std::to_string(u));
    for (std::size_t i = 0; i < n_items; ++i)
        ds.item_ids.push_back("i" + std::to_string(i));
    for (std::size_t u = 0; u < n_users; ++u) {
        for (std::size_t i = 0; i < n_items; ++i) {
            const double rate = z.rate(u, i);
            if (!(rate <= max_simulated_rate))
                throw NumericalError("simulated rate " + std::to_string(rate) + " at cell (" +
                                     std::to_string(u) + ", " + std::to_string(i) +
                                     ") overflows; the priors are too heavy-tailed to sample from");
            std::poisson_distribution<long> count(rate);
            const long n = count(rng);
            if (n == 0)
                continue;
            const double y = sample(h.element.with_kappa(static_cast<double>(n) * h.element.kappa), rng);
            if (y != 0.0)
                ds.entries.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i), y});
        }
    }
    return {std::move(z), std::move(ds)};
}

/// Gamma variational parameters. Shapes a_r and a_w are fixed at
/// rho + K eta and omega + K zeta and shared by every row.
struct VariationalState {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t K = 0;
    double a_r = 0.0;
    double a_w = 0.0;
    std::vector<double> b_r; // [u]
    std::vector<double> a_s; // [u][k]
    std::vector<double> b_s; // [u][k]
    std::vector<double> t_u; // [u]
    std::vector<double> b_w; // [i]
    std::vector<double> a_v; // [i][k]
    std::vector<double> b_v; // [i][k]
    std::vector<double> t_i; // [i]

    void check_index(std::size_t u, std::size_t i) const {
        if (u >= n_users || i >= n_items)
            throw IndexError("cell (" + std::to_string(u) + ", " + std::to_string(i) +
                             ") outside a " + std::to_string(n_users) + "x" +
                             std::to_string(n_items) + " matrix");
    }

    /// True when every shape and rate is strictly positive and finite.
    bool all_positive() const {
        auto ok = [](const std::vector<double>& v) {
            for (double x : v)
                if (!(x > 0.0) || !std::isfinite(x))
                    return false;
            return true;
        };
        return a_r > 0.0 && a_w > 0.0 && ok(b_r) && ok(a_s) && ok(b_s) && ok(b_w) && ok(a_v) &&
               ok(b_v) && ok(t_u) && ok(t_i);
    }

    friend bool operator==(const VariationalState&, const VariationalState&) = default;
};

/// Initial variational state. With `jitter_seed` set, factor shapes are
/// multiplied by independent U[0.9, 1.1] draws so the K factors can separate.
inline VariationalState init_variational(const Hyperparams& h, std::size_t n_users,
                                         std::size_t n_items,
                                         std::optional<std::uint64_t> jitter_seed = std::nullopt) {
    h.validate();
    const std::size_t K = h.K;
    VariationalState s;
    s.n_users = n_users;
    s.n_items = n_items;
    s.K = K;
    s.a_r = h.rho + static_cast<double>(K) * h.eta;
    s.a_w = h.omega + static_cast<double>(K) * h.zeta;
    s.b_r.assign(n_users, h.rho / h.varrho);
    s.a_s.assign(n_users * K, h.eta);
    s.b_s.assign(n_users * K, h.varrho);
    s.t_u.assign(n_users, h.tau);
    s.b_w.assign(n_items, h.omega / h.varpi);
    s.a_v.assign(n_items * K, h.zeta);
    s.b_v.assign(n_items * K, h.varpi);
    s.t_i.assign(n_items, h.tau);
    if (jitter_seed) {
        std::mt19937_64 rng(*jitter_seed);
        std::uniform_real_distribution<double> jitter(0.9, 1.1);
        for (double& a : s.a_s)
            a *= jitter(rng);
        for (double& a : s.a_v)
            a *= jitter(rng);
    }
    return s;
}

/// Variational expectation of sum_k s_uk v_ik.
inline double expected_rate(const VariationalState& s, std::size_t u, std::size_t i) {
    s.check_index(u, i);
    const std::size_t K = s.K;
    const double* as = &s.a_s[u * K];
    const double* bs = &s.b_s[u * K];
    const double* av = &s.a_v[i * K];
    const double* bv = &s.b_v[i * K];
    double r = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        r += (as[k] * av[k]) / (bs[k] * bv[k]);
    return r;
}

// ---------------------------------------------------------------------------
// Persistence

/// A fitted model: hyperparameters, the truncation used for all count
/// sums, and the variational state.
struct Model {
    Hyperparams hyper;
    long truncation = 1;
    VariationalState state;

    friend bool operator==(const Model&, const Model&) = default;
};

inline constexpr io::Magic model_magic = {'H', 'C', 'P', 'F', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t model_version = 1;

inline void write_model(std::ostream& os, const Model& m) {
    io::BinaryWriter w(os);
    const auto& h = m.hyper;
    const auto& s = m.state;
    w.put_magic(model_magic);
    w.put<std::uint32_t>(model_version);
    w.put<std::uint64_t>(s.n_users);
    w.put<std::uint64_t>(s.n_items);
    w.put<std::uint64_t>(s.K);
    for (double v : {h.eta, h.zeta, h.rho, h.varrho, h.omega, h.varpi, h.tau, h.xi})
        w.put(v);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(h.element.family));
    w.put<std::uint8_t>(h.element.point_mass ? 1 : 0);
    w.put(h.element.theta);
    w.put(h.element.kappa);
    w.put<std::int64_t>(m.truncation);
    w.put(s.a_r);
    w.put(s.a_w);
    for (const auto* v : {&s.b_r, &s.a_s, &s.b_s, &s.t_u, &s.b_w, &s.a_v, &s.b_v, &s.t_i})
        w.put_vector(*v);
}

inline Model read_model(std::istream& is, const std::string& source) {
    io::BinaryReader r(is, source);
    r.expect_magic(model_magic);
    if (const auto v = r.get<std::uint32_t>(); v != model_version)
        throw FormatError(source + ": unsupported model version " + std::to_string(v));
    Model m;
    auto& h = m.hyper;
    auto& s = m.state;
    s.n_users = r.get<std::uint64_t>();
    s.n_items = r.get<std::uint64_t>();
    s.K = r.get<std::uint64_t>();
    h.K = s.K;
    for (double* v : {&h.eta, &h.zeta, &h.rho, &h.varrho, &h.omega, &h.varpi, &h.tau, &h.xi})
        *v = r.get<double>();
    const auto fam = r.get<std::uint8_t>();
    if (fam >= all_families.size())
        throw FormatError(source + ": bad family tag");
    h.element.family = static_cast<EdmFamily>(fam);
    h.element.point_mass = r.get<std::uint8_t>() != 0;
    h.element.theta = r.get<double>();
    h.element.kappa = r.get<double>();
    m.truncation = r.get<std::int64_t>();
    s.a_r = r.get<double>();
    s.a_w = r.get<double>();
    for (auto* v : {&s.b_r, &s.a_s, &s.b_s, &s.t_u, &s.b_w, &s.a_v, &s.b_v, &s.t_i})
        *v = r.get_vector<double>();
    const auto nu = s.n_users, ni = s.n_items, K = s.K;
    if (s.b_r.size() != nu || s.t_u.size() != nu || s.a_s.size() != nu * K ||
        s.b_s.size() != nu * K || s.b_w.size() != ni || s.t_i.size() != ni ||
        s.a_v.size() != ni * K || s.b_v.size() != ni * K)
        throw FormatError(source + ": array sizes do not match the header");
    try {
        h.validate();
    } catch (const InvalidParameter& e) {
        throw FormatError(source + ": " + e.what());
    }
    return m;
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
    io::write_atomically(path, [&](std::ostream& os) { write_model(os, m); });
}

inline Model load_model(const std::filesystem::path& path) {
    auto in = io::open_in(path);
    return read_model(in, path.string());
}

} // namespace hcpf
