#pragma once

// Stochastic variational inference for the compound Poisson factorization.
// Each iteration samples one cell, computes its local variational factors
// q(n_ui) and phi_ui, then moves the user and item rows towards their
// natural-gradient targets with step t^-xi.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hcpf/compound.hpp"
#include "hcpf/data.hpp"
#include "hcpf/edm.hpp"
#include "hcpf/error.hpp"
#include "hcpf/eval.hpp"
#include "hcpf/model.hpp"
#include "hcpf/parallel.hpp"
#include "hcpf/special.hpp"

namespace hcpf {

enum class InferenceMode : std::uint8_t {
    Hcpf, // q(n) from the element's count weights
    Hpf,  // q(n) = delta at the observed response
};

/// Local variational factors of one sampled cell.
struct LocalStep {
    double rate = 0.0;          // expected rate at the cell
    std::vector<double> q_n;    // q(n_ui = n), n = 0..N_tr
    double expected_n = 0.0;    // E[n_ui]
    std::vector<double> phi;    // allocation over the K factors; empty when E[n] = 0
};

struct FitConfig {
    InferenceMode mode = InferenceMode::Hcpf;
    TrainingSource source = TrainingSource::FullMatrix;
    std::size_t max_iterations = 10'000'000;
    std::size_t eval_every = 10'000;
    std::size_t patience = 10;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    bool jitter = true;
    /// Local steps computed against one frozen state before their global
    /// steps are applied in draw order. 1 reproduces the plain algorithm.
    std::size_t batch_size = 1;
    std::size_t threads = 1;
    /// Truncation override; 0 selects it from the data.
    long truncation = 0;
    /// Refit theta every this many iterations (0 disables).
    std::size_t element_update_every = 0;
    std::size_t element_update_batch = 1000;
    std::function<void(const std::string&)> on_warning;

    void validate() const {
        if (eval_every < 1)
            throw InvalidParameter("eval_every must be at least 1");
        if (!(tolerance > 0.0))
            throw InvalidParameter("tolerance must be positive");
        if (batch_size < 1)
            throw InvalidParameter("batch_size must be at least 1");
        if (threads < 1)
            throw InvalidParameter("threads must be at least 1");
        if (truncation < 0)
            throw InvalidParameter("truncation must be non-negative");
        if (element_update_every > 0 && element_update_batch < 1)
            throw InvalidParameter("element_update_batch must be at least 1");
    }
};

inline LocalStep local_step(double y, std::size_t u, std::size_t i, const VariationalState& state,
                            const Hyperparams& hyper, long truncation,
                            InferenceMode mode = InferenceMode::Hcpf) {
    using special::neg_inf;
    if (truncation < 1)
        throw InvalidParameter("truncation must be at least 1");
    LocalStep out;
    out.rate = expected_rate(state, u, i);
    out.q_n.assign(static_cast<std::size_t>(truncation) + 1, 0.0);
    const auto& el = hyper.element;
    auto infeasible = [&] {
        return TruncationError("response " + format_value(y) + " at cell (" + std::to_string(u) +
                               ", " + std::to_string(i) + ") has no feasible count n <= " +
                               std::to_string(truncation));
    };

    if (mode == InferenceMode::Hpf) {
        if (y < 0.0 || !special::is_integer(y))
            throw InvalidParameter("HPF needs non-negative integer responses, got " + format_value(y));
        const double n = std::round(y);
        if (n > static_cast<double>(truncation))
            throw infeasible();
        out.q_n[static_cast<std::size_t>(n)] = 1.0;
        out.expected_n = n;
    } else if (y == 0.0 && !zero_in_support(el)) {
        out.q_n[0] = 1.0;
        out.expected_n = 0.0;
    } else {
        std::vector<double> logw(out.q_n.size(), neg_inf);
        const double log_rate = std::log(out.rate);
        if (y == 0.0) {
            // The e^-rate factor is common to every n and dropped.
            logw[0] = 0.0;
            for (long n = 1; n <= truncation; ++n) {
                const double dn = static_cast<double>(n);
                const double ld = log_density(el.with_kappa(dn * el.kappa), 0.0);
                logw[n] = ld == neg_inf ? neg_inf : ld + dn * log_rate - special::log_factorial(dn);
            }
        } else {
            for (long n = 1; n <= truncation; ++n)
                logw[n] = log_poisson_weight(el, y, log_rate, n);
        }
        const double norm = special::log_sum_exp(logw);
        if (norm == neg_inf)
            throw infeasible();
        if (!std::isfinite(norm))
            throw NumericalError("non-finite count weights at cell (" + std::to_string(u) + ", " +
                                 std::to_string(i) + "), y=" + format_value(y) +
                                 ", rate=" + format_value(out.rate));
        double en = 0.0;
        for (std::size_t n = 0; n < logw.size(); ++n) {
            out.q_n[n] = std::exp(logw[n] - norm);
            en += static_cast<double>(n) * out.q_n[n];
        }
        out.expected_n = en;
    }

    if (out.expected_n > 0.0) {
        const std::size_t K = state.K;
        out.phi.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t uk = u * K + k, ik = i * K + k;
            out.phi[k] = special::digamma(state.a_s[uk]) - std::log(state.b_s[uk]) +
                         special::digamma(state.a_v[ik]) - std::log(state.b_v[ik]);
        }
        const double norm = special::log_sum_exp(out.phi);
        for (double& p : out.phi)
            p = std::exp(p - norm);
    }
    return out;
}

/// Applies the six convex-combination updates in the order written (user
/// rate, user shapes, user rates, item rate, item shapes, item rates), each
/// reading the freshest values, then advances both learning counters.
inline void global_step(std::size_t u, std::size_t i, const LocalStep& local, VariationalState& s,
                        const Hyperparams& h) {
    s.check_index(u, i);
    const std::size_t K = s.K;
    const double n_users = static_cast<double>(s.n_users);
    const double n_items = static_cast<double>(s.n_items);
    const double en = local.expected_n;
    if (en > 0.0 && local.phi.size() != K)
        throw InvalidParameter("local step is missing its factor allocation");
    double* as = &s.a_s[u * K];
    double* bs = &s.b_s[u * K];
    double* av = &s.a_v[i * K];
    double* bv = &s.b_v[i * K];

    const double su = std::pow(s.t_u[u], -h.xi);
    const double si = std::pow(s.t_i[i], -h.xi);

    double user_mean_sum = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        user_mean_sum += as[k] / bs[k];
    s.b_r[u] = (1.0 - su) * s.b_r[u] + su * (h.rho / h.varrho + user_mean_sum);
    for (std::size_t k = 0; k < K; ++k) {
        const double alloc = en > 0.0 ? n_items * en * local.phi[k] : 0.0;
        as[k] = (1.0 - su) * as[k] + su * (h.eta + alloc);
    }
    const double user_activity = s.a_r / s.b_r[u];
    for (std::size_t k = 0; k < K; ++k)
        bs[k] = (1.0 - su) * bs[k] + su * (user_activity + n_items * av[k] / bv[k]);

    double item_mean_sum = 0.0;
    for (std::size_t k = 0; k < K; ++k)
        item_mean_sum += av[k] / bv[k];
    s.b_w[i] = (1.0 - si) * s.b_w[i] + si * (h.omega / h.varpi + item_mean_sum);
    for (std::size_t k = 0; k < K; ++k) {
        const double alloc = en > 0.0 ? n_users * en * local.phi[k] : 0.0;
        av[k] = (1.0 - si) * av[k] + si * (h.zeta + alloc);
    }
    const double item_popularity = s.a_w / s.b_w[i];
    for (std::size_t k = 0; k < K; ++k)
        bv[k] = (1.0 - si) * bv[k] + si * (item_popularity + n_users * as[k] / bs[k]);

    s.t_u[u] += 1.0;
    s.t_i[i] += 1.0;
}

struct ThetaSample {
    double y;
    double expected_n;
};

/// Refits theta with kappa fixed by maximizing
/// sum_b [y_b theta - E[n_b] kappa Psi(theta)], i.e. solving
/// kappa Psi'(theta) sum E[n] = sum y by Newton steps kept inside the domain.
/// Returns nullopt when the solve fails.
inline std::optional<ElementSpec> update_element_hyperparams(std::span<const ThetaSample> batch,
                                                             const ElementSpec& current) {
    current.validate();
    if (current.point_mass)
        return current;
    double sum_y = 0.0, sum_n = 0.0;
    for (const auto& b : batch) {
        if (b.expected_n <= 0.0)
            continue;
        sum_y += b.y;
        sum_n += b.expected_n;
    }
    if (!(sum_n > 0.0))
        return std::nullopt;
    const EdmFamily f = current.family;
    const double target = sum_y / (current.kappa * sum_n); // Psi'(theta) at the optimum
    double theta = current.theta;
    for (int it = 0; it < 100; ++it) {
        const double g = target - log_partition_d1(f, theta);
        const double dg = log_partition_d2(f, theta);
        if (!(dg > 0.0) || !std::isfinite(g))
            return std::nullopt;
        double next = theta + g / dg;
        if (!theta_in_domain(f, next))
            next = 0.5 * theta; // halve towards the boundary at zero
        if (!std::isfinite(next))
            return std::nullopt;
        const bool done = std::abs(next - theta) <= 1e-12 * std::max(1.0, std::abs(theta));
        theta = next;
        if (done) {
            ElementSpec out = current;
            out.theta = theta;
            return out;
        }
    }
    return std::nullopt;
}

struct TraceRow {
    std::size_t iteration;
    double validation_L;
    double L_M;
    double L_NM;
    double seconds;
};

inline void write_trace(std::ostream& os, std::span<const TraceRow> trace) {
    os << "iteration\tvalidation_L\tL_M\tL_NM\tseconds\n";
    for (const auto& r : trace)
        os << r.iteration << '\t' << format_value(r.validation_L) << '\t' << format_value(r.L_M)
           << '\t' << format_value(r.L_NM) << '\t' << format_value(r.seconds) << '\n';
}

/// Held-out cells used for early stopping.
struct ValidationSet {
    std::vector<Entry> nonmissing;
    std::vector<Coord> missing;
    double total_missing = 0.0;

    static ValidationSet from_split(const SplitSet& s) {
        return {s.validation_nonmissing, s.validation_missing, s.total_missing()};
    }
};

struct FitResult {
    Model model;
    std::vector<TraceRow> trace;
    std::size_t iterations = 0;
    std::size_t best_iteration = 0;
};

/// Rate the truncation must cover: a multiple of the prior mean rate
/// K (eta/varrho)(zeta/varpi), but never below one.
inline double truncation_rate(const Hyperparams& h) {
    const double prior_rate =
        static_cast<double>(h.K) * (h.eta / h.varrho) * (h.zeta / h.varpi);
    return std::max(1.0, 3.0 * prior_rate);
}

inline long fit_truncation(const SparseDataset& train, const Hyperparams& h, const FitConfig& c) {
    if (c.truncation > 0)
        return c.truncation;
    return choose_truncation(h.element, truncation_rate(h), train.max_value());
}

namespace detail {

struct ValidationScore {
    double L, L_M, L_NM;
};

inline ValidationScore score_validation(const Model& m, const ValidationSet& v, TrainingSource source,
                                        std::size_t threads) {
    const double L_NM = loglik_nonmissing(m.state, m.hyper.element, m.truncation, v.nonmissing,
                                          false, threads);
    const double L_M = loglik_missing(m.state, v.missing, threads);
    // Missing cells are not modelled when training on responses only.
    if (source == TrainingSource::NonmissingOnly || v.missing.empty())
        return {L_NM, L_M, L_NM};
    return {combined_loglik(L_M, L_NM, v.total_missing, v.missing.size(), validation_fraction), L_M,
            L_NM};
}

} // namespace detail

/// Runs SVI until the validation log-likelihood stops improving by
/// `tolerance` (relative) for `patience` evaluations, or `max_iterations`.
/// Returns the state with the best validation score. `excluded` lists
/// held-out cells that full-matrix sampling must skip.
inline FitResult fit(const SparseDataset& train, const Hyperparams& hyper, const FitConfig& config,
                     const ValidationSet& validation,
                     const std::unordered_set<std::uint64_t>& excluded = {}) {
    hyper.validate();
    config.validate();
    if (train.entries.empty())
        throw InvalidParameter("training data is empty");
    if (validation.nonmissing.empty())
        throw InvalidParameter("validation set has no non-missing entries");
    if (config.mode == InferenceMode::Hpf && !hyper.element.point_mass)
        throw InvalidParameter("HPF mode requires the degenerate element");
    if (config.source == TrainingSource::FullMatrix &&
        static_cast<double>(excluded.size() + train.entries.size()) >= train.grid_size())
        throw InvalidParameter("no cells left to sample");

    const auto start = std::chrono::steady_clock::now();
    auto warn = [&](const std::string& msg) {
        if (config.on_warning)
            config.on_warning(msg);
    };

    Model model;
    model.hyper = hyper;
    model.truncation = fit_truncation(train, hyper, config);
    model.state = init_variational(
        hyper, train.n_users, train.n_items,
        config.jitter ? std::optional<std::uint64_t>(config.seed ^ 0x9e3779b97f4a7c15ULL) : std::nullopt);

    std::unordered_map<std::uint64_t, double> lookup;
    if (config.source == TrainingSource::FullMatrix) {
        lookup.reserve(train.entries.size() * 2);
        for (const auto& e : train.entries)
            lookup.emplace(coord_key(e.user, e.item), e.value);
    }

    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::uint32_t> pick_user(0, static_cast<std::uint32_t>(train.n_users - 1));
    std::uniform_int_distribution<std::uint32_t> pick_item(0, static_cast<std::uint32_t>(train.n_items - 1));
    std::uniform_int_distribution<std::size_t> pick_entry(0, train.entries.size() - 1);
    auto draw = [&]() -> Entry {
        if (config.source == TrainingSource::NonmissingOnly)
            return train.entries[pick_entry(rng)];
        while (true) {
            const auto u = pick_user(rng);
            const auto i = pick_item(rng);
            const auto key = coord_key(u, i);
            if (excluded.contains(key))
                continue;
            const auto it = lookup.find(key);
            return {u, i, it == lookup.end() ? 0.0 : it->second};
        }
    };

    FitResult result;
    double best = -std::numeric_limits<double>::infinity();
    VariationalState best_state = model.state;
    ElementSpec best_element = model.hyper.element;
    std::size_t stale = 0;

    auto evaluate_now = [&](std::size_t iteration) -> bool {
        const auto score = detail::score_validation(model, validation, config.source, config.threads);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!std::isfinite(score.L))
            throw NumericalError("validation log-likelihood became " + format_value(score.L) +
                                 " at iteration " + std::to_string(iteration) +
                                 " (L_M=" + format_value(score.L_M) + ", L_NM=" + format_value(score.L_NM) + ")");
        result.trace.push_back({iteration, score.L, score.L_M, score.L_NM, secs});
        if (score.L > best + config.tolerance * std::abs(best) || result.trace.size() == 1) {
            best = score.L;
            best_state = model.state;
            best_element = model.hyper.element;
            result.best_iteration = iteration;
            stale = 0;
        } else if (++stale >= config.patience) {
            return true;
        }
        return false;
    };

    std::vector<Entry> batch(config.batch_size);
    std::vector<LocalStep> locals(config.batch_size);
    std::size_t it = 0;
    bool converged = false;
    while (it < config.max_iterations && !converged) {
        const std::size_t b = std::min(config.batch_size, config.max_iterations - it);
        for (std::size_t k = 0; k < b; ++k)
            batch[k] = draw();
        parallel_for(b, b > 1 ? config.threads : 1, [&](std::size_t k) {
            locals[k] = local_step(batch[k].value, batch[k].user, batch[k].item, model.state,
                                   model.hyper, model.truncation, config.mode);
        });
        for (std::size_t k = 0; k < b; ++k) {
            const auto& loc = locals[k];
            if (!std::isfinite(loc.rate) || !std::isfinite(loc.expected_n))
                throw NumericalError("non-finite local step at cell (" + std::to_string(batch[k].user) +
                                     ", " + std::to_string(batch[k].item) + "), y=" +
                                     format_value(batch[k].value) + ", rate=" + format_value(loc.rate) +
                                     ", E[n]=" + format_value(loc.expected_n));
            global_step(batch[k].user, batch[k].item, loc, model.state, model.hyper);
            ++it;

            if (config.element_update_every > 0 && it % config.element_update_every == 0) {
                std::vector<ThetaSample> samples;
                samples.reserve(config.element_update_batch);
                for (std::size_t j = 0; j < config.element_update_batch; ++j) {
                    const auto& e = train.entries[pick_entry(rng)];
                    const auto l = local_step(e.value, e.user, e.item, model.state, model.hyper,
                                              model.truncation, config.mode);
                    samples.push_back({e.value, l.expected_n});
                }
                if (auto updated = update_element_hyperparams(samples, model.hyper.element))
                    model.hyper.element = *updated;
                else
                    warn("theta update failed at iteration " + std::to_string(it) +
                         "; keeping theta=" + format_value(model.hyper.element.theta));
            }
            if (it % config.eval_every == 0 && evaluate_now(it)) {
                converged = true;
                break;
            }
        }
    }
    if (!converged && (result.trace.empty() || result.trace.back().iteration != it))
        evaluate_now(it);

    result.iterations = it;
    model.state = std::move(best_state);
    model.hyper.element = best_element;
    result.model = std::move(model);
    return result;
}

} // namespace hcpf
