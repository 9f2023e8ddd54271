#pragma once

// Held-out evaluation. Log-likelihoods are in nats:
//   L_M   = sum over held-out missing cells of log Po(0 | rate)
//   L_NM  = sum over held-out responses of log sum_{n>=0} p(y; n kappa) Po(n | rate)
//   L     = fraction * (#missing cells) / |missing held out| * L_M + L_NM
//   L_CNM = as L_NM with zero-truncated Poisson weights over n >= 1
// and the missingness AUC scored by Pr(X+ != 0) = 1 - e^-rate.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hcpf/binary_io.hpp"
#include "hcpf/compound.hpp"
#include "hcpf/data.hpp"
#include "hcpf/error.hpp"
#include "hcpf/model.hpp"
#include "hcpf/parallel.hpp"

namespace hcpf {

/// Share of non-missing entries held out for testing and validation.
inline constexpr double test_fraction = 0.2;
inline constexpr double validation_fraction = 0.01;

namespace detail {

inline constexpr std::size_t eval_chunk = 512;

/// Sums fn(k) over [0, n) in fixed-size chunks so the result does not
/// depend on the thread count.
template <class Fn> double chunked_sum(std::size_t n, std::size_t threads, Fn&& fn) {
    const std::size_t chunks = (n + eval_chunk - 1) / eval_chunk;
    std::vector<double> partial(chunks, 0.0);
    parallel_for(chunks, threads, [&](std::size_t c) {
        double acc = 0.0;
        const std::size_t end = std::min(n, (c + 1) * eval_chunk);
        for (std::size_t k = c * eval_chunk; k < end; ++k)
            acc += fn(k);
        partial[c] = acc;
    });
    double total = 0.0;
    for (double p : partial)
        total += p;
    return total;
}

} // namespace detail

inline double loglik_missing(const VariationalState& state, std::span<const Coord> cells,
                             std::size_t threads = 1) {
    return detail::chunked_sum(cells.size(), threads, [&](std::size_t k) {
        return -expected_rate(state, cells[k].user, cells[k].item);
    });
}

/// Per-entry log-likelihood of a held-out response.
inline double entry_loglik(const VariationalState& state, const ElementSpec& element,
                           long truncation, const Entry& e, bool conditional) {
    const CompoundSpec spec{element, expected_rate(state, e.user, e.item), truncation};
    const double ll = conditional ? log_truncated_density(spec, e.value)
                                  : log_marginal_density(spec, e.value);
    if (ll == special::neg_inf)
        throw TruncationError("response " + format_value(e.value) + " at cell (" +
                              std::to_string(e.user) + ", " + std::to_string(e.item) +
                              ") is infeasible with truncation " + std::to_string(truncation));
    return ll;
}

inline double loglik_nonmissing(const VariationalState& state, const ElementSpec& element,
                                long truncation, std::span<const Entry> entries,
                                bool conditional, std::size_t threads = 1) {
    return detail::chunked_sum(entries.size(), threads, [&](std::size_t k) {
        return entry_loglik(state, element, truncation, entries[k], conditional);
    });
}

/// Sparsity-adjusted combination of the missing and non-missing parts.
inline double combined_loglik(double L_M, double L_NM, double total_missing,
                              std::size_t held_out_missing, double fraction = test_fraction) {
    if (held_out_missing == 0)
        throw InvalidParameter("combined log-likelihood needs at least one held-out missing cell");
    return fraction * total_missing / static_cast<double>(held_out_missing) * L_M + L_NM;
}

enum class Label : std::uint8_t { Missing, Nonmissing };

struct Scored {
    Label label;
    double score;
};

/// Mann-Whitney AUC: the chance that a non-missing score beats a missing
/// one, ties counting one half.
inline double auc(std::span<const Scored> scores) {
    std::vector<Scored> v(scores.begin(), scores.end());
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });
    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    for (std::size_t lo = 0; lo < v.size();) {
        std::size_t hi = lo;
        while (hi < v.size() && v[hi].score == v[lo].score)
            ++hi;
        const double mid_rank = 0.5 * static_cast<double>(lo + 1 + hi);
        for (std::size_t k = lo; k < hi; ++k) {
            if (v[k].label == Label::Nonmissing) {
                pos += 1.0;
                rank_sum += mid_rank;
            } else {
                neg += 1.0;
            }
        }
        lo = hi;
    }
    if (pos == 0.0 || neg == 0.0)
        throw InvalidParameter("AUC is undefined without both labels");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct EvalReport {
    double L_M = 0.0;
    double L_NM = 0.0;
    double L = 0.0;
    double L_CNM = 0.0;
    double auc = 0.0;
    std::size_t n_missing = 0;
    std::size_t n_nonmissing = 0;
    double adjustment = 0.0;

    /// Held-out cell count after the missing part is scaled up.
    double effective_entries() const {
        return adjustment * static_cast<double>(n_missing) + static_cast<double>(n_nonmissing);
    }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

enum class HoldOut { Test, Validation };

inline EvalReport evaluate(const Model& model, const SplitSet& split, HoldOut part = HoldOut::Test,
                           std::size_t threads = 1) {
    const auto& state = model.state;
    const auto& missing = part == HoldOut::Test ? split.test_missing : split.validation_missing;
    const auto& nonmissing =
        part == HoldOut::Test ? split.test_nonmissing : split.validation_nonmissing;
    const double fraction = part == HoldOut::Test ? test_fraction : validation_fraction;
    if (state.n_users != split.train.n_users || state.n_items != split.train.n_items)
        throw InvalidParameter("model dimensions do not match the split");

    EvalReport r;
    r.n_missing = missing.size();
    r.n_nonmissing = nonmissing.size();
    r.L_M = loglik_missing(state, missing, threads);
    r.L_NM = loglik_nonmissing(state, model.hyper.element, model.truncation, nonmissing, false, threads);
    r.L_CNM = loglik_nonmissing(state, model.hyper.element, model.truncation, nonmissing, true, threads);
    r.adjustment = fraction * split.total_missing() / static_cast<double>(missing.size());
    r.L = combined_loglik(r.L_M, r.L_NM, split.total_missing(), missing.size(), fraction);

    std::vector<Scored> by_prob, by_rate;
    by_prob.reserve(missing.size() + nonmissing.size());
    by_rate.reserve(by_prob.capacity());
    for (const auto& c : missing) {
        const double rate = expected_rate(state, c.user, c.item);
        by_rate.push_back({Label::Missing, rate});
        by_prob.push_back({Label::Missing, -std::expm1(-rate)});
    }
    for (const auto& e : nonmissing) {
        const double rate = expected_rate(state, e.user, e.item);
        by_rate.push_back({Label::Nonmissing, rate});
        by_prob.push_back({Label::Nonmissing, -std::expm1(-rate)});
    }
    // 1 - e^-rate is strictly increasing, so ranking by rate gives the same
    // AUC. Rates are ranked directly because the probability rounds to 1.0
    // for large rates and would invent ties; the two must agree whenever
    // the probabilities stay distinct.
    r.auc = auc(by_rate);
    auto distinct = [](std::vector<Scored> v) {
        std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });
        return std::unique(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
                   return a.score == b.score;
               }) - v.begin();
    };
    if (distinct(by_prob) == distinct(by_rate)) {
        if (const double alt = auc(by_prob); std::abs(alt - r.auc) > 1e-12)
            throw NumericalError("AUC by probability (" + std::to_string(alt) +
                                 ") disagrees with AUC by rate (" + std::to_string(r.auc) + ")");
    }
    return r;
}

inline void write_report_text(std::ostream& os, const EvalReport& r) {
    const double nm = static_cast<double>(r.n_nonmissing);
    const double eff = r.effective_entries();
    os << "held-out missing cells     " << r.n_missing << '\n'
       << "held-out non-missing cells " << r.n_nonmissing << '\n'
       << "missing-part adjustment    " << format_value(r.adjustment) << '\n'
       << '\n'
       << "metric   total (nats)          per entry             per 1000 entries\n";
    auto row = [&](const char* name, double v, double count) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-8s %-21.10g %-21.10g %.10g\n", name, v, v / count,
                      1000.0 * v / count);
        os << buf;
    };
    row("L", r.L, eff);
    row("L_M", r.L_M, static_cast<double>(r.n_missing));
    row("L_NM", r.L_NM, nm);
    row("L_CNM", r.L_CNM, nm);
    os << "\nAUC (missingness)          " << format_value(r.auc) << '\n';
}

/// One `key<TAB>value` line per metric.
inline void write_report_kv(std::ostream& os, const EvalReport& r) {
    const double nm = static_cast<double>(r.n_nonmissing);
    const double eff = r.effective_entries();
    auto kv = [&](const char* k, double v) { os << k << '\t' << format_value(v) << '\n'; };
    kv("L", r.L);
    kv("L_M", r.L_M);
    kv("L_NM", r.L_NM);
    kv("L_CNM", r.L_CNM);
    kv("auc", r.auc);
    os << "n_missing\t" << r.n_missing << '\n' << "n_nonmissing\t" << r.n_nonmissing << '\n';
    kv("adjustment", r.adjustment);
    kv("L_per_entry", r.L / eff);
    kv("L_per_1000", 1000.0 * r.L / eff);
    kv("L_M_per_entry", r.L_M / static_cast<double>(r.n_missing));
    kv("L_NM_per_entry", r.L_NM / nm);
    kv("L_CNM_per_entry", r.L_CNM / nm);
}

} // namespace hcpf
