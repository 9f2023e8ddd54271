// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hcpf/cli.hpp"
#include "hcpf/hcpf.hpp"
#include "support.hpp"

using namespace hcpf;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass)
                detail = what;
            pass = false;
        }
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

int failures = 0;

void criterion(int id, const char* title, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.pass = false;
        o.detail += (o.detail.empty() ? "" : "; ") + fmt("over the %.0f s budget", budget_s);
    }
    if (!o.pass)
        ++failures;
    std::printf("%s %d %s (%s; %.2f s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
    std::fflush(stdout);
}

/// 100 evaluation points covering the bulk of the element distribution.
std::vector<double> grid_for(const ElementSpec& el) {
    std::vector<double> ys;
    if (is_discrete(el)) {
        const double lo = zero_in_support(el) ? 0.0 : 1.0;
        for (int k = 0; k < 100; ++k)
            ys.push_back(lo + k);
        return ys;
    }
    const double m = mean(el), sd = std::sqrt(variance(el));
    double lo = m - 4.0 * sd;
    if (el.family != EdmFamily::Normal)
        lo = std::max(lo, 1e-3 * m);
    const double hi = m + 4.0 * sd;
    for (int k = 0; k < 100; ++k)
        ys.push_back(lo + (hi - lo) * k / 99.0);
    return ys;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "hcpf");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out)
        *out = o.str() + e.str();
    return code;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome decoupling() {
    Outcome o;
    const std::vector<double> rates{1.0, 0.1, 0.01, 0.001};
    double worst = 0.0;
    for (const auto& ex : support::examples()) {
        const auto el = support::element(ex);
        const auto ys = grid_for(el);
        std::vector<double> gaps;
        for (double rate : rates) {
            const CompoundSpec spec{el, rate, choose_truncation(el, rate, ys.back())};
            double gap = 0.0;
            for (double y : ys)
                gap = std::max(gap, std::abs(std::exp(log_truncated_density(spec, y)) -
                                             oracle::element_density(ex.reference, y)));
            gaps.push_back(gap);
        }
        for (std::size_t k = 1; k < gaps.size(); ++k)
            o.require(gaps[k] <= gaps[k - 1], support::name(ex) + " gap grows as the rate falls");
        o.require(gaps.back() <= 1e-3, support::name(ex) + " gap " + fmt("%.3g", gaps.back()));
        worst = std::max(worst, gaps.back());
    }
    if (o.pass)
        o.detail = "largest gap at rate 1e-3 " + fmt("%.3g", worst);
    return o;
}

Outcome point_mass_is_poisson() {
    Outcome o;
    const auto el = ElementSpec::degenerate_at_one();
    double worst = 0.0;
    for (double rate : {0.5, 2.0, 7.0}) {
        const CompoundSpec spec{el, rate, choose_truncation(el, rate, 20.0)};
        for (long n = 0; n <= 20; ++n)
            worst = std::max(worst, std::abs(std::exp(log_marginal_density(spec, static_cast<double>(n))) -
                                             oracle::poisson_pmf(rate, n)));
    }
    o.require(worst <= 1e-12, "difference " + fmt("%.3g", worst));
    if (o.pass)
        o.detail = "max difference " + fmt("%.3g", worst);
    return o;
}

Outcome zero_fraction_and_truncated_mean() {
    Outcome o;
    constexpr long draws = 1'000'000;
    std::mt19937_64 rng(11);
    double worst_z = 0.0, worst_rel = 0.0;
    for (const auto& ex : support::examples()) {
        const auto el = support::element(ex);
        for (double rate : {0.05, 2.0}) {
            std::poisson_distribution<long> count(rate);
            long zeros = 0;
            double sum = 0.0;
            for (long d = 0; d < draws; ++d) {
                const long n = count(rng);
                if (n == 0) {
                    ++zeros;
                    continue;
                }
                const double x = sample(el.with_kappa(static_cast<double>(n) * el.kappa), rng);
                if (!zero_in_support(el))
                    o.require(x != 0.0, support::name(ex) + " drew zero from a positive count");
                sum += x;
            }
            const double p0 = std::exp(-rate);
            const double se = std::sqrt(p0 * (1.0 - p0) / draws);
            const double z = std::abs(static_cast<double>(zeros) / draws - p0) / se;
            const double target = rate / -std::expm1(-rate) * oracle::native_mean(ex.reference);
            const double rel = std::abs(sum / static_cast<double>(draws - zeros) / target - 1.0);
            o.require(z <= 3.0, support::name(ex) + " zero fraction off by " + fmt("%.2f SE", z));
            o.require(rel <= 0.01, support::name(ex) + " truncated mean off by " + fmt("%.3g", rel));
            worst_z = std::max(worst_z, z);
            worst_rel = std::max(worst_rel, rel);
        }
    }
    if (o.pass)
        o.detail = "worst zero fraction " + fmt("%.2f SE", worst_z) + ", worst mean error " +
                   fmt("%.2g", 100.0 * worst_rel) + "%";
    return o;
}

/// A 1x1, K=1 state with the given rate.
VariationalState single_cell(double rate) {
    VariationalState s;
    s.n_users = s.n_items = s.K = 1;
    s.a_r = s.a_w = 1.0;
    s.b_r = s.b_w = {1.0};
    s.a_s = {rate};
    s.b_s = {1.0};
    s.a_v = {1.0};
    s.b_v = {1.0};
    s.t_u = s.t_i = {1.0};
    return s;
}

Outcome count_posterior() {
    Outcome o;
    std::mt19937_64 rng(12);
    constexpr long N = 30;
    double worst = 0.0;
    for (auto f : all_families) {
        for (int rep = 0; rep < 100; ++rep) {
            const auto ex = support::random_example(f, rng);
            const auto el = support::element(ex);
            const double rate = std::exp(std::uniform_real_distribution<double>(-5.0, 1.5)(rng));
            double y = 0.0;
            while (y == 0.0)
                y = sample(CompoundSpec{el, rate + 0.5, N}, rng);
            Hyperparams h = default_hyperparams(0.9, el, 1);
            const auto loc = local_step(y, 0, 0, single_cell(rate), h, N);
            const auto ref = oracle::count_posterior(ex.reference, rate, y, N);
            for (std::size_t n = 0; n < ref.size(); ++n)
                worst = std::max(worst, std::abs(loc.q_n[n] - ref[n]));
        }
    }
    o.require(worst <= 1e-9, "difference " + fmt("%.3g", worst));
    if (o.pass)
        o.detail = "max difference " + fmt("%.3g", worst);
    return o;
}

Outcome global_step_fidelity() {
    Outcome o;
    Hyperparams h = default_hyperparams(0.9, ElementSpec::degenerate_at_one(), 1);
    h.eta = 0.3;
    h.zeta = 0.2;
    h.rho = 0.5;
    h.varrho = 2.0;
    h.omega = 0.4;
    h.varpi = 4.0;
    h.xi = 0.6;
    VariationalState s;
    s.n_users = s.n_items = s.K = 1;
    s.a_r = 0.8;
    s.a_w = 0.6;
    s.b_r = {0.25};
    s.a_s = {0.3};
    s.b_s = {2.0};
    s.t_u = {3.0};
    s.b_w = {0.1};
    s.a_v = {0.2};
    s.b_v = {4.0};
    s.t_i = {5.0};
    LocalStep loc;
    loc.expected_n = 2.5;
    loc.phi = {1.0};
    global_step(0, 0, loc, s, h);

    const double su = std::pow(3.0, -0.6), si = std::pow(5.0, -0.6);
    const double b_r = (1 - su) * 0.25 + su * (0.5 / 2.0 + 0.3 / 2.0);
    const double a_s = (1 - su) * 0.3 + su * (0.3 + 2.5);
    const double b_s = (1 - su) * 2.0 + su * (0.8 / b_r + 0.2 / 4.0);
    const double b_w = (1 - si) * 0.1 + si * (0.4 / 4.0 + 0.2 / 4.0);
    const double a_v = (1 - si) * 0.2 + si * (0.2 + 2.5);
    const double b_v = (1 - si) * 4.0 + si * (0.6 / b_w + a_s / b_s);
    const double diff = std::max({std::abs(s.b_r[0] - b_r), std::abs(s.a_s[0] - a_s), std::abs(s.b_s[0] - b_s),
                                  std::abs(s.b_w[0] - b_w), std::abs(s.a_v[0] - a_v), std::abs(s.b_v[0] - b_v)});
    o.require(diff <= 1e-12, "update difference " + fmt("%.3g", diff));
    o.require(s.a_r == 0.8 && s.a_w == 0.6, "a_r or a_w changed in a global step");
    o.require(s.t_u[0] == 4.0 && s.t_i[0] == 6.0, "learning counters did not advance");

    // a_r and a_w through a run of sequential updates.
    std::mt19937_64 rng(13);
    const auto el = to_edm(native::Gamma{3.0, 1.0});
    auto [z, ds] = simulate(simulation_hyperparams(0.9, el, 4), 50, 50, rng);
    const auto hyper = default_hyperparams(ds.sparsity(), el, 4);
    auto state = init_variational(hyper, 50, 50, 1);
    const double ar = hyper.rho + 4 * hyper.eta, aw = hyper.omega + 4 * hyper.zeta;
    o.require(state.a_r == ar && state.a_w == aw, "initial a_r or a_w wrong");
    std::unordered_map<std::uint64_t, double> cells;
    for (const auto& e : ds.entries)
        cells.emplace(coord_key(e.user, e.item), e.value);
    std::uniform_int_distribution<std::uint32_t> pick(0, 49);
    const long N = choose_truncation(el, 3.0, ds.max_value());
    for (int it = 0; it < 20'000; ++it) {
        const auto u = pick(rng), i = pick(rng);
        const auto found = cells.find(coord_key(u, i));
        const double y = found == cells.end() ? 0.0 : found->second;
        global_step(u, i, local_step(y, u, i, state, hyper, N), state, hyper);
        if (state.a_r != ar || state.a_w != aw) {
            o.require(false, "a_r or a_w moved at iteration " + std::to_string(it));
            break;
        }
    }
    if (o.pass)
        o.detail = "max update difference " + fmt("%.3g", diff) + ", shapes fixed over 20000 steps";
    return o;
}

Outcome synthetic_recovery() {
    Outcome o;
    std::mt19937_64 rng(2024);
    const auto truth = to_edm(native::Gamma{5.0, 0.5});
    auto [z, ds] = simulate(simulation_hyperparams(0.95, truth, 5), 200, 200, rng);
    const double sparsity = ds.sparsity();
    o.require(sparsity > 0.9 && sparsity < 0.99, "realized sparsity " + fmt("%.4f", sparsity));
    const auto sp = split(ds, test_fraction, validation_fraction, 7);
    const auto held_out = sp.held_out_keys();
    const auto element = to_edm(mle_fit(EdmFamily::Gamma, sp.train.values()));
    const double train_sparsity =
        1.0 - static_cast<double>(sp.train.entries.size()) /
                  (sp.train.grid_size() - static_cast<double>(held_out.size()));

    FitConfig c;
    c.seed = 5;
    c.max_iterations = 5'000'000;
    c.eval_every = 100'000;
    c.threads = 1;
    auto run_fit = [&](std::size_t K) {
        const auto h = with_factor_shape(default_hyperparams(train_sparsity, element, K), 1.0);
        return fit(sp.train, h, c, ValidationSet::from_split(sp), held_out);
    };
    const auto full = run_fit(5);
    const auto base = run_fit(1);

    double running = -INFINITY, prev = -INFINITY;
    for (const auto& row : full.trace) {
        o.require(std::isfinite(row.validation_L), "non-finite validation score");
        running = std::max(running, row.validation_L);
        o.require(running >= prev, "running maximum decreased");
        prev = running;
    }
    const auto r5 = evaluate(full.model, sp);
    const auto r1 = evaluate(base.model, sp);
    o.require(r5.L > r1.L, "test L " + fmt("%.1f", r5.L) + " does not beat the K=1 baseline " + fmt("%.1f", r1.L));
    o.require(r5.auc > 0.8, "AUC " + fmt("%.4f", r5.auc));
    if (o.pass)
        o.detail = "sparsity " + fmt("%.4f", sparsity) + ", test L " + fmt("%.1f", r5.L) + " vs K=1 " +
                   fmt("%.1f", r1.L) + ", AUC " + fmt("%.4f", r5.auc);
    return o;
}

Outcome hpf_equivalence() {
    Outcome o;
    support::TempDir dir;
    std::string msg;
    o.require(cli({"simulate", "--family", "degenerate", "--k", "5", "--seed", "3", "--out", dir.file("d.tsv")}, &msg) == 0,
              "simulate failed: " + msg);
    o.require(cli({"split", "--input", dir.file("d.tsv"), "--seed", "4", "--out", dir.file("s.bin")}, &msg) == 0,
              "split failed: " + msg);
    const std::vector<std::string> common{"--split", dir.file("s.bin"), "--family", "degenerate", "--k", "5",
                                          "--seed", "6", "--max-iters", "200000", "--eval-every", "20000"};
    auto with = [&](std::vector<std::string> head, const std::string& out) {
        head.insert(head.end(), common.begin(), common.end());
        head.push_back("--out");
        head.push_back(dir.file(out));
        return head;
    };
    o.require(cli(with({"fit", "--mode", "hpf"}, "hpf.bin"), &msg) == 0, "hpf fit failed: " + msg);
    o.require(cli(with({"fit", "--mode", "hcpf"}, "hcpf.bin"), &msg) == 0, "hcpf fit failed: " + msg);
    const auto a = slurp(dir.file("hpf.bin")), b = slurp(dir.file("hcpf.bin"));
    o.require(!a.empty() && a == b, "model files differ");
    if (o.pass)
        o.detail = "identical " + std::to_string(a.size()) + "-byte model files";
    return o;
}

Outcome determinism() {
    Outcome o;
    support::TempDir d1, d2;
    std::string msg;
    for (auto* d : {&d1, &d2}) {
        o.require(cli({"simulate", "--native", "5,0.5", "--k", "5", "--seed", "8", "--out", d->file("d.tsv")}, &msg) == 0, msg);
        o.require(cli({"split", "--input", d->file("d.tsv"), "--seed", "9", "--out", d->file("s.bin")}, &msg) == 0, msg);
        o.require(cli({"fit", "--split", d->file("s.bin"), "--k", "5", "--seed", "10", "--max-iters", "300000",
                       "--eval-every", "30000", "--out", d->file("m.bin")},
                      &msg) == 0,
                  msg);
        o.require(cli({"evaluate", "--split", d->file("s.bin"), "--model", d->file("m.bin"), "--out", d->file("r.tsv")},
                      &msg) == 0,
                  msg);
    }
    for (const char* f : {"d.tsv", "s.bin", "m.bin", "r.tsv"}) {
        const auto a = slurp(d1.file(f));
        o.require(!a.empty() && a == slurp(d2.file(f)), std::string(f) + " differs between runs");
    }
    const auto m = load_model(d1.file("m.bin"));
    save_model(m, d1.file("again.bin"));
    o.require(slurp(d1.file("again.bin")) == slurp(d1.file("m.bin")), "save after load changed the bytes");
    o.require(load_model(d1.file("again.bin")) == m, "reloaded model differs");
    if (o.pass)
        o.detail = "dataset, split, model and report identical; model round-trips";
    return o;
}

Outcome additivity() {
    Outcome o;
    constexpr long draws = 200'000;
    std::mt19937_64 rng(14);
    double worst = 0.0;
    for (const auto& ex : support::examples()) {
        const auto el = support::element(ex);
        for (int m : {2, 5}) {
            const double mean_ref = m * el.kappa * log_partition_d1(el.family, el.theta);
            const double var_ref = m * el.kappa * log_partition_d2(el.family, el.theta);
            // Sums of m draws, and single draws at dispersion m kappa.
            for (int way = 0; way < 2; ++way) {
                std::vector<double> xs(draws);
                for (auto& x : xs) {
                    if (way == 0) {
                        x = 0.0;
                        for (int j = 0; j < m; ++j)
                            x += sample(el, rng);
                    } else {
                        x = sample(el.with_kappa(m * el.kappa), rng);
                    }
                }
                double mu = 0.0;
                for (double x : xs)
                    mu += x;
                mu /= draws;
                double m2 = 0.0, m4 = 0.0;
                for (double x : xs) {
                    const double d = (x - mu) * (x - mu);
                    m2 += d;
                    m4 += d * d;
                }
                m2 /= draws - 1;
                m4 /= draws;
                const double z_mean = std::abs(mu - mean_ref) / std::sqrt(m2 / draws);
                const double z_var = std::abs(m2 - var_ref) / std::sqrt((m4 - m2 * m2) / draws);
                const std::string tag = support::name(ex) + " m=" + std::to_string(m) +
                                        (way == 0 ? " (sum)" : " (dispersion)");
                o.require(z_mean <= 4.0, tag + " mean off by " + fmt("%.2f SE", z_mean));
                o.require(z_var <= 4.0, tag + " variance off by " + fmt("%.2f SE", z_var));
                worst = std::max({worst, z_mean, z_var});
            }
        }
    }
    if (o.pass)
        o.detail = "largest deviation " + fmt("%.2f SE", worst);
    return o;
}

} // namespace

int main() {
    criterion(1, "zero-truncated compound density approaches the element as the rate falls", 10, decoupling);
    criterion(2, "point-mass compound equals the Poisson pmf", 1, point_mass_is_poisson);
    criterion(3, "simulated zero fraction and truncated mean", 60, zero_fraction_and_truncated_mean);
    criterion(4, "local-step count posterior matches brute force", 10, count_posterior);
    criterion(5, "global step matches hand computation; a_r and a_w stay fixed", 10, global_step_fidelity);
    criterion(6, "synthetic recovery on a 200x200 K=5 matrix", 300, synthetic_recovery);
    criterion(7, "HPF mode equals the point-mass element", 120, hpf_equivalence);
    criterion(8, "seeded pipelines are bit-reproducible; models round-trip", 120, determinism);
    criterion(9, "sums keep the family: mean and variance cumulants", 30, additivity);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
