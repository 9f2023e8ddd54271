#pragma once

// Command-line driver: split, fit, evaluate, simulate, predict, density-grid.
// Precedence is built-in defaults < --config file < flags. Every subcommand
// validates its configuration before it writes anything, and all outputs go
// through a temporary file and rename.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hcpf/hcpf.hpp"

namespace hcpf::cli {

enum ExitCode : int {
    ok = 0,
    internal_error = 1,
    usage_error = 2,
    config_error = 3,
    io_error = 4,
    format_error = 5,
    model_error = 6,
};

namespace detail {

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

inline void fail(Streams io, const char* kind, const std::string& msg) {
    std::string flat = msg;
    for (char& c : flat)
        if (c == '\n' || c == '\t')
            c = ' ';
    io.err << "error\t" << kind << '\t' << flat << '\n';
}

/// Family selection: one of the seven EDM names, or "degenerate".
struct FamilyChoice {
    std::optional<EdmFamily> family; // empty for the degenerate element
};

inline FamilyChoice parse_family_choice(const std::string& name) {
    if (name == "degenerate")
        return {};
    try {
        return {parse_family(name)};
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
}

inline std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size())
                throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string("cannot parse ") + what + " '" + text + "'");
        }
    }
    if (out.empty())
        throw ConfigError(std::string("empty ") + what);
    return out;
}

inline ElementSpec element_from_native(const FamilyChoice& fc, const std::string& native_text) {
    if (!fc.family)
        return ElementSpec::degenerate_at_one();
    if (native_text.empty())
        throw ConfigError("--native parameters are required for family " +
                          std::string(family_name(*fc.family)));
    const auto values = parse_list(native_text, "native parameters");
    try {
        return to_edm(make_native(*fc.family, values));
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
}

inline void require_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent))
        throw IoError("output directory '" + parent.string() + "' does not exist");
}

inline void write_text(const std::string& path, const std::string& text) {
    io::write_atomically(path, [&](std::ostream& os) { os << text; }, false);
}

struct HyperOverrides {
    std::optional<double> eta, zeta, rho, varrho, omega, varpi, tau, xi, theta, kappa;

    void add_to(CLI::App* app) {
        app->add_option("--eta", eta, "user factor shape");
        app->add_option("--zeta", zeta, "item factor shape");
        app->add_option("--rho", rho, "user activity shape");
        app->add_option("--varrho", varrho, "user activity mean");
        app->add_option("--omega", omega, "item popularity shape");
        app->add_option("--varpi", varpi, "item popularity mean");
        app->add_option("--tau", tau, "learning-rate delay");
        app->add_option("--xi", xi, "learning-rate power in (0.5, 1)");
        app->add_option("--theta", theta, "element natural parameter");
        app->add_option("--kappa", kappa, "element dispersion");
    }

    void apply(Hyperparams& h) const {
        if (eta) h.eta = *eta;
        if (zeta) h.zeta = *zeta;
        if (rho) h.rho = *rho;
        if (varrho) h.varrho = *varrho;
        if (omega) h.omega = *omega;
        if (varpi) h.varpi = *varpi;
        if (tau) h.tau = *tau;
        if (xi) h.xi = *xi;
        if (theta) h.element.theta = *theta;
        if (kappa) h.element.kappa = *kappa;
        try {
            h.validate();
        } catch (const InvalidParameter& e) {
            throw ConfigError(e.what());
        }
    }
};

inline void check_mode_family(InferenceMode mode, const FamilyChoice& fc) {
    if (mode == InferenceMode::Hpf && fc.family)
        throw ConfigError("--mode hpf uses the degenerate element; got --family " +
                          std::string(family_name(*fc.family)));
}

} // namespace detail

/// Parses argv and runs one subcommand; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    using namespace detail;
    Streams io{out, err};

    CLI::App app{"Hierarchical compound Poisson factorization for sparse matrices", "hcpf"};
    app.set_config("--config", "", "TOML/INI file with option defaults");
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker threads (1 is the reproducibility reference)")
        ->envname("HCPF_THREADS")
        ->check(CLI::PositiveNumber);

    const std::map<std::string, InferenceMode> modes{{"hcpf", InferenceMode::Hcpf},
                                                     {"hpf", InferenceMode::Hpf}};
    const std::map<std::string, TrainingSource> sources{{"full", TrainingSource::FullMatrix},
                                                        {"nonmissing", TrainingSource::NonmissingOnly}};
    const std::vector<std::string> family_names{"normal", "gamma",       "invgauss", "poisson",
                                                "binomial", "negbinomial", "ztp",      "degenerate"};

    // split
    auto* split_cmd = app.add_subcommand("split", "hold out test and validation cells");
    std::string split_input, split_out, split_format = "tsv";
    bool split_header = false;
    double test_frac = test_fraction, valid_frac = validation_fraction;
    std::uint64_t split_seed = 0;
    split_cmd->add_option("--input", split_input, "triplet file user,item,value")->required();
    split_cmd->add_option("--format", split_format)->check(CLI::IsMember({"tsv", "csv"}));
    split_cmd->add_flag("--header", split_header, "skip the first line");
    split_cmd->add_option("--test-frac", test_frac);
    split_cmd->add_option("--valid-frac", valid_frac);
    split_cmd->add_option("--seed", split_seed);
    split_cmd->add_option("--out", split_out, "split file to write")->required();

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit a model by stochastic variational inference");
    std::string fit_split, fit_out, fit_trace, fit_family = "gamma", fit_mode = "hcpf",
                                                fit_source = "full";
    std::size_t fit_k = 160;
    FitConfig fit_cfg;
    bool no_jitter = false;
    std::optional<double> fit_factor_shape;
    HyperOverrides fit_over;
    fit_cmd->add_option("--split", fit_split, "split file from `hcpf split`")->required();
    auto* fit_family_opt = fit_cmd->add_option("--family", fit_family)->check(CLI::IsMember(family_names));
    fit_cmd->add_option("--mode", fit_mode)->check(CLI::IsMember({"hcpf", "hpf"}));
    fit_cmd->add_option("--source", fit_source)->check(CLI::IsMember({"full", "nonmissing"}));
    fit_cmd->add_option("--k", fit_k)->check(CLI::PositiveNumber);
    fit_cmd->add_option("--seed", fit_cfg.seed);
    fit_cmd->add_option("--max-iters", fit_cfg.max_iterations);
    fit_cmd->add_option("--eval-every", fit_cfg.eval_every);
    fit_cmd->add_option("--patience", fit_cfg.patience);
    fit_cmd->add_option("--tolerance", fit_cfg.tolerance);
    fit_cmd->add_option("--truncation", fit_cfg.truncation, "0 chooses it from the data");
    fit_cmd->add_option("--batch-size", fit_cfg.batch_size);
    fit_cmd->add_option("--update-theta-every", fit_cfg.element_update_every, "0 disables");
    fit_cmd->add_option("--update-theta-batch", fit_cfg.element_update_batch);
    fit_cmd->add_flag("--no-jitter", no_jitter, "start all factors identically");
    fit_cmd->add_option("--factor-shape", fit_factor_shape,
                        "set eta and zeta, keeping the prior mean rate");
    fit_cmd->add_option("--out", fit_out, "model file to write")->required();
    fit_cmd->add_option("--trace", fit_trace, "trace file (default <out>.trace.tsv)");
    fit_over.add_to(fit_cmd);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "held-out log-likelihoods and AUC");
    std::string eval_split, eval_model, eval_out, eval_part = "test";
    eval_cmd->add_option("--split", eval_split)->required();
    eval_cmd->add_option("--model", eval_model)->required();
    eval_cmd->add_option("--part", eval_part)->check(CLI::IsMember({"test", "validation"}));
    eval_cmd->add_option("--out", eval_out, "key/value report (a .txt copy is written alongside)");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "draw a synthetic matrix from the model");
    std::size_t sim_users = 200, sim_items = 200, sim_k = 5;
    std::string sim_family = "gamma", sim_native, sim_out, sim_latent;
    double sim_sparsity = 0.95;
    std::uint64_t sim_seed = 0;
    HyperOverrides sim_over;
    sim_cmd->add_option("--users", sim_users)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--items", sim_items)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--k", sim_k)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--family", sim_family)->check(CLI::IsMember(family_names));
    sim_cmd->add_option("--native", sim_native, "comma-separated native parameters, e.g. 5,0.5");
    sim_cmd->add_option("--sparsity", sim_sparsity, "target missing fraction of the simulation priors");
    sim_cmd->add_option("--seed", sim_seed);
    sim_cmd->add_option("--out", sim_out, "triplet file to write")->required();
    sim_cmd->add_option("--latent", sim_latent, "ground-truth latents (default <out>.latent.tsv)");
    sim_over.add_to(sim_cmd);

    // predict
    auto* pred_cmd = app.add_subcommand("predict", "per-cell rate, non-missing probability, mean");
    std::string pred_model, pred_split, pred_coords, pred_out;
    pred_cmd->add_option("--model", pred_model)->required();
    pred_cmd->add_option("--split", pred_split, "split whose dictionaries name users and items")
        ->required();
    pred_cmd->add_option("--coords", pred_coords, "user<TAB>item file (default: test cells)");
    pred_cmd->add_option("--out", pred_out)->required();

    // density-grid
    auto* grid_cmd = app.add_subcommand("density-grid", "zero-truncated compound log densities");
    std::string grid_family = "ztp", grid_native, grid_rates = "1,0.1,0.01,0.001", grid_out;
    double grid_ymin = 0.0, grid_ymax = 20.0;
    std::size_t grid_points = 100;
    long grid_truncation = 0;
    grid_cmd->add_option("--family", grid_family)->check(CLI::IsMember(family_names));
    grid_cmd->add_option("--native", grid_native);
    grid_cmd->add_option("--rates", grid_rates, "comma-separated Poisson rates");
    grid_cmd->add_option("--y-min", grid_ymin);
    grid_cmd->add_option("--y-max", grid_ymax);
    grid_cmd->add_option("--points", grid_points, "grid size for continuous elements")
        ->check(CLI::PositiveNumber);
    grid_cmd->add_option("--truncation", grid_truncation, "0 chooses it from the grid");
    grid_cmd->add_option("--out", grid_out, "TSV output (stdout when absent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        fail(io, "usage", e.what());
        return usage_error;
    }

    try {
        if (split_cmd->parsed()) {
            require_parent_dir(split_out);
            const auto loaded = load_triplets(
                split_input, split_format == "csv" ? TripletFormat::Csv : TripletFormat::Tsv, split_header);
            if (loaded.report.duplicates_replaced)
                err << "warning\t" << loaded.report.duplicates_replaced
                    << " duplicate (user, item) rows; kept the last value\n";
            if (loaded.report.zero_rows_rejected)
                err << "warning\t" << loaded.report.zero_rows_rejected << " zero-valued rows rejected\n";
            SplitSet s;
            try {
                s = split(loaded.dataset, test_frac, valid_frac, split_seed);
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            save_split(s, split_out);
            out << "split\tusers=" << s.train.n_users << "\titems=" << s.train.n_items
                << "\ttrain=" << s.train.entries.size() << "\ttest=" << s.test_nonmissing.size()
                << "\tvalidation=" << s.validation_nonmissing.size() << '\n';
            return ok;
        }

        if (fit_cmd->parsed()) {
            const auto mode = modes.at(fit_mode);
            const auto source = sources.at(fit_source);
            // HPF defaults to the degenerate element unless a family was named.
            const auto fc = parse_family_choice(
                mode == InferenceMode::Hpf && fit_family_opt->count() == 0 ? "degenerate" : fit_family);
            check_mode_family(mode, fc);
            fit_cfg.mode = mode;
            fit_cfg.source = source;
            fit_cfg.threads = threads;
            fit_cfg.jitter = !no_jitter;
            fit_cfg.on_warning = [&](const std::string& m) { err << "warning\t" << m << '\n'; };
            try {
                fit_cfg.validate();
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            if (fit_trace.empty())
                fit_trace = fit_out + ".trace.tsv";
            require_parent_dir(fit_out);
            require_parent_dir(fit_trace);

            const auto s = load_split(fit_split);
            const auto held_out = s.held_out_keys();
            ElementSpec element = ElementSpec::degenerate_at_one();
            if (fc.family) {
                const auto values = s.train.values();
                element = to_edm(mle_fit(*fc.family, values));
            }
            const double sampleable = s.train.grid_size() - static_cast<double>(held_out.size());
            const double train_sparsity = 1.0 - static_cast<double>(s.train.entries.size()) / sampleable;
            Hyperparams h;
            try {
                h = default_hyperparams(train_sparsity, element, fit_k, source);
                if (fit_factor_shape)
                    h = with_factor_shape(h, *fit_factor_shape);
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            fit_over.apply(h);

            const auto res = fit(s.train, h, fit_cfg, ValidationSet::from_split(s), held_out);
            std::ostringstream trace;
            write_trace(trace, res.trace);
            save_model(res.model, fit_out);
            write_text(fit_trace, trace.str());
            out << "fit\titerations=" << res.iterations << "\tbest_iteration=" << res.best_iteration
                << "\ttruncation=" << res.model.truncation << "\tthreads=" << threads << '\n';
            return ok;
        }

        if (eval_cmd->parsed()) {
            if (!eval_out.empty())
                require_parent_dir(eval_out);
            const auto s = load_split(eval_split);
            const auto m = load_model(eval_model);
            const auto r = evaluate(m, s, eval_part == "test" ? HoldOut::Test : HoldOut::Validation, threads);
            std::ostringstream text, kv;
            write_report_text(text, r);
            write_report_kv(kv, r);
            if (!eval_out.empty()) {
                write_text(eval_out, kv.str());
                write_text(eval_out + ".txt", text.str());
            }
            out << text.str();
            return ok;
        }

        if (sim_cmd->parsed()) {
            if (sim_latent.empty())
                sim_latent = sim_out + ".latent.tsv";
            require_parent_dir(sim_out);
            require_parent_dir(sim_latent);
            const auto element = element_from_native(parse_family_choice(sim_family), sim_native);
            Hyperparams h;
            try {
                h = simulation_hyperparams(sim_sparsity, element, sim_k);
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            sim_over.apply(h);
            std::mt19937_64 rng(sim_seed);
            const auto [latent, data] = simulate(h, sim_users, sim_items, rng);
            std::ostringstream lat;
            lat << "kind\tindex\tk\tvalue\n";
            for (std::size_t u = 0; u < latent.n_users; ++u) {
                lat << "r\t" << u << "\t-\t" << format_value(latent.user_activity[u]) << '\n';
                for (std::size_t k = 0; k < latent.K; ++k)
                    lat << "s\t" << u << '\t' << k << '\t' << format_value(latent.user_factors[u * latent.K + k]) << '\n';
            }
            for (std::size_t i = 0; i < latent.n_items; ++i) {
                lat << "w\t" << i << "\t-\t" << format_value(latent.item_popularity[i]) << '\n';
                for (std::size_t k = 0; k < latent.K; ++k)
                    lat << "v\t" << i << '\t' << k << '\t' << format_value(latent.item_factors[i * latent.K + k]) << '\n';
            }
            if (data.entries.empty())
                throw FitError("simulation produced no non-missing entries");
            save_triplets(data, sim_out);
            write_text(sim_latent, lat.str());
            out << "simulate\tentries=" << data.entries.size() << "\tsparsity=" << format_value(data.sparsity())
                << '\n';
            return ok;
        }

        if (pred_cmd->parsed()) {
            require_parent_dir(pred_out);
            const auto m = load_model(pred_model);
            const auto s = load_split(pred_split);
            if (m.state.n_users != s.train.n_users || m.state.n_items != s.train.n_items)
                throw ConfigError("model dimensions do not match the split");
            std::vector<Coord> cells;
            if (pred_coords.empty()) {
                for (const auto& e : s.test_nonmissing)
                    cells.push_back(e.coord());
                cells.insert(cells.end(), s.test_missing.begin(), s.test_missing.end());
            } else {
                std::unordered_map<std::string, std::uint32_t> users, items;
                for (std::uint32_t u = 0; u < s.train.user_ids.size(); ++u)
                    users.emplace(s.train.user_ids[u], u);
                for (std::uint32_t i = 0; i < s.train.item_ids.size(); ++i)
                    items.emplace(s.train.item_ids[i], i);
                auto in = io::open_in(pred_coords, false);
                std::string line;
                std::size_t lineno = 0;
                while (std::getline(in, line)) {
                    ++lineno;
                    const auto body = hcpf::detail::trim(line);
                    if (body.empty())
                        continue;
                    const auto f = hcpf::detail::split_fields(body, '\t');
                    if (f.size() < 2)
                        throw FormatError(pred_coords + ":" + std::to_string(lineno) + ": expected user<TAB>item");
                    const auto u = users.find(std::string(f[0]));
                    const auto i = items.find(std::string(f[1]));
                    if (u == users.end() || i == items.end())
                        throw FormatError(pred_coords + ":" + std::to_string(lineno) + ": unknown user or item");
                    cells.push_back({u->second, i->second});
                }
            }
            std::ostringstream os;
            os << "user\titem\trate\tprob_nonmissing\ttruncated_mean\n";
            for (const auto& c : cells) {
                const double rate = expected_rate(m.state, c.user, c.item);
                const CompoundSpec spec{m.hyper.element, rate, m.truncation};
                os << s.train.user_ids[c.user] << '\t' << s.train.item_ids[c.item] << '\t' << format_value(rate)
                   << '\t' << format_value(1.0 - prob_zero(rate)) << '\t' << format_value(truncated_mean(spec))
                   << '\n';
            }
            write_text(pred_out, os.str());
            return ok;
        }

        if (grid_cmd->parsed()) {
            if (!grid_out.empty())
                require_parent_dir(grid_out);
            const auto element = element_from_native(parse_family_choice(grid_family), grid_native);
            const auto rates = parse_list(grid_rates, "rates");
            for (double r : rates)
                if (!(r > 0.0))
                    throw ConfigError("rates must be positive");
            if (!(grid_ymax > grid_ymin))
                throw ConfigError("--y-max must exceed --y-min");
            std::vector<double> ys;
            if (is_discrete(element)) {
                for (double y = std::max(0.0, std::ceil(grid_ymin)); y <= grid_ymax; y += 1.0)
                    ys.push_back(y);
            } else {
                for (std::size_t k = 0; k < grid_points; ++k)
                    ys.push_back(grid_ymin + (grid_ymax - grid_ymin) * (static_cast<double>(k) + 0.5) /
                                                 static_cast<double>(grid_points));
            }
            double max_rate = 0.0;
            for (double r : rates)
                max_rate = std::max(max_rate, r);
            const long trunc = grid_truncation > 0 ? grid_truncation
                                                   : choose_truncation(element, max_rate, grid_ymax);
            std::ostringstream os;
            os << "rate\ty\tlog_density\n";
            for (const auto& p : density_grid(element, rates, ys, trunc))
                os << format_value(p.rate) << '\t' << format_value(p.y) << '\t' << format_value(p.log_density)
                   << '\n';
            if (grid_out.empty())
                out << os.str();
            else
                write_text(grid_out, os.str());
            return ok;
        }
    } catch (const ConfigError& e) {
        fail(io, "config", e.what());
        return config_error;
    } catch (const IoError& e) {
        fail(io, "io", e.what());
        return io_error;
    } catch (const FormatError& e) {
        fail(io, "format", e.what());
        return format_error;
    } catch (const InvalidParameter& e) {
        fail(io, "config", e.what());
        return config_error;
    } catch (const Error& e) {
        fail(io, "model", e.what());
        return model_error;
    } catch (const std::exception& e) {
        fail(io, "internal", e.what());
        return internal_error;
    }
    fail(io, "usage", "no subcommand given");
    return usage_error;
}

} // namespace hcpf::cli
