#pragma once

// Sparse user x item response matrices stored as coordinate triplets, plus
// the hold-out protocol: 20% / 1% of the non-missing entries for test and
// validation, each paired with an equal number of missing coordinates.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hcpf/binary_io.hpp"
#include "hcpf/error.hpp"

namespace hcpf {

struct Coord {
    std::uint32_t user;
    std::uint32_t item;
    friend bool operator==(const Coord&, const Coord&) = default;
};

struct Entry {
    std::uint32_t user;
    std::uint32_t item;
    double value;
    Coord coord() const { return {user, item}; }
    friend bool operator==(const Entry&, const Entry&) = default;
};

inline std::uint64_t coord_key(std::uint32_t user, std::uint32_t item) {
    return (static_cast<std::uint64_t>(user) << 32) | item;
}

struct SparseDataset {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<Entry> entries;
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;

    double grid_size() const {
        return static_cast<double>(n_users) * static_cast<double>(n_items);
    }

    /// Fraction of missing cells.
    double sparsity() const {
        return 1.0 - static_cast<double>(entries.size()) / grid_size();
    }

    double max_value() const {
        double m = 0.0;
        for (const auto& e : entries)
            m = std::max(m, e.value);
        return m;
    }

    std::vector<double> values() const {
        std::vector<double> v;
        v.reserve(entries.size());
        for (const auto& e : entries)
            v.push_back(e.value);
        return v;
    }

    void validate() const {
        if (n_users == 0 || n_items == 0)
            throw FormatError("dataset has an empty dimension");
        if (!user_ids.empty() && user_ids.size() != n_users)
            throw FormatError("user dictionary size does not match C_U");
        if (!item_ids.empty() && item_ids.size() != n_items)
            throw FormatError("item dictionary size does not match C_I");
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(entries.size());
        for (const auto& e : entries) {
            if (e.user >= n_users || e.item >= n_items)
                throw FormatError("entry index out of range");
            if (e.value == 0.0 || !std::isfinite(e.value))
                throw FormatError("stored responses must be finite and nonzero");
            if (!seen.insert(coord_key(e.user, e.item)).second)
                throw FormatError("duplicate (user, item) pair " + std::to_string(e.user) +
                                  "," + std::to_string(e.item));
        }
    }

    friend bool operator==(const SparseDataset&, const SparseDataset&) = default;
};

enum class TripletFormat { Tsv, Csv };

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t zero_rows_rejected = 0;
    std::size_t duplicates_replaced = 0;
};

struct LoadedDataset {
    SparseDataset dataset;
    LoadReport report;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' '))
        s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ')
        s.remove_prefix(1);
    return s;
}

inline std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& dict,
                            std::vector<std::string>& names, std::string_view id) {
    auto [it, inserted] = dict.try_emplace(std::string(id),
                                           static_cast<std::uint32_t>(names.size()));
    if (inserted)
        names.emplace_back(id);
    return it->second;
}

} // namespace detail

/// Reads `user SEP item SEP value` rows. IDs are remapped densely in order
/// of first appearance; a repeated (user, item) keeps the last value.
inline LoadedDataset load_triplets(const std::filesystem::path& path,
                                   TripletFormat format = TripletFormat::Tsv,
                                   bool has_header = false) {
    auto in = io::open_in(path, false);
    const char sep = format == TripletFormat::Tsv ? '\t' : ',';
    LoadedDataset out;
    auto& ds = out.dataset;
    std::unordered_map<std::string, std::uint32_t> users, items;
    std::unordered_map<std::uint64_t, std::size_t> position;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (has_header && lineno == 1)
            continue;
        const auto body = detail::trim(line);
        if (body.empty())
            continue;
        const auto f = detail::split_fields(body, sep);
        if (f.size() != 3)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields, got " +
                              std::to_string(f.size()));
        const auto uid = detail::trim(f[0]);
        const auto iid = detail::trim(f[1]);
        const auto vtxt = detail::trim(f[2]);
        if (uid.empty() || iid.empty())
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty identifier");
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(vtxt.data(), vtxt.data() + vtxt.size(), value);
        if (ec != std::errc{} || ptr != vtxt.data() + vtxt.size() || !std::isfinite(value))
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value '" +
                              std::string(vtxt) + "'");
        ++out.report.rows_read;
        if (value == 0.0) {
            ++out.report.zero_rows_rejected;
            continue;
        }
        const auto u = detail::intern(users, ds.user_ids, uid);
        const auto i = detail::intern(items, ds.item_ids, iid);
        const auto key = coord_key(u, i);
        if (auto it = position.find(key); it != position.end()) {
            ds.entries[it->second].value = value;
            ++out.report.duplicates_replaced;
        } else {
            position.emplace(key, ds.entries.size());
            ds.entries.push_back({u, i, value});
        }
    }
    if (ds.entries.empty())
        throw FormatError(path.string() + ": no non-zero entries");
    ds.n_users = ds.user_ids.size();
    ds.n_items = ds.item_ids.size();
    return out;
}

inline std::string format_value(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline void write_triplets(std::ostream& os, const SparseDataset& ds,
                           const std::vector<Entry>& entries, char sep = '\t') {
    auto uname = [&](std::uint32_t u) {
        return ds.user_ids.empty() ? std::to_string(u) : ds.user_ids[u];
    };
    auto iname = [&](std::uint32_t i) {
        return ds.item_ids.empty() ? std::to_string(i) : ds.item_ids[i];
    };
    for (const auto& e : entries)
        os << uname(e.user) << sep << iname(e.item) << sep << format_value(e.value) << '\n';
}

inline void save_triplets(const SparseDataset& ds, const std::filesystem::path& path,
                          TripletFormat format = TripletFormat::Tsv) {
    io::write_atomically(
        path, [&](std::ostream& os) { write_triplets(os, ds, ds.entries, format == TripletFormat::Tsv ? '\t' : ','); },
        false);
}

// ---------------------------------------------------------------------------
// Binary cache

inline constexpr io::Magic dataset_magic = {'H', 'C', 'P', 'F', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t dataset_version = 1;

inline void write_dataset(io::BinaryWriter& w, const SparseDataset& ds) {
    w.put<std::uint64_t>(ds.n_users);
    w.put<std::uint64_t>(ds.n_items);
    w.put<std::uint64_t>(ds.user_ids.size());
    for (const auto& s : ds.user_ids)
        w.put_string(s);
    w.put<std::uint64_t>(ds.item_ids.size());
    for (const auto& s : ds.item_ids)
        w.put_string(s);
    w.put_vector(ds.entries);
}

inline SparseDataset read_dataset(io::BinaryReader& r) {
    SparseDataset ds;
    ds.n_users = r.get<std::uint64_t>();
    ds.n_items = r.get<std::uint64_t>();
    const auto nu = r.get<std::uint64_t>();
    if (nu != 0 && nu != ds.n_users)
        throw FormatError("user dictionary size does not match C_U");
    for (std::uint64_t k = 0; k < nu; ++k)
        ds.user_ids.push_back(r.get_string());
    const auto ni = r.get<std::uint64_t>();
    if (ni != 0 && ni != ds.n_items)
        throw FormatError("item dictionary size does not match C_I");
    for (std::uint64_t k = 0; k < ni; ++k)
        ds.item_ids.push_back(r.get_string());
    ds.entries = r.get_vector<Entry>();
    return ds;
}

inline void save_dataset_binary(const SparseDataset& ds, const std::filesystem::path& path) {
    io::write_atomically(path, [&](std::ostream& os) {
        io::BinaryWriter w(os);
        w.put_magic(dataset_magic);
        w.put<std::uint32_t>(dataset_version);
        write_dataset(w, ds);
    });
}

inline SparseDataset load_dataset_binary(const std::filesystem::path& path) {
    auto in = io::open_in(path);
    io::BinaryReader r(in, path.string());
    r.expect_magic(dataset_magic);
    if (const auto v = r.get<std::uint32_t>(); v != dataset_version)
        throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(v));
    auto ds = read_dataset(r);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Train / validation / test split

struct SplitSet {
    SparseDataset train;
    std::vector<Entry> validation_nonmissing;
    std::vector<Entry> test_nonmissing;
    std::vector<Coord> validation_missing;
    std::vector<Coord> test_missing;

    std::size_t total_nonmissing() const {
        return train.entries.size() + validation_nonmissing.size() + test_nonmissing.size();
    }

    /// Missing cells of the original matrix.
    double total_missing() const {
        return train.grid_size() - static_cast<double>(total_nonmissing());
    }

    /// Coordinates held out of training (both validation and test parts).
    std::unordered_set<std::uint64_t> held_out_keys() const {
        std::unordered_set<std::uint64_t> keys;
        keys.reserve(validation_nonmissing.size() + test_nonmissing.size() +
                     validation_missing.size() + test_missing.size());
        for (const auto& e : validation_nonmissing)
            keys.insert(coord_key(e.user, e.item));
        for (const auto& e : test_nonmissing)
            keys.insert(coord_key(e.user, e.item));
        for (const auto& c : validation_missing)
            keys.insert(coord_key(c.user, c.item));
        for (const auto& c : test_missing)
            keys.insert(coord_key(c.user, c.item));
        return keys;
    }

    friend bool operator==(const SplitSet&, const SplitSet&) = default;
};

inline SplitSet split(const SparseDataset& data, double test_frac = 0.2,
                      double valid_frac = 0.01, std::uint64_t seed = 0) {
    if (!(test_frac > 0.0) || !(valid_frac > 0.0) || !(test_frac + valid_frac < 1.0))
        throw InvalidParameter("split fractions must be positive and sum below one");
    const std::size_t n = data.entries.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(n)));
    if (n_test == 0 || n_valid == 0 || n_test + n_valid >= n)
        throw InvalidParameter("dataset with " + std::to_string(n) +
                               " entries is too small to split");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k)
        order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);

    SplitSet out;
    out.train.n_users = data.n_users;
    out.train.n_items = data.n_items;
    out.train.user_ids = data.user_ids;
    out.train.item_ids = data.item_ids;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& e = data.entries[order[k]];
        if (k < n_test)
            out.test_nonmissing.push_back(e);
        else if (k < n_test + n_valid)
            out.validation_nonmissing.push_back(e);
        else
            out.train.entries.push_back(e);
    }
    // Keep training entries in their original order.
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid),
                                       order.end());
    std::sort(train_idx.begin(), train_idx.end());
    out.train.entries.clear();
    for (auto k : train_idx)
        out.train.entries.push_back(data.entries[k]);

    std::unordered_set<std::uint64_t> taken;
    taken.reserve(n + 2 * (n_test + n_valid));
    for (const auto& e : data.entries)
        taken.insert(coord_key(e.user, e.item));
    std::uniform_int_distribution<std::uint32_t> pick_user(0, static_cast<std::uint32_t>(data.n_users - 1));
    std::uniform_int_distribution<std::uint32_t> pick_item(0, static_cast<std::uint32_t>(data.n_items - 1));
    const std::size_t needed = n_test + n_valid;
    const std::size_t budget = 100 * needed + 10000;
    std::size_t attempts = 0;
    auto draw_missing = [&](std::size_t count, std::vector<Coord>& dst) {
        while (dst.size() < count) {
            if (++attempts > budget)
                throw InvalidParameter("matrix too dense: could not sample " + std::to_string(needed) +
                                       " missing coordinates");
            const Coord c{pick_user(rng), pick_item(rng)};
            if (taken.insert(coord_key(c.user, c.item)).second)
                dst.push_back(c);
        }
    };
    draw_missing(n_test, out.test_missing);
    draw_missing(n_valid, out.validation_missing);
    return out;
}

inline constexpr io::Magic split_magic = {'H', 'C', 'P', 'F', 'S', 'P', 'L', 'T'};
inline constexpr std::uint32_t split_version = 1;

inline void save_split(const SplitSet& s, const std::filesystem::path& path) {
    io::write_atomically(path, [&](std::ostream& os) {
        io::BinaryWriter w(os);
        w.put_magic(split_magic);
        w.put<std::uint32_t>(split_version);
        write_dataset(w, s.train);
        w.put_vector(s.validation_nonmissing);
        w.put_vector(s.test_nonmissing);
        w.put_vector(s.validation_missing);
        w.put_vector(s.test_missing);
    });
}

inline SplitSet load_split(const std::filesystem::path& path) {
    auto in = io::open_in(path);
    io::BinaryReader r(in, path.string());
    r.expect_magic(split_magic);
    if (const auto v = r.get<std::uint32_t>(); v != split_version)
        throw FormatError(path.string() + ": unsupported split version " + std::to_string(v));
    SplitSet s;
    s.train = read_dataset(r);
    s.validation_nonmissing = r.get_vector<Entry>();
    s.test_nonmissing = r.get_vector<Entry>();
    s.validation_missing = r.get_vector<Coord>();
    s.test_missing = r.get_vector<Coord>();
    s.train.validate();
    return s;
}

} // namespace hcpf
