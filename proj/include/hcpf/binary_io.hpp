#pragma once

// Little helpers for the versioned binary files (dataset cache, split,
// model). Values are written in host byte order; files are not meant to
// travel between architectures.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "hcpf/error.hpp"

namespace hcpf::io {

using Magic = std::array<char, 8>;

class BinaryWriter {
  public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    template <class T>
        requires std::is_trivially_copyable_v<T>
    void put(const T& v) {
        os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    template <class T>
        requires std::is_trivially_copyable_v<T>
    void put_vector(const std::vector<T>& v) {
        put<std::uint64_t>(v.size());
        if (!v.empty())
            os_.write(reinterpret_cast<const char*>(v.data()),
                      static_cast<std::streamsize>(v.size() * sizeof(T)));
    }

    void put_string(std::string_view s) {
        put<std::uint64_t>(s.size());
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void put_magic(const Magic& m) { os_.write(m.data(), m.size()); }

  private:
    std::ostream& os_;
};

class BinaryReader {
  public:
    BinaryReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

    template <class T>
        requires std::is_trivially_copyable_v<T>
    T get() {
        T v;
        read(reinterpret_cast<char*>(&v), sizeof(T));
        return v;
    }

    template <class T>
        requires std::is_trivially_copyable_v<T>
    std::vector<T> get_vector(std::uint64_t max_elems = std::uint64_t{1} << 40) {
        const auto n = get<std::uint64_t>();
        if (n > max_elems)
            throw FormatError(source_ + ": implausible array length " + std::to_string(n));
        std::vector<T> v(n);
        if (n)
            read(reinterpret_cast<char*>(v.data()), n * sizeof(T));
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint64_t>();
        if (n > (std::uint64_t{1} << 32))
            throw FormatError(source_ + ": implausible string length");
        std::string s(n, '\0');
        if (n)
            read(s.data(), n);
        return s;
    }

    void expect_magic(const Magic& m) {
        Magic got{};
        read(got.data(), got.size());
        if (got != m)
            throw FormatError(source_ + ": bad magic bytes (expected " +
                              std::string(m.data(), m.size()) + ")");
    }

  private:
    void read(char* dst, std::size_t n) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw FormatError(source_ + ": truncated file");
    }

    std::istream& is_;
    std::string source_;
};

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = true) {
    std::ifstream f(p, binary ? std::ios::binary : std::ios::in);
    if (!f)
        throw IoError("cannot open '" + p.string() + "' for reading");
    return f;
}

/// Writes through a sibling temporary file and renames it into place, so
/// a failed write never leaves a partial output behind.
template <class Fn> void write_atomically(const std::filesystem::path& p, Fn&& fill,
                                          bool binary = true) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
        if (!f)
            throw IoError("cannot open '" + p.string() + "' for writing");
        fill(f);
        f.flush();
        if (!f)
            throw IoError("write to '" + p.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, p, ec);
    if (ec)
        throw IoError("cannot move output into '" + p.string() + "': " + ec.message());
}

} // namespace hcpf::io
