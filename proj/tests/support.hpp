#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "hcpf/hcpf.hpp"
#include "oracles.hpp"

namespace support {

/// One moderately scaled element per family, in both parametrizations.
struct Example {
    hcpf::NativeParams native;
    oracle::Native reference;
};

inline const std::array<Example, 7>& examples() {
    using namespace hcpf::native;
    using oracle::Fam;
    static const std::array<Example, 7> ex = {{
        {Normal{2.0, 1.5}, {Fam::Normal, 2.0, 1.5}},
        {Gamma{5.0, 0.5}, {Fam::Gamma, 5.0, 0.5}},
        {InverseGaussian{1.5, 3.0}, {Fam::InvGauss, 1.5, 3.0}},
        {Poisson{3.0}, {Fam::Poisson, 3.0}},
        {Binomial{5.0, 0.3}, {Fam::Binomial, 5.0, 0.3}},
        {NegativeBinomial{3.0, 0.4}, {Fam::NegBinomial, 3.0, 0.4}},
        {ZeroTruncatedPoisson{2.0}, {Fam::Ztp, 2.0}},
    }};
    return ex;
}

inline hcpf::ElementSpec element(const Example& e) { return hcpf::to_edm(e.native); }

inline std::string name(const Example& e) {
    return std::string(hcpf::family_name(hcpf::family_of(e.native)));
}

/// Random native parameters for a family, covering a useful range.
template <class Rng> Example random_example(hcpf::EdmFamily f, Rng& rng) {
    using namespace hcpf::native;
    using oracle::Fam;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> small(1, 6);
    switch (f) {
    case hcpf::EdmFamily::Normal: {
        const double m = -3.0 + 6.0 * u(rng), v = 0.3 + 3.0 * u(rng);
        return {Normal{m, v}, {Fam::Normal, m, v}};
    }
    case hcpf::EdmFamily::Gamma: {
        const double a = 0.5 + 6.0 * u(rng), b = 0.2 + 2.0 * u(rng);
        return {Gamma{a, b}, {Fam::Gamma, a, b}};
    }
    case hcpf::EdmFamily::InverseGaussian: {
        const double m = 0.3 + 3.0 * u(rng), l = 0.5 + 5.0 * u(rng);
        return {InverseGaussian{m, l}, {Fam::InvGauss, m, l}};
    }
    case hcpf::EdmFamily::Poisson: {
        const double l = 0.3 + 6.0 * u(rng);
        return {Poisson{l}, {Fam::Poisson, l}};
    }
    case hcpf::EdmFamily::Binomial: {
        const double r = small(rng), p = 0.05 + 0.9 * u(rng);
        return {Binomial{r, p}, {Fam::Binomial, r, p}};
    }
    case hcpf::EdmFamily::NegativeBinomial: {
        const double r = small(rng), p = 0.05 + 0.8 * u(rng);
        return {NegativeBinomial{r, p}, {Fam::NegBinomial, r, p}};
    }
    case hcpf::EdmFamily::ZeroTruncatedPoisson: {
        const double l = 0.2 + 5.0 * u(rng);
        return {ZeroTruncatedPoisson{l}, {Fam::Ztp, l}};
    }
    }
    throw std::logic_error("unknown family");
}

/// A scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("hcpf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace support
