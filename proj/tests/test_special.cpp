#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "hcpf/special.hpp"

using namespace hcpf::special;

TEST(Special, LogSumExpMatchesDirectSum) {
    const std::vector<double> v{-1.0, 0.5, 2.0};
    EXPECT_NEAR(log_sum_exp(v), std::log(std::exp(-1.0) + std::exp(0.5) + std::exp(2.0)), 1e-14);
}

TEST(Special, LogSumExpHandlesLargeAndInfiniteTerms) {
    const std::vector<double> big{1000.0, 1000.0};
    EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
    const std::vector<double> with_inf{neg_inf, 0.0};
    EXPECT_DOUBLE_EQ(log_sum_exp(with_inf), 0.0);
    const std::vector<double> all_inf{neg_inf, neg_inf};
    EXPECT_EQ(log_sum_exp(all_inf), neg_inf);
    EXPECT_EQ(log_sum_exp(std::vector<double>{}), neg_inf);
}

TEST(Special, LogAddExp) {
    EXPECT_NEAR(log_add_exp(std::log(2.0), std::log(3.0)), std::log(5.0), 1e-15);
    EXPECT_DOUBLE_EQ(log_add_exp(neg_inf, 1.5), 1.5);
}

TEST(Special, Log1mexpAcrossRegimes) {
    for (double x : {1e-10, 1e-3, 0.5, 0.7, 1.0, 5.0, 40.0})
        EXPECT_NEAR(log1mexp(x), std::log(-std::expm1(-x)), 1e-12 * std::abs(std::log(-std::expm1(-x))) + 1e-15)
            << x;
}

TEST(Special, LogExpm1) {
    for (double x : {1e-8, 0.3, 2.0, 50.0})
        EXPECT_NEAR(log_expm1(x), std::log(std::expm1(x)), 1e-12 * std::max(1.0, std::abs(std::log(std::expm1(x)))));
    EXPECT_NEAR(log_expm1(800.0), 800.0, 1e-12);
}

TEST(Special, DigammaKnownValues) {
    const double euler_gamma = 0.57721566490153286061;
    EXPECT_NEAR(digamma(1.0), -euler_gamma, 1e-14);
    EXPECT_NEAR(digamma(0.5), -euler_gamma - 2.0 * std::log(2.0), 1e-14);
    EXPECT_NEAR(trigamma(1.0), M_PI * M_PI / 6.0, 1e-13);
}

TEST(Special, DigammaRecurrence) {
    for (double x : {0.01, 0.3, 2.5, 17.0})
        EXPECT_NEAR(digamma(x + 1.0) - digamma(x), 1.0 / x, 1e-10 / x);
}

TEST(Special, LogFactorialAndPoissonPmf) {
    EXPECT_NEAR(log_factorial(5.0), std::log(120.0), 1e-13);
    EXPECT_NEAR(poisson_log_pmf(0.0, 7.0), -7.0, 1e-15);
    EXPECT_NEAR(poisson_log_pmf(3.0, 2.0), std::log(8.0 / 6.0) - 2.0, 1e-14);
}

TEST(Special, IsInteger) {
    EXPECT_TRUE(is_integer(3.0));
    EXPECT_TRUE(is_integer(3.0 + 1e-12));
    EXPECT_FALSE(is_integer(3.1));
    EXPECT_FALSE(is_integer(std::numeric_limits<double>::infinity()));
}
