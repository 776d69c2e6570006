/*
 * Closed-form rate calculators: exact values at hand-checked parameter
 * points, an independent numeric maximization for the L¹ exponent, and
 * domain guards.
 */
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kacsphere/rates.hpp"

using namespace kacsphere;

TEST_CASE("w2 exponent branches over the moment order") {
    CHECK(w2_rate(6.0).exponent == 0.5);
    CHECK_FALSE(w2_rate(6.0).log_factor);
    CHECK(w2_rate(4.0).exponent == 0.5);
    CHECK(w2_rate(4.0).log_factor);
    CHECK(w2_rate(3.0).exponent == Catch::Approx(1.0 / 3.0).margin(1e-15));
    CHECK(w2_rate(2.5).exponent == Catch::Approx(0.2).margin(1e-15));
    CHECK_THROWS_AS(w2_rate(2.0), std::domain_error);
    CHECK(w2_rate(4.0).shape_value(std::exp(1.0)) ==
          Catch::Approx(std::exp(-0.5)).margin(1e-15));
}

TEST_CASE("wr interpolation exponent") {
    const auto wr = wr_rate(6.0, 3.0);
    CHECK(wr.b == Catch::Approx(0.75).margin(1e-12));
    CHECK(wr.shape.exponent == Catch::Approx(0.75 * 0.5).margin(1e-12));
    CHECK(wr.shape.tag == "wr");
    CHECK(wr_rate(5.0, 2.0).b == Catch::Approx(1.0).margin(1e-12));
    /* the log survives only when the full w2 shape is taken (b = 1) */
    CHECK(wr_rate(4.0, 2.0).shape.log_factor);
    CHECK_FALSE(wr_rate(4.0, 3.0).shape.log_factor);
    CHECK_THROWS_AS(wr_rate(3.0, 3.0), std::domain_error);
    CHECK_THROWS_AS(wr_rate(6.0, 1.5), std::domain_error);
}

TEST_CASE("l1 marginal exponent at pinned parameters") {
    CHECK(l1_eta(1.0, 2.0, 0.0) == Catch::Approx(0.25).margin(1e-12));
    CHECK(l1_qstar(1.0, 2.0, 0.0) == Catch::Approx(0.375).margin(1e-12));
    /* k = 1 with a step target (r = 1): δ = 2 costs four more in the clock */
    CHECK(l1_eta(1.0, 2.0, 1.0) == Catch::Approx(2.0 / 12.0).margin(1e-12));
    /* follows two coordinates, thin moment */
    CHECK(l1_eta(2.0, 1.0, 0.0) == Catch::Approx(1.0 / 8.0).margin(1e-12));
    CHECK_THROWS_AS(l1_eta(0.5, 2.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(l1_eta(1.0, 2.5, 0.0), std::domain_error);
    CHECK_THROWS_AS(l1_eta(1.0, 0.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(l1_eta(1.0, 2.0, -1.0), std::domain_error);
}

TEST_CASE("l1 exponent agrees with direct maximization of min(eta1,eta2,eta3)") {
    for (double k : {1.0, 2.0, 3.0, 5.0}) {
        for (double delta : {0.25, 0.5, 1.0, 1.5, 2.0}) {
            for (double r : {0.0, 0.5, 1.0, 3.0}) {
                const auto num = l1_eta_numeric(k, delta, r);
                const double eta = l1_eta(k, delta, r);
                const double qs = l1_qstar(k, delta, r);
                INFO("k=" << k << " delta=" << delta << " r=" << r);
                CHECK(std::abs(num.eta - eta) < 1e-6);
                CHECK(std::abs(num.qstar - qs) < 1e-6);
                /* q* is a genuine maximizer of the pointwise minimum */
                auto obj = [&](double q) {
                    return std::min({l1_eta1(k, delta, r, q), l1_eta2(delta, q),
                                     l1_eta3(delta, q)});
                };
                CHECK(obj(qs) == Catch::Approx(eta).margin(1e-12));
                CHECK(obj(qs + 1e-3) <= eta + 1e-12);
                CHECK(obj(std::max(0.0, qs - 1e-3)) <= eta + 1e-12);
            }
        }
    }
}

TEST_CASE("l1 exponent monotonicity") {
    CHECK(l1_eta(1.0, 2.0, 0.0) > l1_eta(2.0, 2.0, 0.0));   // more coordinates: slower
    CHECK(l1_eta(1.0, 2.0, 0.0) > l1_eta(1.0, 1.0, 0.0));   // thinner moment: slower
    CHECK(l1_eta(1.0, 2.0, 0.0) > l1_eta(1.0, 2.0, 1.0));   // costlier target: slower
}

TEST_CASE("psi distortion constant and epsilon") {
    CHECK(psi_distortion_constant(1.0, 0.5) ==
          Catch::Approx(66.205138987668741).epsilon(1e-12));
    CHECK(psi_distortion_constant(1.0, 0.25) ==
          Catch::Approx(138.45150801037101).epsilon(1e-12));
    CHECK(psi_distortion_constant(3.0, 0.25) ==
          Catch::Approx(3665.91685644321).epsilon(1e-11));
    CHECK_THROWS_AS(psi_distortion_constant(1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(psi_distortion_constant(1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(psi_distortion_constant(0.0, 0.5), std::domain_error);

    const auto eps = epsilon_N(1.0, 0.5, 1.0e4);
    CHECK(eps.constant == Catch::Approx(66.205138987668741).epsilon(1e-12));
    CHECK(eps.value == Catch::Approx(66.205138987668741 * 1e-2).epsilon(1e-12));
    CHECK_THROWS_AS(epsilon_N(1.0, 0.5, 1.0), std::domain_error);
}

TEST_CASE("truncated-moment tail bound") {
    /* plain algebraic identity at a few points */
    for (double n : {16.0, 256.0}) {
        for (double q : {0.0, 0.25}) {
            const double db = 1.5;
            const double mom = 2.7;
            const double expo = 0.5 * db - (1.0 + 0.5 * db) * q;
            CHECK(vonbahr_bound(n, q, db, mom) ==
                  Catch::Approx(16.0 * mom * std::pow(n, -expo)).epsilon(1e-13));
        }
    }
    CHECK_THROWS_AS(vonbahr_bound(16.0, 1.0, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(vonbahr_bound(16.0, 0.5, 0.0, 1.0), std::domain_error);
}

TEST_CASE("entropic and conditioned exponents") {
    const auto e6 = entropic_rate(6.0);
    CHECK(e6.primary.exponent == Catch::Approx(1.0 / 14.0).margin(1e-12));
    CHECK(e6.primary.strict_inequality);
    CHECK(e6.secondary.exponent == Catch::Approx(0.5).margin(1e-12));
    const auto e3 = entropic_rate(3.0);
    CHECK(e3.primary.exponent == Catch::Approx(1.0 / 32.0).margin(1e-12));
    CHECK(e3.secondary.exponent == Catch::Approx(-0.25).margin(1e-12));
    CHECK_THROWS_AS(entropic_rate(2.0), std::domain_error);

    CHECK(conditioned_rate(3.0).exponent == Catch::Approx(0.75).margin(1e-12));
    CHECK(conditioned_rate(0.0).exponent == 0.0);
    CHECK_THROWS_AS(conditioned_rate(-1.0), std::domain_error);
}

TEST_CASE("threshold n_min") {
    CHECK(n_min(1.0, 2.0) == Catch::Approx(4.0).margin(1e-12));
    CHECK(n_min(1.0, 2.0, 0.5, 1.0) == Catch::Approx(4.0).margin(1e-12));
    /* the moment gate can dominate: (2k·EX²)^{1/(1−q)} */
    CHECK(n_min(2.0, 1.0, 0.25, 3.0) ==
          Catch::Approx(std::pow(12.0, 4.0 / 3.0)).epsilon(1e-12));
    CHECK_THROWS_AS(n_min(0.5, 2.0), std::domain_error);
    CHECK_THROWS_AS(n_min(1.0, 2.0, 1.0, 1.0), std::domain_error);
}

TEST_CASE("rate prediction helpers") {
    RatePrediction p;
    p.tag = "x";
    p.exponent = 0.5;
    CHECK_THROWS_AS(p.bound_value(4.0), std::logic_error);
    p.constant = 3.0;
    CHECK(p.bound_value(4.0) == Catch::Approx(1.5).margin(1e-13));
}
