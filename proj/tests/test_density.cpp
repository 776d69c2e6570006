/*
 * Base-density catalog: normalization and unit energy by direct quadrature,
 * moments against closed forms, score/derivative consistency, sampler-vs-CDF
 * agreement, and the Gaussian-relative functionals H(f|γ), I(f|γ) against
 * independently derived values.
 */
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "kacsphere/density.hpp"
#include "kacsphere/quadrature.hpp"

using namespace kacsphere;

namespace {
double quad_over_support(const DensityModel& m, const std::function<double(double)>& g) {
    return integrate([&](double x) { return g(x) * m.pdf(x); }, m.support_lo, m.support_hi,
                     m.kinks)
        .value;
}
}  // namespace

TEST_CASE("catalog lists the seven members") {
    const auto names = catalog_names();
    REQUIRE(names == std::vector<std::string>{"gamma", "gaussian", "mixture", "t3", "t5", "t9",
                                              "uniform-jump"});
    for (const auto& n : names) CHECK(catalog_lookup(n).name == n);
    CHECK_THROWS_AS(catalog_lookup("cauchy"), std::invalid_argument);
}

TEST_CASE("every member is a unit-energy probability density") {
    for (const auto& name : catalog_names()) {
        const auto m = catalog_lookup(name);
        INFO(name);
        CHECK(quad_over_support(m, [](double) { return 1.0; }) ==
              Catch::Approx(1.0).margin(1e-9));
        CHECK(quad_over_support(m, [](double x) { return x * x; }) ==
              Catch::Approx(1.0).margin(1e-8));
        CHECK(m.unit_energy);
        CHECK(m.bounded_pdf);
    }
}

TEST_CASE("gamma member is the standard Gaussian") {
    const auto g = catalog_lookup("gamma");
    CHECK(g.family == DensityFamily::Gaussian);
    CHECK(g.tail_order == kInf);
    CHECK(g.differentiable);
    /* E|X|^p = 2^{p/2} Γ((p+1)/2)/√π */
    CHECK(moment(g, 1.0).value == Catch::Approx(std::sqrt(2.0 / kPi)).epsilon(1e-13));
    CHECK(moment(g, 3.0).value == Catch::Approx(2.0 * std::sqrt(2.0 / kPi)).epsilon(1e-13));
    CHECK(moment(g, 4.0).value == Catch::Approx(3.0).epsilon(1e-13));
    /* closed form against quadrature at a non-integer order */
    const double direct =
        integrate([&](double x) { return std::pow(std::abs(x), 2.5) * g.pdf(x); }, -40.0, 40.0)
            .value;
    CHECK(moment(g, 2.5).value == Catch::Approx(direct).epsilon(1e-9));
    CHECK(rel_entropy_gaussian(g).value == Catch::Approx(0.0).margin(1e-14));
    CHECK(rel_fisher_gaussian(g).value == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("shifted gaussian divergences in closed form") {
    const auto m = catalog_lookup("gaussian");
    const double mu = m.mu, s2 = m.sigma * m.sigma;
    CHECK(mu == Catch::Approx(0.6).margin(1e-15));
    CHECK(m.sigma == Catch::Approx(0.8).margin(1e-15));
    const double h_closed = 0.5 * (s2 + mu * mu - 1.0) - std::log(m.sigma);
    const auto h = rel_entropy_gaussian(m);
    CHECK(h.value == Catch::Approx(h_closed).epsilon(1e-13));
    CHECK(h.value == Catch::Approx(0.22314355131420976).epsilon(1e-13));
    /* I(f|γ) = E_f[(score_f − score_γ)²] for Gaussians: (1−1/σ²)²σ² + μ² */
    const double a = 1.0 - 1.0 / s2;
    const auto fisher = rel_fisher_gaussian(m);
    CHECK(fisher.value == Catch::Approx(a * a * s2 + mu * mu).epsilon(1e-13));
    CHECK(fisher.value == Catch::Approx(0.5625).epsilon(1e-13));
    /* quadrature cross-check of the closed form */
    const double h_quad = quad_over_support(
        m, [&](double x) { return m.log_pdf(x) + 0.5 * x * x + 0.5 * kLogTwoPi; });
    CHECK(h_quad == Catch::Approx(h_closed).margin(1e-10));
}

TEST_CASE("two-bump mixture divergences by quadrature") {
    const auto m = catalog_lookup("mixture");
    CHECK(m.family == DensityFamily::Mixture);
    CHECK(m.unit_energy);
    const auto h = rel_entropy_gaussian(m);
    CHECK(h.method == "adaptive-quadrature");
    CHECK(h.value == Catch::Approx(0.0019727200944741436).epsilon(1e-10));
    const auto fisher = rel_fisher_gaussian(m);
    CHECK(fisher.value == Catch::Approx(0.018222328791898409).epsilon(1e-10));
    /* independent evaluation of I(f|γ) = ∫ f·(score + x)² */
    const double direct = quad_over_support(m, [&](double x) {
        const double d = m.score(x) + x;
        return d * d;
    });
    CHECK(fisher.value == Catch::Approx(direct).margin(1e-10));
}

TEST_CASE("student members: tails, moments, divergence flags") {
    const auto t3 = catalog_lookup("t3");
    const auto t5 = catalog_lookup("t5");
    const auto t9 = catalog_lookup("t9");
    CHECK(t3.tail_order == 3.0);
    CHECK(t5.tail_order == 5.0);
    CHECK(t9.tail_order == 9.0);
    /* unit-variance Student-t: EX⁴ = 3 + 6/(ν−4) for ν > 4 */
    CHECK(moment(t5, 4.0).value == Catch::Approx(9.0).epsilon(1e-12));
    CHECK(moment(t9, 4.0).value == Catch::Approx(4.2).epsilon(1e-12));
    CHECK(moment(t5, 3.0).value == Catch::Approx(2.2053155816871682).epsilon(1e-12));
    CHECK(moment(t3, 4.0).diverged);
    CHECK(moment(t3, 3.0).diverged);
    CHECK_FALSE(moment(t3, 2.9).diverged);
    CHECK(moment(t5, 5.0).diverged);
    CHECK_FALSE(moment(t5, 4.99).diverged);
    /* t densities have finite H and I relative to γ */
    CHECK(rel_entropy_gaussian(t5).value > 0.0);
    CHECK(rel_fisher_gaussian(t5).value > 0.0);
}

TEST_CASE("uniform-jump member") {
    const auto m = catalog_lookup("uniform-jump");
    const double c = std::sqrt(3.0);
    CHECK_FALSE(m.differentiable);
    CHECK(m.family == DensityFamily::UniformJump);
    CHECK(m.support_lo == Catch::Approx(-c).margin(1e-15));
    CHECK(m.support_hi == Catch::Approx(c).margin(1e-15));
    REQUIRE_FALSE(m.kinks.empty());
    CHECK(std::any_of(m.kinks.begin(), m.kinks.end(),
                      [](double k) { return std::abs(k) < 1e-15; }));
    const double lo_level = 1.0 / (3.0 * c), hi_level = 2.0 / (3.0 * c);
    CHECK(m.pdf(-1.0) == Catch::Approx(lo_level).epsilon(1e-13));
    CHECK(m.pdf(1.0) == Catch::Approx(hi_level).epsilon(1e-13));
    CHECK(m.pdf(2.0) == 0.0);
    CHECK(m.pdf(-2.0) == 0.0);
    /* H(f|γ) by hand: ∫f log f + EX²/2 + log√(2π) over the two plateaus */
    const double h_closed = c * (lo_level * std::log(lo_level) + hi_level * std::log(hi_level)) +
                            0.5 + 0.5 * kLogTwoPi;
    const auto h = rel_entropy_gaussian(m);
    CHECK(h.value == Catch::Approx(h_closed).epsilon(1e-12));
    CHECK(h.value == Catch::Approx(0.23311822057580508).epsilon(1e-12));
    CHECK_THROWS_AS(rel_fisher_gaussian(m), std::invalid_argument);
    /* kink evaluation refuses a derivative */
    CHECK_FALSE(evaluate(m, 0.0).has_derivative);
    CHECK_FALSE(evaluate(m, c).has_derivative);
}

TEST_CASE("score equals pdf'/pdf and matches a finite difference") {
    for (const auto& name : catalog_names()) {
        const auto m = catalog_lookup(name);
        if (!m.differentiable) continue;
        for (double x : {-2.3, -0.7, 0.41, 1.9}) {
            INFO(name << " at x=" << x);
            const double f = m.pdf(x);
            REQUIRE(f > 0.0);
            CHECK(m.score(x) == Catch::Approx(m.pdf_derivative(x) / f).epsilon(1e-10));
            const double hstep = 1e-6;
            const double fd = (m.log_pdf(x + hstep) - m.log_pdf(x - hstep)) / (2.0 * hstep);
            CHECK(m.score(x) == Catch::Approx(fd).margin(1e-5));
        }
    }
}

TEST_CASE("samplers agree with their CDFs and moments") {
    const long draws = 40000;
    for (const auto& name : catalog_names()) {
        const auto m = catalog_lookup(name);
        std::mt19937_64 eng(7);
        std::vector<double> xs(draws);
        double mean = 0.0, second = 0.0;
        for (long i = 0; i < draws; ++i) {
            xs[i] = m.sampler(eng);
            mean += xs[i];
            second += xs[i] * xs[i];
        }
        mean /= draws;
        second /= draws;
        std::sort(xs.begin(), xs.end());
        INFO(name);
        /* mean: within 5·√(Var/M), Var ≤ 1 for every member */
        const double expected_mean = quad_over_support(m, [](double x) { return x; });
        CHECK(std::abs(mean - expected_mean) < 5.0 / std::sqrt(static_cast<double>(draws)));
        /* second moment: skip the heavy-tailed t3 whose fourth moment diverges */
        if (!moment(m, 4.0).diverged) {
            const double var4 = moment(m, 4.0).value - 1.0;
            CHECK(std::abs(second - 1.0) <
                  5.0 * std::sqrt(var4 / static_cast<double>(draws)));
        }
        /* empirical CDF against the member's cdf at five abscissae */
        for (double x : {-1.5, -0.5, 0.0, 0.5, 1.5}) {
            const double frac =
                static_cast<double>(std::lower_bound(xs.begin(), xs.end(), x) - xs.begin()) /
                static_cast<double>(draws);
            CHECK(std::abs(frac - m.cdf(x)) < 0.012);
        }
    }
}

TEST_CASE("moment reports its method") {
    CHECK(moment(catalog_lookup("gamma"), 3.0).method == "closed-form");
    CHECK(moment(catalog_lookup("t5"), 3.0).method == "closed-form");
    /* uniform-jump has no closed moment table: quadrature path */
    CHECK(moment(catalog_lookup("uniform-jump"), 3.0).method == "adaptive-quadrature");
    const auto m = catalog_lookup("uniform-jump");
    const double direct = quad_over_support(
        m, [](double x) { return std::abs(x) * x * x; });
    CHECK(moment(m, 3.0).value == Catch::Approx(direct).epsilon(1e-10));
}
