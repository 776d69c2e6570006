/*
 * Sphere geometry: surface areas, rescaling, uniform sampling moments,
 * tangential projection, the ψ change-of-variables maps (round trips,
 * Jacobians against finite differences, the branch boundary), and the
 * |x|⁻² moment identity.
 */
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "kacsphere/sphere.hpp"

using namespace kacsphere;

TEST_CASE("surface area of the radius-R sphere") {
    /* |S^{N−1}(R)| = 2 π^{N/2} R^{N−1} / Γ(N/2) */
    auto closed = [](long n, double r) {
        return kLogTwo + 0.5 * n * std::log(kPi) - std::lgamma(0.5 * n) +
               (n - 1.0) * std::log(r);
    };
    CHECK(log_surface_area(2, 1.0) == Catch::Approx(std::log(2.0 * kPi)).epsilon(1e-13));
    CHECK(log_surface_area(3, 1.0) == Catch::Approx(std::log(4.0 * kPi)).epsilon(1e-13));
    CHECK(log_surface_area(3, 2.0) == Catch::Approx(std::log(16.0 * kPi)).epsilon(1e-13));
    for (long n : {2L, 5L, 24L, 100L, 1000L})
        CHECK(log_surface_area(n, std::sqrt(static_cast<double>(n))) ==
              Catch::Approx(closed(n, std::sqrt(static_cast<double>(n)))).margin(1e-10));
    CHECK(log_surface_area(100, 1.0) == Catch::Approx(-86.636102473314932).epsilon(1e-13));
    CHECK_THROWS_AS(log_surface_area(1, 1.0), std::domain_error);
    CHECK_THROWS_AS(log_surface_area(3, 0.0), std::domain_error);
}

TEST_CASE("rescaling puts any vector on the energy sphere") {
    std::mt19937_64 eng(11);
    std::normal_distribution<double> d;
    for (long n : {2L, 7L, 64L}) {
        std::vector<double> x(n);
        for (auto& v : x) v = 2.5 * d(eng) + 0.3;
        auto y = rescale(x);
        double n2 = 0.0;
        for (double v : y) n2 += v * v;
        CHECK(n2 == Catch::Approx(static_cast<double>(n)).epsilon(1e-12));
        /* direction preserved */
        CHECK(y[0] * x[1] == Catch::Approx(y[1] * x[0]).margin(1e-10));
    }
}

TEST_CASE("uniform sphere ensemble: constraint, moments, determinism") {
    const long n = 8, m = 20000;
    const auto e = sample_uniform_sphere(n, m, 5);
    REQUIRE(e.M == m);
    double mean1 = 0.0, mean4 = 0.0;
    for (long i = 0; i < m; ++i) {
        const auto r = e.row(i);
        double n2 = 0.0;
        for (double v : r) n2 += v * v;
        REQUIRE(n2 == Catch::Approx(static_cast<double>(n)).epsilon(1e-10));
        mean1 += r[0];
        mean4 += r[0] * r[0] * r[0] * r[0];
    }
    mean1 /= m;
    mean4 /= m;
    CHECK(std::abs(mean1) < 5.0 / std::sqrt(static_cast<double>(m)));
    /* E[x₁⁴] = 3N²/((N+2)N) · ... for the √N sphere: 3N/(N+2) */
    const double target = 3.0 * n / (n + 2.0);
    CHECK(std::abs(mean4 - target) < 0.15);
    /* streams are keyed by (seed, N, index): reruns identical, seeds differ */
    const auto e2 = sample_uniform_sphere(n, 100, 5);
    for (long i = 0; i < 100; ++i)
        for (long j = 0; j < n; ++j) REQUIRE(e2.row(i)[j] == e.row(i)[j]);
    const auto e3 = sample_uniform_sphere(n, 1, 6);
    CHECK(e3.row(0)[0] != e.row(0)[0]);
}

TEST_CASE("tangential projection removes the radial component") {
    const long n = 6;
    const auto e = sample_uniform_sphere(n, 3, 17);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> d;
    for (long i = 0; i < 3; ++i) {
        const auto y = e.row(i);
        std::vector<double> g(n);
        for (auto& v : g) v = d(eng);
        spherical_project_in_place(g, y);
        double inner = 0.0;
        for (long j = 0; j < n; ++j) inner += g[j] * y[j];
        CHECK(std::abs(inner) < 1e-10);
        /* idempotent */
        std::vector<double> g2 = g;
        spherical_project_in_place(g2, y);
        for (long j = 0; j < n; ++j) CHECK(g2[j] == Catch::Approx(g[j]).margin(1e-12));
    }
    /* gradient of x ↦ x₁ on the sphere is e₁ − (y₁/N)·y */
    const auto y = e.row(0);
    const auto grad = spherical_gradient(
        [](std::span<const double> x) { return x[0]; }, y);
    for (long j = 0; j < n; ++j) {
        const double expect = (j == 0 ? 1.0 : 0.0) - y[0] * y[j] / static_cast<double>(n);
        CHECK(grad[j] == Catch::Approx(expect).margin(1e-7));
    }
}

TEST_CASE("psi map: parameters, round trips, branch boundary") {
    const double n = 1000.0, q = 0.3, u = 0.7;
    for (int k : {1, 2, 3}) {
        const auto m = psi_for(n, q, u, k);
        CHECK(m.a == n);
        CHECK(m.b == Catch::Approx(n + u * std::pow(n, 1.0 - q)).epsilon(1e-14));
        CHECK(m.c == Catch::Approx(std::pow(n, 0.5 * (1.0 - q))).epsilon(1e-14));
        CHECK(m.z0_squared() == Catch::Approx(m.a * m.c / (m.b + m.c)).epsilon(1e-14));

        std::mt19937_64 eng(23 + k);
        std::normal_distribution<double> d;
        for (int rep = 0; rep < 50; ++rep) {
            /* inner branch: |x| below the kink pre-image; outer: above */
            std::vector<double> x(k);
            for (auto& v : x) v = d(eng) * (rep % 2 == 0 ? 0.1 : 3.0);
            const auto z = psi_forward(m, x);
            const auto back = psi_inverse(m, z);
            for (int j = 0; j < k; ++j)
                CHECK(back[j] == Catch::Approx(x[j]).margin(1e-10 * (1.0 + std::abs(x[j]))));
        }
    }
    /* boundary flag requires bit-exact |z|² = z₀²; craft a map with z₀² = 1 */
    PsiMap edge;
    edge.a = 2.0;
    edge.b = 1.0;
    edge.c = 1.0;
    edge.k = 1;
    REQUIRE(edge.z0_squared() == 1.0);
    bool on_boundary = false;
    (void)psi_inverse(edge, std::vector<double>{1.0}, &on_boundary);
    CHECK(on_boundary);
    (void)psi_inverse(edge, std::vector<double>{0.5}, &on_boundary);
    CHECK_FALSE(on_boundary);
}

TEST_CASE("psi inverse Jacobian against finite differences") {
    const auto m = psi_for(300.0, 0.4, 1.0, 2);
    auto det_fd = [&](std::span<const double> z) {
        const double h = 1e-6;
        double j[2][2];
        for (int col = 0; col < 2; ++col) {
            std::vector<double> zp(z.begin(), z.end()), zm(z.begin(), z.end());
            zp[col] += h;
            zm[col] -= h;
            const auto fp = psi_inverse(m, zp);
            const auto fm = psi_inverse(m, zm);
            for (int row = 0; row < 2; ++row) j[row][col] = (fp[row] - fm[row]) / (2.0 * h);
        }
        return j[0][0] * j[1][1] - j[0][1] * j[1][0];
    };
    const double z0 = m.z0();
    const std::vector<double> inner = {0.3 * z0, 0.2 * z0};
    const std::vector<double> outer = {1.4 * z0, 0.9 * z0};
    CHECK(psi_inverse_jacobian_det(m, inner) == Catch::Approx(det_fd(inner)).epsilon(1e-5));
    CHECK(psi_inverse_jacobian_det(m, outer) == Catch::Approx(det_fd(outer)).epsilon(1e-5));
    /* outer branch is a fixed dilation: det = ((b+c)/a)^{k/2} */
    CHECK(psi_inverse_jacobian_det(m, outer) ==
          Catch::Approx(std::pow((m.b + m.c) / m.a, 1.0)).epsilon(1e-12));
    /* operator-norm deviation ‖Dψ⁻¹ − Id‖: max over the tangential eigenvalue
     * s and the radial one s·a/(a−|z|²) on the inner branch */
    {
        const double z2 = inner[0] * inner[0] + inner[1] * inner[1];
        const double s = std::sqrt(m.b / (m.a - z2));
        const double radial = s * m.a / (m.a - z2);
        const double expect = std::max(std::abs(s - 1.0), std::abs(radial - 1.0));
        CHECK(psi_inverse_jacobian_deviation(m, inner) ==
              Catch::Approx(expect).epsilon(1e-13));
        CHECK(psi_inverse_jacobian_deviation(m, outer) ==
              Catch::Approx(std::abs(std::sqrt((m.b + m.c) / m.a) - 1.0)).epsilon(1e-13));
    }
}

TEST_CASE("inverse square-norm identity") {
    /* E[|Z|⁻² φ(Z/|Z|)] = E_{σ₁}[φ]/(N−2); with φ = u₁² + 0.3 the right side
     * is (1/N + 0.3)/(N−2) exactly. */
    const long n = 10;
    const auto check = inverse_norm2_identity_check(
        n, [](std::span<const double> u) { return u[0] * u[0] + 0.3; }, 20000, 99);
    CHECK(std::abs(check.discrepancy) <= 3.0 * check.combined_se + 1e-12);
    const double exact = (1.0 / n + 0.3) / (n - 2.0);
    CHECK(check.lhs == Catch::Approx(exact).margin(5.0 * check.lhs_se + 1e-6));
    CHECK_THROWS_AS(inverse_norm2_identity_check(
                        2, [](std::span<const double>) { return 1.0; }, 10, 1),
                    std::invalid_argument);
}
