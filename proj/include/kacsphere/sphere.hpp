/*
 * sphere.hpp — geometry of the radius-√N sphere S^{N−1} = {x : Σxᵢ² = N}.
 *
 * The rescaling map x ↦ (√N/|x|)x pushes any atom-free law onto the sphere;
 * applied to a standard Gaussian vector it produces the uniform probability
 * measure σ^N, which is the reference measure for every density on the
 * sphere in this library.  Also here:
 *
 *   · the spherical (tangential) gradient ∇_S f(y) = ∇f(y) − (1/N)(∇f·y)y,
 *     with a central-difference fallback that projects after differencing;
 *   · the piecewise change-of-variables maps ψ(x) = (a/(b+min{|x|²,c}))^{1/2}x
 *     with explicit inverse, Jacobian determinant, and the closed-form
 *     operator norm of Dψ⁻¹ − Id via the rank-one structure;
 *   · the |x|⁻² moment identity E[|Z|⁻²φ(Z/|Z|)] = (1/(N−2))·E_σ[φ] used
 *     as a Monte Carlo self-test of the sphere sampler.
 *
 * Note on the Jacobian: on the inner branch ψ⁻¹(z) = (b/(a−|z|²))^{1/2} z,
 * so Dψ⁻¹ = s·(Id + zzᵀ/(a−|z|²)) with s = (b/(a−|z|²))^{1/2}, giving
 * det Dψ⁻¹ = (b/(a−|z|²))^{k/2} · a/(a−|z|²).  The sign inside the rank-one
 * factor is +: differentiating s(z) produces +s·zzᵀ/(a−|z|²), and the 1-D
 * case d/dz [√(b/(a−z²)) z] = √b·a/(a−z²)^{3/2} > 0 confirms it, as does
 * the finite-difference oracle in the test suite.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "math.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace kacsphere {

/* ── Rescaling and the uniform measure ───────────────────────────────────── */

/* Scale x to the radius-√N sphere: x ↦ (√N/|x|)·x.  Throws on x = 0. */
inline void rescale_in_place(std::span<double> x) {
    const double n2 = norm2_squared(x);
    if (!(n2 > 0.0)) throw std::invalid_argument("rescale: zero vector has no direction");
    const double scale = std::sqrt(static_cast<double>(x.size()) / n2);
    for (double& v : x) v *= scale;
}

inline std::vector<double> rescale(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    rescale_in_place(out);
    return out;
}

/* Fill `out` with i.i.d. standard Gaussians from `eng`. */
inline void draw_gaussian_vector(std::mt19937_64& eng, std::span<double> out) {
    std::normal_distribution<double> d(0.0, 1.0);
    for (double& v : out) v = d(eng);
}

/* M samples from σ^N in flat row-major storage (sample i = row(i)). */
struct Ensemble {
    long N = 0;
    long M = 0;
    std::vector<double> data;  // M×N, row-major

    std::span<double> row(long i) {
        return {data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(N),
                static_cast<std::size_t>(N)};
    }
    std::span<const double> row(long i) const {
        return {data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(N),
                static_cast<std::size_t>(N)};
    }
};

/*
 * Uniform sphere samples via Gaussian rescaling.  Each sample owns an RNG
 * stream keyed by (seed, stream, N, index), so the result is independent of
 * evaluation order and worker count.
 */
inline Ensemble sample_uniform_sphere(long N, long M, std::uint64_t seed) {
    if (N < 2 || M < 1) throw std::invalid_argument("sample_uniform_sphere: need N >= 2, M >= 1");
    Ensemble e;
    e.N = N;
    e.M = M;
    e.data.resize(static_cast<std::size_t>(N) * static_cast<std::size_t>(M));
    for (long i = 0; i < M; ++i) {
        auto eng = sample_engine(seed, stream::kUniformSphere, static_cast<std::uint64_t>(N),
                                 static_cast<std::uint64_t>(i));
        auto r = e.row(i);
        draw_gaussian_vector(eng, r);
        rescale_in_place(r);
    }
    return e;
}

/* ── Spherical gradient ──────────────────────────────────────────────────── */

/* Remove the radial component: g ↦ g − (g·y/N)·y for y ∈ S^{N−1}. */
inline void spherical_project_in_place(std::span<double> g, std::span<const double> y) {
    const double radial = dot(g, y) / static_cast<double>(y.size());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= radial * y[j];
}

/*
 * Tangential gradient of fn at y ∈ S^{N−1}.  If `ambient_grad` is provided
 * it is projected; otherwise central differences with step 1e−5·√N are
 * taken in the ambient space and projected afterwards.
 */
inline std::vector<double> spherical_gradient(
    const std::function<double(std::span<const double>)>& fn, std::span<const double> y,
    const std::function<void(std::span<const double>, std::span<double>)>& ambient_grad = nullptr) {
    const std::size_t n = y.size();
    std::vector<double> g(n, 0.0);
    if (ambient_grad) {
        ambient_grad(y, g);
    } else {
        const double h = 1e-5 * std::sqrt(static_cast<double>(n));
        std::vector<double> probe(y.begin(), y.end());
        for (std::size_t j = 0; j < n; ++j) {
            const double yj = probe[j];
            probe[j] = yj + h;
            const double fp = fn(probe);
            probe[j] = yj - h;
            const double fm = fn(probe);
            probe[j] = yj;
            g[j] = (fp - fm) / (2.0 * h);
        }
    }
    spherical_project_in_place(g, y);
    return g;
}

/* ── ψ change-of-variables maps ──────────────────────────────────────────── */

/*
 * ψ(x) = (a/(b + min{|x|², c}))^{1/2} x on ℝ^k, with inverse
 *   ψ⁻¹(z) = (b/(a−|z|²))^{1/2} z          for |z| ≤ z₀,
 *   ψ⁻¹(z) = ((b+c)/a)^{1/2} z             for |z| ≥ z₀,
 * where z₀ = √(ac/(b+c)).  Dψ⁻¹ is discontinuous across |z| = z₀; exactly
 * on the threshold the outer branch is returned with `on_boundary` set.
 */
struct PsiMap {
    double a = 1.0;
    double b = 1.0;
    double c = 1.0;
    int k = 1;

    double z0_squared() const { return a * c / (b + c); }
    double z0() const { return std::sqrt(z0_squared()); }
};

/* The scaling-limit specialization (a, b, c) = (N, N+uN^{1−q}, N^{(1−q)/2}). */
inline PsiMap psi_for(double N, double q, double u, int k) {
    PsiMap m;
    m.a = N;
    m.b = N + u * std::pow(N, 1.0 - q);
    m.c = std::pow(N, 0.5 * (1.0 - q));
    m.k = k;
    if (!(m.b > 0.0)) throw std::invalid_argument("psi_for: parameters give non-positive b");
    return m;
}

inline std::vector<double> psi_forward(const PsiMap& m, std::span<const double> x) {
    const double r2 = std::min(norm2_squared(x), m.c);
    const double scale = std::sqrt(m.a / (m.b + r2));
    std::vector<double> z(x.begin(), x.end());
    for (double& v : z) v *= scale;
    return z;
}

inline std::vector<double> psi_inverse(const PsiMap& m, std::span<const double> z,
                                       bool* on_boundary = nullptr) {
    const double z2 = norm2_squared(z);
    const double t2 = m.z0_squared();
    if (on_boundary) *on_boundary = (z2 == t2);
    double scale;
    if (z2 < t2) {
        if (z2 >= m.a) throw std::domain_error("psi_inverse: inner branch needs |z|^2 < a");
        scale = std::sqrt(m.b / (m.a - z2));
    } else {
        scale = std::sqrt((m.b + m.c) / m.a);
    }
    std::vector<double> x(z.begin(), z.end());
    for (double& v : x) v *= scale;
    return x;
}

/* det Dψ⁻¹(z); positive on both branches (see the file-top derivation). */
inline double psi_inverse_jacobian_det(const PsiMap& m, std::span<const double> z,
                                       bool* on_boundary = nullptr) {
    const double z2 = norm2_squared(z);
    const double t2 = m.z0_squared();
    if (on_boundary) *on_boundary = (z2 == t2);
    if (z2 < t2) {
        if (z2 >= m.a) throw std::domain_error("psi_inverse_jacobian_det: inner branch needs |z|^2 < a");
        const double denom = m.a - z2;
        return std::pow(m.b / denom, 0.5 * m.k) * (m.a / denom);
    }
    return std::pow((m.b + m.c) / m.a, 0.5 * m.k);
}

/*
 * ‖Dψ⁻¹(z) − Id‖ (operator norm).  Inner branch: Dψ⁻¹ has eigenvalue s on
 * z^⊥ (multiplicity k−1) and s·a/(a−|z|²) along z, s = (b/(a−|z|²))^{1/2};
 * the deviation is the larger of |s−1| and |s·a/(a−|z|²) − 1|.  Outer
 * branch: |((b+c)/a)^{1/2} − 1|.
 */
inline double psi_inverse_jacobian_deviation(const PsiMap& m, std::span<const double> z) {
    const double z2 = norm2_squared(z);
    if (z2 < m.z0_squared()) {
        if (z2 >= m.a) throw std::domain_error("psi_inverse_jacobian_deviation: |z|^2 < a required");
        const double s = std::sqrt(m.b / (m.a - z2));
        const double radial = s * m.a / (m.a - z2);
        double dev = std::abs(s - 1.0);
        if (m.k >= 1) dev = std::max(dev, std::abs(radial - 1.0));
        return dev;
    }
    return std::abs(std::sqrt((m.b + m.c) / m.a) - 1.0);
}

/* ── |x|⁻² moment identity ───────────────────────────────────────────────── */

struct IdentityCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double lhs_se = 0.0;
    double rhs_se = 0.0;
    double discrepancy = 0.0;
    double combined_se = 0.0;
};

/*
 * Monte Carlo check of E[|Z|⁻² φ(Z/|Z|)] = (1/(N−2)) E_{σ₁}[φ] for Z a
 * standard Gaussian N-vector and σ₁ the uniform law on the unit sphere.
 * Both sides use the same Gaussian draws (the right side only their
 * directions), so the discrepancy has partially cancelling noise.
 */
inline IdentityCheck inverse_norm2_identity_check(
    long N, const std::function<double(std::span<const double>)>& phi, long M,
    std::uint64_t seed) {
    if (N < 3) throw std::invalid_argument("inverse_norm2_identity_check: need N >= 3");
    std::vector<double> lhs_terms(static_cast<std::size_t>(M));
    std::vector<double> rhs_terms(static_cast<std::size_t>(M));
    std::vector<double> zvec(static_cast<std::size_t>(N));
    std::vector<double> unit(static_cast<std::size_t>(N));
    for (long i = 0; i < M; ++i) {
        auto eng = sample_engine(seed, stream::kUniformSphere, static_cast<std::uint64_t>(N) | (1ull << 32),
                                 static_cast<std::uint64_t>(i));
        draw_gaussian_vector(eng, zvec);
        const double n2 = norm2_squared(zvec);
        const double inv_norm = 1.0 / std::sqrt(n2);
        for (std::size_t j = 0; j < unit.size(); ++j) unit[j] = zvec[j] * inv_norm;
        const double p = phi(unit);
        lhs_terms[static_cast<std::size_t>(i)] = p / n2;
        rhs_terms[static_cast<std::size_t>(i)] = p / static_cast<double>(N - 2);
    }
    IdentityCheck out;
    const auto l = mean_se(lhs_terms);
    const auto r = mean_se(rhs_terms);
    out.lhs = l.mean;
    out.lhs_se = l.se;
    out.rhs = r.mean;
    out.rhs_se = r.se;
    out.discrepancy = std::abs(out.lhs - out.rhs);
    out.combined_se = std::sqrt(l.se * l.se + r.se * r.se);
    return out;
}

}  // namespace kacsphere
