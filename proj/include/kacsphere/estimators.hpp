/*
 * estimators.hpp — the chaos functionals: Wasserstein coupling estimates,
 * L¹ marginal distance, entropy and Fisher information per particle, the
 * two-particle exact Fisher quadrature, the spherical/ambient Fisher
 * identity check, truncated-moment tail probabilities, and rescaled-moment
 * estimators, plus the ChaosReport assembly (slope fits, bound curves,
 * violation flags).
 *
 * Conventions shared by every estimator here:
 *
 *   · the coupling (X, X̂ = X/√Q_N), Q_N = (1/N)Σ Xᵢ², turns transport
 *     distances into plain expectations: |X − X̂|² = N(√Q_N − 1)², so
 *     E(√Q_N − 1)² upper-bounds (1/N)W₂(f̂^N, f^{⊗N})² with no assignment
 *     problem to solve;
 *   · entropy and Fisher information are per-particle: (1/N)·H(f̂^N|σ^N) =
 *     (1/N)E[log h(X̂)] and (1/N)E|∇_S log h(X̂)|², with h evaluated by the
 *     radial kernel; its quadrature error bound is added linearly to the
 *     Monte Carlo SE (independent sources, only one stochastic);
 *   · every sample owns an RNG stream keyed by (seed, stream, cell, index)
 *     and accumulation is per-chunk with in-order merges, so results are
 *     bit-identical for any worker count;
 *   · analytic gradients are audited against tangential finite differences
 *     on 1% of samples; disagreement beyond 1e−4 aborts the estimator —
 *     a wrong score is a bug, not a statistic.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kacsphere/density.hpp"
#include "kacsphere/math.hpp"
#include "kacsphere/parallel.hpp"
#include "kacsphere/quadrature.hpp"
#include "kacsphere/rates.hpp"
#include "kacsphere/rescaled.hpp"
#include "kacsphere/rng.hpp"
#include "kacsphere/sphere.hpp"
#include "kacsphere/stats.hpp"

namespace kacsphere {

inline constexpr int kQuadAuditEvery = 64;   // radial-rule audit cadence
inline constexpr int kGradAuditEvery = 100;  // finite-difference audit cadence

/* ── Wasserstein coupling estimates ──────────────────────────────────────── */

/* Monte Carlo of E[(√Q_N − 1)²] = (1/N)E|X − X̂|² ≥ (1/N)W₂(f̂^N, f^{⊗N})². */
inline EstimateWithError w2_coupling_estimate(const DensityModel& base, long n, long m,
                                              std::uint64_t seed) {
    if (!base.unit_energy)
        throw std::invalid_argument("w2_coupling_estimate: base must have unit energy");
    if (n < 2 || m < 1) throw std::invalid_argument("w2_coupling_estimate: need N >= 2, M >= 1");
    std::vector<RunningMoments> slot(chunk_count(m));
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n);
        for (long i = b; i < e; ++i) {
            const double n2 = fill_product_draw(base, seed, stream::kW2,
                                                static_cast<std::uint64_t>(n), i, w);
            const double d = std::sqrt(n2 / static_cast<double>(n)) - 1.0;
            slot[ci].add(d * d);
        }
    });
    RunningMoments acc;
    for (const auto& s : slot) acc.merge(s);
    return {acc.mean, acc.standard_error(), "coupling-mc", static_cast<std::uint64_t>(m), false};
}

/* Monte Carlo of (1/N)E|X − X̂|^r = E[(1/N)Σ|Xᵢ|^r · |1 − Q_N^{−1/2}|^r]. */
inline EstimateWithError wr_coupling_estimate(const DensityModel& base, long n, double r, long m,
                                              std::uint64_t seed) {
    if (!base.unit_energy)
        throw std::invalid_argument("wr_coupling_estimate: base must have unit energy");
    if (!(r >= 2.0)) throw std::invalid_argument("wr_coupling_estimate: need r >= 2");
    if (!(base.tail_order > r))
        throw std::domain_error("wr_coupling_estimate: base has no finite moment above r = " +
                                std::to_string(r) + " (tail order " +
                                std::to_string(base.tail_order) + ")");
    if (n < 2 || m < 1) throw std::invalid_argument("wr_coupling_estimate: need N >= 2, M >= 1");
    std::vector<RunningMoments> slot(chunk_count(m));
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n);
        for (long i = b; i < e; ++i) {
            const double n2 = fill_product_draw(base, seed, stream::kWr,
                                                static_cast<std::uint64_t>(n), i, w);
            const double q = n2 / static_cast<double>(n);
            double sum_r = 0.0;
            for (double wi : w) sum_r += std::pow(std::abs(wi), r);
            const double factor = std::pow(std::abs(1.0 - 1.0 / std::sqrt(q)), r);
            slot[ci].add(sum_r / static_cast<double>(n) * factor);
        }
    });
    RunningMoments acc;
    for (const auto& s : slot) acc.merge(s);
    return {acc.mean, acc.standard_error(), "coupling-mc", static_cast<std::uint64_t>(m), false};
}

/* ── L¹ distance of the 1-marginal from the base density ─────────────────── */

/*
 * ∫ |Π₁f̂^N(z) − f(z)| dz over a Simpson z-grid on [−Z, Z], Z = min(√N·(1−ε),
 * 8.5), plus the mass of f outside (−√N, √N) where the marginal vanishes.
 * Error combines the batch spread of the Monte Carlo mixture, the pointwise
 * marginal error bounds, the f-mass between Z and √N, and any marginal mass
 * the grid failed to capture.
 */
inline EstimateWithError l1_marginal_distance(const DensityModel& base, long n, long m_mix,
                                              int quad_points, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("l1_marginal_distance: need N >= 2");
    if (quad_points < 5) throw std::invalid_argument("l1_marginal_distance: need >= 5 grid points");
    if (quad_points % 2 == 0) ++quad_points;           // Simpson needs an odd count
    if ((quad_points - 1) % 4 != 0) quad_points += 2;  // let the half grid stay Simpson-valid
    const double rn = std::sqrt(static_cast<double>(n));
    const double z_max = std::min(rn * (1.0 - 1e-9), 8.5);

    Marginal1Evaluator ev(base, n, m_mix, seed);
    const int nb = Marginal1Evaluator::kBatches;
    const double h = 2.0 * z_max / (quad_points - 1);
    std::vector<double> dev(quad_points);              // |pooled − f| per node
    double pooled = 0.0, pooled_mass = 0.0, point_err = 0.0;
    std::vector<double> batch(nb, 0.0);
    for (int i = 0; i < quad_points; ++i) {
        const double z = -z_max + h * i;
        const double w = (i == 0 || i == quad_points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        const auto v = ev.value_full(z);
        const double fz = base.pdf(z);
        dev[i] = std::abs(v.pooled - fz);
        pooled += w * dev[i];
        pooled_mass += w * v.pooled;
        point_err += w * v.error;
        for (int b = 0; b < nb; ++b) batch[b] += w * std::abs(v.batch[b] - fz);
    }
    const double simpson = h / 3.0;
    pooled *= simpson;
    pooled_mass *= simpson;
    point_err *= simpson;
    for (double& b : batch) b *= simpson;
    /* |·| has kinks where the marginal crosses f, so Simpson is not yet at
     * machine accuracy: estimate the grid error against the half grid.     */
    double half = 0.0;
    for (int i = 0; i < quad_points; i += 2) {
        const double w = (i == 0 || i == quad_points - 1) ? 1.0 : ((i / 2) % 2 == 1 ? 4.0 : 2.0);
        half += w * dev[i];
    }
    const double grid_err = std::abs(pooled - half * (2.0 * h / 3.0));

    /* f-mass outside the sphere range contributes in full (marginal = 0).  */
    const double f_tail_sphere = base.cdf(-rn) + (1.0 - base.cdf(rn));
    /* f-mass between the grid edge and √N, and marginal mass the grid
     * missed, are error terms, not part of the reported distance.          */
    const double f_gap = std::max(0.0, (base.cdf(-z_max) - base.cdf(-rn)) +
                                           (base.cdf(rn) - base.cdf(z_max)));
    const double marginal_gap = std::max(0.0, 1.0 - pooled_mass);

    EstimateWithError out;
    out.value = pooled + f_tail_sphere;
    out.method = ev.method();
    out.samples = ev.deterministic() ? 0 : static_cast<std::uint64_t>(m_mix);
    double se = 0.0;
    if (!ev.deterministic()) {
        const MeanSE ms = mean_se(batch);
        se = ms.se;
    }
    out.error = se + point_err + grid_err + f_gap + marginal_gap;
    return out;
}

/* ── Entropy per particle and the entropy gap ────────────────────────────── */

struct EntropyReport {
    EstimateWithError entropy;   // (1/N) E[log h(X̂)],  X ∼ f^{⊗N}
    EstimateWithError gap;       // (1/N) E[Σ log(f/γ)(Xᵢ) − log h(X̂)] ≥ 0
    EstimateWithError plugin;    // (1/N) E[Σ log(f/γ)(Xᵢ)]  (→ H(f|γ))
    long excluded = 0;           // underflow-excluded samples
};

/*
 * Joint same-sample estimate of entropy, gap and the product-entropy plug-in.
 * Same-sample means entropy + gap = plugin holds exactly (to rounding), which
 * the algebraic-identity property relies on.
 */
inline EntropyReport entropy_analysis(const DensityModel& base, long n, long m,
                                      std::uint64_t seed,
                                      const RadialQuadratureSpec& qspec = {}) {
    if (n < 2 || m < 1) throw std::invalid_argument("entropy_analysis: need N >= 2, M >= 1");
    RadialKernel kernel(base, n, qspec);
    const long chunks = chunk_count(m);
    std::vector<RunningMoments> slot_a(chunks), slot_g(chunks), slot_t(chunks);
    std::vector<long> slot_skip(chunks, 0);
    const double dn = static_cast<double>(n);
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n), xhat(n);
        for (long i = b; i < e; ++i) {
            const double n2 = fill_product_draw(base, seed, stream::kEntropy,
                                                static_cast<std::uint64_t>(n), i, w);
            double log_f_sum = 0.0;
            for (double wi : w) log_f_sum += base.log_pdf(wi);
            const double t = (log_f_sum + 0.5 * n2 + 0.5 * dn * kLogTwoPi) / dn;
            std::copy(w.begin(), w.end(), xhat.begin());
            rescale_in_place(xhat);
            const auto evh = kernel.evaluate(xhat, i % kQuadAuditEvery == 0);
            if (evh.underflow) {
                ++slot_skip[ci];
                continue;
            }
            const double a = evh.log_density / dn;
            slot_a[ci].add(a);
            slot_g[ci].add(t - a);
            slot_t[ci].add(t);
        }
    });
    RunningMoments acc_a, acc_g, acc_t;
    long excluded = 0;
    for (long ci = 0; ci < chunks; ++ci) {
        acc_a.merge(slot_a[ci]);
        acc_g.merge(slot_g[ci]);
        acc_t.merge(slot_t[ci]);
        excluded += slot_skip[ci];
    }
    if (excluded > 0 && static_cast<double>(excluded) > 1e-3 * static_cast<double>(m))
        throw std::runtime_error("entropy_analysis: " + std::to_string(excluded) + " of " +
                                 std::to_string(m) + " samples underflowed (> 0.1%)");
    const double quad = kernel.quadrature_error_bound() / dn;  // bound on each log h / N
    EntropyReport rep;
    const auto used = static_cast<std::uint64_t>(m - excluded);
    rep.entropy = {acc_a.mean, acc_a.standard_error() + quad, "monte-carlo", used, false};
    rep.gap = {acc_g.mean, acc_g.standard_error() + quad, "monte-carlo", used, false};
    rep.plugin = {acc_t.mean, acc_t.standard_error(), "monte-carlo", used, false};
    rep.excluded = excluded;
    return rep;
}

inline EstimateWithError entropy_per_particle(const DensityModel& base, long n, long m,
                                              std::uint64_t seed) {
    return entropy_analysis(base, n, m, seed).entropy;
}

inline EstimateWithError entropy_gap(const DensityModel& base, long n, long m,
                                     std::uint64_t seed) {
    return entropy_analysis(base, n, m, seed).gap;
}

/* ── Fisher information per particle ─────────────────────────────────────── */

namespace detail {
/* Tangential finite-difference audit of the analytic gradient at x̂ ∈ S^{N−1}:
 * directional derivatives along up to three projected coordinate axes,
 * differencing log h at rescaled (on-sphere) perturbed points.             */
inline void audit_gradient(const RadialKernel& kernel, std::span<const double> xhat,
                           std::span<const double> grad, long sample_index) {
    const long n = kernel.dimension();
    const double h = 3e-4;
    std::vector<double> t(n), xp(n), xm(n);
    for (int d = 0; d < 3 && d < n; ++d) {
        std::fill(t.begin(), t.end(), 0.0);
        t[d] = 1.0;
        spherical_project_in_place(t, xhat);
        const double norm_t = std::sqrt(norm2_squared(std::span<const double>(t)));
        if (norm_t < 1e-8) continue;  // axis nearly radial, no information
        for (long j = 0; j < n; ++j) {
            const double step = h * t[j] / norm_t;
            xp[j] = xhat[j] + step;
            xm[j] = xhat[j] - step;
        }
        rescale_in_place(xp);
        rescale_in_place(xm);
        const double fp = kernel.evaluate(xp).log_density;
        const double fm = kernel.evaluate(xm).log_density;
        const double fd = (fp - fm) / (2.0 * h);
        double an = 0.0;
        for (long j = 0; j < n; ++j) an += grad[j] * t[j] / norm_t;
        const double scale = std::max({1.0, std::abs(an), std::abs(fd)});
        if (!(std::abs(fd - an) <= 1e-4 * scale)) {
            std::ostringstream msg;
            msg << "fisher gradient cross-check failed at sample " << sample_index
                << ", axis " << d << ": analytic " << an << " vs finite-difference " << fd
                << " (relative discrepancy " << std::abs(fd - an) / scale << " > 1e-4)";
            throw std::runtime_error(msg.str());
        }
    }
}
}  // namespace detail

/* (1/N)·E|∇_S log h(X̂)|² over X̂ ∼ f̂^N — the per-particle spherical Fisher
 * information of f̂^N relative to σ^N.                                      */
inline EstimateWithError fisher_per_particle(const DensityModel& base, long n, long m,
                                             std::uint64_t seed,
                                             const RadialQuadratureSpec& qspec = {}) {
    if (!base.differentiable || !base.score)
        throw std::invalid_argument("fisher_per_particle: base must be differentiable");
    if (n < 3) throw std::invalid_argument("fisher_per_particle: need N >= 3");
    if (m < 1) throw std::invalid_argument("fisher_per_particle: need M >= 1");
    RadialKernel kernel(base, n, qspec);
    /* The audit differences log h at points 6e−4 apart, which amplifies any
     * smooth interpolation wiggle in the λ-profile by 1/(2h) ≈ 1.7e3 — a
     * 1e−7 profile ripple would read as a phantom 1e−4 gradient error.  So
     * the finite differences are taken against a twin kernel that always
     * evaluates the profile exactly (probe threshold −1 forces the
     * fallback); the analytic gradient under test still comes from the
     * production kernel above.                                              */
    RadialQuadratureSpec audit_spec = qspec;
    audit_spec.profile_tol = -1.0;
    RadialKernel audit_kernel(base, n, audit_spec);
    const long chunks = chunk_count(m);
    std::vector<RunningMoments> slot(chunks);
    std::vector<long> slot_skip(chunks, 0);
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n), grad(n);
        for (long i = b; i < e; ++i) {
            fill_product_draw(base, seed, stream::kFisher, static_cast<std::uint64_t>(n), i, w);
            rescale_in_place(w);
            const auto evh =
                kernel.evaluate_with_gradient(w, grad, i % kQuadAuditEvery == 0);
            if (evh.underflow) {
                ++slot_skip[ci];
                continue;
            }
            if (i % kGradAuditEvery == 0) detail::audit_gradient(audit_kernel, w, grad, i);
            slot[ci].add(norm2_squared(std::span<const double>(grad)) / static_cast<double>(n));
        }
    });
    RunningMoments acc;
    long excluded = 0;
    for (long ci = 0; ci < chunks; ++ci) {
        acc.merge(slot[ci]);
        excluded += slot_skip[ci];
    }
    if (excluded > 0 && static_cast<double>(excluded) > 1e-3 * static_cast<double>(m))
        throw std::runtime_error("fisher_per_particle: " + std::to_string(excluded) +
                                 " samples underflowed (> 0.1%)");
    return {acc.mean, acc.standard_error(), "monte-carlo",
            static_cast<std::uint64_t>(m - excluded), false};
}

/*
 * Exact two-particle Fisher information per particle, (1/2)·I(f̂²|σ²), by
 * 1-D quadrature on the circle of radius √2.  Let K(θ) = ∫₀^∞ u f(u cosθ)
 * f(u sinθ) du: by polar coordinates ∫₀^{2π} K dθ = ∫ f⊗f = 1, so K is the
 * angle density of X̂² = √2(cosΘ, sinΘ), and the density of f̂² against the
 * uniform σ² is h(θ) = 2π·K(θ).  The spherical gradient on the radius-√2
 * circle is (1/√2)·d/dθ and the 2π cancels in the score, so
 *
 *   (1/2)·I(f̂²|σ²) = (1/2)·∫₀^{2π} (1/2)(K′/K)² · K dθ = (1/4)∫₀^{2π} K′²/K dθ,
 *
 * with K′ computed by differentiating under the integral through the score:
 * K′(θ) = ∫ u² f f · [cosθ·score(u sinθ) − sinθ·score(u cosθ)] du.
 * The θ-integral is a trapezoid rule (spectrally accurate for smooth
 * periodic integrands); the error estimate compares against half the nodes.
 */
inline EstimateWithError fisher_n2_exact(const DensityModel& base, int theta_nodes = 512) {
    if (!base.differentiable || !base.score)
        throw std::invalid_argument("fisher_n2_exact: base must be differentiable");
    if (!base.unit_energy) throw std::invalid_argument("fisher_n2_exact: base must have unit energy");
    if (theta_nodes < 16 || theta_nodes % 2 != 0)
        throw std::invalid_argument("fisher_n2_exact: theta_nodes must be even and >= 16");

    auto integrand = [&](double theta) {
        const double c = std::cos(theta), s = std::sin(theta);
        const auto d_pair = integrate(
            [&](double u) {
                const double ff = base.pdf(u * c) * base.pdf(u * s);
                return u * ff;
            },
            0.0, kInf);
        /* K′ vanishes identically when the score is linear (the terms cancel),
         * so cap the depth: a noise integral never meets a relative tol.     */
        const auto dp_pair = integrate(
            [&](double u) {
                const double ff = base.pdf(u * c) * base.pdf(u * s);
                if (ff == 0.0) return 0.0;
                return u * u * ff * (c * base.score(u * s) - s * base.score(u * c));
            },
            0.0, kInf, {}, 1e-10, 10);
        if (!(d_pair.value > 0.0)) return 0.0;  // density vanishes: no mass, no cost
        return dp_pair.value * dp_pair.value / d_pair.value;
    };
    auto trapezoid = [&](int nodes) {
        double acc = 0.0;
        for (int i = 0; i < nodes; ++i) acc += integrand(2.0 * kPi * i / nodes);
        return acc * (2.0 * kPi / nodes);
    };
    const double fine = trapezoid(theta_nodes);
    const double coarse = trapezoid(theta_nodes / 2);
    const double value = 0.25 * fine;
    const double err = 0.25 * std::abs(fine - coarse) + 1e-12;
    if (!std::isfinite(value)) throw std::runtime_error("fisher_n2_exact: quadrature diverged");
    return {value, err, "theta-quadrature", 0, false};
}

/* ── Spherical vs ambient Fisher identity ────────────────────────────────── */

struct FisherIdentityCheck {
    double lhs = 0.0;          // I(f̂^N | σ^N) = N · fisher_per_particle
    double rhs = 0.0;          // ((N−2)/N) · I(angular version | γ^{⊗N})
    double lhs_se = 0.0;
    double rhs_se = 0.0;
    double discrepancy = 0.0;  // |lhs − rhs|
    double combined_se = 0.0;  // SE of the per-sample difference (paired)
    double raw_ratio = 0.0;    // lhs / (ambient integral), expect (N−2)/N
};

/*
 * Under the angular version F̌ the radius is χ_N-distributed independently of
 * the direction, and |∇ log(dF̌/dγ^{⊗N})(x)|² = (N/|x|²)|∇_S log h(x̂)|².
 * So the ambient relative Fisher information is E[(N/χ²_N)·g] with
 * g = |∇_S log h(X̂)|², X̂ ∼ f̂^N and an independent χ²_N.  The identity under
 * test: I(f̂^N|σ^N) = ((N−2)/N) · I(F̌|γ^{⊗N}).  Both sides share the same
 * gradient samples, so the difference has strongly cancelling noise.
 */
inline FisherIdentityCheck fisher_main_identity_check(const DensityModel& base, long n, long m,
                                                      std::uint64_t seed) {
    if (!base.differentiable || !base.score)
        throw std::invalid_argument("fisher_main_identity_check: base must be differentiable");
    if (n < 3) throw std::invalid_argument("fisher_main_identity_check: need N >= 3");
    if (m < 1) throw std::invalid_argument("fisher_main_identity_check: need M >= 1");
    RadialKernel kernel(base, n, {});
    const long chunks = chunk_count(m);
    std::vector<RunningMoments> slot_l(chunks), slot_r(chunks), slot_d(chunks), slot_raw(chunks);
    const double dn = static_cast<double>(n);
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n), grad(n), zvec(n);
        for (long i = b; i < e; ++i) {
            auto eng = sample_engine(seed, stream::kIdentity, static_cast<std::uint64_t>(n),
                                     static_cast<std::uint64_t>(i));
            for (double& v : w) v = base.sampler(eng);
            rescale_in_place(w);
            const auto evh = kernel.evaluate_with_gradient(w, grad, i % kQuadAuditEvery == 0);
            if (evh.underflow) continue;
            const double g = norm2_squared(std::span<const double>(grad));
            draw_gaussian_vector(eng, zvec);  // fresh radius for the angular version
            const double chi2 = norm2_squared(std::span<const double>(zvec));
            const double raw = dn / chi2 * g;
            slot_l[ci].add(g);
            slot_raw[ci].add(raw);
            slot_r[ci].add((dn - 2.0) / dn * raw);
            slot_d[ci].add(g - (dn - 2.0) / dn * raw);
        }
    });
    RunningMoments acc_l, acc_r, acc_d, acc_raw;
    for (long ci = 0; ci < chunks; ++ci) {
        acc_l.merge(slot_l[ci]);
        acc_r.merge(slot_r[ci]);
        acc_d.merge(slot_d[ci]);
        acc_raw.merge(slot_raw[ci]);
    }
    FisherIdentityCheck out;
    out.lhs = acc_l.mean;
    out.rhs = acc_r.mean;
    out.lhs_se = acc_l.standard_error();
    out.rhs_se = acc_r.standard_error();
    out.discrepancy = std::abs(acc_d.mean);
    out.combined_se = acc_d.standard_error();
    out.raw_ratio = acc_raw.mean > 0.0 ? acc_l.mean / acc_raw.mean : kNaN;
    return out;
}

/* ── Truncated-moment tail probability vs the von Bahr–Esseen bound ──────── */

struct TailProbabilityCheck {
    double empirical = 0.0;    // frequency of |Σ_{i≤N−k} Xᵢ² − N·EX²| > N^{1−q}
    double se = 0.0;
    double bound = 0.0;        // 16·E|X|^{2+δ̄}·N^{−(δ̄/2−(1+δ̄/2)q)}
    double delta_bar = 0.0;
    double threshold = 0.0;    // N^{1−q}
    long samples = 0;
};

inline TailProbabilityCheck tail_probability_check(const DensityModel& base, long n, int k,
                                                   double q, long m, std::uint64_t seed) {
    if (k < 1 || n - k < 1)
        throw std::invalid_argument("tail_probability_check: need 1 <= k < N");
    if (!(q >= 0.0) || !(q < 1.0))
        throw std::invalid_argument("tail_probability_check: q in [0, 1)");
    if (m < 1) throw std::invalid_argument("tail_probability_check: need M >= 1");
    const double delta = std::isfinite(base.tail_order)
                             ? base.tail_order - 2.0 - 1e-9
                             : 2.0;  // any finite-moment slack; bound uses min{2, δ}
    if (!(delta > 0.0))
        throw std::domain_error("tail_probability_check: base lacks a finite (2+δ)-moment");
    const double delta_bar = std::min(2.0, delta);
    const double ex2 = moment(base, 2.0).value;
    const double floor_n = n_min(static_cast<double>(k), delta_bar, q, ex2);
    if (static_cast<double>(n) < floor_n)
        throw std::domain_error("tail_probability_check: N = " + std::to_string(n) +
                                " below the lemma threshold N >= max{2k, (2k·EX²)^{1/(1−q)}} = " +
                                std::to_string(floor_n));
    const double mom = moment(base, 2.0 + delta_bar).value;
    const double threshold = std::pow(static_cast<double>(n), 1.0 - q);
    const double center = static_cast<double>(n) * ex2;

    const long dim = n - k;
    std::vector<long> hits(chunk_count(m), 0);
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(dim);
        for (long i = b; i < e; ++i) {
            const double s = fill_product_draw(base, seed, stream::kTailProb,
                                               static_cast<std::uint64_t>(n) |
                                                   (static_cast<std::uint64_t>(k) << 48),
                                               i, w);
            if (std::abs(s - center) > threshold) ++hits[ci];
        }
    });
    long total = 0;
    for (long h : hits) total += h;
    TailProbabilityCheck out;
    out.empirical = static_cast<double>(total) / static_cast<double>(m);
    out.se = std::sqrt(out.empirical * (1.0 - out.empirical) / static_cast<double>(m));
    out.bound = vonbahr_bound(static_cast<double>(n), q, delta_bar, mom);
    out.delta_bar = delta_bar;
    out.threshold = threshold;
    out.samples = m;
    return out;
}

/* ── Moments of the rescaled first coordinate ────────────────────────────── */

/* Monte Carlo of E|X̂₁|^p.  Always finite at fixed N (|X̂₁| ≤ √N); for bases
 * with tail order ≤ p the limit in N diverges and the estimate is dominated
 * by rare huge-|X₁| draws — the sample-size sensitivity is the observable. */
inline EstimateWithError moment_rescaled(const DensityModel& base, long n, double p, long m,
                                         std::uint64_t seed) {
    if (n < 2 || m < 1) throw std::invalid_argument("moment_rescaled: need N >= 2, M >= 1");
    if (!(p > 0.0)) throw std::invalid_argument("moment_rescaled: need p > 0");
    std::vector<RunningMoments> slot(chunk_count(m));
    parallel_chunks(m, [&](long ci, long b, long e) {
        std::vector<double> w(n);
        for (long i = b; i < e; ++i) {
            const double n2 = fill_product_draw(base, seed, stream::kMoment,
                                                static_cast<std::uint64_t>(n), i, w);
            const double x1 = w[0] * std::sqrt(static_cast<double>(n) / n2);
            slot[ci].add(std::pow(std::abs(x1), p));
        }
    });
    RunningMoments acc;
    for (const auto& s : slot) acc.merge(s);
    return {acc.mean, acc.standard_error(), "monte-carlo", static_cast<std::uint64_t>(m), false};
}

/* ── Report assembly: slope fits, bound curves, violations ───────────────── */

struct ChaosReport {
    std::string metric;
    std::string base_name;
    std::vector<long> grid;
    std::vector<EstimateWithError> estimates;
    std::vector<double> bounds;        // NaN where no bound applies
    std::vector<bool> violations;      // estimate − 3·SE > bound
    std::optional<LineFit> slope;      // empty if zero-consistent or < 4 usable points
    bool zero_consistent = false;
    std::string bound_tag;
    std::uint64_t seed = 0;
};

/*
 * SE-weighted log-log slope fit.  Refuses (returns nullopt, sets the flag)
 * when every estimate is within 3 SE of zero — a slope of noise is not a
 * rate — or when fewer than 4 positive points remain.
 */
inline std::optional<LineFit> fit_loglog(std::span<const long> grid,
                                         std::span<const EstimateWithError> est,
                                         bool* zero_consistent = nullptr) {
    if (zero_consistent) *zero_consistent = false;
    bool all_zero = true;
    for (const auto& e : est)
        if (std::abs(e.value) > 3.0 * e.error + 1e-12) all_zero = false;  // 1e-12: rounding floor
    if (all_zero) {
        if (zero_consistent) *zero_consistent = true;
        return std::nullopt;
    }
    std::vector<double> lx, ly, ls;
    for (std::size_t i = 0; i < est.size(); ++i) {
        if (!(est[i].value > 0.0) || !std::isfinite(est[i].value)) continue;
        lx.push_back(std::log(static_cast<double>(grid[i])));
        ly.push_back(std::log(est[i].value));
        ls.push_back(std::max(est[i].error / est[i].value, 1e-12));  // delta method
    }
    if (lx.size() < 4) return std::nullopt;
    return weighted_line_fit(lx, ly, ls);
}

/*
 * Attach a bound curve to a report.  When the theory's constant is unknown
 * the curve is anchored through the first grid point (C = est₁/shape(N₁)):
 * a decay slower than the predicted shape then violates the curve at later
 * N, while a faster decay never does.  Known-constant bounds are used as
 * given.  Violation at i: estimate − 3·SE > bound.
 */
inline void attach_bound_shape(ChaosReport& rep, const RatePrediction& pred) {
    rep.bound_tag = pred.tag;
    rep.bounds.assign(rep.grid.size(), kNaN);
    rep.violations.assign(rep.grid.size(), false);
    if (rep.grid.empty()) return;
    double c;
    if (pred.constant) {
        c = *pred.constant;
    } else {
        const double shape0 = pred.shape_value(static_cast<double>(rep.grid.front()));
        const double est0 = rep.estimates.front().value;
        if (!(est0 > 0.0) || !(shape0 > 0.0)) return;  // nothing to anchor
        c = est0 / shape0;
    }
    for (std::size_t i = 0; i < rep.grid.size(); ++i) {
        rep.bounds[i] = c * pred.shape_value(static_cast<double>(rep.grid[i]));
        rep.violations[i] =
            rep.estimates[i].value - 3.0 * rep.estimates[i].error > rep.bounds[i];
    }
}

/* Bound values supplied directly (per-N known bounds such as (1−1/N)·I(f|γ)). */
inline void attach_bound_values(ChaosReport& rep, std::span<const double> bounds,
                                const std::string& tag) {
    if (bounds.size() != rep.grid.size())
        throw std::invalid_argument("attach_bound_values: size mismatch");
    rep.bound_tag = tag;
    rep.bounds.assign(bounds.begin(), bounds.end());
    rep.violations.assign(rep.grid.size(), false);
    for (std::size_t i = 0; i < rep.grid.size(); ++i)
        rep.violations[i] =
            rep.estimates[i].value - 3.0 * rep.estimates[i].error > rep.bounds[i];
}

}  // namespace kacsphere
