/*
 * quadrature.hpp — the two integration engines used throughout:
 *
 *  · adaptive Gauss–Kronrod (15-point) on possibly-infinite intervals, with
 *    caller-supplied interior split points so that kinks and support edges
 *    land on panel boundaries (adaptive rules converge slowly across a C⁰
 *    break; splitting restores spectral behaviour on each smooth piece);
 *
 *  · fixed-order Gauss–Legendre nodes/weights computed once per order by
 *    Newton iteration on Pₙ and cached.  These feed log-space quadratures
 *    (log Σ wᵢ e^{Lᵢ}) where the integrand is only available as a log.
 *
 * Target absolute tolerance for the adaptive engine is 1e-10; each call
 * reports its own error estimate so callers can audit rather than trust.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "math.hpp"

namespace kacsphere {

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;  // engine's own absolute-error estimate
};

/*
 * Adaptive Gauss–Kronrod over [a, b]; either endpoint may be ±∞.
 * `splits` lists interior abscissae where the integrand loses smoothness;
 * points outside (a, b) are ignored.  The interval is cut there and each
 * smooth piece is integrated independently.
 *
 * `max_depth` caps the subdivision recursion.  The engine terminates on
 * *relative* error, so an integrand that is pure rounding noise around an
 * exact zero never converges and burns the full 2^depth panels; callers
 * integrating quantities that can vanish identically should pass a smaller
 * depth (converged integrals stop early regardless, so the cap only
 * bounds the noise case).
 */
template <class F>
QuadratureResult integrate(F&& f, double a, double b, std::span<const double> splits = {},
                           double /*abs_tol*/ = 1e-10, int max_depth = 15) {
    using gk = boost::math::quadrature::gauss_kronrod<double, 15>;
    std::vector<double> cuts;
    cuts.push_back(a);
    for (double s : splits)
        if (s > a && s < b) cuts.push_back(s);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    QuadratureResult out;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double err = 0.0;
        const double v =
            gk::integrate(f, cuts[i], cuts[i + 1], static_cast<unsigned>(max_depth), 1e-12, &err);
        out.value += v;
        out.error += err;
    }
    return out;
}

/* Fixed Gauss–Legendre rule on [-1, 1]. */
struct GaussLegendreRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/*
 * Nodes are the roots of the Legendre polynomial Pₙ, found by Newton from
 * the Chebyshev-based initial guess; weights are 2/((1-x²) Pₙ'(x)²).
 * Rules are cached per order under a mutex (cheap, computed once).
 */
inline const GaussLegendreRule& gauss_legendre(std::size_t n) {
    static std::map<std::size_t, GaussLegendreRule> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    if (n == 0) throw std::invalid_argument("gauss_legendre: order must be positive");
    GaussLegendreRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const std::size_t m = (n + 1) / 2;  // symmetry: compute half, mirror
    for (std::size_t i = 0; i < m; ++i) {
        double x = std::cos(kPi * (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            /* Evaluate Pₙ(x) and Pₙ'(x) by the three-term recurrence. */
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                const double pk = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 -
                                   (static_cast<double>(k) - 1.0) * p0) /
                                  static_cast<double>(k);
                p0 = p1;
                p1 = pk;
            }
            pp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    auto [pos, inserted] = cache.emplace(n, std::move(rule));
    (void)inserted;
    return pos->second;
}

/*
 * log ∫_lo^hi e^{L(u)} du by an order-n Gauss–Legendre rule, evaluated
 * entirely in log space: log Σᵢ wᵢ' e^{L(uᵢ)} with wᵢ' = wᵢ·(hi-lo)/2.
 */
template <class LogF>
double log_integrate_gl(LogF&& logf, double lo, double hi, std::size_t order) {
    if (!(hi > lo)) return kNegInf;
    const auto& rule = gauss_legendre(order);
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    std::vector<double> terms(order);
    for (std::size_t i = 0; i < order; ++i) {
        const double u = mid + half * rule.nodes[i];
        const double L = logf(u);
        terms[i] = (L == kNegInf) ? kNegInf : L + std::log(rule.weights[i] * half);
    }
    return log_sum_exp(terms);
}

/*
 * Chebyshev–Lobatto interpolation on [lo, hi].  Used to compress expensive
 * per-sample radial profiles: the profile is evaluated exactly at K Lobatto
 * points and then read off at hundreds of quadrature nodes through the
 * coefficient form (Clenshaw recurrence), turning an O(nodes·N) inner loop
 * into O(K·N + nodes·K).
 */
struct ChebyshevInterpolant {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<double> coef;  // Chebyshev coefficients a_0 … a_{K−1}

    /* Lobatto abscissae x_j = midpoint + halfwidth·cos(πj/(K−1)), j = 0…K−1. */
    static std::vector<double> lobatto_points(double lo, double hi, std::size_t K) {
        std::vector<double> pts(K);
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (std::size_t j = 0; j < K; ++j)
            pts[j] = mid + half * std::cos(kPi * static_cast<double>(j) / static_cast<double>(K - 1));
        return pts;
    }

    /* Build from values at the Lobatto points (same order as lobatto_points). */
    static ChebyshevInterpolant from_values(double lo, double hi, std::span<const double> values) {
        const std::size_t K = values.size();
        ChebyshevInterpolant out;
        out.lo = lo;
        out.hi = hi;
        out.coef.assign(K, 0.0);
        const double n = static_cast<double>(K - 1);
        for (std::size_t l = 0; l < K; ++l) {
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) {
                const double term = values[j] * std::cos(kPi * static_cast<double>(l) *
                                                         static_cast<double>(j) / n);
                s += (j == 0 || j + 1 == K) ? 0.5 * term : term;
            }
            out.coef[l] = 2.0 * s / n;
        }
        out.coef[0] *= 0.5;
        out.coef[K - 1] *= 0.5;
        return out;
    }

    double eval(double x) const {
        /* Clenshaw recurrence in the mapped variable t ∈ [−1, 1]. */
        const double t = (2.0 * x - lo - hi) / (hi - lo);
        double b1 = 0.0, b2 = 0.0;
        for (std::size_t l = coef.size(); l-- > 1;) {
            const double b0 = 2.0 * t * b1 - b2 + coef[l];
            b2 = b1;
            b1 = b0;
        }
        return t * b1 - b2 + coef[0];
    }
};

}  // namespace kacsphere
