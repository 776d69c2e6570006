/*
 * math.hpp — scalar numerics shared across the library.
 *
 * Log-space primitives (log-sum-exp, log surface areas via lgamma) are the
 * backbone of every high-dimensional computation here: products of N pdf
 * values and sphere normalizers overflow double well before N = 100, so all
 * N-dependent quantities are carried as logarithms and only exponentiated
 * at the very end, if ever.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace kacsphere {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kPi = std::numbers::pi_v<double>;
inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2π)
inline constexpr double kLogTwo = 0.69314718055994530942;   // log 2

/* Numerically stable log(Σ exp(v_i)); −∞ entries contribute nothing.  */
inline double log_sum_exp(std::span<const double> v) {
    double m = kNegInf;
    for (double x : v) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;            // all terms vanish
    double s = 0.0;
    for (double x : v)
        if (x != kNegInf) s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/*
 * log |S^{N−1}(radius)| = log(2 π^{N/2} / Γ(N/2)) + (N−1) log(radius).
 * Entirely in log space so it stays finite up to N = 10⁶ and beyond.
 */
inline double log_surface_area(long n, double radius) {
    if (n < 2) throw std::domain_error("log_surface_area: need dimension N >= 2");
    if (!(radius > 0.0)) throw std::domain_error("log_surface_area: radius must be positive");
    const double half_n = 0.5 * static_cast<double>(n);
    return std::log(2.0) + half_n * std::log(kPi) - std::lgamma(half_n)
         + static_cast<double>(n - 1) * std::log(radius);
}

/* Standard normal density and its logarithm. */
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }
inline double norm_log_pdf(double x) { return -0.5 * x * x - 0.5 * kLogTwoPi; }
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/* Σ v_i by pairwise reduction: deterministic for a fixed ordering and far
 * more accurate than naive left-to-right summation at 10⁶+ terms.          */
inline double pairwise_sum(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean_of(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty input");
    return pairwise_sum(v) / static_cast<double>(v.size());
}

/* Euclidean norm-squared of a vector. */
inline double norm2_squared(std::span<const double> x) {
    double s = 0.0;
    for (double c : x) s += c * c;
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace kacsphere
