/*
 * stats.hpp — estimate bookkeeping and the small statistical toolkit used by
 * every estimator: mean ± standard error, SE-weighted log-log slope fits with
 * 95% confidence intervals, Spearman rank correlation for trend assertions,
 * Kolmogorov–Smirnov distance for sampler validation, and the self-normalized
 * importance-sampling diagnostics (effective sample size, weighted bootstrap).
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "math.hpp"
#include "rng.hpp"

namespace kacsphere {

/*
 * One scalar estimate with a one-sigma error bar.  `error` combines the
 * Monte Carlo standard error and any deterministic quadrature error bound
 * (added linearly — the sources are independent but not both stochastic).
 * `method` records how the number was produced (e.g. "monte-carlo",
 * "chi2-quadrature", "closed-form").
 */
struct EstimateWithError {
    double value = 0.0;
    double error = 0.0;               // 1-sigma combined error bound
    std::string method = "monte-carlo";
    std::uint64_t samples = 0;        // Monte Carlo sample count (0 = deterministic)
    bool diverged = false;            // +∞ flag (e.g. moments past the tail order)
};

/* Sample mean and standard error of a vector of per-sample values. */
struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

/*
 * Streaming mean/variance accumulator (Welford update, Chan merge).  Chunked
 * estimators keep one accumulator per fixed-size chunk and merge them in
 * chunk order, so the result is bit-identical for any worker count.
 */
struct RunningMoments {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;  // Σ (x − mean)²

    void add(double x) {
        count += 1.0;
        const double d = x - mean;
        mean += d / count;
        m2 += d * (x - mean);
    }
    void merge(const RunningMoments& o) {
        if (o.count == 0.0) return;
        if (count == 0.0) {
            *this = o;
            return;
        }
        const double total = count + o.count;
        const double d = o.mean - mean;
        m2 += o.m2 + d * d * count * o.count / total;
        mean += d * o.count / total;
        count = total;
    }
    double variance() const { return count > 1.0 ? m2 / (count - 1.0) : kInf; }
    double standard_error() const {
        return count > 1.0 ? std::sqrt(variance() / count) : kInf;
    }
    MeanSE to_mean_se() const {
        return {mean, standard_error(), static_cast<std::size_t>(count)};
    }
};

inline MeanSE mean_se(std::span<const double> v) {
    MeanSE out;
    out.n = v.size();
    if (out.n == 0) throw std::invalid_argument("mean_se: empty sample");
    out.mean = mean_of(v);
    if (out.n == 1) { out.se = kInf; return out; }
    double ss = 0.0;
    for (double x : v) {
        const double d = x - out.mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(out.n - 1);
    out.se = std::sqrt(var / static_cast<double>(out.n));
    return out;
}

/* ── Weighted least squares line fit ──────────────────────────────────────
 * Fit y = intercept + slope·x minimizing Σ w_i (y_i − ŷ_i)², w_i = 1/σ_i².
 * The 95% CI uses the t-quantile with n−2 degrees of freedom and the
 * usual residual-rescaled covariance, so over- or under-stated σ_i do not
 * distort the interval.
 */
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double slope_ci_half_width = 0.0;  // 95% half-width
    std::size_t n = 0;
};

namespace detail {
/* Two-sided 97.5% Student-t quantile; tabulated small-df values, normal
 * limit beyond.  Accurate to ~1e-3, ample for confidence reporting.       */
inline double t_quantile_975(std::size_t df) {
    static constexpr double table[] = {0.0,    12.706, 4.303, 3.182, 2.776, 2.571,
                                       2.447,  2.365,  2.306, 2.262, 2.228, 2.201,
                                       2.179,  2.160,  2.145, 2.131, 2.120, 2.110,
                                       2.101,  2.093,  2.086, 2.080, 2.074, 2.069,
                                       2.064,  2.060,  2.056, 2.052, 2.048, 2.045,
                                       2.042};
    if (df == 0) return kInf;
    if (df <= 30) return table[df];
    return 1.960 + 2.4 / static_cast<double>(df);  // smooth approach to the normal quantile
}
}  // namespace detail

inline LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> sigma) {
    const std::size_t n = x.size();
    if (n < 3 || y.size() != n || sigma.size() != n)
        throw std::invalid_argument("weighted_line_fit: need >= 3 equal-length points");
    double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigma[i] > 0 ? sigma[i] : 1e-12;
        const double w = 1.0 / (s * s);
        sw += w; swx += w * x[i]; swy += w * y[i];
        swxx += w * x[i] * x[i]; swxy += w * x[i] * y[i];
    }
    const double denom = sw * swxx - swx * swx;
    if (!(std::abs(denom) > 0))
        throw std::runtime_error("weighted_line_fit: degenerate abscissae");
    LineFit fit;
    fit.n = n;
    fit.slope = (sw * swxy - swx * swy) / denom;
    fit.intercept = (swxx * swy - swx * swxy) / denom;
    /* Residual-rescaled slope variance (chi2/dof correction). */
    double chi2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sigma[i] > 0 ? sigma[i] : 1e-12;
        const double r = (y[i] - fit.intercept - fit.slope * x[i]) / s;
        chi2 += r * r;
    }
    const double dof = static_cast<double>(n - 2);
    const double scale = std::sqrt(std::max(chi2 / dof, 1.0));  // never shrink below nominal
    fit.slope_se = std::sqrt(sw / denom) * scale;
    fit.slope_ci_half_width = detail::t_quantile_975(n - 2) * fit.slope_se;
    return fit;
}

/* ── Spearman rank correlation ─────────────────────────────────────────── */
namespace detail {
inline std::vector<double> ranks_of(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {  // average ranks over ties
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    return rank;
}
}  // namespace detail

inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("spearman_rho: need >= 3 paired points");
    const auto rx = detail::ranks_of(x);
    const auto ry = detail::ranks_of(y);
    const double mx = mean_of(rx), my = mean_of(ry);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = rx[i] - mx, b = ry[i] - my;
        sxy += a * b; sxx += a * a; syy += b * b;
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/* ── Kolmogorov–Smirnov distance against a CDF ────────────────────────────
 * sup_x |F_emp(x) − F(x)| over a sorted copy of the sample.
 */
template <class Cdf>
double ks_statistic(std::vector<double> sample, Cdf&& cdf) {
    if (sample.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double F = cdf(sample[i]);
        d = std::max(d, std::abs(F - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - F));
    }
    return d;
}

/* Asymptotic two-sided KS critical value at level alpha. */
inline double ks_critical(std::size_t n, double alpha) {
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

/* ── Self-normalized importance sampling ──────────────────────────────────
 * Weights arrive as logs; ESS = (Σw)²/Σw² is computed in log space.
 */
inline double ess_from_log_weights(std::span<const double> logw) {
    const double l1 = log_sum_exp(logw);
    if (l1 == kNegInf) return 0.0;
    std::vector<double> twice(logw.size());
    for (std::size_t i = 0; i < logw.size(); ++i)
        twice[i] = logw[i] == kNegInf ? kNegInf : 2.0 * logw[i];
    const double l2 = log_sum_exp(twice);
    return std::exp(2.0 * l1 - l2);
}

/* Self-normalized weighted mean of v under weights exp(logw). */
inline double weighted_mean(std::span<const double> v, std::span<const double> logw) {
    const double lse = log_sum_exp(logw);
    if (lse == kNegInf) throw std::runtime_error("weighted_mean: all weights vanish");
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (logw[i] != kNegInf) s += std::exp(logw[i] - lse) * v[i];
    return s;
}

/*
 * Weighted bootstrap standard error of a functional of (values, log-weights):
 * resample indices with replacement, recompute the statistic, report the
 * spread over `resamples` replicates.  Deterministic given the seed tuple.
 */
template <class Stat>
double bootstrap_se(std::span<const double> v, std::span<const double> logw, Stat&& stat,
                    int resamples, std::uint64_t master, std::uint64_t cell) {
    const std::size_t n = v.size();
    std::vector<double> reps(static_cast<std::size_t>(resamples));
    std::vector<double> rv(n), rw(n);
    for (int b = 0; b < resamples; ++b) {
        auto eng = sample_engine(master, stream::kBootstrap, cell, static_cast<std::uint64_t>(b));
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = pick(eng);
            rv[i] = v[j];
            rw[i] = logw[j];
        }
        reps[static_cast<std::size_t>(b)] = stat(std::span<const double>(rv), std::span<const double>(rw));
    }
    const auto ms = mean_se(reps);
    return ms.se * std::sqrt(static_cast<double>(resamples));  // sd of replicates
}

}  // namespace kacsphere
