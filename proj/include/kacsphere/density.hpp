/*
 * density.hpp — the one-dimensional density catalog and its functionals.
 *
 * Every experiment starts from a base density f on ℝ with unit energy
 * ∫ x² f(x) dx = 1 (the normalization that matches the radius-√N sphere).
 * The catalog supplies:
 *
 *   · γ            — the standard Gaussian, the null model for everything;
 *   · N(μ,σ²)      — a shifted Gaussian with μ² + σ² = 1;
 *   · mixture      — ½N(−μ,σ²) + ½N(μ,σ²), smooth, bimodal, unit energy;
 *   · t(ν), ν∈{3,5,9} — unit-variance rescaled Student-t; |x|^p integrable
 *                    exactly for p < ν, so the three choices exercise the
 *                    p ∈ (2,4), p ≈ 4 and p > 4 transport-rate regimes;
 *   · uniform-jump — a bounded, compactly supported density with a jump,
 *                    the non-smooth test case for the Lipschitz machinery.
 *
 * Functionals (moments, relative entropy H(f|γ) = ∫ f log(f/γ), relative
 * Fisher information I(f|γ) = ∫ (f'/f + x)² f) are served closed-form when
 * a formula exists and by adaptive quadrature otherwise, with the support
 * split at kinks so each panel is smooth.
 */

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "math.hpp"
#include "quadrature.hpp"
#include "stats.hpp"

namespace kacsphere {

/*
 * A catalog member.  The callable fields close over their parameters; the
 * metadata drives preconditions (differentiability, tail order) and the
 * quadrature split points.  `tail_order` is the supremum of p with
 * ∫|x|^p f < ∞ (infinite for sub-Gaussian tails).
 */
enum class DensityFamily { Gaussian, Mixture, StudentT, UniformJump, Other };

struct DensityModel {
    std::string name;
    std::function<double(double)> log_pdf;                 // −∞ outside support
    std::function<double(double)> pdf_derivative;          // empty if non-smooth
    std::function<double(double)> score;                   // (log f)' = f'/f, empty if non-smooth
    std::function<double(std::mt19937_64&)> sampler;
    std::function<double(double)> cdf;                     // for sampler validation
    DensityFamily family = DensityFamily::Other;
    double mu = 0.0;                                       // family parameters where applicable
    double sigma = 1.0;
    double support_lo = -kInf;
    double support_hi = kInf;
    std::vector<double> kinks;                             // interior non-smooth points
    bool unit_energy = true;
    bool differentiable = true;
    bool bounded_pdf = true;                               // sup f < ∞ (all catalog members)
    double tail_order = kInf;
    std::optional<double> closed_rel_entropy;              // H(f|γ) when known exactly
    std::optional<double> closed_rel_fisher;               // I(f|γ) when known exactly
    std::function<std::optional<double>(double)> closed_moment;  // p ↦ ∫|x|^p f if known

    double pdf(double x) const {
        const double l = log_pdf(x);
        return l == kNegInf ? 0.0 : std::exp(l);
    }
};

/* Result of a pointwise evaluation; `has_derivative` is false for
 * non-smooth members and at their kink points.                              */
struct EvalTriple {
    double pdf = 0.0;
    double log_pdf = kNegInf;
    double derivative = 0.0;
    bool has_derivative = false;
};

inline EvalTriple evaluate(const DensityModel& m, double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("evaluate: x must be finite");
    EvalTriple out;
    out.log_pdf = m.log_pdf(x);
    out.pdf = out.log_pdf == kNegInf ? 0.0 : std::exp(out.log_pdf);
    bool at_kink = false;
    for (double k : m.kinks)
        if (std::abs(x - k) < 1e-12) at_kink = true;
    if (x <= m.support_lo || x >= m.support_hi) at_kink = true;
    if (m.differentiable && m.pdf_derivative && !at_kink) {
        out.derivative = m.pdf_derivative(x);
        out.has_derivative = true;
    }
    return out;
}

/* ── Catalog constructors ────────────────────────────────────────────────── */

inline DensityModel make_gamma() {
    DensityModel m;
    m.name = "gamma";
    m.log_pdf = [](double x) { return norm_log_pdf(x); };
    m.pdf_derivative = [](double x) { return -x * norm_pdf(x); };
    m.score = [](double x) { return -x; };
    m.sampler = [](std::mt19937_64& eng) {
        std::normal_distribution<double> d(0.0, 1.0);
        return d(eng);
    };
    m.cdf = [](double x) { return norm_cdf(x); };
    m.family = DensityFamily::Gaussian;
    m.closed_rel_entropy = 0.0;
    m.closed_rel_fisher = 0.0;
    /* E|X|^p = 2^{p/2} Γ((p+1)/2)/√π for the standard Gaussian. */
    m.closed_moment = [](double p) -> std::optional<double> {
        return std::exp(0.5 * p * kLogTwo + std::lgamma(0.5 * (p + 1.0)) - 0.5 * std::log(kPi));
    };
    return m;
}

inline DensityModel make_gaussian(double mu, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("make_gaussian: sigma must be positive");
    DensityModel m;
    m.name = "gaussian";
    m.log_pdf = [mu, sigma](double x) {
        const double z = (x - mu) / sigma;
        return -0.5 * z * z - std::log(sigma) - 0.5 * kLogTwoPi;
    };
    m.pdf_derivative = [mu, sigma](double x) {
        const double z = (x - mu) / sigma;
        return -(z / sigma) * (norm_pdf(z) / sigma);
    };
    m.score = [mu, sigma](double x) { return -(x - mu) / (sigma * sigma); };
    m.sampler = [mu, sigma](std::mt19937_64& eng) {
        std::normal_distribution<double> d(mu, sigma);
        return d(eng);
    };
    m.cdf = [mu, sigma](double x) { return norm_cdf((x - mu) / sigma); };
    m.family = DensityFamily::Gaussian;
    m.mu = mu;
    m.sigma = sigma;
    m.unit_energy = std::abs(mu * mu + sigma * sigma - 1.0) < 1e-12;
    /* Gaussian-vs-Gaussian divergences in closed form. */
    m.closed_rel_entropy = 0.5 * (sigma * sigma + mu * mu - 1.0) - std::log(sigma);
    const double a = 1.0 - 1.0 / (sigma * sigma);
    m.closed_rel_fisher = a * a * sigma * sigma + mu * mu;
    return m;
}

/*
 * ½N(−μ,σ²) + ½N(μ,σ²).  The log-density uses the identity
 *   ½(φ_μ + φ_{−μ})(x) = (σ√{2π})^{-1} e^{−(x²+μ²)/2σ²} cosh(xμ/σ²)
 * with log cosh t = |t| + log1p(e^{−2|t|}) − log 2, which is both branch-free
 * and immune to overflow — this is the hottest scalar call in the codebase.
 */
inline DensityModel make_mixture(double mu, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("make_mixture: sigma must be positive");
    DensityModel m;
    m.name = "mixture";
    const double inv2s2 = 0.5 / (sigma * sigma);
    const double log_norm = -std::log(sigma) - 0.5 * kLogTwoPi;
    m.log_pdf = [mu, sigma, inv2s2, log_norm](double x) {
        const double t = std::abs(x * mu) / (sigma * sigma);
        const double logcosh = t + std::log1p(std::exp(-2.0 * t)) - kLogTwo;
        return -(x * x + mu * mu) * inv2s2 + logcosh + log_norm;
    };
    m.pdf_derivative = [mu, sigma](double x) {
        const double s2 = sigma * sigma;
        const double ga = norm_pdf((x - mu) / sigma) / sigma;
        const double gb = norm_pdf((x + mu) / sigma) / sigma;
        return 0.5 * (-(x - mu) / s2 * ga - (x + mu) / s2 * gb);
    };
    m.score = [mu, sigma](double x) {
        const double s2 = sigma * sigma;
        return (-x + mu * std::tanh(x * mu / s2)) / s2;
    };
    m.sampler = [mu, sigma](std::mt19937_64& eng) {
        std::bernoulli_distribution side(0.5);
        std::normal_distribution<double> d(side(eng) ? mu : -mu, sigma);
        return d(eng);
    };
    m.cdf = [mu, sigma](double x) {
        return 0.5 * (norm_cdf((x - mu) / sigma) + norm_cdf((x + mu) / sigma));
    };
    m.family = DensityFamily::Mixture;
    m.mu = mu;
    m.sigma = sigma;
    m.unit_energy = std::abs(mu * mu + sigma * sigma - 1.0) < 1e-12;
    return m;
}

/*
 * Unit-variance rescaled Student-t(ν), ν > 2: X = s·T with s² = (ν−2)/ν.
 * Moments ∫|x|^p f are finite exactly for p < ν.
 */
inline DensityModel make_student_t_unit(int nu) {
    if (nu <= 2) throw std::invalid_argument("make_student_t_unit: need nu > 2 for unit variance");
    DensityModel m;
    m.name = "t" + std::to_string(nu);
    const double dnu = static_cast<double>(nu);
    const double s = std::sqrt((dnu - 2.0) / dnu);
    const double log_c = std::lgamma(0.5 * (dnu + 1.0)) - std::lgamma(0.5 * dnu) -
                         0.5 * std::log(dnu * kPi);
    m.log_pdf = [dnu, s, log_c](double x) {
        const double t = x / s;
        return log_c - 0.5 * (dnu + 1.0) * std::log1p(t * t / dnu) - std::log(s);
    };
    m.pdf_derivative = [dnu, s, log_c](double x) {
        const double t = x / s;
        const double f = std::exp(log_c - 0.5 * (dnu + 1.0) * std::log1p(t * t / dnu)) / s;
        /* d/dx f = f(x) · (−(ν+1) t / (ν + t²)) / s */
        return f * (-(dnu + 1.0) * t / (dnu + t * t)) / s;
    };
    m.score = [dnu, s](double x) {
        const double t = x / s;
        return -(dnu + 1.0) * t / (s * (dnu + t * t));
    };
    m.sampler = [dnu, s](std::mt19937_64& eng) {
        std::student_t_distribution<double> d(dnu);
        return s * d(eng);
    };
    m.cdf = [dnu, s](double x) {
        boost::math::students_t_distribution<double> d(dnu);
        return boost::math::cdf(d, x / s);
    };
    m.family = DensityFamily::StudentT;
    m.sigma = s;   // scale; tail exponent lives in tail_order
    m.tail_order = dnu;
    /* E|X|^p = s^p ν^{p/2} Γ((p+1)/2) Γ((ν−p)/2) / (√π Γ(ν/2)) for p < ν. */
    m.closed_moment = [dnu, s](double p) -> std::optional<double> {
        if (p >= dnu) return std::nullopt;
        return std::exp(p * std::log(s) + 0.5 * p * std::log(dnu) + std::lgamma(0.5 * (p + 1.0)) +
                        std::lgamma(0.5 * (dnu - p)) - 0.5 * std::log(kPi) - std::lgamma(0.5 * dnu));
    };
    return m;
}

/*
 * Bounded density with a jump: f = 1/(3√3) on [−√3, 0), 2/(3√3) on [0, √3].
 * Compact support, unit energy (∫x²f = c²/3 with c = √3), discontinuous at
 * 0 and both edges — the canonical non-smooth input for Lipschitz machinery.
 */
inline DensityModel make_uniform_jump() {
    DensityModel m;
    m.name = "uniform-jump";
    const double c = std::sqrt(3.0);
    const double lo_level = 1.0 / (3.0 * c);   // left mass 1/3
    const double hi_level = 2.0 / (3.0 * c);   // right mass 2/3
    m.support_lo = -c;
    m.support_hi = c;
    m.kinks = {0.0};
    m.differentiable = false;
    m.family = DensityFamily::UniformJump;
    m.log_pdf = [c, lo_level, hi_level](double x) {
        if (x < -c || x > c) return kNegInf;
        return std::log(x < 0.0 ? lo_level : hi_level);
    };
    m.sampler = [c](std::mt19937_64& eng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double v = u(eng);
        if (v < 1.0 / 3.0) return -c * (1.0 - 3.0 * v);  // uniform on [−c, 0)
        return c * 1.5 * (v - 1.0 / 3.0);                // uniform on [0, c]
    };
    m.cdf = [c, lo_level, hi_level](double x) {
        if (x <= -c) return 0.0;
        if (x >= c) return 1.0;
        if (x < 0.0) return lo_level * (x + c);
        return 1.0 / 3.0 + hi_level * x;
    };
    return m;
}

/* Canonical members by name; parameterized members take catalog defaults. */
inline DensityModel catalog_lookup(const std::string& name) {
    if (name == "gamma") return make_gamma();
    if (name == "gaussian") return make_gaussian(0.6, 0.8);
    if (name == "mixture") return make_mixture(0.6, 0.8);
    if (name == "t3") return make_student_t_unit(3);
    if (name == "t5") return make_student_t_unit(5);
    if (name == "t9") return make_student_t_unit(9);
    if (name == "uniform-jump") return make_uniform_jump();
    throw std::invalid_argument("unknown catalog density: " + name);
}

inline std::vector<std::string> catalog_names() {
    return {"gamma", "gaussian", "mixture", "t3", "t5", "t9", "uniform-jump"};
}

/* ── Functionals ─────────────────────────────────────────────────────────── */

/* ∫ |x|^p f(x) dx, or a diverged flag when p reaches the tail order. */
inline EstimateWithError moment(const DensityModel& m, double p) {
    if (p < 0) throw std::invalid_argument("moment: p must be nonnegative");
    EstimateWithError out;
    if (p >= m.tail_order) {
        out.value = kInf;
        out.diverged = true;
        out.method = "closed-form";
        return out;
    }
    if (p == 0.0) {
        out.value = 1.0;
        out.method = "closed-form";
        return out;
    }
    if (m.closed_moment) {
        if (auto v = m.closed_moment(p)) {
            out.value = *v;
            out.method = "closed-form";
            return out;
        }
    }
    const auto r = integrate([&](double x) { return std::pow(std::abs(x), p) * m.pdf(x); },
                             m.support_lo, m.support_hi, m.kinks);
    out.value = r.value;
    out.error = r.error;
    out.method = "adaptive-quadrature";
    return out;
}

/* H(f|γ) = ∫ f log(f/γ); closed form for Gaussian members. */
inline EstimateWithError rel_entropy_gaussian(const DensityModel& m) {
    EstimateWithError out;
    if (m.closed_rel_entropy) {
        out.value = *m.closed_rel_entropy;
        out.method = "closed-form";
        return out;
    }
    const auto r = integrate(
        [&](double x) {
            const double lf = m.log_pdf(x);
            if (lf == kNegInf) return 0.0;
            return std::exp(lf) * (lf - norm_log_pdf(x));
        },
        m.support_lo, m.support_hi, m.kinks);
    if (!std::isfinite(r.value))
        throw std::runtime_error("rel_entropy_gaussian: quadrature failed to converge");
    out.value = r.value;
    out.error = r.error;
    out.method = "adaptive-quadrature";
    if (out.value < 0.0 && out.value > -1e-10) out.value = 0.0;  // clip tiny negative round-off
    return out;
}

/* I(f|γ) = ∫ (f'(x) + x f(x))² / f(x) dx over {f > 0}. */
inline EstimateWithError rel_fisher_gaussian(const DensityModel& m) {
    if (!m.differentiable || !m.pdf_derivative)
        throw std::invalid_argument("rel_fisher_gaussian: unsupported for non-differentiable member " +
                                    m.name);
    EstimateWithError out;
    if (m.closed_rel_fisher) {
        out.value = *m.closed_rel_fisher;
        out.method = "closed-form";
        return out;
    }
    const auto r = integrate(
        [&](double x) {
            const double f = m.pdf(x);
            if (f <= 0.0) return 0.0;
            const double score_gap = m.pdf_derivative(x) / f + x;
            return score_gap * score_gap * f;
        },
        m.support_lo, m.support_hi, m.kinks);
    if (!std::isfinite(r.value))
        throw std::runtime_error("rel_fisher_gaussian: quadrature failed to converge");
    out.value = r.value;
    out.error = r.error;
    out.method = "adaptive-quadrature";
    if (out.value < 0.0 && out.value > -1e-10) out.value = 0.0;
    return out;
}

}  // namespace kacsphere
