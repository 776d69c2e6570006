/*
 * harness.hpp — config-driven convergence studies.
 *
 * A study is a JSON document naming a base density, a list of metrics
 * (w2, wr, l1_k1, entropy, entropy_gap, fisher, fisher_n2,
 * conditioned_entropy, tail_prob, alip), an N grid, sample counts, and a
 * master seed.  run_study validates the configuration *fail-closed* —
 * any precondition of a cited bound that the config violates is rejected
 * before compute, naming the offending field and the bound's tag — then
 * executes every metric × N cell, attaches the predicted bound curves,
 * fits log-log slopes, and persists a CSV + JSON pair.
 *
 * Determinism contract: every number in the outputs is a pure function of
 * (config, master seed).  The estimators key their RNG streams by
 * (master seed, metric stream tag, N, sample index), so the worker count
 * (env KACLAB_WORKERS) never changes a digit.  Files are written to a
 * temp name and renamed, so readers never observe a partial file.
 *
 * CSV schema (one row per metric × N cell, header exactly):
 *   study_id,metric,N,estimate,stderr,method,samples,seed,bound,violation
 * `bound` is empty when no bound applies and `inf` when the bound is
 * vacuous at that N; `violation` is 1 when the estimate clears its bound
 * by more than 3 standard errors (direction per metric).  For `alip` rows
 * the N column holds the sweep size and `estimate` the fitted exponent.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "kacsphere/alip.hpp"
#include "kacsphere/density.hpp"
#include "kacsphere/estimators.hpp"
#include "kacsphere/rates.hpp"
#include "kacsphere/rescaled.hpp"
#include "kacsphere/stats.hpp"

namespace kacsphere {

/* ── Configuration ───────────────────────────────────────────────────────── */

struct MetricSpec {
    std::string name;       // one of the metric list above
    double wr_order = 3.0;  // r for wr
    int tail_k = 1;         // k for tail_prob
    double tail_q = 0.25;   // q for tail_prob

    /* Row label in CSV/plots; parameterized metrics encode their params. */
    std::string label() const {
        char buf[64];
        if (name == "wr") {
            std::snprintf(buf, sizeof buf, "wr%g", wr_order);
            return buf;
        }
        if (name == "tail_prob") {
            std::snprintf(buf, sizeof buf, "tail_k%d_q%g", tail_k, tail_q);
            return buf;
        }
        return name;
    }
};

struct StudyConfig {
    std::string study_id;
    std::string density_name;
    std::optional<double> density_mu;     // gaussian/mixture overrides
    std::optional<double> density_sigma;
    std::vector<MetricSpec> metrics;
    std::vector<long> n_grid;             // empty = per-metric default grid
    long samples = 10000;                 // M per Monte Carlo cell
    long mixture_draws = 20000;           // M_mix for the marginal evaluator
    int quadrature_points = 801;          // marginal-distance Simpson grid
    int theta_nodes = 512;                // fisher_n2 angular rule
    std::uint64_t seed = 0;
    std::string output_dir = ".";
};

inline const std::vector<std::string>& known_metric_names() {
    static const std::vector<std::string> names = {
        "w2",     "wr",        "l1_k1",     "entropy",           "entropy_gap",
        "fisher", "fisher_n2", "tail_prob", "conditioned_entropy", "alip"};
    return names;
}

namespace detail {
inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key))
            throw std::invalid_argument("config " + where + ": unknown key '" + key + "'");
    }
}
}  // namespace detail

/* Strict parse: unknown keys are configuration errors (typos fail closed). */
inline StudyConfig parse_study_config(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    detail::reject_unknown_keys(j,
                                {"study_id", "density", "metrics", "n_grid", "samples",
                                 "mixture_draws", "quadrature_points", "theta_nodes", "seed",
                                 "output_dir"},
                                "top level");
    StudyConfig c;
    if (!j.contains("study_id") || !j["study_id"].is_string())
        throw std::invalid_argument("config study_id: required string");
    c.study_id = j["study_id"].get<std::string>();
    if (!j.contains("density")) throw std::invalid_argument("config density: required");
    const auto& d = j["density"];
    if (d.is_string()) {
        c.density_name = d.get<std::string>();
    } else if (d.is_object()) {
        detail::reject_unknown_keys(d, {"name", "parameters"}, "density");
        if (!d.contains("name") || !d["name"].is_string())
            throw std::invalid_argument("config density.name: required string");
        c.density_name = d["name"].get<std::string>();
        if (d.contains("parameters")) {
            const auto& p = d["parameters"];
            detail::reject_unknown_keys(p, {"mu", "sigma"}, "density.parameters");
            if (p.contains("mu")) c.density_mu = p["mu"].get<double>();
            if (p.contains("sigma")) c.density_sigma = p["sigma"].get<double>();
        }
    } else {
        throw std::invalid_argument("config density: string or object expected");
    }
    if (!j.contains("metrics") || !j["metrics"].is_array() || j["metrics"].empty())
        throw std::invalid_argument("config metrics: non-empty array required");
    for (const auto& m : j["metrics"]) {
        MetricSpec spec;
        if (m.is_string()) {
            spec.name = m.get<std::string>();
        } else if (m.is_object()) {
            detail::reject_unknown_keys(m, {"name", "r", "k", "q"}, "metrics[]");
            if (!m.contains("name") || !m["name"].is_string())
                throw std::invalid_argument("config metrics[].name: required string");
            spec.name = m["name"].get<std::string>();
            if (m.contains("r")) spec.wr_order = m["r"].get<double>();
            if (m.contains("k")) spec.tail_k = m["k"].get<int>();
            if (m.contains("q")) spec.tail_q = m["q"].get<double>();
        } else {
            throw std::invalid_argument("config metrics[]: string or object expected");
        }
        c.metrics.push_back(std::move(spec));
    }
    if (j.contains("n_grid")) {
        if (!j["n_grid"].is_array()) throw std::invalid_argument("config n_grid: array expected");
        for (const auto& n : j["n_grid"]) c.n_grid.push_back(n.get<long>());
    }
    if (j.contains("samples")) c.samples = j["samples"].get<long>();
    if (j.contains("mixture_draws")) c.mixture_draws = j["mixture_draws"].get<long>();
    if (j.contains("quadrature_points")) c.quadrature_points = j["quadrature_points"].get<int>();
    if (j.contains("theta_nodes")) c.theta_nodes = j["theta_nodes"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    return c;
}

inline StudyConfig load_study_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    return parse_study_config(j);
}

/* Catalog density from the config's density spec. */
inline DensityModel build_density(const StudyConfig& c) {
    if (c.density_mu || c.density_sigma) {
        const double mu = c.density_mu.value_or(0.6);
        const double sigma = c.density_sigma.value_or(0.8);
        if (c.density_name == "gaussian") return make_gaussian(mu, sigma);
        if (c.density_name == "mixture") return make_mixture(mu, sigma);
        throw std::invalid_argument("config density.parameters: only gaussian and mixture are "
                                    "parameterized; '" +
                                    c.density_name + "' takes catalog defaults");
    }
    return catalog_lookup(c.density_name);
}

/* ── Validation (fail-closed) ────────────────────────────────────────────── */

namespace detail {
inline bool metric_uses_samples(const std::string& name) {
    return name == "w2" || name == "wr" || name == "entropy" || name == "entropy_gap" ||
           name == "fisher" || name == "conditioned_entropy" || name == "tail_prob";
}
inline double tail_delta(const DensityModel& m) {
    return std::isfinite(m.tail_order) ? m.tail_order - 2.0 - 1e-9 : 2.0;
}
}  // namespace detail

/*
 * Reject configurations that violate a precondition of any bound they ask
 * to test, before spending any compute; messages name the field and the
 * bound tag.  Throws std::invalid_argument.
 */
inline void validate_study(const StudyConfig& c, const DensityModel& model) {
    if (c.study_id.empty()) throw std::invalid_argument("config study_id: must be non-empty");
    for (char ch : c.study_id)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.')
            throw std::invalid_argument(
                "config study_id: only [A-Za-z0-9._-] allowed (it names output files)");
    for (std::size_t i = 0; i < c.n_grid.size(); ++i) {
        if (c.n_grid[i] < 2)
            throw std::invalid_argument("config n_grid: every N must be >= 2");
        if (i > 0 && c.n_grid[i] <= c.n_grid[i - 1])
            throw std::invalid_argument("config n_grid: must be strictly increasing");
    }
    if (c.quadrature_points < 5)
        throw std::invalid_argument("config quadrature_points: need >= 5");
    if (c.theta_nodes < 16 || c.theta_nodes % 2 != 0)
        throw std::invalid_argument("config theta_nodes: even count >= 16 required");

    std::set<std::string> seen;
    for (const auto& spec : c.metrics) {
        const auto& known = known_metric_names();
        if (std::find(known.begin(), known.end(), spec.name) == known.end())
            throw std::invalid_argument("config metrics: unknown metric '" + spec.name + "'");
        if (!seen.insert(spec.label()).second)
            throw std::invalid_argument("config metrics: duplicate metric '" + spec.label() + "'");

        if (detail::metric_uses_samples(spec.name) && c.samples < 1000)
            throw std::invalid_argument("config samples: Monte Carlo metric '" + spec.name +
                                        "' requires M >= 1000");
        if (spec.name == "l1_k1" && c.mixture_draws < 1000)
            throw std::invalid_argument(
                "config mixture_draws: l1_k1 requires M_mix >= 1000");

        if (spec.name == "w2" || spec.name == "wr") {
            if (!model.unit_energy)
                throw std::invalid_argument("metric " + spec.name + ": base '" + model.name +
                                            "' is not normalized to unit energy (tag: w2)");
        }
        if (spec.name == "wr") {
            if (!(spec.wr_order >= 2.0))
                throw std::invalid_argument("metric wr: order r must be >= 2 (tag: wr)");
            if (!(model.tail_order > spec.wr_order))
                throw std::invalid_argument(
                    "metric wr: base '" + model.name + "' lacks a finite moment above r = " +
                    std::to_string(spec.wr_order) + " (tail order " +
                    std::to_string(model.tail_order) +
                    "); the transport interpolation bound requires r < p (tag: wr)");
        }
        if (spec.name == "fisher" || spec.name == "fisher_n2") {
            if (!model.differentiable || !model.score)
                throw std::invalid_argument(
                    spec.name + " requires differentiable base with finite I(f|γ): base '" +
                    model.name + "' is not differentiable (tag: fisher-inequality)");
            bool ok = true;
            try {
                const auto fisher_ref = rel_fisher_gaussian(model);
                ok = std::isfinite(fisher_ref.value) && !fisher_ref.diverged;
            } catch (const std::exception&) {
                ok = false;
            }
            if (!ok)
                throw std::invalid_argument(
                    spec.name +
                    " requires differentiable base with finite I(f|γ): quadrature check "
                    "failed (tag: fisher-inequality)");
            if (spec.name == "fisher")
                for (long n : c.n_grid)
                    if (n < 3)
                        throw std::invalid_argument(
                            "metric fisher: grid contains N < 3; the spherical gradient "
                            "needs at least 3 coordinates");
        }
        if (spec.name == "entropy" || spec.name == "entropy_gap" ||
            spec.name == "conditioned_entropy") {
            bool ok = true;
            try {
                ok = std::isfinite(rel_entropy_gaussian(model).value);
            } catch (const std::exception&) {
                ok = false;
            }
            if (!ok)
                throw std::invalid_argument("metric " + spec.name + ": base '" + model.name +
                                            "' has no finite H(f|γ) (tag: entropic-limit)");
        }
        if (spec.name == "conditioned_entropy") {
            if (!model.bounded_pdf)
                throw std::invalid_argument(
                    "metric conditioned_entropy: base '" + model.name +
                    "' has unbounded density (tag: conditioned-degeneracy)");
            for (long n : c.n_grid)
                if (n > 64)
                    throw std::invalid_argument(
                        "metric conditioned_entropy: grid N = " + std::to_string(n) +
                        " exceeds the conditioned cap 64; importance weights from the "
                        "uniform sphere degenerate exponentially in N "
                        "(tag: conditioned-degeneracy)");
        }
        if (spec.name == "tail_prob") {
            if (spec.tail_k < 1)
                throw std::invalid_argument("metric tail_prob: k >= 1 required (tag: tail-truncated)");
            if (!(spec.tail_q >= 0.0) || !(spec.tail_q < 1.0))
                throw std::invalid_argument(
                    "metric tail_prob: q in [0, 1) required (tag: tail-truncated)");
            const double delta = detail::tail_delta(model);
            if (!(delta > 0.0))
                throw std::invalid_argument("metric tail_prob: base '" + model.name +
                                            "' lacks a finite (2+δ)-moment (tag: tail-truncated)");
            const double db = std::min(2.0, delta);
            const double ex2 = moment(model, 2.0).value;
            const double floor_n = n_min(static_cast<double>(spec.tail_k), db, spec.tail_q, ex2);
            for (long n : c.n_grid) {
                if (n <= spec.tail_k)
                    throw std::invalid_argument(
                        "metric tail_prob: grid N = " + std::to_string(n) +
                        " does not exceed k = " + std::to_string(spec.tail_k) +
                        " (tag: tail-truncated)");
                if (static_cast<double>(n) < floor_n)
                    throw std::invalid_argument(
                        "metric tail_prob: grid N = " + std::to_string(n) +
                        " is below the bound's threshold n_min = " + std::to_string(floor_n) +
                        " (tag: tail-truncated)");
            }
        }
    }
}

/* The default grid, with per-metric caps/filters applied when the config
 * leaves the grid to the harness.                                          */
inline std::vector<long> metric_grid(const MetricSpec& spec, const StudyConfig& c,
                                     const DensityModel& model) {
    if (spec.name == "fisher_n2") return {2};
    if (spec.name == "alip") return {};
    if (!c.n_grid.empty()) return c.n_grid;  // validated already
    static const std::vector<long> kDefault = {4, 8, 16, 32, 64, 128, 256, 512, 1024};
    std::vector<long> grid;
    double floor_n = 2.0;
    if (spec.name == "tail_prob") {
        const double db = std::min(2.0, detail::tail_delta(model));
        floor_n = n_min(static_cast<double>(spec.tail_k), db, spec.tail_q,
                        moment(model, 2.0).value);
    }
    for (long n : kDefault) {
        if (spec.name == "fisher" && (n < 3 || n > 128)) continue;
        if (spec.name == "conditioned_entropy" && n > 64) continue;
        if (spec.name == "tail_prob" &&
            (n <= spec.tail_k || static_cast<double>(n) < floor_n))
            continue;
        grid.push_back(n);
    }
    return grid;
}

/* ── Results ─────────────────────────────────────────────────────────────── */

struct MetricOutcome {
    MetricSpec spec;
    std::string label;
    ChaosReport report;
    std::optional<double> reference;            // H(f|γ), I(f|γ), or table value
    std::optional<double> reference_secondary;  // second reference line, if any
    std::optional<double> predicted_slope;      // −exponent of the matched rate
    std::vector<std::string> notes;
};

struct StudyResult {
    StudyConfig config;
    std::string density_name;
    double density_tail_order = kInf;
    std::optional<double> rel_entropy_ref;
    std::optional<double> rel_fisher_ref;
    double ex2_ref = kNaN;
    std::optional<double> ex4_ref;
    std::vector<MetricOutcome> metrics;
    std::vector<std::string> cell_errors;  // "metric=…, N=…: reason"
    double wall_seconds = 0.0;

    bool any_violation() const {
        for (const auto& m : metrics)
            for (bool v : m.report.violations)
                if (v) return true;
        return false;
    }
    bool any_error() const { return !cell_errors.empty(); }
};

/* ── Metric runners ──────────────────────────────────────────────────────── */

namespace detail {

struct RunContext {
    const StudyConfig& config;
    const DensityModel& model;
    std::map<long, EntropyReport> entropy_cache;  // entropy and gap share draws
    std::vector<std::string>* errors = nullptr;

    const EntropyReport& entropy_at(long n) {
        auto it = entropy_cache.find(n);
        if (it != entropy_cache.end()) return it->second;
        auto rep = entropy_analysis(model, n, config.samples, config.seed);
        return entropy_cache.emplace(n, std::move(rep)).first->second;
    }
};

inline ChaosReport make_report(const RunContext& ctx, const std::string& label) {
    ChaosReport rep;
    rep.metric = label;
    rep.base_name = ctx.model.name;
    rep.seed = ctx.config.seed;
    return rep;
}

/* Run one estimator per grid point, recording failures with coordinates. */
template <class Cell>
inline void fill_cells(RunContext& ctx, ChaosReport& rep, std::span<const long> grid,
                       Cell&& cell) {
    for (long n : grid) {
        try {
            EstimateWithError est = cell(n);
            rep.grid.push_back(n);
            rep.estimates.push_back(est);
        } catch (const std::exception& ex) {
            if (ctx.errors)
                ctx.errors->push_back("metric=" + rep.metric + ", N=" + std::to_string(n) +
                                      ": " + ex.what());
        }
    }
}

inline void fit_report_slope(ChaosReport& rep) {
    if (rep.grid.size() >= 4)
        rep.slope = fit_loglog(rep.grid, rep.estimates, &rep.zero_consistent);
}

inline MetricOutcome run_w2_like(RunContext& ctx, const MetricSpec& spec) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    const bool is_wr = spec.name == "wr";
    fill_cells(ctx, mo.report, grid, [&](long n) {
        return is_wr ? wr_coupling_estimate(ctx.model, n, spec.wr_order, ctx.config.samples,
                                            ctx.config.seed)
                     : w2_coupling_estimate(ctx.model, n, ctx.config.samples, ctx.config.seed);
    });
    RatePrediction pred;
    if (std::isfinite(ctx.model.tail_order)) {
        pred = is_wr ? wr_rate(ctx.model.tail_order, spec.wr_order).shape
                     : w2_rate(ctx.model.tail_order);
    } else {
        /* p = ∞: the transport bound takes its p > 4 form and, for wr, the
         * interpolation exponent b = (p−r)/(p−2) → 1.                      */
        pred.tag = is_wr ? "wr" : "w2";
        pred.exponent = 0.5;
    }
    attach_bound_shape(mo.report, pred);
    mo.predicted_slope = -pred.exponent;
    fit_report_slope(mo.report);
    return mo;
}

inline MetricOutcome run_l1(RunContext& ctx, const MetricSpec& spec) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    fill_cells(ctx, mo.report, grid, [&](long n) {
        return l1_marginal_distance(ctx.model, n, ctx.config.mixture_draws,
                                    ctx.config.quadrature_points, ctx.config.seed);
    });
    /* η(k=1, δ, r): δ̄ from the base's moments; r is the base's Lipschitz
     * approximation cost — 0 for the smooth members, 1 for the jump
     * density (a step costs lip ∝ 1/ε).                                    */
    const double db = std::min(2.0, tail_delta(ctx.model));
    const double r_cost = ctx.model.family == DensityFamily::UniformJump ? 1.0 : 0.0;
    RatePrediction pred;
    pred.tag = "l1-marginal";
    pred.exponent = l1_eta(1.0, db, r_cost);
    attach_bound_shape(mo.report, pred);
    mo.predicted_slope = -pred.exponent;
    fit_report_slope(mo.report);
    return mo;
}

inline MetricOutcome run_entropy(RunContext& ctx, const MetricSpec& spec, bool gap,
                                 double h_ref) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    fill_cells(ctx, mo.report, grid, [&](long n) {
        const EntropyReport& rep = ctx.entropy_at(n);
        return gap ? rep.gap : rep.entropy;
    });
    mo.reference = h_ref;
    const std::size_t cells = mo.report.grid.size();
    if (gap) {
        /* gap ≥ 0: violation when the estimate is significantly negative. */
        mo.report.bound_tag = "gap-nonneg";
        mo.report.bounds.assign(cells, 0.0);
        mo.report.violations.assign(cells, false);
        for (std::size_t i = 0; i < cells; ++i) {
            const auto& e = mo.report.estimates[i];
            mo.report.violations[i] = e.value + 3.0 * e.error < 0.0;
        }
    } else {
        /* per-particle entropy approaches H(f|γ) from below. */
        std::vector<double> bounds(cells, h_ref);
        attach_bound_values(mo.report, bounds, "entropic-limit");
    }
    fit_report_slope(mo.report);
    return mo;
}

inline MetricOutcome run_fisher(RunContext& ctx, const MetricSpec& spec, double i_ref) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    fill_cells(ctx, mo.report, grid, [&](long n) {
        return fisher_per_particle(ctx.model, n, ctx.config.samples, ctx.config.seed);
    });
    mo.reference = i_ref;
    std::vector<double> bounds;
    bounds.reserve(mo.report.grid.size());
    for (long n : mo.report.grid)
        bounds.push_back((1.0 - 1.0 / static_cast<double>(n)) * i_ref);
    attach_bound_values(mo.report, bounds, "fisher-inequality");
    fit_report_slope(mo.report);
    return mo;
}

inline MetricOutcome run_fisher_n2(RunContext& ctx, const MetricSpec& spec, double i_ref) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    fill_cells(ctx, mo.report, std::array<long, 1>{2},
               [&](long) { return fisher_n2_exact(ctx.model, ctx.config.theta_nodes); });
    mo.reference = i_ref;
    std::vector<double> bounds(mo.report.grid.size(), 0.5 * i_ref);
    attach_bound_values(mo.report, bounds, "fisher-inequality-n2");
    return mo;
}

inline MetricOutcome run_conditioned(RunContext& ctx, const MetricSpec& spec, double h_ref) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    fill_cells(ctx, mo.report, grid, [&](long n) {
        ConditionedState state;
        state.base = ctx.model;
        state.n = n;
        return conditioned_entropy_per_particle(state, ctx.config.samples, ctx.config.seed);
    });
    mo.reference = h_ref;
    mo.report.bounds.assign(mo.report.grid.size(), kNaN);
    mo.report.violations.assign(mo.report.grid.size(), false);
    fit_report_slope(mo.report);
    return mo;
}

inline MetricOutcome run_tail(RunContext& ctx, const MetricSpec& spec) {
    MetricOutcome mo;
    mo.spec = spec;
    mo.label = spec.label();
    mo.report = make_report(ctx, mo.label);
    const auto grid = metric_grid(spec, ctx.config, ctx.model);
    std::vector<double> bounds;
    for (long n : grid) {
        try {
            const auto check = tail_probability_check(ctx.model, n, spec.tail_k, spec.tail_q,
                                                      ctx.config.samples, ctx.config.seed);
            EstimateWithError est;
            est.value = check.empirical;
            est.error = check.se;
            est.method = "monte-carlo";
            est.samples = static_cast<std::uint64_t>(check.samples);
            mo.report.grid.push_back(n);
            mo.report.estimates.push_back(est);
            bounds.push_back(check.bound);
        } catch (const std::exception& ex) {
            if (ctx.errors)
                ctx.errors->push_back("metric=" + mo.label + ", N=" + std::to_string(n) + ": " +
                                      ex.what());
        }
    }
    attach_bound_values(mo.report, bounds, "tail-truncated");
    const double db = std::min(2.0, tail_delta(ctx.model));
    mo.predicted_slope = -(0.5 * db - (1.0 + 0.5 * db) * spec.tail_q);
    fit_report_slope(mo.report);
    return mo;
}

/* Fixed sweeps for the approximation-cost table plus the distortion rows. */
inline std::vector<MetricOutcome> run_alip(RunContext& ctx) {
    std::vector<MetricOutcome> out;
    auto push_fit = [&](const std::string& label, std::span<const ApproximationFamily> sweep,
                        double table_r, double tol) {
        MetricOutcome mo;
        mo.spec.name = "alip";
        mo.label = label;
        mo.report = make_report(ctx, label);
        const AlipFit fit = fit_r(sweep);
        EstimateWithError est;
        est.value = fit.r_hat;
        est.error = fit.ci_half_width;
        est.method = "sweep-fit";
        est.samples = fit.points;
        mo.report.grid = {static_cast<long>(fit.points)};
        mo.report.estimates = {est};
        mo.report.bounds = {table_r};
        mo.report.violations = {std::abs(fit.r_hat - table_r) > tol};
        mo.report.bound_tag = "alip-table";
        mo.reference = table_r;
        out.push_back(std::move(mo));
    };

    std::vector<ApproximationFamily> sweep;
    for (double h : {0.5, 0.2, 0.08, 0.03, 0.012, 0.005}) sweep.push_back(approx_step(h));
    push_fit("alip_step", sweep, 1.0, 0.05);

    sweep.clear();
    for (double h : {1e-1, 2.15e-2, 4.64e-3, 1e-3, 2.15e-4, 4.64e-5, 1e-5, 3e-6})
        sweep.push_back(approx_power(-0.5, h));
    push_fit("alip_power_neg", sweep, 3.0, 0.3);

    sweep.clear();
    for (double h : {0.5, 0.25, 0.12, 0.06, 0.03, 0.015, 0.0075})
        sweep.push_back(approx_power(0.5, h));
    push_fit("alip_power_pos", sweep, 1.0 / 3.0, 0.05);

    sweep.clear();
    for (double h : {0.5, 0.3, 0.18, 0.1, 0.05, 0.02, 0.01})
        sweep.push_back(approx_power(1.0, h));
    push_fit("alip_power_one", sweep, 0.0, 0.05);

    sweep.clear();
    const auto target = weierstrass_target();
    for (int j : {6, 9, 12, 15, 18, 21, 24, 27})
        sweep.push_back(approx_mollify(target, std::pow(2.0, -j), ctx.config.seed));
    push_fit("alip_mollify", sweep, 3.0, 0.45);

    /* Distortion of a fixed Lipschitz density under the radial map, over a
     * ψ-parameter sweep; one row per N with the closed-form bound.         */
    {
        MetricOutcome mo;
        mo.spec.name = "alip";
        mo.label = "alip_distortion";
        mo.report = make_report(ctx, mo.label);
        mo.report.bound_tag = "distortion-l1";
        const double h = 0.1;
        const auto& rule = gauss_legendre(32);
        std::vector<double> node = rule.nodes, weight(32);
        for (int i = 0; i < 32; ++i) weight[i] = rule.weights[i] * bump_kernel(rule.nodes[i]);
        auto smooth_ind = [node, weight, h](double x) {
            double acc = 0.0;
            for (int i = 0; i < 32; ++i) {
                const double u = x - h * node[i];
                acc += weight[i] * (std::abs(u) <= 1.0 ? 1.0 : 0.0);
            }
            return acc;
        };
        DistortionTarget t;
        t.k = 1;
        t.g = [smooth_ind](std::span<const double> x) { return smooth_ind(x[0]); };
        t.lip = 0.9375 / h;
        t.l1_norm = 2.0;
        t.tail_m = 2.0 * std::pow(1.0 + h, 8.0);
        t.tail_beta = 8.0;
        t.half_width = 4.0;
        t.kinks = {-1.0 - h, -1.0 + h, 1.0 - h, 1.0 + h};
        for (long n : {100L, 1000L, 10000L, 100000L, 1000000L}) {
            const auto map = psi_perturbation(static_cast<double>(n), 0.5, 1.0, 1);
            const auto res = distortion_l1(t, map);
            EstimateWithError est;
            est.value = res.measured;
            est.error = res.quad_error;
            est.method = "adaptive-quadrature";
            mo.report.grid.push_back(n);
            mo.report.estimates.push_back(est);
            mo.report.bounds.push_back(res.bound);
            mo.report.violations.push_back(res.epsilon < 1.0 &&
                                           res.measured - res.quad_error > res.bound);
        }
        out.push_back(std::move(mo));
    }
    return out;
}

}  // namespace detail

/* ── run_study ───────────────────────────────────────────────────────────── */

inline StudyResult run_study(const StudyConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    const DensityModel model = build_density(config);
    validate_study(config, model);

    StudyResult result;
    result.config = config;
    result.density_name = model.name;
    result.density_tail_order = model.tail_order;
    /* Audit trail: the reference functionals every comparison uses. */
    try {
        result.rel_entropy_ref = rel_entropy_gaussian(model).value;
    } catch (const std::exception&) {
    }
    if (model.differentiable && model.score) {
        try {
            result.rel_fisher_ref = rel_fisher_gaussian(model).value;
        } catch (const std::exception&) {
        }
    }
    result.ex2_ref = moment(model, 2.0).value;
    {
        const auto m4 = moment(model, 4.0);
        if (!m4.diverged) result.ex4_ref = m4.value;
    }

    detail::RunContext ctx{config, model, {}, &result.cell_errors};
    for (const auto& spec : config.metrics) {
        if (spec.name == "w2" || spec.name == "wr") {
            result.metrics.push_back(detail::run_w2_like(ctx, spec));
        } else if (spec.name == "l1_k1") {
            result.metrics.push_back(detail::run_l1(ctx, spec));
        } else if (spec.name == "entropy") {
            result.metrics.push_back(
                detail::run_entropy(ctx, spec, false, *result.rel_entropy_ref));
        } else if (spec.name == "entropy_gap") {
            result.metrics.push_back(
                detail::run_entropy(ctx, spec, true, *result.rel_entropy_ref));
        } else if (spec.name == "fisher") {
            result.metrics.push_back(detail::run_fisher(ctx, spec, *result.rel_fisher_ref));
        } else if (spec.name == "fisher_n2") {
            result.metrics.push_back(detail::run_fisher_n2(ctx, spec, *result.rel_fisher_ref));
        } else if (spec.name == "conditioned_entropy") {
            result.metrics.push_back(
                detail::run_conditioned(ctx, spec, *result.rel_entropy_ref));
        } else if (spec.name == "tail_prob") {
            result.metrics.push_back(detail::run_tail(ctx, spec));
        } else if (spec.name == "alip") {
            for (auto& mo : detail::run_alip(ctx)) result.metrics.push_back(std::move(mo));
        }
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

/* ── Slope table ─────────────────────────────────────────────────────────── */

struct SlopeRow {
    std::string label;
    std::optional<LineFit> fit;
    bool zero_consistent = false;
    std::optional<double> predicted;
    std::string note;
};

/* One row per N-gridded metric; throws when no metric has enough points. */
inline std::vector<SlopeRow> fit_slopes(const StudyResult& result) {
    std::vector<SlopeRow> rows;
    bool any_fittable = false;
    for (const auto& mo : result.metrics) {
        if (mo.spec.name == "alip" || mo.spec.name == "fisher_n2") continue;
        SlopeRow row;
        row.label = mo.label;
        row.predicted = mo.predicted_slope;
        if (mo.report.grid.size() < 4) {
            row.note = "insufficient points (< 4 grid cells)";
        } else {
            any_fittable = true;
            row.fit = mo.report.slope;
            row.zero_consistent = mo.report.zero_consistent;
            if (row.zero_consistent)
                row.note = "estimates consistent with zero";
            else if (!row.fit)
                row.note = "fewer than 4 positive estimates";
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw std::invalid_argument("fit_slopes: study has no N-gridded metrics");
    if (!any_fittable)
        throw std::invalid_argument(
            "fit_slopes: no metric has >= 4 grid points with finite estimates");
    return rows;
}

inline std::string render_slope_table(const std::vector<SlopeRow>& rows) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s  %s\n", "metric", "slope", "95%-CI",
                  "predicted", "note");
    out << buf;
    for (const auto& r : rows) {
        std::string slope = "-", ci = "-", pred = "-";
        char num[48];
        if (r.fit) {
            std::snprintf(num, sizeof num, "%.4f", r.fit->slope);
            slope = num;
            std::snprintf(num, sizeof num, "±%.4f", r.fit->slope_ci_half_width);
            ci = num;
        }
        if (r.predicted) {
            std::snprintf(num, sizeof num, "%.4f", *r.predicted);
            pred = num;
        }
        std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s  %s\n", r.label.c_str(),
                      slope.c_str(), ci.c_str(), pred.c_str(), r.note.c_str());
        out << buf;
    }
    return out.str();
}

/* ── Persistence ─────────────────────────────────────────────────────────── */

namespace detail {
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

/* Temp-and-rename so a crash never leaves a half-written file behind. */
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string render_csv(const StudyResult& result) {
    std::string out = "study_id,metric,N,estimate,stderr,method,samples,seed,bound,violation\n";
    for (const auto& mo : result.metrics) {
        for (std::size_t i = 0; i < mo.report.grid.size(); ++i) {
            const auto& est = mo.report.estimates[i];
            const double bound = i < mo.report.bounds.size() ? mo.report.bounds[i] : kNaN;
            const bool viol = i < mo.report.violations.size() && mo.report.violations[i];
            out += result.config.study_id;
            out += ',';
            out += mo.label;
            out += ',';
            out += std::to_string(mo.report.grid[i]);
            out += ',';
            out += detail::fmt17(est.value);
            out += ',';
            out += detail::fmt17(est.error);
            out += ',';
            out += est.method;
            out += ',';
            out += std::to_string(est.samples);
            out += ',';
            out += std::to_string(result.config.seed);
            out += ',';
            if (std::isnan(bound))
                ;  // no bound: empty field
            else if (std::isinf(bound))
                out += "inf";
            else
                out += detail::fmt17(bound);
            out += ',';
            out += viol ? '1' : '0';
            out += '\n';
        }
    }
    return out;
}

inline nlohmann::json config_json(const StudyConfig& c) {
    nlohmann::json j;
    j["study_id"] = c.study_id;
    nlohmann::json d;
    d["name"] = c.density_name;
    if (c.density_mu || c.density_sigma) {
        nlohmann::json p;
        if (c.density_mu) p["mu"] = *c.density_mu;
        if (c.density_sigma) p["sigma"] = *c.density_sigma;
        d["parameters"] = p;
    }
    j["density"] = d;
    nlohmann::json metrics = nlohmann::json::array();
    for (const auto& m : c.metrics) {
        nlohmann::json e;
        e["name"] = m.name;
        if (m.name == "wr") e["r"] = m.wr_order;
        if (m.name == "tail_prob") {
            e["k"] = m.tail_k;
            e["q"] = m.tail_q;
        }
        metrics.push_back(e);
    }
    j["metrics"] = metrics;
    j["n_grid"] = c.n_grid;
    j["samples"] = c.samples;
    j["mixture_draws"] = c.mixture_draws;
    j["quadrature_points"] = c.quadrature_points;
    j["theta_nodes"] = c.theta_nodes;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

inline nlohmann::json study_result_json(const StudyResult& result) {
    nlohmann::json j;
    j["study_id"] = result.config.study_id;
    j["config"] = config_json(result.config);
    nlohmann::json dens;
    dens["name"] = result.density_name;
    dens["tail_order"] =
        std::isfinite(result.density_tail_order) ? nlohmann::json(result.density_tail_order)
                                                 : nlohmann::json("inf");
    dens["rel_entropy"] =
        result.rel_entropy_ref ? nlohmann::json(*result.rel_entropy_ref) : nlohmann::json();
    dens["rel_fisher"] =
        result.rel_fisher_ref ? nlohmann::json(*result.rel_fisher_ref) : nlohmann::json();
    dens["ex2"] = result.ex2_ref;
    dens["ex4"] = result.ex4_ref ? nlohmann::json(*result.ex4_ref) : nlohmann::json();
    j["density"] = dens;

    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json summaries = nlohmann::json::array();
    for (const auto& mo : result.metrics) {
        for (std::size_t i = 0; i < mo.report.grid.size(); ++i) {
            const auto& est = mo.report.estimates[i];
            nlohmann::json row;
            row["metric"] = mo.label;
            row["N"] = mo.report.grid[i];
            row["estimate"] = est.value;
            row["stderr"] = est.error;
            row["method"] = est.method;
            row["samples"] = est.samples;
            row["seed"] = result.config.seed;
            const double bound = i < mo.report.bounds.size() ? mo.report.bounds[i] : kNaN;
            if (std::isnan(bound))
                row["bound"] = nullptr;
            else if (std::isinf(bound))
                row["bound"] = "inf";
            else
                row["bound"] = bound;
            row["violation"] = i < mo.report.violations.size() && mo.report.violations[i];
            rows.push_back(row);
        }
        nlohmann::json s;
        s["metric"] = mo.label;
        s["bound_tag"] = mo.report.bound_tag;
        s["reference"] = mo.reference ? nlohmann::json(*mo.reference) : nlohmann::json();
        s["reference_secondary"] = mo.reference_secondary
                                       ? nlohmann::json(*mo.reference_secondary)
                                       : nlohmann::json();
        s["predicted_slope"] =
            mo.predicted_slope ? nlohmann::json(*mo.predicted_slope) : nlohmann::json();
        s["zero_consistent"] = mo.report.zero_consistent;
        if (mo.report.slope) {
            nlohmann::json fit;
            fit["slope"] = mo.report.slope->slope;
            fit["intercept"] = mo.report.slope->intercept;
            fit["se"] = mo.report.slope->slope_se;
            fit["ci_half_width"] = mo.report.slope->slope_ci_half_width;
            s["slope_fit"] = fit;
        } else {
            s["slope_fit"] = nullptr;
        }
        s["notes"] = mo.notes;
        summaries.push_back(s);
    }
    j["rows"] = rows;
    j["metrics"] = summaries;
    j["errors"] = result.cell_errors;
    j["wall_seconds"] = result.wall_seconds;
    j["rng"] = {{"scheme", "counter-keyed"}, {"master_seed", result.config.seed}};
    return j;
}

/* Write <output_dir>/<study_id>.csv and .json; returns the two paths. */
inline std::pair<std::filesystem::path, std::filesystem::path> write_study_outputs(
    const StudyResult& result) {
    const std::filesystem::path dir = result.config.output_dir;
    const auto csv_path = dir / (result.config.study_id + ".csv");
    const auto json_path = dir / (result.config.study_id + ".json");
    write_file_atomic(csv_path, render_csv(result));
    write_file_atomic(json_path, study_result_json(result).dump(2) + "\n");
    return {csv_path, json_path};
}

/* ── Plot data ───────────────────────────────────────────────────────────── */

/*
 * Two-block text file for external plotting: estimate rows, a blank line,
 * bound-shape rows, then reference lines (limit values such as H(f|γ) or
 * I(f|γ)).  Works from the result JSON so the CLI can re-plot persisted
 * studies without recomputation.
 */
inline std::filesystem::path emit_plot_data(const nlohmann::json& result_json,
                                            const std::string& metric_label,
                                            std::optional<std::string> output_dir = {}) {
    if (!result_json.contains("rows") || !result_json.contains("metrics"))
        throw std::invalid_argument("emit_plot_data: not a study result document");
    const std::string study = result_json.value("study_id", std::string("study"));
    nlohmann::json meta;
    for (const auto& m : result_json["metrics"])
        if (m.value("metric", std::string()) == metric_label) meta = m;
    if (meta.is_null())
        throw std::invalid_argument("emit_plot_data: metric not present in result: " +
                                    metric_label);
    std::string body = "# study " + study + " metric " + metric_label + "\n";
    body += "# block estimates: N estimate stderr\n";
    std::string bounds_block;
    for (const auto& row : result_json["rows"]) {
        if (row.value("metric", std::string()) != metric_label) continue;
        const long n = row["N"].get<long>();
        body += std::to_string(n) + " " + detail::fmt17(row["estimate"].get<double>()) + " " +
                detail::fmt17(row["stderr"].get<double>()) + "\n";
        if (row.contains("bound") && row["bound"].is_number())
            bounds_block += std::to_string(n) + " " +
                            detail::fmt17(row["bound"].get<double>()) + "\n";
    }
    body += "\n# block bound";
    const std::string tag = meta.value("bound_tag", std::string());
    if (!tag.empty()) body += " (" + tag + ")";
    body += ": N bound\n";
    body += bounds_block;
    if (meta.contains("reference") && meta["reference"].is_number())
        body += "# reference " + detail::fmt17(meta["reference"].get<double>()) + "\n";
    if (meta.contains("reference_secondary") && meta["reference_secondary"].is_number())
        body += "# reference " + detail::fmt17(meta["reference_secondary"].get<double>()) + "\n";

    std::string dir = output_dir.value_or(std::string("."));
    if (!output_dir && result_json.contains("config"))
        dir = result_json["config"].value("output_dir", std::string("."));
    const std::filesystem::path path =
        std::filesystem::path(dir) / (study + "-" + metric_label + "-plot.txt");
    write_file_atomic(path, body);
    return path;
}

inline std::filesystem::path emit_plot_data(const StudyResult& result,
                                            const std::string& metric_label) {
    return emit_plot_data(study_result_json(result), metric_label, result.config.output_dir);
}

}  // namespace kacsphere
