/*
 * kaclab — command-line front end for the convergence laboratory.
 *
 *   kaclab run <config.json>       execute a study, write CSV + JSON
 *   kaclab rates --k --delta --r --p   closed-form rate calculators
 *   kaclab list-densities          the base-density catalog and its functionals
 *   kaclab plot <result.json> --metric <m>   two-block plot data for a metric
 *
 * Exit codes: 0 clean, 1 when a study reports a bound violation or an
 * estimator error, 2 for configuration errors (bad JSON, unknown keys,
 * violated preconditions).  Worker count comes from KACLAB_WORKERS; results
 * are independent of it by construction.
 */

#include <clocale>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "kacsphere/harness.hpp"
#include "kacsphere/parallel.hpp"

namespace {

int cmd_run(const std::string& config_path) {
    kacsphere::StudyConfig config = kacsphere::load_study_config(config_path);
    std::printf("study %s: density %s, %zu metric(s), seed %llu, workers %d\n",
                config.study_id.c_str(), config.density_name.c_str(), config.metrics.size(),
                static_cast<unsigned long long>(config.seed), kacsphere::worker_count());
    const auto result = kacsphere::run_study(config);
    const auto [csv_path, json_path] = kacsphere::write_study_outputs(result);

    std::printf("density audit: tail order %g, EX2 %.6g", result.density_tail_order,
                result.ex2_ref);
    if (result.ex4_ref) std::printf(", EX4 %.6g", *result.ex4_ref);
    if (result.rel_entropy_ref) std::printf(", H %.6g", *result.rel_entropy_ref);
    if (result.rel_fisher_ref) std::printf(", I %.6g", *result.rel_fisher_ref);
    std::printf("\n");

    for (const auto& mo : result.metrics) {
        int violations = 0;
        for (bool v : mo.report.violations) violations += v ? 1 : 0;
        std::printf("  %-16s %zu cell(s), bound %s, %d violation(s)\n", mo.label.c_str(),
                    mo.report.grid.size(),
                    mo.report.bound_tag.empty() ? "-" : mo.report.bound_tag.c_str(), violations);
    }
    try {
        const auto slopes = kacsphere::fit_slopes(result);
        std::printf("%s", kacsphere::render_slope_table(slopes).c_str());
    } catch (const std::invalid_argument& ex) {
        std::printf("slopes: %s\n", ex.what());
    }
    for (const auto& err : result.cell_errors) std::fprintf(stderr, "cell error: %s\n", err.c_str());
    std::printf("wrote %s\nwrote %s\n", csv_path.string().c_str(), json_path.string().c_str());
    if (result.any_error() || result.any_violation()) {
        std::fprintf(stderr, "study %s: %s\n", config.study_id.c_str(),
                     result.any_error() ? "estimator error(s) recorded"
                                        : "bound violation(s) recorded");
        return 1;
    }
    return 0;
}

int cmd_rates(double k, double delta, double r, std::optional<double> p) {
    auto guarded = [](const char* label, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& ex) {
            std::printf("%-34s n/a (%s)\n", label, ex.what());
        }
    };
    guarded("l1 marginal exponent eta", [&] {
        const double eta = kacsphere::l1_eta(k, delta, r);
        const double qs = kacsphere::l1_qstar(k, delta, r);
        const auto num = kacsphere::l1_eta_numeric(k, delta, r);
        std::printf("%-34s %.12g  (q* = %.12g)\n", "l1 marginal exponent eta", eta, qs);
        std::printf("%-34s %.12g  (q* = %.12g)\n", "  numeric maximization check", num.eta,
                    num.qstar);
        std::printf("%-34s %.12g\n", "  N threshold n_min",
                    kacsphere::n_min(k, std::min(2.0, delta), qs, 1.0));
        std::printf("%-34s %.12g\n", "  psi distortion constant C(k,q*)",
                    kacsphere::psi_distortion_constant(k, qs));
    });
    if (p) {
        guarded("w2 exponent", [&] {
            const auto w2 = kacsphere::w2_rate(*p);
            std::printf("%-34s %.12g%s\n", "w2 exponent", w2.exponent,
                        w2.log_factor ? "  (times log N)" : "");
        });
        if (r >= 2.0)
            guarded("wr exponent", [&] {
                const auto wr = kacsphere::wr_rate(*p, r);
                std::printf("%-34s %.12g  (interpolation b = %.12g)\n", "wr exponent",
                            wr.shape.exponent, wr.b);
            });
    }
    guarded("entropic exponent", [&] {
        const auto ent = kacsphere::entropic_rate(k);
        std::printf("%-34s %.12g  (strict)\n", "entropic exponent", ent.primary.exponent);
        std::printf("%-34s %.12g\n", "  secondary exponent", ent.secondary.exponent);
    });
    guarded("conditioned extra exponent", [&] {
        std::printf("%-34s %.12g\n", "conditioned extra exponent",
                    kacsphere::conditioned_rate(r).exponent);
    });
    return 0;
}

int cmd_list_densities() {
    std::printf("%-14s %6s %6s %8s %12s %12s %10s %10s\n", "name", "tail", "diff", "bounded",
                "H(f|gamma)", "I(f|gamma)", "EX2", "EX4");
    for (const auto& name : kacsphere::catalog_names()) {
        const auto m = kacsphere::catalog_lookup(name);
        char tail[16];
        if (std::isfinite(m.tail_order))
            std::snprintf(tail, sizeof tail, "%g", m.tail_order);
        else
            std::snprintf(tail, sizeof tail, "inf");
        char fisher[24];
        if (m.differentiable && m.score)
            std::snprintf(fisher, sizeof fisher, "%.6g",
                          kacsphere::rel_fisher_gaussian(m).value);
        else
            std::snprintf(fisher, sizeof fisher, "n/a");
        const auto m4 = kacsphere::moment(m, 4.0);
        char ex4[24];
        if (m4.diverged)
            std::snprintf(ex4, sizeof ex4, "diverges");
        else
            std::snprintf(ex4, sizeof ex4, "%.6g", m4.value);
        std::printf("%-14s %6s %6s %8s %12.6g %12s %10.6g %10s\n", name.c_str(), tail,
                    m.differentiable ? "yes" : "no", m.bounded_pdf ? "yes" : "no",
                    kacsphere::rel_entropy_gaussian(m).value, fisher,
                    kacsphere::moment(m, 2.0).value, ex4);
    }
    return 0;
}

int cmd_plot(const std::string& result_path, const std::string& metric,
             std::optional<std::string> output_dir) {
    std::ifstream in(result_path);
    if (!in) throw std::invalid_argument("cannot open result file: " + result_path);
    nlohmann::json rj;
    in >> rj;
    const auto path = kacsphere::emit_plot_data(rj, metric, output_dir);
    std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::setlocale(LC_ALL, "C");
    CLI::App app{"numerical laboratory for densities rescaled to the constant-energy sphere"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "execute a study from a JSON config");
    run->add_option("config", config_path, "study configuration file")->required();

    double k = 1.0, delta = 2.0, r = 0.0;
    std::optional<double> p;
    auto* rates = app.add_subcommand("rates", "closed-form rate calculators");
    rates->add_option("--k", k, "number of coordinates followed (k >= 1)");
    rates->add_option("--delta", delta, "moment slack delta in (0, 2]");
    rates->add_option("--r", r, "approximation cost exponent (or transport order)");
    rates->add_option("--p", p, "finite moment order of the base density");

    auto* list = app.add_subcommand("list-densities", "catalog and reference functionals");

    std::string result_path, metric;
    std::optional<std::string> plot_dir;
    auto* plot = app.add_subcommand("plot", "emit two-block plot data for one metric");
    plot->add_option("result", result_path, "study result JSON")->required();
    plot->add_option("--metric", metric, "metric label to plot")->required();
    plot->add_option("--output-dir", plot_dir, "directory for the plot file");

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed()) return cmd_run(config_path);
        if (rates->parsed()) return cmd_rates(k, delta, r, p);
        if (list->parsed()) return cmd_list_densities();
        if (plot->parsed()) return cmd_plot(result_path, metric, plot_dir);
    } catch (const std::invalid_argument& ex) {
        std::fprintf(stderr, "configuration error: %s\n", ex.what());
        return 2;
    } catch (const nlohmann::json::exception& ex) {
        std::fprintf(stderr, "configuration error: %s\n", ex.what());
        return 2;
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
