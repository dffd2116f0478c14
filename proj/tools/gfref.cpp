// gfref: default Bayesian analysis of isotropic Gaussian random fields.
//
// One subcommand per analysis; every run writes CSV/JSON artifacts into
// --out and prints the primary JSON document to stdout.  Settings resolve as
// flags > --config key=value file > built-in defaults (GFREF_THREADS seeds
// the --threads default), and the resolved values are echoed into every JSON
// output.  Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gfref/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Default Bayesian analysis of isotropic Gaussian random fields"};
    app.require_subcommand(1);

    gfref::cli::RunConfig cfg;
    cfg.threads = gfref::cli::threads_from_env(1);
    std::string config_path;

    auto add_common = [&cfg, &config_path](CLI::App* sub, bool data_required, bool with_nu = true) {
        sub->add_option("--config", config_path, "key=value file with defaults for this command")
            ->check(CLI::ExistingFile);
        auto* data = sub->add_option("--data", cfg.data_path, "input CSV with columns x,y,z[,f2,...]");
        data->check(CLI::ExistingFile);
        if (data_required) data->required();
        sub->add_option("--out", cfg.out_dir, "output directory for artifacts")->capture_default_str();
        if (with_nu)
            sub->add_option("--nu", cfg.nu, "Matern smoothness")
                ->check(CLI::PositiveNumber)
                ->capture_default_str();
        return sub;
    };
    auto add_trend = [&cfg](CLI::App* sub) {
        sub->add_option("--trend", cfg.trend, "mean model: auto, data, constant, quadratic")
            ->capture_default_str();
    };
    auto add_tuning = [&cfg](CLI::App* sub) {
        sub->add_option("--m1", cfg.m1, "spectral grid rows (0 = auto-tune)")->capture_default_str();
        sub->add_option("--m2", cfg.m2, "spectral grid columns (0 = auto-tune)")->capture_default_str();
        sub->add_option("--delta", cfg.delta, "spectral grid spacing (0 = auto-tune)")
            ->capture_default_str();
        sub->add_option("--truncation", cfg.truncation, "aliased spectral density truncation")
            ->check(CLI::NonNegativeNumber)
            ->capture_default_str();
    };
    auto add_prior_kind = [&cfg](CLI::App* sub, const char* flag) {
        sub->add_option(flag, cfg.prior, "prior kind: exact, approx, inverse-gamma")
            ->capture_default_str();
        sub->add_option("--points", cfg.points, "tabulation grid size")
            ->check(CLI::Range(8, 100000))
            ->capture_default_str();
        sub->add_option("--ig-shape", cfg.ig_shape, "inverse-gamma shape")->capture_default_str();
        sub->add_option("--ig-rate", cfg.ig_rate, "inverse-gamma rate")->capture_default_str();
    };
    auto add_seed = [&cfg](CLI::App* sub) {
        sub->add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
    };
    auto add_lattice = [&cfg](CLI::App* sub) {
        sub->add_option("--grid-m1", cfg.grid_m1, "lattice rows (alternative to --data)")
            ->capture_default_str();
        sub->add_option("--grid-m2", cfg.grid_m2, "lattice columns")->capture_default_str();
        sub->add_option("--spacing", cfg.spacing, "lattice spacing")->capture_default_str();
        sub->add_option("--beta", cfg.beta, "true mean coefficients (comma list)")
            ->capture_default_str();
        sub->add_option("--sigma2", cfg.sigma2, "true variance")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_option("--theta", cfg.theta, "true range")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    };

    auto* prior = add_common(app.add_subcommand("prior", "tabulate a range prior as CSV"), true);
    add_trend(prior);
    add_tuning(prior);
    add_prior_kind(prior, "--kind");
    prior->add_flag("--normalize", cfg.normalize, "emit the quadrature-normalized density");

    auto* fit = add_common(app.add_subcommand("fit", "sample the posterior and summarize it"), true);
    add_trend(fit);
    add_tuning(fit);
    add_prior_kind(fit, "--prior");
    add_seed(fit);
    fit->add_option("--draws", cfg.draws, "posterior draws")
        ->check(CLI::Range(100, 10000000))
        ->capture_default_str();
    fit->add_option("--level", cfg.level, "interval level")->capture_default_str();
    fit->add_flag("--exact-marginal", cfg.exact_marginal,
                  "re-evaluate the marginal likelihood at every proposal");

    auto* select = add_common(
        app.add_subcommand("select-nu", "scan the integrated likelihood over the smoothness"), true,
        /*with_nu=*/false);
    add_trend(select);
    add_tuning(select);
    select->add_option("--nu-grid", cfg.nu_grid, "smoothness grid: lo:hi:count or a comma list")
        ->capture_default_str();
    select->add_option("--theta-points", cfg.theta_points, "range quadrature points per smoothness")
        ->check(CLI::Range(8, 100000))
        ->capture_default_str();

    auto* reml = add_common(app.add_subcommand("reml", "restricted maximum likelihood fit"), true);
    add_trend(reml);
    reml->add_option("--method", cfg.method, "exact or approx (spectral, constant mean, full grid)")
        ->capture_default_str();

    auto* simulate =
        add_common(app.add_subcommand("simulate", "draw one Gaussian random field realization"), false);
    add_trend(simulate);
    add_lattice(simulate);
    add_seed(simulate);

    auto* coverage = add_common(
        app.add_subcommand("coverage", "repeated-sampling interval comparison"), false);
    add_trend(coverage);
    add_tuning(coverage);
    add_lattice(coverage);
    add_seed(coverage);
    coverage->add_option("--priors", cfg.priors, "prior kinds to compare (comma list)")
        ->capture_default_str();
    coverage->add_option("--replicates", cfg.replicates, "simulated datasets")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    coverage->add_option("--draws", cfg.draws, "posterior draws per replicate")
        ->check(CLI::Range(100, 10000000))
        ->capture_default_str();
    coverage->add_option("--level", cfg.level, "interval level")->capture_default_str();
    coverage->add_option("--points", cfg.points, "prior tabulation grid size")
        ->check(CLI::Range(8, 100000))
        ->capture_default_str();
    coverage->add_option("--ig-shape", cfg.ig_shape, "inverse-gamma shape")->capture_default_str();
    coverage->add_option("--ig-rate", cfg.ig_rate, "inverse-gamma rate")->capture_default_str();
    coverage->add_flag("--mle", cfg.mle, "add profile-likelihood intervals and ML point estimates");
    coverage->add_option("--threads", cfg.threads, "worker threads (default from GFREF_THREADS)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* semivariogram = add_common(
        app.add_subcommand("semivariogram", "empirical semivariogram with a least-squares fit"), true);
    add_trend(semivariogram);
    semivariogram->add_option("--bins", cfg.bins, "distance bins")
        ->check(CLI::Range(2, 10000))
        ->capture_default_str();

    auto* bench = add_common(app.add_subcommand("bench", "time repeated prior evaluations"), false);
    bench->add_option("--n", cfg.n, "lattice sample size (perfect square)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bench->add_option("--p", cfg.p, "mean model size: 1 or 6")->capture_default_str();
    bench->add_option("--evals", cfg.evals, "prior evaluations per kind")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bench->add_option("--kinds", cfg.kinds, "which priors to time (comma list)")
        ->capture_default_str();
    bench->add_option("--truncation", cfg.truncation, "aliased spectral density truncation")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << gfref::cli::error_json("validation", e.what()).dump(2) << '\n';
        return gfref::cli::kExitValidation;
    }

    CLI::App* active = app.get_subcommands().front();

    // Settings from --config fill in only where no explicit flag was given,
    // so the precedence is flags > config file > built-in defaults.
    if (!config_path.empty()) {
        try {
            for (const auto& [key, value] : gfref::cli::parse_config_file(config_path)) {
                if (key == "config")
                    throw gfref::validation_error(config_path + ": a config file cannot set 'config'");
                CLI::Option* op = active->get_option_no_throw("--" + key);
                if (op == nullptr)
                    throw gfref::validation_error(config_path + ": unknown key '" + key +
                                                  "' for command '" + active->get_name() + "'");
                if (op->count() > 0) continue;
                op->add_result(value);
                op->run_callback();
            }
        } catch (const CLI::Error& e) {
            std::cerr << gfref::cli::error_json("validation", e.what()).dump(2) << '\n';
            return gfref::cli::kExitValidation;
        } catch (const std::exception& e) {
            std::cerr << gfref::cli::error_json("validation", e.what()).dump(2) << '\n';
            return gfref::cli::kExitValidation;
        }
    }

    return gfref::cli::run_command(active->get_name(), cfg, std::cout, std::cerr);
}
