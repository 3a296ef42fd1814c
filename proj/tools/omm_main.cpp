// Command-line front end: operator spectra, single solver runs, the
// experiment drivers, and SVG rendering of their CSV outputs.
//
// Exit codes: 0 on success (a solver that stops at max_iters still exits 0
// and flags converged:false in its metrics), 1 on usage or config errors,
// 2 when the theory suite reports a failed check.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "omm/experiments.hpp"
#include "omm/svg.hpp"

namespace {

struct cli_options {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<double> mu;
};

// Config plus the raw INI (the solve command looks for sections the typed
// config does not model, like an explicit operator file).
struct loaded_config {
    omm::experiment_config cfg;
    omm::ini_file raw;
};

loaded_config load_config(const cli_options& opt) {
    loaded_config lc;
    lc.raw = omm::ini_file::load(opt.config_path);
    lc.cfg = omm::experiment_config::from_ini(lc.raw);
    if (!opt.out_dir.empty()) lc.cfg.out_dir = opt.out_dir;
    if (opt.seed) {
        lc.cfg.init.seed = *opt.seed;
        lc.cfg.solver.seed = *opt.seed;
    }
    if (opt.threads) lc.cfg.threads = *opt.threads;
    if (opt.mu) lc.cfg.solver.mu = omm::mu_schedule::constant(*opt.mu);
    return lc;
}

omm::run_manifest start_manifest(const std::string& command, const cli_options& opt,
                                 const omm::experiment_config& cfg) {
    omm::run_manifest man;
    man.command = command;
    man.config_path = opt.config_path;
    man.resolved = omm::to_json(cfg);
    man.seeds = {cfg.init.seed, cfg.solver.seed};
    man.started_at = omm::timestamp_utc();
    return man;
}

int cmd_spectrum(const cli_options& opt) {
    loaded_config lc = load_config(opt);
    omm::run_manifest man = start_manifest("spectrum", opt, lc.cfg);
    man.seeds.clear();  // nothing random in an eigendecomposition

    const omm::problem_setup setup = omm::make_setup(lc.cfg.problem);
    omm::ensure_dir(lc.cfg.out_dir);

    const std::string csv = lc.cfg.out_dir + "/spectrum.csv";
    {
        std::ofstream out = omm::open_out(csv);
        out << "index,eigenvalue,shifted_eigenvalue\n";
        const Eigen::VectorXd& ev = setup.spectrum.eigenvalues;
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            out << i << ',' << omm::fmt(ev[i] + setup.h.shift()) << ',' << omm::fmt(ev[i])
                << '\n';
    }

    const int m = lc.cfg.problem.m;
    const omm::json meta{{"n", lc.cfg.problem.n},
                         {"m", m},
                         {"eta", setup.h.shift()},
                         {"gap", setup.ref.gap},
                         {"degenerate_gap", setup.ref.degenerate},
                         {"min_e0", setup.ref.min_e0},
                         {"lambda_m", setup.spectrum.eigenvalues[m - 1]},
                         {"lambda_m_plus_1", setup.spectrum.eigenvalues[m]},
                         {"library_version", OMM_VERSION}};
    const std::string meta_path = lc.cfg.out_dir + "/spectrum.meta.json";
    omm::write_json(meta_path, meta);

    man.outputs = {csv, meta_path};
    man.finished_at = omm::timestamp_utc();
    man.write(lc.cfg.out_dir + "/spectrum.manifest.json");
    return 0;
}

int cmd_solve(const cli_options& opt) {
    loaded_config lc = load_config(opt);
    omm::run_manifest man = start_manifest("solve", opt, lc.cfg);
    const int m = lc.cfg.problem.m;

    omm::hermitian_operator op;
    omm::spectral_data spectrum;
    Eigen::MatrixXd x0;
    if (lc.raw.has("operator", "file")) {
        const std::string path = lc.raw.get("operator", "file", "");
        std::ifstream in(path);
        if (!in) throw omm::config_error("operator.file: cannot open " + path);
        op = omm::read_triplets(in);
        spectrum = omm::eigendecomposition(op);
        if (spectrum.eigenvalues.maxCoeff() >= 0.0)
            throw omm::config_error("operator.file: the solvers require a negative-definite "
                                    "operator (largest eigenvalue is " +
                                    omm::fmt(spectrum.eigenvalues.maxCoeff()) + ")");
        if (m >= op.dimension())
            throw omm::config_error("problem.m must be smaller than the operator dimension");
        // No grid to localize against, so the start is dense with entries on
        // the same O(1/n) scale the supported recipe uses.
        omm::rng_stream rng(lc.cfg.init.seed);
        const int n = op.dimension();
        x0.resize(n, m);
        const double hi = 2.0 / n;
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < n; ++i) x0(i, j) = rng.next_unit() * hi;
    } else {
        omm::problem_setup setup = omm::make_setup(lc.cfg.problem);
        op = std::move(setup.h);
        spectrum = std::move(setup.spectrum);
        x0 = omm::random_initial_condition(lc.cfg.problem.grid(), lc.cfg.problem.centers(),
                                           lc.cfg.init.l_support, m, lc.cfg.init.seed);
    }
    const omm::eigenspace_reference ref = omm::make_reference(spectrum, m);

    const auto r = omm::solve<double>(op, x0, lc.cfg.solver);
    const omm::trace_record& last = r.trace.records.back();

    omm::ensure_dir(lc.cfg.out_dir);
    const std::string trace_csv = lc.cfg.out_dir + "/solve_trace.csv";
    omm::write_trace_csv(trace_csv, r.trace);
    const std::string x_path = lc.cfg.out_dir + "/solve_x.triplets";
    omm::write_matrix_triplets(x_path, r.x);

    const omm::density_error_pair derr = omm::density_errors(r.x, ref);
    const omm::stationarity_report cert = omm::stationarity_certificate(op, r.x, last.mu);
    const omm::json metrics{
        {"stationarity",
         omm::json{{"max_zero_excess", cert.max_zero_excess},
                   {"max_support_deviation", cert.max_support_deviation},
                   {"grad_fro", cert.grad_fro},
                   {"grad_fro_bound", last.mu * std::sqrt(static_cast<double>(r.x.size()))}}},
        {"converged", r.converged},
        {"iterations", r.iterations},
        {"e0", last.e0},
        {"e_mu", last.e_mu},
        {"mu_final", last.mu},
        {"e0_excess", last.e0 - ref.min_e0},
        {"emu_minus_min_e0", last.e_mu - ref.min_e0},
        {"dist", omm::distance_to_s0(r.x, ref)},
        {"orthogonality_error", omm::orthogonality_error(r.x)},
        {"density_error", derr.tilde},
        {"density_error_projected", derr.proj ? omm::json(*derr.proj) : omm::json(nullptr)},
        {"nnz", last.nnz},
        {"l1", last.l1},
        {"min_e0", ref.min_e0},
        {"gap", ref.gap},
        {"degenerate_gap", ref.degenerate},
        {"eta", op.shift()},
        {"library_version", OMM_VERSION}};
    const std::string metrics_path = lc.cfg.out_dir + "/solve_metrics.json";
    omm::write_json(metrics_path, metrics);

    man.outputs = {trace_csv, x_path, metrics_path};
    man.finished_at = omm::timestamp_utc();
    man.write(lc.cfg.out_dir + "/solve.manifest.json");
    return 0;
}

int cmd_experiment(const std::string& name, const cli_options& opt) {
    loaded_config lc = load_config(opt);
    omm::run_manifest man = start_manifest("experiment " + name, opt, lc.cfg);

    std::vector<std::string> outputs;
    int exit_code = 0;
    if (name == "mu-sweep") {
        outputs = omm::run_mu_sweep(lc.cfg).outputs;
    } else if (name == "compare") {
        outputs = omm::run_algorithm_comparison(lc.cfg).outputs;
    } else if (name == "local-minima") {
        outputs = omm::run_local_minima_ensemble(lc.cfg).outputs;
    } else if (name == "ic-dependence") {
        outputs = omm::run_ic_dependence(lc.cfg).outputs;
    } else if (name == "dynamic-mu") {
        outputs = omm::run_dynamic_mu(lc.cfg).outputs;
    } else if (name == "theory") {
        const omm::theory_result r = omm::run_theory_suite(lc.cfg);
        outputs = r.outputs;
        if (!r.all_pass) {
            std::cerr << "theory suite failures:\n";
            for (const omm::theory_check& c : r.checks)
                if (!c.pass) std::cerr << "  " << c.name << ": " << c.detail << '\n';
            exit_code = 2;
        }
    } else {
        throw omm::config_error(
            "unknown experiment '" + name +
            "' (expected mu-sweep|compare|local-minima|ic-dependence|dynamic-mu|theory)");
    }

    std::string label = name;
    for (char& c : label)
        if (c == '-') c = '_';
    man.outputs = outputs;
    man.finished_at = omm::timestamp_utc();
    man.write(lc.cfg.out_dir + "/" + label + ".manifest.json");
    return exit_code;
}

// Column lookup that throws the plot command's schema error.
std::size_t need_column(const omm::csv_table& t, const std::string& name,
                        const std::string& kind) {
    const auto col = t.column(name);
    if (!col)
        throw std::runtime_error("plot " + kind + ": input lacks required column '" + name + "'");
    return *col;
}

int cmd_plot(const std::string& input, const std::string& kind, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const std::string stem = fs::path(input).stem().string();
    std::string dir = out_dir.empty() ? fs::path(input).parent_path().string() : out_dir;
    if (dir.empty()) dir = ".";
    const std::string svg = dir + "/" + stem + ".svg";

    if (kind == "trace") {
        const omm::csv_table t = omm::read_csv(input);
        const std::vector<std::string> expected{"iter",       "E0",  "Emu",       "L",
                                                "backtracks", "nnz", "step_norm", "mu"};
        if (t.header != expected)
            throw std::runtime_error("plot trace: input is not a solver trace CSV");
        if (t.rows.empty()) throw std::runtime_error("plot trace: trace is empty");
        double emu_min = std::numeric_limits<double>::infinity();
        for (const auto& row : t.rows) emu_min = std::min(emu_min, row[2]);
        omm::plot_series excess{"Emu - best", {}, {}};
        omm::plot_series step{"step_norm", {}, {}};
        for (const auto& row : t.rows) {
            excess.x.push_back(row[0]);
            excess.y.push_back(row[2] - emu_min);
            step.x.push_back(row[0]);
            step.y.push_back(row[6]);
        }
        omm::plot_options o;
        o.title = stem;
        o.xlabel = "iteration";
        o.ylabel = "value (log scale)";
        o.logy = true;
        omm::write_line_plot(svg, {excess, step}, o);
    } else if (kind == "error") {
        const omm::csv_table t = omm::read_csv(input);
        const std::size_t xcol = need_column(t, "iteration", "error");
        const std::size_t ycol = need_column(t, "emu_excess", "error");
        // Group curves by the label column when one is present.
        std::optional<std::size_t> group;
        if (auto c = t.column("variant"))
            group = *c;
        else if (auto c2 = t.column("L"))
            group = *c2;
        std::vector<omm::plot_series> series;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const std::string label = group ? t.raw[i][*group] : stem;
            auto it = std::find_if(series.begin(), series.end(),
                                   [&](const omm::plot_series& s) { return s.label == label; });
            if (it == series.end()) {
                series.push_back({label, {}, {}});
                it = series.end() - 1;
            }
            it->x.push_back(t.rows[i][xcol]);
            it->y.push_back(t.rows[i][ycol]);
        }
        if (series.empty()) throw std::runtime_error("plot error: no rows");
        omm::plot_options o;
        o.title = stem;
        o.xlabel = "iteration";
        o.ylabel = "E_mu excess (log scale)";
        o.logy = true;
        omm::write_line_plot(svg, series, o);
    } else if (kind == "heatmap") {
        const omm::csv_table t = omm::read_csv(input, /*has_header=*/false);
        if (t.rows.empty()) throw std::runtime_error("plot heatmap: empty input");
        const std::size_t cols = t.rows.front().size();
        Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts(
            static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            if (t.rows[i].size() != cols)
                throw std::runtime_error("plot heatmap: ragged rows in input");
            for (std::size_t j = 0; j < cols; ++j) {
                const double v = t.rows[i][j];
                if (!std::isfinite(v))
                    throw std::runtime_error("plot heatmap: non-numeric cell");
                counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    static_cast<long>(v);
            }
        }
        // Activity matrices arrive as grid-rows x orbitals; orbitals read
        // better as heatmap rows.
        omm::write_heatmap(svg, counts.transpose(), stem);
    } else if (kind == "scatter") {
        const omm::csv_table t = omm::read_csv(input);
        const std::size_t xcol = need_column(t, "trial", "scatter");
        const std::size_t ycol = need_column(t, "excess", "scatter");
        const std::size_t mcol = need_column(t, "method", "scatter");
        const std::size_t mucol = need_column(t, "mu", "scatter");
        std::vector<omm::plot_series> series;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const std::string label = t.raw[i][mcol] + " mu=" + t.raw[i][mucol];
            auto it = std::find_if(series.begin(), series.end(),
                                   [&](const omm::plot_series& s) { return s.label == label; });
            if (it == series.end()) {
                series.push_back({label, {}, {}});
                it = series.end() - 1;
            }
            it->x.push_back(t.rows[i][xcol]);
            it->y.push_back(t.rows[i][ycol]);
        }
        if (series.empty()) throw std::runtime_error("plot scatter: no rows");
        omm::plot_options o;
        o.title = stem;
        o.xlabel = "trial";
        o.ylabel = "excess above estimated minimum (log scale)";
        o.logy = true;
        omm::write_scatter(svg, series, o);
    } else {
        throw std::runtime_error("unknown plot kind '" + kind +
                                 "' (expected trace|error|heatmap|scatter)");
    }
    std::cout << svg << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse representations of low-lying eigenspaces via l1-penalized "
                 "orbital minimization"};
    app.require_subcommand(1);

    cli_options opt;
    std::string experiment_name, plot_input, plot_kind;

    const auto add_common = [&opt](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "INI config file")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", opt.out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", opt.seed, "base RNG seed (overrides config)");
        cmd->add_option("--threads", opt.threads, "ensemble worker threads (overrides config)");
        cmd->add_option("--mu", opt.mu, "constant penalty weight (overrides config)");
    };

    CLI::App* spectrum =
        app.add_subcommand("spectrum", "eigendecomposition of the configured operator");
    add_common(spectrum);
    CLI::App* solve = app.add_subcommand("solve", "one solver run from a config");
    add_common(solve);
    CLI::App* experiment = app.add_subcommand("experiment", "run a named experiment driver");
    experiment
        ->add_option("name", experiment_name,
                     "mu-sweep|compare|local-minima|ic-dependence|dynamic-mu|theory")
        ->required();
    add_common(experiment);
    CLI::App* plot = app.add_subcommand("plot", "render an output CSV as a standalone SVG");
    plot->add_option("input", plot_input, "CSV produced by solve or an experiment")
        ->required()
        ->check(CLI::ExistingFile);
    plot->add_option("--kind", plot_kind, "trace|error|heatmap|scatter")->required();
    plot->add_option("--out", opt.out_dir, "output directory (default: next to the input)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (spectrum->parsed()) return cmd_spectrum(opt);
        if (solve->parsed()) return cmd_solve(opt);
        if (experiment->parsed()) return cmd_experiment(experiment_name, opt);
        if (plot->parsed()) return cmd_plot(plot_input, plot_kind, opt.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
