#pragma once

// Experiment drivers behind the CLI. Each driver builds its problem from an
// experiment_config, runs the configured solvers, and writes <name>.csv plus
// <name>.meta.json (and any side outputs) into the output directory. Data
// CSVs never carry timing or host information, so a rerun with the same
// config is byte-identical; wall-clock data lives only in the meta files.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "omm/config.hpp"
#include "omm/io.hpp"

namespace omm {

// Operator, spectrum and reference eigenspace for one problem instance.
struct problem_setup {
    hermitian_operator h;
    spectral_data spectrum;
    eigenspace_reference ref;
};

inline problem_setup make_setup(const problem_config& p) {
    problem_setup s;
    auto built = build_hamiltonian(p.grid(), p.potential(), p.shift());
    s.h = std::move(built.first);
    s.spectrum = std::move(built.second);
    s.ref = make_reference(s.spectrum, p.m);
    return s;
}

// Descent check over a trace. When the penalty changes between iterations
// the previous iterate is re-priced under the new penalty (its smooth energy
// plus the new mu times its stored l1 norm), so a legitimate E_mu jump at a
// schedule boundary does not register as a violation. The slack matches the
// acceptance-test slack of the solvers themselves.
inline bool trace_monotone(const iterate_trace& trace) {
    for (std::size_t i = 1; i < trace.records.size(); ++i) {
        const trace_record& prev = trace.records[i - 1];
        const trace_record& cur = trace.records[i];
        const double prev_repriced = prev.e0 + cur.mu * prev.l1;
        if (cur.e_mu > prev_repriced + 1e-12 * (1.0 + std::abs(prev_repriced))) return false;
    }
    return true;
}

class wall_timer {
public:
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline json to_json(const mu_schedule& s) {
    json pieces = json::array();
    for (const mu_schedule::piece& p : s.pieces)
        pieces.push_back(json{{"start", p.start}, {"mu", p.mu}});
    return pieces;
}

inline json to_json(const problem_config& p) {
    json j{{"n", p.n},           {"alpha", p.alpha}, {"beta", p.beta},
           {"m", p.m},           {"domain", p.domain}, {"wells", p.wells}};
    if (p.explicit_shift)
        j["shift_eta"] = p.shift_eta;
    else
        j["shift_margin"] = p.shift_margin;
    return j;
}

inline json to_json(const solver_config& s) {
    return json{{"variant", variant_name(s.variant)},
                {"block_order", block_order_name(s.schedule)},
                {"mu", to_json(s.mu)},
                {"l0", s.l0},
                {"eta_bt", s.eta_bt},
                {"c1", s.c1},
                {"c2", s.c2},
                {"tol", s.tol},
                {"max_iters", s.max_iters},
                {"seed", s.seed},
                {"track_entries", s.track_entry_activity}};
}

inline json to_json(const experiment_config& c) {
    return json{{"problem", to_json(c.problem)},
                {"solver", to_json(c.solver)},
                {"init", json{{"l_support", c.init.l_support}, {"seed", c.init.seed}}},
                {"out", c.out_dir},
                {"threads", c.threads},
                {"alphas", c.alphas},
                {"ladder_top_exp", c.ladder_top_exp},
                {"ladder_count", c.ladder_count},
                {"trials", c.trials},
                {"mus", c.ensemble_mus},
                {"methods", c.methods},
                {"l_values", c.l_values},
                {"base_mu", c.base_mu},
                {"pulse_mu", c.pulse_mu},
                {"pulse_start", c.pulse_start},
                {"pulse_end", c.pulse_end}};
}

// Shared meta-file skeleton; drivers add their own fields on top.
inline json experiment_meta(const experiment_config& cfg, double wall_ms) {
    return json{{"config", to_json(cfg)},
                {"library_version", OMM_VERSION},
                {"wall_ms", wall_ms},
                {"written_at", timestamp_utc()}};
}

inline json spectral_meta(const problem_setup& setup) {
    return json{{"eta", setup.h.shift()},
                {"min_e0", setup.ref.min_e0},
                {"gap", setup.ref.gap},
                {"degenerate_gap", setup.ref.degenerate}};
}

namespace detail {

// Runs fn(0..count-1) on up to `threads` workers. Indices are claimed from a
// shared counter and every worker writes only to caller-owned slots, so the
// result layout does not depend on scheduling.
inline void parallel_for(long count, int threads, const std::function<void(long)>& fn) {
    const int workers = static_cast<int>(std::min<long>(std::max(threads, 1), count));
    if (workers <= 1) {
        for (long i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const long i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double scale,
                                     rng_stream& rng) {
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = scale * (2.0 * rng.next_unit() - 1.0);
    return a;
}

inline Eigen::MatrixXd random_orthogonal(Eigen::Index n, rng_stream& rng) {
    const Eigen::MatrixXd a = random_matrix(n, n, 1.0, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd fd_gradient(const hermitian_operator& h, Eigen::MatrixXd x, double eps) {
    Eigen::MatrixXd g(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double save = x(i, j);
            const double step = eps * (1.0 + std::abs(save));
            x(i, j) = save + step;
            const double up = e0(h, x);
            x(i, j) = save - step;
            const double down = e0(h, x);
            x(i, j) = save;
            g(i, j) = (up - down) / (2.0 * step);
        }
    return g;
}

// File-name fragment for a numeric parameter: '.' would fight with the
// extension, so it becomes 'p'.
inline std::string num_label(double v) {
    std::string s = fmt(v);
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

}  // namespace detail

// Warm-started penalty ladder toward mu_target: solving at mu_target/2^j for
// decreasing j, each rung starting from the previous minimizer, reaches a
// deeper E_mu value than any single cold run and serves as the reference
// minimum for trap classification.
struct refine_result {
    double emu = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
};

inline refine_result refine_min_emu(const hermitian_operator& h, const Eigen::MatrixXd& x0,
                                    double mu_target, const solver_config& base, int rungs = 6) {
    Eigen::MatrixXd x = x0;
    refine_result out;
    for (int j = rungs - 1; j >= 0; --j) {
        solver_config sc = base;
        sc.variant = solver_variant::ista_dynamic;
        sc.mu = mu_schedule::constant(mu_target * std::ldexp(1.0, -j));
        auto r = solve<double>(h, x, sc);
        x = r.x;
        if (j == 0) {
            out.emu = r.trace.records.back().e_mu;
            out.converged = r.converged;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// mu-sweep: penalty ladder per potential depth
// ---------------------------------------------------------------------------

// Per-run diagnostics that sit outside the pinned ladder-table columns.
struct sweep_diag {
    double ortho_err = 0.0;
    double err_tilde = 0.0;
    std::optional<double> err_proj;
    double l1_bound = 0.0;  // mu * ||U G*||_1, right side of the E_mu gap bound
    long iterations = 0;
    bool monotone = true;
};

struct mu_sweep_block {
    double alpha = 0.0;
    double min_e0 = 0.0;
    double gap = 0.0;
    bool degenerate = false;
    std::vector<convergence_row> rows;
    std::vector<sweep_diag> diags;
};

struct mu_sweep_result {
    std::vector<mu_sweep_block> blocks;
    std::vector<std::string> outputs;
};

// For each configured alpha: solve the mu ladder 2^top, 2^(top-1), ... from
// one shared initial iterate, fill the convergence-order columns, and export
// an orbital profile of every minimizer. All ladder rows land in one CSV;
// order columns restart at each alpha block.
inline mu_sweep_result run_mu_sweep(const experiment_config& cfg) {
    wall_timer timer;
    ensure_dir(cfg.out_dir);
    mu_sweep_result res;
    std::vector<convergence_row> all_rows;
    json alpha_meta = json::array();

    for (const double alpha : cfg.alphas) {
        problem_config p = cfg.problem;
        p.alpha = alpha;
        const problem_setup setup = make_setup(p);
        const grid_spec grid = p.grid();
        const Eigen::MatrixXd x0 = random_initial_condition(grid, p.centers(), cfg.init.l_support,
                                                            p.m, cfg.init.seed);

        mu_sweep_block blk;
        blk.alpha = alpha;
        blk.min_e0 = setup.ref.min_e0;
        blk.gap = setup.ref.gap;
        blk.degenerate = setup.ref.degenerate;
        json runs_meta = json::array();

        for (int j = 0; j < cfg.ladder_count; ++j) {
            const int expo = cfg.ladder_top_exp - j;
            const double mu = std::ldexp(1.0, expo);
            solver_config sc = cfg.solver;
            sc.mu = mu_schedule::constant(mu);
            const auto r = solve<double>(setup.h, x0, sc);
            const trace_record& last = r.trace.records.back();

            convergence_row row;
            row.mu = mu;
            row.converged = r.converged;
            row.min_gap_emu = last.e_mu - setup.ref.min_e0;
            row.e0_excess = last.e0 - setup.ref.min_e0;
            row.dist = distance_to_s0(r.x, setup.ref);
            blk.rows.push_back(row);

            sweep_diag d;
            d.ortho_err = orthogonality_error(r.x);
            const density_error_pair derr = density_errors(r.x, setup.ref);
            d.err_tilde = derr.tilde;
            d.err_proj = derr.proj;
            const Eigen::MatrixXd ug = nearest_orbit_point(r.x, setup.ref);
            d.l1_bound = mu * l1_norm(ug);
            d.iterations = r.iterations;
            d.monotone = trace_monotone(r.trace);
            blk.diags.push_back(d);

            // Localization profile of the fifth orbital, a bulk well away
            // from either edge of the chain (or the last orbital when there
            // are fewer than five).
            const Eigen::Index profile_col = std::min<Eigen::Index>(4, p.m - 1);
            std::vector<double> xs(static_cast<std::size_t>(grid.n_points));
            std::vector<double> vals(static_cast<std::size_t>(grid.n_points));
            for (int i = 0; i < grid.n_points; ++i) {
                xs[static_cast<std::size_t>(i)] = grid.point(i);
                vals[static_cast<std::size_t>(i)] = r.x(i, profile_col);
            }
            const std::string profile = cfg.out_dir + "/mu_sweep_profile_alpha" +
                                        detail::num_label(alpha) + "_exp" + std::to_string(expo) +
                                        ".csv";
            write_xy_csv(profile, "x", "value", xs, vals);
            res.outputs.push_back(profile);

            runs_meta.push_back(json{{"mu", mu},
                                     {"exp", expo},
                                     {"iterations", d.iterations},
                                     {"converged", row.converged},
                                     {"monotone", d.monotone},
                                     {"ortho_error", d.ortho_err},
                                     {"density_error", d.err_tilde},
                                     {"density_error_projected",
                                      d.err_proj ? json(*d.err_proj) : json(nullptr)},
                                     {"emu_gap", row.min_gap_emu},
                                     {"l1_bound", d.l1_bound},
                                     {"e0_excess", row.e0_excess},
                                     {"dist", row.dist}});
        }

        convergence_orders(blk.rows);
        all_rows.insert(all_rows.end(), blk.rows.begin(), blk.rows.end());

        json jb{{"alpha", alpha},
                {"eta", setup.h.shift()},
                {"min_e0", blk.min_e0},
                {"gap", blk.gap},
                {"degenerate_gap", blk.degenerate},
                {"ic_seed", cfg.init.seed},
                {"runs", runs_meta}};
        alpha_meta.push_back(jb);
        res.blocks.push_back(std::move(blk));
    }

    const std::string csv = cfg.out_dir + "/mu_sweep.csv";
    write_convergence_csv(csv, all_rows);
    res.outputs.push_back(csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta["alphas"] = alpha_meta;
    const std::string meta_path = cfg.out_dir + "/mu_sweep.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

// ---------------------------------------------------------------------------
// algorithm comparison: the four solver variants on one instance
// ---------------------------------------------------------------------------

struct comparison_run {
    std::string label;
    bool converged = false;
    long iterations = 0;  // accepted iterations (column moves for block)
    long sweeps = 0;      // sweep-equivalent count; equals iterations off-block
    bool monotone = true;
    double final_emu = 0.0;
    std::vector<long> curve_iter;   // sweep-equivalent sample positions
    std::vector<double> curve_emu;  // E_mu at those positions
};

struct comparison_result {
    std::vector<comparison_run> runs;
    double best_emu = 0.0;
    std::vector<std::string> outputs;
};

// Runs traditional backtracking, dynamic backtracking, and both block
// orderings from the same initial iterate and penalty, then tabulates
// E_mu minus the best final value per sweep-equivalent iteration. Block
// solvers are sampled at sweep boundaries so one table row always costs one
// pass over all columns, whichever variant produced it.
inline comparison_result run_algorithm_comparison(const experiment_config& cfg) {
    wall_timer timer;
    ensure_dir(cfg.out_dir);
    const problem_setup setup = make_setup(cfg.problem);
    const Eigen::MatrixXd x0 = random_initial_condition(
        cfg.problem.grid(), cfg.problem.centers(), cfg.init.l_support, cfg.problem.m,
        cfg.init.seed);
    const long m = cfg.problem.m;

    struct variant_spec {
        const char* label;
        solver_variant variant;
        block_order order;
    };
    const variant_spec specs[] = {
        {"ista_backtrack", solver_variant::ista_backtrack, block_order::sequential},
        {"ista_dynamic", solver_variant::ista_dynamic, block_order::sequential},
        {"block_sequential", solver_variant::block_dynamic, block_order::sequential},
        {"block_random", solver_variant::block_dynamic, block_order::random_permutation},
    };

    comparison_result res;
    res.best_emu = std::numeric_limits<double>::infinity();
    double best_any = std::numeric_limits<double>::infinity();

    for (const variant_spec& vs : specs) {
        solver_config sc = cfg.solver;
        sc.variant = vs.variant;
        sc.schedule = vs.order;
        const auto r = solve<double>(setup.h, x0, sc);

        comparison_run run;
        run.label = vs.label;
        run.converged = r.converged;
        run.iterations = r.iterations;
        run.monotone = trace_monotone(r.trace);
        run.final_emu = r.trace.records.back().e_mu;
        if (vs.variant == solver_variant::block_dynamic) {
            for (const trace_record& rec : r.trace.records)
                if (rec.iter % m == 0) {
                    run.curve_iter.push_back(rec.iter / m);
                    run.curve_emu.push_back(rec.e_mu);
                }
            const trace_record& last = r.trace.records.back();
            if (last.iter % m != 0) {
                run.curve_iter.push_back((last.iter + m - 1) / m);
                run.curve_emu.push_back(last.e_mu);
            }
            run.sweeps = run.curve_iter.empty() ? 0 : run.curve_iter.back();
        } else {
            for (const trace_record& rec : r.trace.records) {
                run.curve_iter.push_back(rec.iter);
                run.curve_emu.push_back(rec.e_mu);
            }
            run.sweeps = run.iterations;
        }
        best_any = std::min(best_any, run.final_emu);
        if (r.converged) res.best_emu = std::min(res.best_emu, run.final_emu);
        res.runs.push_back(std::move(run));
    }
    if (!std::isfinite(res.best_emu)) res.best_emu = best_any;

    const std::string csv = cfg.out_dir + "/algorithm_comparison.csv";
    {
        std::ofstream out = open_out(csv);
        out << "variant,iteration,emu_excess\n";
        for (const comparison_run& run : res.runs)
            for (std::size_t i = 0; i < run.curve_iter.size(); ++i)
                out << run.label << ',' << run.curve_iter[i] << ','
                    << fmt(run.curve_emu[i] - res.best_emu) << '\n';
    }
    res.outputs.push_back(csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta.update(spectral_meta(setup));
    meta["best_emu"] = res.best_emu;
    json runs_meta = json::array();
    for (const comparison_run& run : res.runs)
        runs_meta.push_back(json{{"variant", run.label},
                                 {"converged", run.converged},
                                 {"iterations", run.iterations},
                                 {"sweeps", run.sweeps},
                                 {"monotone", run.monotone},
                                 {"final_emu", run.final_emu}});
    meta["runs"] = runs_meta;
    const std::string meta_path = cfg.out_dir + "/algorithm_comparison.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

// ---------------------------------------------------------------------------
// local-minima ensemble: many random starts, trap statistics
// ---------------------------------------------------------------------------

struct ensemble_record {
    int trial = 0;
    std::string method;
    double mu = 0.0;  // zero for the fixed-support baseline
    std::uint64_t seed = 0;
    bool converged = false;
    long iterations = 0;
    double final_e0 = 0.0;
    double final_target = 0.0;  // E_mu for penalized methods, E0 for the baseline
    double excess = 0.0;        // final_target minus the estimated minimum
    bool trapped = false;
    bool monotone = true;
};

struct ensemble_reference {
    std::string method;  // "penalized" (shared across proximal variants) or "truncated_sd"
    double mu = 0.0;
    double best_observed = std::numeric_limits<double>::quiet_NaN();
    double refined = std::numeric_limits<double>::quiet_NaN();
    double est_min = std::numeric_limits<double>::quiet_NaN();
    bool refine_converged = false;
};

struct ensemble_result {
    std::vector<ensemble_record> records;
    std::vector<ensemble_reference> references;
    double min_e0 = 0.0;
    std::vector<std::string> outputs;
};

// Per-trial seeds are derived from the base seed, and every method and
// penalty sees the same trial iterate. The minimum of E_mu is not known in
// closed form, so each penalty's reference is the best converged value over
// the whole ensemble, tightened by a warm-started penalty ladder from a
// dedicated iterate; a trial counts as trapped when its final value exceeds
// that reference by more than ten times the stopping tolerance. The
// fixed-support baseline is measured against the exact eigenspace minimum.
inline ensemble_result run_local_minima_ensemble(const experiment_config& cfg) {
    wall_timer timer;
    ensure_dir(cfg.out_dir);
    const problem_setup setup = make_setup(cfg.problem);
    const grid_spec grid = cfg.problem.grid();
    const std::vector<double> centers = cfg.problem.centers();

    std::vector<std::string> penalized;
    bool with_baseline = false;
    for (const std::string& method : cfg.methods) {
        if (method == "truncated_sd") {
            with_baseline = true;
            continue;
        }
        parse_variant(method);  // rejects unknown names up front
        penalized.push_back(method);
    }

    const std::size_t per_trial =
        penalized.size() * cfg.ensemble_mus.size() + (with_baseline ? 1u : 0u);
    if (per_trial == 0) throw config_error("local-minima ensemble: no methods configured");

    ensemble_result res;
    res.min_e0 = setup.ref.min_e0;
    res.records.resize(per_trial * static_cast<std::size_t>(cfg.trials));

    detail::parallel_for(cfg.trials, cfg.threads, [&](long t) {
        const std::uint64_t trial_seed = subseed(cfg.init.seed, static_cast<std::uint64_t>(t));
        const Eigen::MatrixXd xt = random_initial_condition(grid, centers, cfg.init.l_support,
                                                            cfg.problem.m, trial_seed);
        std::size_t slot = per_trial * static_cast<std::size_t>(t);
        for (const double mu : cfg.ensemble_mus)
            for (const std::string& method : penalized) {
                solver_config sc = cfg.solver;
                sc.variant = parse_variant(method);
                sc.mu = mu_schedule::constant(mu);
                const auto r = solve<double>(setup.h, xt, sc);
                ensemble_record& rec = res.records[slot++];
                rec.trial = static_cast<int>(t);
                rec.method = method;
                rec.mu = mu;
                rec.seed = trial_seed;
                rec.converged = r.converged;
                rec.iterations = r.iterations;
                rec.final_e0 = r.trace.records.back().e0;
                rec.final_target = r.trace.records.back().e_mu;
                rec.monotone = trace_monotone(r.trace);
            }
        if (with_baseline) {
            const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask =
                xt.array() != 0.0;
            solver_config sc = cfg.solver;
            sc.mu = mu_schedule::constant(0.0);
            const auto r = solve_truncated_sd<double>(setup.h, xt, mask, sc);
            ensemble_record& rec = res.records[slot++];
            rec.trial = static_cast<int>(t);
            rec.method = "truncated_sd";
            rec.mu = 0.0;
            rec.seed = trial_seed;
            rec.converged = r.converged;
            rec.iterations = r.iterations;
            rec.final_e0 = r.trace.records.back().e0;
            rec.final_target = r.trace.records.back().e0;
            rec.monotone = trace_monotone(r.trace);
        }
    });

    // References: one per penalty (shared by the proximal variants), one for
    // the baseline.
    const Eigen::MatrixXd refine_x0 = random_initial_condition(
        grid, centers, cfg.init.l_support, cfg.problem.m,
        subseed(cfg.init.seed, std::uint64_t{1} << 20));
    for (const double mu : cfg.ensemble_mus) {
        ensemble_reference ref;
        ref.method = "penalized";
        ref.mu = mu;
        for (const ensemble_record& rec : res.records)
            if (rec.method != "truncated_sd" && rec.mu == mu && rec.converged)
                ref.best_observed = std::isnan(ref.best_observed)
                                        ? rec.final_target
                                        : std::min(ref.best_observed, rec.final_target);
        const refine_result refined = refine_min_emu(setup.h, refine_x0, mu, cfg.solver);
        ref.refined = refined.emu;
        ref.refine_converged = refined.converged;
        ref.est_min = ref.best_observed;
        if (!std::isnan(ref.refined))
            ref.est_min = std::isnan(ref.est_min) ? ref.refined : std::min(ref.est_min, ref.refined);
        res.references.push_back(ref);
    }
    if (with_baseline) {
        // Every baseline trial minimizes over a different fixed support, so
        // cross-trial bests mean nothing; the honest yardstick is the exact
        // unconstrained minimum, and the excess measures what the a-priori
        // support costs.
        ensemble_reference ref;
        ref.method = "truncated_sd";
        for (const ensemble_record& rec : res.records)
            if (rec.method == "truncated_sd" && rec.converged)
                ref.best_observed = std::isnan(ref.best_observed)
                                        ? rec.final_target
                                        : std::min(ref.best_observed, rec.final_target);
        ref.est_min = setup.ref.min_e0;
        res.references.push_back(ref);
    }

    auto reference_for = [&](const ensemble_record& rec) -> const ensemble_reference& {
        for (const ensemble_reference& ref : res.references) {
            if (rec.method == "truncated_sd" && ref.method == "truncated_sd") return ref;
            if (rec.method != "truncated_sd" && ref.method == "penalized" && ref.mu == rec.mu)
                return ref;
        }
        throw std::logic_error("local-minima ensemble: missing reference");
    };
    for (ensemble_record& rec : res.records) {
        const ensemble_reference& ref = reference_for(rec);
        rec.excess = rec.final_target - ref.est_min;
        rec.trapped = rec.excess > 10.0 * cfg.solver.tol;
    }

    const std::string csv = cfg.out_dir + "/local_minima.csv";
    {
        std::ofstream out = open_out(csv);
        out << "trial,method,mu,seed,converged,iterations,e0,excess,trapped\n";
        for (const ensemble_record& rec : res.records)
            out << rec.trial << ',' << rec.method << ',' << fmt(rec.mu) << ',' << rec.seed << ','
                << (rec.converged ? 1 : 0) << ',' << rec.iterations << ',' << fmt(rec.final_e0)
                << ',' << fmt(rec.excess) << ',' << (rec.trapped ? 1 : 0) << '\n';
    }
    res.outputs.push_back(csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta.update(spectral_meta(setup));
    json refs_meta = json::array();
    for (const ensemble_reference& ref : res.references)
        refs_meta.push_back(json{{"method", ref.method},
                                 {"mu", ref.mu},
                                 {"best_observed", ref.best_observed},
                                 {"refined", ref.refined},
                                 {"est_min", ref.est_min},
                                 {"refine_converged", ref.refine_converged}});
    meta["references"] = refs_meta;
    json groups = json::array();
    for (const ensemble_reference& ref : res.references) {
        long total = 0, trapped = 0, nonconverged = 0;
        json trapped_trials = json::array();
        for (const ensemble_record& rec : res.records) {
            const bool in_group = (ref.method == "truncated_sd")
                                      ? rec.method == "truncated_sd"
                                      : (rec.method != "truncated_sd" && rec.mu == ref.mu);
            if (!in_group) continue;
            ++total;
            if (!rec.converged) ++nonconverged;
            if (rec.trapped) {
                ++trapped;
                trapped_trials.push_back(json{{"trial", rec.trial},
                                              {"method", rec.method},
                                              {"e0", rec.final_e0},
                                              {"excess", rec.excess}});
            }
        }
        groups.push_back(json{{"method", ref.method},
                              {"mu", ref.mu},
                              {"reference", ref.method == "truncated_sd"
                                                ? "exact_min_e0"
                                                : "best_observed_plus_refinement"},
                              {"runs", total},
                              {"trapped", trapped},
                              {"nonconverged", nonconverged},
                              {"trapped_trials", trapped_trials}});
    }
    meta["groups"] = groups;
    const std::string meta_path = cfg.out_dir + "/local_minima.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

// ---------------------------------------------------------------------------
// initial-condition dependence: support radius vs descent path
// ---------------------------------------------------------------------------

struct ic_run {
    int l_support = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    long iterations = 0;
    bool monotone = true;
    double final_emu = 0.0;
    double final_e0 = 0.0;
    long final_nnz = 0;
    long peak_nnz = 0;
};

struct ic_dependence_result {
    std::vector<ic_run> runs;
    double min_e0 = 0.0;
    double est_min_emu = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> outputs;
};

// One run per support radius, each with entry-activity tracking. The energy
// curves are exported against the estimated minimum so plateaus and the
// moment a run commits to a basin are visible; the activity counters go out
// as plain matrices for heatmap rendering.
inline ic_dependence_result run_ic_dependence(const experiment_config& cfg) {
    wall_timer timer;
    ensure_dir(cfg.out_dir);
    const problem_setup setup = make_setup(cfg.problem);
    const grid_spec grid = cfg.problem.grid();
    const std::vector<double> centers = cfg.problem.centers();
    const double mu_target = cfg.solver.mu.at(0);

    ic_dependence_result res;
    res.min_e0 = setup.ref.min_e0;

    std::vector<iterate_trace> traces;
    for (const int l : cfg.l_values) {
        const std::uint64_t seed = subseed(cfg.init.seed, static_cast<std::uint64_t>(l));
        const Eigen::MatrixXd x0 =
            random_initial_condition(grid, centers, l, cfg.problem.m, seed);
        solver_config sc = cfg.solver;
        sc.track_entry_activity = true;
        const auto r = solve<double>(setup.h, x0, sc);

        ic_run run;
        run.l_support = l;
        run.seed = seed;
        run.converged = r.converged;
        run.iterations = r.iterations;
        run.monotone = trace_monotone(r.trace);
        run.final_emu = r.trace.records.back().e_mu;
        run.final_e0 = r.trace.records.back().e0;
        const sparsity_summary sparsity = sparsity_stats(r.trace);
        run.final_nnz = sparsity.final_nnz;
        run.peak_nnz = sparsity.peak_nnz;
        res.runs.push_back(run);
        traces.push_back(r.trace);

        const std::string activity =
            cfg.out_dir + "/ic_dependence_activity_L" + std::to_string(l) + ".csv";
        write_matrix_csv(activity, sparsity.activity);
        res.outputs.push_back(activity);
    }

    double best = std::numeric_limits<double>::quiet_NaN();
    for (const ic_run& run : res.runs)
        if (run.converged) best = std::isnan(best) ? run.final_emu : std::min(best, run.final_emu);
    const refine_result refined = refine_min_emu(
        setup.h,
        random_initial_condition(grid, centers, cfg.init.l_support, cfg.problem.m,
                                 subseed(cfg.init.seed, std::uint64_t{1} << 20)),
        mu_target, cfg.solver);
    res.est_min_emu = best;
    if (!std::isnan(refined.emu))
        res.est_min_emu =
            std::isnan(res.est_min_emu) ? refined.emu : std::min(res.est_min_emu, refined.emu);

    const std::string csv = cfg.out_dir + "/ic_dependence.csv";
    {
        std::ofstream out = open_out(csv);
        out << "L,iteration,emu_excess,e0_excess\n";
        for (std::size_t i = 0; i < traces.size(); ++i)
            for (const trace_record& rec : traces[i].records)
                out << res.runs[i].l_support << ',' << rec.iter << ','
                    << fmt(rec.e_mu - res.est_min_emu) << ',' << fmt(rec.e0 - res.min_e0) << '\n';
    }
    res.outputs.push_back(csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta.update(spectral_meta(setup));
    meta["est_min_emu"] = res.est_min_emu;
    meta["refined_emu"] = refined.emu;
    meta["refine_converged"] = refined.converged;
    json runs_meta = json::array();
    for (const ic_run& run : res.runs)
        runs_meta.push_back(json{{"l_support", run.l_support},
                                 {"seed", run.seed},
                                 {"converged", run.converged},
                                 {"iterations", run.iterations},
                                 {"monotone", run.monotone},
                                 {"final_emu", run.final_emu},
                                 {"final_e0", run.final_e0},
                                 {"final_nnz", run.final_nnz},
                                 {"peak_nnz", run.peak_nnz}});
    meta["runs"] = runs_meta;
    const std::string meta_path = cfg.out_dir + "/ic_dependence.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

// ---------------------------------------------------------------------------
// dynamic penalty: constant schedule vs a sparsifying pulse
// ---------------------------------------------------------------------------

struct dynamic_mu_result {
    bool constant_converged = false;
    bool variable_converged = false;
    long iterations_constant = 0;
    long iterations_variable = 0;
    long pulse_first_iter = 0;       // first 1-based iteration run at the pulse value
    double e0_before_pulse = 0.0;
    double e0_into_pulse = 0.0;      // five iterations after the raise
    long nnz_before_pulse = 0;
    long nnz_min_in_pulse = 0;
    std::vector<std::string> outputs;
};

// Same instance and start twice: once at the base penalty throughout, once
// with the penalty raised over a fixed iteration window and dropped back.
// The meta file carries the iteration counts and the energy/sparsity
// response right after the raise.
inline dynamic_mu_result run_dynamic_mu(const experiment_config& cfg) {
    wall_timer timer;
    ensure_dir(cfg.out_dir);
    if (!(cfg.pulse_start > 0 && cfg.pulse_end > cfg.pulse_start))
        throw config_error("dynamic-mu: need 0 < pulse_start < pulse_end");
    const problem_setup setup = make_setup(cfg.problem);
    const Eigen::MatrixXd x0 = random_initial_condition(
        cfg.problem.grid(), cfg.problem.centers(), cfg.init.l_support, cfg.problem.m,
        cfg.init.seed);

    solver_config constant_sc = cfg.solver;
    constant_sc.mu = mu_schedule::constant(cfg.base_mu);
    solver_config variable_sc = cfg.solver;
    variable_sc.mu =
        mu_schedule{{{0, cfg.base_mu}, {cfg.pulse_start, cfg.pulse_mu}, {cfg.pulse_end, cfg.base_mu}}};
    variable_sc.mu.validate();

    const auto constant_run = solve<double>(setup.h, x0, constant_sc);
    const auto variable_run = solve<double>(setup.h, x0, variable_sc);

    dynamic_mu_result res;
    res.constant_converged = constant_run.converged;
    res.variable_converged = variable_run.converged;
    res.iterations_constant = constant_run.iterations;
    res.iterations_variable = variable_run.iterations;

    const std::vector<trace_record>& recs = variable_run.trace.records;
    std::size_t pulse_idx = recs.size();
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (recs[i].mu == cfg.pulse_mu) {
            pulse_idx = i;
            break;
        }
    if (pulse_idx < recs.size()) {
        res.pulse_first_iter = recs[pulse_idx].iter;
        const std::size_t before = pulse_idx > 0 ? pulse_idx - 1 : 0;
        res.e0_before_pulse = recs[before].e0;
        res.nnz_before_pulse = recs[before].nnz;
        const std::size_t after = std::min(pulse_idx + 4, recs.size() - 1);
        res.e0_into_pulse = recs[after].e0;
        res.nnz_min_in_pulse = recs[pulse_idx].nnz;
        for (std::size_t i = pulse_idx; i < recs.size() && recs[i].mu == cfg.pulse_mu; ++i)
            res.nnz_min_in_pulse = std::min(res.nnz_min_in_pulse, recs[i].nnz);
    }

    const std::string constant_csv = cfg.out_dir + "/dynamic_mu_constant.csv";
    const std::string variable_csv = cfg.out_dir + "/dynamic_mu_variable.csv";
    write_trace_csv(constant_csv, constant_run.trace);
    write_trace_csv(variable_csv, variable_run.trace);
    res.outputs.push_back(constant_csv);
    res.outputs.push_back(variable_csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta.update(spectral_meta(setup));
    meta["iterations_constant"] = res.iterations_constant;
    meta["iterations_variable"] = res.iterations_variable;
    meta["constant_converged"] = res.constant_converged;
    meta["variable_converged"] = res.variable_converged;
    meta["iteration_ratio"] =
        res.iterations_variable > 0
            ? static_cast<double>(res.iterations_constant) / res.iterations_variable
            : std::numeric_limits<double>::quiet_NaN();
    meta["pulse_first_iter"] = res.pulse_first_iter;
    meta["e0_before_pulse"] = res.e0_before_pulse;
    meta["e0_into_pulse"] = res.e0_into_pulse;
    meta["nnz_before_pulse"] = res.nnz_before_pulse;
    meta["nnz_min_in_pulse"] = res.nnz_min_in_pulse;
    const std::string meta_path = cfg.out_dir + "/dynamic_mu.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

// ---------------------------------------------------------------------------
// theory suite: small-instance checks of the analytical statements
// ---------------------------------------------------------------------------

struct theory_check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct theory_result {
    std::vector<theory_check> checks;
    bool all_pass = true;
    std::vector<std::string> outputs;
};

// Instances are capped at N = 60 so every check runs against dense
// references in seconds. Probe data is drawn from streams derived from the
// configured seed, so the suite is deterministic end to end.
inline theory_result run_theory_suite(const experiment_config& cfg) {
    wall_timer timer;
    if (cfg.problem.n > 60)
        throw config_error("theory suite: n must be <= 60 (dense verification instance)");
    ensure_dir(cfg.out_dir);
    const problem_setup setup = make_setup(cfg.problem);
    const int n = cfg.problem.n;
    const int m = cfg.problem.m;
    if (2 * m > n) throw config_error("theory suite: need 2*m <= n for the saddle starts");

    theory_result res;
    auto add = [&res](std::string name, bool pass, std::string detail) {
        res.all_pass = res.all_pass && pass;
        res.checks.push_back({std::move(name), pass, std::move(detail)});
    };
    rng_stream rng(subseed(cfg.init.seed, 7));

    // Gradient against central differences.
    {
        const Eigen::MatrixXd x = detail::random_matrix(n, m, 0.2, rng);
        const Eigen::MatrixXd g = grad_e0(setup.h, x);
        const Eigen::MatrixXd g_fd = detail::fd_gradient(setup.h, x, 1e-5);
        const double rel = (g - g_fd).norm() / std::max(1.0, g.norm());
        add("gradient_fd", rel <= 1e-6, "relative error " + fmt(rel));
    }

    // Invariance of the energy and equivariance of the gradient under a
    // right unitary factor.
    {
        const Eigen::MatrixXd x = detail::random_matrix(n, m, 0.2, rng);
        const Eigen::MatrixXd q = detail::random_orthogonal(m, rng);
        const double e_base = e0(setup.h, x);
        const double e_rot = e0(setup.h, (x * q).eval());
        const double inv_err = std::abs(e_rot - e_base) / (1.0 + std::abs(e_base));
        add("unitary_invariance", inv_err <= 1e-10, "relative change " + fmt(inv_err));
        const Eigen::MatrixXd g = grad_e0(setup.h, x);
        const Eigen::MatrixXd g_rot = grad_e0(setup.h, (x * q).eval());
        const double eq_err = (g_rot - g * q).norm() / (1.0 + g.norm());
        add("gradient_equivariance", eq_err <= 1e-9, "relative deviation " + fmt(eq_err));
    }

    // Second-order expansion about the occupied eigenframe: the remainder
    // must shrink eight-fold when the perturbation halves.
    {
        perturbation_spec<double> p;
        p.occupied = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(m, true);
        p.eigenvalues = setup.spectrum.eigenvalues;
        p.eigenvectors = setup.spectrum.eigenvectors;
        const Eigen::MatrixXd c = detail::random_matrix(m, n, 0.1, rng);
        p.coeffs = Eigen::MatrixXd::Zero(m, n);
        const double e_frame = e0(setup.h, build_perturbed(p));
        auto remainder = [&](double t) {
            perturbation_spec<double> pt = p;
            pt.coeffs = t * c;
            return std::abs(e0(setup.h, build_perturbed(pt)) - e_frame - expansion_delta(pt));
        };
        const double r1 = remainder(1e-2);
        const double r2 = remainder(5e-3);
        const double ratio = r1 / r2;
        add("expansion_remainder", ratio >= 6.0 && ratio <= 10.0,
            "halving ratio " + fmt(ratio) + " (remainders " + fmt(r1) + ", " + fmt(r2) + ")");
    }

    // Unpenalized minimization reaches the sum of the lowest eigenvalues
    // from a generic start, from perturbations of the minimizer, and from
    // near-saddle frames. Exact saddles are fixed points of the iteration,
    // so the saddle starts carry a small generic offset.
    Eigen::MatrixXd x_star;
    {
        solver_config sc = cfg.solver;
        sc.mu = mu_schedule::constant(0.0);
        const Eigen::MatrixXd x0 = random_initial_condition(
            cfg.problem.grid(), cfg.problem.centers(), cfg.init.l_support, m,
            subseed(cfg.init.seed, 500));
        const auto base = solve<double>(setup.h, x0, sc);
        x_star = base.x;
        bool all_converged = base.converged;
        double worst = std::abs(base.trace.records.back().e0 - setup.ref.min_e0);
        int starts = 1;

        auto restart_from = [&](const Eigen::MatrixXd& anchor, std::uint64_t seed) {
            rng_stream prng(seed);
            Eigen::MatrixXd p = detail::random_matrix(n, m, 1.0, prng);
            p *= 0.1 / p.norm();
            const auto r = solve<double>(setup.h, (anchor + p).eval(), sc);
            all_converged = all_converged && r.converged;
            worst = std::max(worst, std::abs(r.trace.records.back().e0 - setup.ref.min_e0));
            ++starts;
        };
        for (int i = 0; i < 50; ++i) restart_from(x_star, subseed(cfg.init.seed, 1000 + i));
        const Eigen::MatrixXd saddle = setup.spectrum.eigenvectors.middleCols(m, m);
        for (int i = 0; i < 10; ++i) restart_from(saddle, subseed(cfg.init.seed, 2000 + i));

        add("global_min_mu0", all_converged && worst <= 1e-6,
            "worst |E0 - min| " + fmt(worst) + " over " + std::to_string(starts) + " starts");
    }

    // The energy restricted to a ray is an even quartic with the computed
    // coefficients, and at a minimizer the radial scale is already optimal:
    // the kernels satisfy tr M = tr[S M^T], so the optimal ray parameter
    // sqrt(tr M / tr[S M^T]) equals one.
    {
        const Eigen::MatrixXd u_raw = detail::random_matrix(n, m, 0.2, rng);
        const Eigen::MatrixXd u = u_raw / u_raw.norm();
        const auto [quartic, quadratic] = line_coefficients(setup.h, u);
        double worst = 0.0;
        for (const double t : {0.5, 1.0, 2.0}) {
            const double direct = e0(setup.h, (t * u).eval());
            const double predicted = quartic * t * t * t * t + quadratic * t * t;
            worst = std::max(worst,
                             std::abs(direct - predicted) / (1.0 + std::abs(direct)));
        }
        add("line_polynomial", worst <= 1e-10, "worst relative residual " + fmt(worst));

        const auto k = kernel_set<double>::compute(setup.h, x_star);
        double tr_m = 0.0;
        for (Eigen::Index i = 0; i < k.m.rows(); ++i) tr_m += std::real(k.m(i, i));
        const double tr_sm = std::real((k.s.array() * k.m.transpose().array()).sum());
        const double t_star = std::sqrt(tr_m / tr_sm);
        add("radial_scale", std::abs(t_star - 1.0) <= 1e-6,
            "optimal ray parameter " + fmt(t_star));
    }

    const std::string csv = cfg.out_dir + "/theory_suite.csv";
    {
        std::ofstream out = open_out(csv);
        out << "check,status,detail\n";
        for (const theory_check& c : res.checks)
            out << c.name << ',' << (c.pass ? "pass" : "fail") << ",\"" << c.detail << "\"\n";
    }
    res.outputs.push_back(csv);

    json meta = experiment_meta(cfg, timer.ms());
    meta.update(spectral_meta(setup));
    json checks_meta = json::array();
    for (const theory_check& c : res.checks)
        checks_meta.push_back(json{{"check", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    meta["checks"] = checks_meta;
    meta["all_pass"] = res.all_pass;
    const std::string meta_path = cfg.out_dir + "/theory_suite.meta.json";
    write_json(meta_path, meta);
    res.outputs.push_back(meta_path);
    return res;
}

}  // namespace omm
