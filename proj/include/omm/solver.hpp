#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "omm/energy.hpp"
#include "omm/hamiltonian.hpp"
#include "omm/rng.hpp"

namespace omm {

enum class solver_variant {
    ista_backtrack,  // monotone step-size ratchet: L never shrinks
    ista_dynamic,    // secant estimate of local curvature, re-tried each iteration
    block_dynamic,   // single-column proximal updates with per-block secants
};

enum class block_order {
    sequential,          // 0, 1, ..., m-1, 0, 1, ...
    random_permutation,  // fresh permutation at the start of every sweep
};

// Piecewise-constant penalty schedule. A constant schedule is one piece
// starting at iteration 0; pulses are expressed as additional pieces.
struct mu_schedule {
    struct piece {
        long start;  // first 0-based iteration at which this value applies
        double mu;
    };

    std::vector<piece> pieces;

    static mu_schedule constant(double mu) { return {{{0, mu}}}; }

    void validate() const {
        if (pieces.empty()) throw std::invalid_argument("mu_schedule: no pieces");
        if (pieces.front().start != 0)
            throw std::invalid_argument("mu_schedule: first piece must start at 0");
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            if (pieces[i].mu < 0.0)
                throw std::invalid_argument("mu_schedule: negative penalty");
            if (i > 0 && pieces[i].start <= pieces[i - 1].start)
                throw std::invalid_argument("mu_schedule: piece starts must increase");
        }
    }

    // Penalty in force at 0-based iteration k.
    double at(long k) const {
        if (k < 0) throw std::invalid_argument("mu_schedule::at: negative iteration");
        double mu = pieces.front().mu;
        for (const piece& p : pieces) {
            if (p.start <= k) mu = p.mu;
            else break;
        }
        return mu;
    }
};

struct solver_config {
    solver_variant variant = solver_variant::ista_dynamic;
    block_order schedule = block_order::sequential;
    mu_schedule mu = mu_schedule::constant(0.0);

    double l0 = 1.0;      // initial step-size parameter (inverse step length)
    double eta_bt = 2.0;  // backtracking growth factor (ista_backtrack)
    double c1 = 1.5;      // secant safety factor (dynamic variants)
    double c2 = 2.0;      // failure re-estimation factor (dynamic variants)

    double tol = 1e-6;    // stop when the iterate displacement drops below this
    long max_iters = 10000;
    std::uint64_t seed = 0;  // consumed only by random_permutation scheduling

    // When set, the solver counts for every matrix entry the number of
    // accepted iterations at which it was nonzero.
    bool track_entry_activity = false;

    void validate() const {
        mu.validate();
        if (!(l0 > 0.0)) throw std::invalid_argument("solver_config: l0 must be positive");
        if (!(eta_bt > 1.0)) throw std::invalid_argument("solver_config: eta_bt must exceed 1");
        if (!(c1 > 1.0)) throw std::invalid_argument("solver_config: c1 must exceed 1");
        if (!(c2 > 1.0)) throw std::invalid_argument("solver_config: c2 must exceed 1");
        if (!(tol > 0.0)) throw std::invalid_argument("solver_config: tol must be positive");
        if (max_iters < 1) throw std::invalid_argument("solver_config: max_iters must be at least 1");
    }
};

// One row per iteration. e_mu uses the penalty in force at that iteration,
// so records straddling a schedule boundary are directly comparable only
// through e0 and l1.
struct trace_record {
    long iter = 0;        // 1-based iteration number
    double e0 = 0.0;      // smooth energy after the update
    double e_mu = 0.0;    // penalized energy after the update
    double l_used = 0.0;  // accepted step-size parameter
    int backtracks = 0;   // failed trial steps before acceptance
    long nnz = 0;         // nonzero entries of the iterate
    double step_norm = 0.0;
    double mu = 0.0;      // penalty in force
    double l1 = 0.0;      // l1 norm of the iterate
};

struct iterate_trace {
    std::vector<trace_record> records;

    // Per-entry activity counters (rows x orbitals), present only when
    // solver_config::track_entry_activity was set.
    std::optional<Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>> entry_activity;
};

template <typename Scalar>
struct solve_result {
    matrix_t<Scalar> x;
    iterate_trace trace;
    bool converged = false;
    long iterations = 0;  // accepted iterations actually performed
};

// Entrywise soft-threshold. Complex entries shrink in modulus and keep
// their phase; entries at or below the threshold vanish exactly.
template <class Derived>
matrix_t<typename Derived::Scalar> shrink(const Eigen::MatrixBase<Derived>& x, double t) {
    using Scalar = typename Derived::Scalar;
    if (t < 0.0) throw std::invalid_argument("shrink: negative threshold");
    matrix_t<Scalar> in = x;
    matrix_t<Scalar> out(in.rows(), in.cols());
    for (Eigen::Index j = 0; j < in.cols(); ++j) {
        for (Eigen::Index i = 0; i < in.rows(); ++i) {
            const Scalar v = in(i, j);
            const double a = std::abs(v);
            out(i, j) = (a > t) ? Scalar(v * ((a - t) / a)) : Scalar(0);
        }
    }
    return out;
}

// One proximal trial step from x with gradient g, and the contract-level
// form that derives the gradient itself.
template <class DX, class DG>
matrix_t<typename DX::Scalar> prox_step(const Eigen::MatrixBase<DX>& x,
                                        const Eigen::MatrixBase<DG>& g, double l, double mu) {
    if (!(l > 0.0)) throw std::invalid_argument("prox_step: step parameter must be positive");
    return shrink(x.derived() - g.derived() / l, mu / l);
}

template <class Derived>
matrix_t<typename Derived::Scalar> prox_step(const hermitian_operator& h,
                                             const Eigen::MatrixBase<Derived>& x, double l,
                                             double mu) {
    return prox_step(x, grad_e0(h, x), l, mu);
}

// Majorization test for a trial step: the new smooth energy may not exceed
// the quadratic model at parameter l. Equality counts as success; a small
// relative slack absorbs rounding noise once both sides agree to machine
// precision (the raw comparison becomes a coin flip near convergence and
// can drive spurious backtracking storms).
inline bool sufficient_decrease(double e0_new, double e0_old, double inner_gd,
                                double step_norm_sq, double l) {
    const double rhs = e0_old + inner_gd + 0.5 * l * step_norm_sq;
    return e0_new <= rhs + 1e-12 * (1.0 + std::abs(rhs));
}

template <typename Scalar>
bool sufficient_decrease(const hermitian_operator& h, const matrix_t<Scalar>& x_old,
                         const matrix_t<Scalar>& x_new, const matrix_t<Scalar>& grad_old,
                         double l) {
    const matrix_t<Scalar> d = x_new - x_old;
    return sufficient_decrease(e0(h, x_new), e0(h, x_old), frobenius_inner(grad_old, d),
                               d.squaredNorm(), l);
}

// Secant initialization for the dynamic variants: c1 * ||dg|| / ||dx||.
// Degenerate data (zero or vanishing displacement) falls back to the most
// recently accepted value.
inline double dynamic_initial_l(double dg_norm, double dx_norm, double c1, double l_fallback) {
    if (!(dx_norm > 0.0) || !(dg_norm > 0.0)) return l_fallback;
    const double l = c1 * dg_norm / dx_norm;
    if (!std::isfinite(l) || !(l > 0.0)) return l_fallback;
    return l;
}

template <typename Scalar>
double dynamic_initial_l(const matrix_t<Scalar>& grad_k1, const matrix_t<Scalar>& grad_k2,
                         const matrix_t<Scalar>& x_k1, const matrix_t<Scalar>& x_k2, double c1,
                         double l_fallback) {
    return dynamic_initial_l((grad_k1 - grad_k2).norm(), (x_k1 - x_k2).norm(), c1, l_fallback);
}

// Re-estimate after a failed trial: the smallest parameter that would have
// satisfied the majorization test, scaled by c2. A failed test guarantees
// the result exceeds the failed value in exact arithmetic; the guard keeps
// the loop making progress if rounding ever defeats that.
inline double dynamic_backtrack_l(double e0_new, double e0_old, double inner_gd,
                                  double step_norm_sq, double l_failed, double c2,
                                  double eta_bt) {
    const double gap = e0_new - e0_old - inner_gd;
    double l = c2 * 2.0 * gap / step_norm_sq;
    if (!std::isfinite(l) || !(l > l_failed)) l = eta_bt * l_failed;
    return l;
}

// Raw curvature re-estimate (no failed-value guard): the parameter at which
// the majorization test would pass with equality, times c2.
template <typename Scalar>
double dynamic_backtrack_l(const hermitian_operator& h, const matrix_t<Scalar>& x_old,
                           const matrix_t<Scalar>& x_new, const matrix_t<Scalar>& grad_old,
                           double c2) {
    const matrix_t<Scalar> d = x_new - x_old;
    const double gap = e0(h, x_new) - e0(h, x_old) - frobenius_inner(grad_old, d);
    return c2 * 2.0 * gap / d.squaredNorm();
}

namespace detail {

template <typename Scalar>
long count_matrix_nonzeros(const matrix_t<Scalar>& x) {
    return static_cast<long>((x.array() != Scalar(0)).count());
}

template <typename Scalar>
void accumulate_activity(Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>& acc,
                         const matrix_t<Scalar>& x) {
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (x(i, j) != Scalar(0)) ++acc(i, j);
}

}  // namespace detail

// Proximal solver, full-matrix variants. Each iteration applies the
// operator once per trial step; the kernel triple (W, S, M) built for the
// decrease test is carried into the next iteration on acceptance.
template <typename Scalar>
solve_result<Scalar> solve_full(const hermitian_operator& h, const matrix_t<Scalar>& x0,
                                const solver_config& cfg) {
    using mat = matrix_t<Scalar>;
    const bool dynamic = cfg.variant == solver_variant::ista_dynamic;

    solve_result<Scalar> res;
    res.x = x0;
    mat& x = res.x;

    kernel_set<Scalar> k = kernel_set<Scalar>::compute(h, x);
    double e0_cur = k.e0();
    mat g(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.cols(); ++b) g.col(b) = k.grad_col(x, b);

    mat x_prev, g_prev;  // previous accepted iterate and its gradient
    double l_accepted = cfg.l0;

    if (cfg.track_entry_activity)
        res.trace.entry_activity.emplace(
            Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(x.rows(), x.cols()));
    res.trace.records.reserve(static_cast<std::size_t>(std::min<long>(cfg.max_iters, 1 << 20)));

    for (long iter = 1; iter <= cfg.max_iters; ++iter) {
        const double mu = cfg.mu.at(iter - 1);

        double l = l_accepted;
        if (dynamic && iter >= 2)
            l = dynamic_initial_l((g - g_prev).norm(), (x - x_prev).norm(), cfg.c1, l_accepted);

        int backtracks = 0;
        mat y, d;
        kernel_set<Scalar> k_new;
        double e0_new = e0_cur;
        double step = 0.0;

        for (;;) {
            y = prox_step(x, g, l, mu);
            d = y - x;
            step = d.norm();
            if (step == 0.0) {  // exact fixed point of the proximal map
                k_new = k;
                e0_new = e0_cur;
                break;
            }
            k_new = kernel_set<Scalar>::compute(h, y);
            e0_new = k_new.e0();
            const double inner_gd = frobenius_inner(g, d);
            if (sufficient_decrease(e0_new, e0_cur, inner_gd, step * step, l)) break;
            ++backtracks;
            l = dynamic ? dynamic_backtrack_l(e0_new, e0_cur, inner_gd, step * step, l,
                                              cfg.c2, cfg.eta_bt)
                        : cfg.eta_bt * l;
        }

        x_prev = x;
        g_prev = g;
        x = y;
        k = k_new;
        e0_cur = e0_new;
        l_accepted = l;
        for (Eigen::Index b = 0; b < x.cols(); ++b) g.col(b) = k.grad_col(x, b);

        const double l1 = l1_norm(x);
        res.trace.records.push_back({iter, e0_cur, e0_cur + mu * l1, l, backtracks,
                                     detail::count_matrix_nonzeros(x), step, mu, l1});
        if (res.trace.entry_activity) detail::accumulate_activity(*res.trace.entry_activity, x);
        res.iterations = iter;

        if (step < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

// Column scheduler for the block variant.
class block_scheduler {
public:
    block_scheduler(block_order order, int m, std::uint64_t seed)
        : order_(order), m_(m), rng_(seed) {}

    // Block index for 1-based iteration k. Sweeps are aligned so that
    // iterations 1..m form the first sweep.
    int next(long k) {
        const int pos = static_cast<int>((k - 1) % m_);
        if (order_ == block_order::sequential) return pos;
        if (pos == 0) perm_ = rng_.permutation(m_);
        return perm_[static_cast<std::size_t>(pos)];
    }

private:
    block_order order_;
    int m_;
    rng_stream rng_;
    std::vector<int> perm_;
};

// Block-coordinate proximal solver: one column per iteration, dynamic step
// sizes from per-column secants. Kernel matrices are updated in place by
// the rank-one column replacement, so a sweep costs the same operator work
// as one full iteration.
template <typename Scalar>
solve_result<Scalar> solve_block(const hermitian_operator& h, const matrix_t<Scalar>& x0,
                                 const solver_config& cfg) {
    using mat = matrix_t<Scalar>;
    using vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const int m = static_cast<int>(x0.cols());

    solve_result<Scalar> res;
    res.x = x0;
    mat& x = res.x;

    kernel_set<Scalar> k = kernel_set<Scalar>::compute(h, x);
    double e0_cur = k.e0();

    // Secant data per column: the column and its block gradient as they
    // were immediately before that column's previous update.
    struct column_cache {
        vec x_col, g_col;
        bool valid = false;
    };
    std::vector<column_cache> cache(static_cast<std::size_t>(m));

    block_scheduler sched(cfg.schedule, m, cfg.seed);
    double l_accepted = cfg.l0;

    mat sweep_anchor = x;  // iterate at the last sweep boundary

    if (cfg.track_entry_activity)
        res.trace.entry_activity.emplace(
            Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(x.rows(), x.cols()));

    for (long iter = 1; iter <= cfg.max_iters; ++iter) {
        const double mu = cfg.mu.at(iter - 1);
        const int b = sched.next(iter);
        column_cache& cb = cache[static_cast<std::size_t>(b)];

        const vec xb = x.col(b);
        const vec gb = k.grad_col(x, b);

        double l = l_accepted;
        if (cb.valid)
            l = dynamic_initial_l((gb - cb.g_col).norm(), (xb - cb.x_col).norm(), cfg.c1,
                                  l_accepted);

        int backtracks = 0;
        vec yb, wy, s_col, m_col, m_row;
        const vec wb_old = k.w.col(b);
        double e0_new = e0_cur;
        double step = 0.0;
        bool accepted_move = false;

        for (;;) {
            yb = prox_step(xb, gb, l, mu).col(0);
            const vec d = yb - xb;
            step = d.norm();
            if (step == 0.0) break;

            // Replacing column b touches one row and one column of S and M.
            // The trial column is swapped into X and W so the refreshed
            // entries come out of the same matrix-vector kernels a full
            // rebuild would use; with m = 1 the two paths are then
            // arithmetically indistinguishable.
            x.col(b) = yb;
            wy = h.apply(yb).col(0);
            k.w.col(b) = wy;
            s_col = x.adjoint() * yb;
            m_col = x.adjoint() * wy;
            m_row = (yb.adjoint() * k.w).transpose();

            kernel_set<Scalar> trial;
            trial.s = k.s;
            trial.m = k.m;
            trial.s.col(b) = s_col;
            trial.s.row(b) = s_col.adjoint();
            trial.m.row(b) = m_row.transpose();  // entry b fixed by the column below
            trial.m.col(b) = m_col;
            e0_new = trial.e0();

            const double inner_gd = frobenius_inner(gb, d);
            if (sufficient_decrease(e0_new, e0_cur, inner_gd, step * step, l)) {
                accepted_move = true;
                break;
            }
            x.col(b) = xb;  // rejected: put the previous column back
            k.w.col(b) = wb_old;
            ++backtracks;
            l = dynamic_backtrack_l(e0_new, e0_cur, inner_gd, step * step, l, cfg.c2,
                                    cfg.eta_bt);
        }

        if (accepted_move) {
            cb.x_col = xb;
            cb.g_col = gb;
            cb.valid = true;
            k.s.col(b) = s_col;
            k.s.row(b) = s_col.adjoint();
            k.m.row(b) = m_row.transpose();
            k.m.col(b) = m_col;
            e0_cur = e0_new;
        }
        l_accepted = l;

        const double l1 = l1_norm(x);
        res.trace.records.push_back({iter, e0_cur, e0_cur + mu * l1, l, backtracks,
                                     detail::count_matrix_nonzeros(x), step, mu, l1});
        if (res.trace.entry_activity) detail::accumulate_activity(*res.trace.entry_activity, x);
        res.iterations = iter;

        // Convergence is judged on whole sweeps: displacement of the full
        // iterate across the last m single-column updates.
        if (iter % m == 0) {
            const double sweep_step = (x - sweep_anchor).norm();
            if (sweep_step < cfg.tol) {
                res.converged = true;
                break;
            }
            sweep_anchor = x;
        }
    }
    return res;
}

template <typename Scalar>
solve_result<Scalar> solve(const hermitian_operator& h, const matrix_t<Scalar>& x0,
                           const solver_config& cfg) {
    cfg.validate();
    if (x0.rows() != h.dimension())
        throw std::invalid_argument("solve: iterate/operator size mismatch");
    if (x0.cols() < 1) throw std::invalid_argument("solve: iterate has no columns");
    if (cfg.variant == solver_variant::block_dynamic) return solve_block<Scalar>(h, x0, cfg);
    return solve_full<Scalar>(h, x0, cfg);
}

// Steepest descent restricted to a fixed sparsity pattern: the smooth
// gradient is masked to the pattern and no shrinkage is applied. Serves as
// the a-priori-support baseline against the proximal solvers.
template <typename Scalar>
solve_result<Scalar> solve_truncated_sd(const hermitian_operator& h, const matrix_t<Scalar>& x0,
                                        const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                                        const solver_config& cfg) {
    using mat = matrix_t<Scalar>;
    cfg.validate();
    if (mask.rows() != x0.rows() || mask.cols() != x0.cols())
        throw std::invalid_argument("solve_truncated_sd: mask/iterate shape mismatch");
    for (Eigen::Index j = 0; j < x0.cols(); ++j)
        for (Eigen::Index i = 0; i < x0.rows(); ++i)
            if (x0(i, j) != Scalar(0) && !mask(i, j))
                throw std::invalid_argument("solve_truncated_sd: initial iterate leaves the pattern");

    auto masked = [&mask](mat v) {
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                if (!mask(i, j)) v(i, j) = Scalar(0);
        return v;
    };

    solve_result<Scalar> res;
    res.x = x0;
    mat& x = res.x;

    kernel_set<Scalar> k = kernel_set<Scalar>::compute(h, x);
    double e0_cur = k.e0();
    mat g(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.cols(); ++b) g.col(b) = k.grad_col(x, b);
    g = masked(g);

    mat x_prev, g_prev;
    double l_accepted = cfg.l0;

    for (long iter = 1; iter <= cfg.max_iters; ++iter) {
        double l = l_accepted;
        if (iter >= 2)
            l = dynamic_initial_l((g - g_prev).norm(), (x - x_prev).norm(), cfg.c1, l_accepted);

        int backtracks = 0;
        mat y, d;
        kernel_set<Scalar> k_new;
        double e0_new = e0_cur;
        double step = 0.0;

        for (;;) {
            y = x - g / l;  // gradient already vanishes off the pattern
            d = y - x;
            step = d.norm();
            if (step == 0.0) {
                k_new = k;
                e0_new = e0_cur;
                break;
            }
            k_new = kernel_set<Scalar>::compute(h, y);
            e0_new = k_new.e0();
            const double inner_gd = frobenius_inner(g, d);
            if (sufficient_decrease(e0_new, e0_cur, inner_gd, step * step, l)) break;
            ++backtracks;
            l = dynamic_backtrack_l(e0_new, e0_cur, inner_gd, step * step, l, cfg.c2, cfg.eta_bt);
        }

        x_prev = x;
        g_prev = g;
        x = y;
        k = k_new;
        e0_cur = e0_new;
        l_accepted = l;
        for (Eigen::Index b = 0; b < x.cols(); ++b) g.col(b) = k.grad_col(x, b);
        g = masked(g);

        const double l1 = l1_norm(x);
        res.trace.records.push_back({iter, e0_cur, e0_cur, l, backtracks,
                                     detail::count_matrix_nonzeros(x), step, 0.0, l1});
        res.iterations = iter;

        if (step < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

// Random initial iterate: column i is supported on 2*l_support + 1 grid
// points centered (periodically) at the grid index nearest centers[i], with
// entries uniform in [0, 2/(2*l_support + 1)]. Column sums are then O(1),
// matching the scale of a normalized localized orbital.
inline Eigen::MatrixXd random_initial_condition(const grid_spec& grid,
                                                const std::vector<double>& centers,
                                                int l_support, int m, std::uint64_t seed) {
    const int n = grid.n_points;
    if (m < 1) throw std::invalid_argument("random_initial_condition: m must be positive");
    if (static_cast<std::size_t>(m) > centers.size())
        throw std::invalid_argument("random_initial_condition: fewer centers than orbitals");
    if (l_support < 0 || 2 * l_support + 1 > n)
        throw std::invalid_argument("random_initial_condition: support exceeds the grid");

    const double hi = 2.0 / (2.0 * l_support + 1.0);
    rng_stream rng(seed);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, m);
    for (int i = 0; i < m; ++i) {
        const int c = grid.nearest_index(centers[static_cast<std::size_t>(i)]);
        for (int o = -l_support; o <= l_support; ++o) {
            const int row = ((c + o) % n + n) % n;
            x(row, i) = rng.next_unit() * hi;
        }
    }
    return x;
}

}  // namespace omm
