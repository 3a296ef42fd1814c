#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "omm/energy.hpp"
#include "omm/hamiltonian.hpp"
#include "omm/solver.hpp"

namespace omm {

// Orthonormal basis of the lowest-m eigenspace together with the quantities
// every error metric is measured against.
struct eigenspace_reference {
    Eigen::MatrixXd basis;  // N x m, columns are the m lowest eigenvectors
    double min_e0 = 0.0;    // sum of the m lowest eigenvalues
    double gap = 0.0;       // separation to the (m+1)-th eigenvalue
    bool degenerate = false;
};

inline eigenspace_reference make_reference(const spectral_data& sd, int m) {
    const Eigen::Index n = sd.eigenvalues.size();
    if (m < 1 || m >= n)
        throw std::invalid_argument("make_reference: need 1 <= m < N");
    eigenspace_reference ref;
    ref.basis = sd.eigenvectors.leftCols(m);
    ref.min_e0 = sd.eigenvalues.head(m).sum();
    ref.gap = sd.eigenvalues(m) - sd.eigenvalues(m - 1);
    const double scale = std::max(1.0, std::abs(sd.eigenvalues(m - 1)));
    ref.degenerate = !(ref.gap > 1e-12 * scale);
    return ref;
}

// Distance from X to the unitary orbit of the reference basis,
// min over unitary G of ||X - U G||_F. The optimal G is the polar factor of
// U^H X; with a full SVD the zero-singular-value directions are completed
// by whatever orthonormal vectors the factorization carries, any of which
// attains the same distance.
template <typename Scalar>
double distance_to_s0(const matrix_t<Scalar>& x, const eigenspace_reference& ref) {
    const matrix_t<Scalar> u = ref.basis.template cast<Scalar>();
    if (x.rows() != u.rows() || x.cols() != u.cols())
        throw std::invalid_argument("distance_to_s0: shape mismatch with reference");
    const matrix_t<Scalar> a = u.adjoint() * x;
    Eigen::JacobiSVD<matrix_t<Scalar>> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const matrix_t<Scalar> g = svd.matrixU() * svd.matrixV().adjoint();
    return (x - u * g).norm();
}

// The Procrustes-optimal point of the orbit itself (used by the feasibility
// bound: its l1 norm multiplies mu).
template <typename Scalar>
matrix_t<Scalar> nearest_orbit_point(const matrix_t<Scalar>& x, const eigenspace_reference& ref) {
    const matrix_t<Scalar> u = ref.basis.template cast<Scalar>();
    const matrix_t<Scalar> a = u.adjoint() * x;
    Eigen::JacobiSVD<matrix_t<Scalar>> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return u * (svd.matrixU() * svd.matrixV().adjoint());
}

template <typename Scalar>
double orthogonality_error(const matrix_t<Scalar>& x) {
    matrix_t<Scalar> s = x.adjoint() * x;
    s.diagonal().array() -= Scalar(1);
    return s.norm();
}

struct density_error_pair {
    double tilde = 0.0;                // ||X X^H - P0||_F
    std::optional<double> proj;        // ||X (X^H X)^{-1} X^H - P0||_F, absent if rank-deficient
};

// Both density errors reduce to traces of m x m blocks:
//   ||XX* - UU*||_F^2      = tr[S^2] - 2 ||A||_F^2 + m
//   ||X S^{-1} X* - UU*||_F^2 = 2m - 2 tr[S^{-1} A^H A]
// with S = X^H X and A = U^H X, so nothing N x N is ever formed.
template <typename Scalar>
density_error_pair density_errors(const matrix_t<Scalar>& x, const eigenspace_reference& ref) {
    const Eigen::Index m = x.cols();
    const matrix_t<Scalar> u = ref.basis.template cast<Scalar>();
    if (x.rows() != u.rows() || m != u.cols())
        throw std::invalid_argument("density_errors: shape mismatch with reference");

    const matrix_t<Scalar> s = x.adjoint() * x;
    const matrix_t<Scalar> a = u.adjoint() * x;

    density_error_pair out;
    const double tilde_sq = s.squaredNorm() - 2.0 * a.squaredNorm() + static_cast<double>(m);
    out.tilde = std::sqrt(std::max(0.0, tilde_sq));

    Eigen::SelfAdjointEigenSolver<matrix_t<Scalar>> es(s);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("density_errors: eigensolver failed on the overlap matrix");
    const double smax = es.eigenvalues().maxCoeff();
    if (!(es.eigenvalues().minCoeff() > 1e-13 * std::max(1.0, smax))) return out;  // proj undefined

    const matrix_t<Scalar> b = a.adjoint() * a;
    const double tr_sinv_b = std::real(Eigen::LDLT<matrix_t<Scalar>>(s).solve(b).trace());
    const double proj_sq = 2.0 * static_cast<double>(m) - 2.0 * tr_sinv_b;
    out.proj = std::sqrt(std::max(0.0, proj_sq));
    return out;
}

// Orthonormality-corrected energy tr[(X^H X)^{-1} X^H H X]; scale invariant
// and equal to e0 on orthonormal iterates.
template <typename Scalar>
double rayleigh_energy(const hermitian_operator& h, const matrix_t<Scalar>& x) {
    const matrix_t<Scalar> s = x.adjoint() * x;
    Eigen::SelfAdjointEigenSolver<matrix_t<Scalar>> es(s);
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() >
                                         1e-13 * std::max(1.0, es.eigenvalues().maxCoeff())))
        throw std::invalid_argument("rayleigh_energy: rank-deficient iterate");
    const matrix_t<Scalar> t = x.adjoint() * h.apply(x);
    return std::real(Eigen::LDLT<matrix_t<Scalar>>(s).solve(t).trace());
}

// One row of a penalty-ladder table. Gap quantities are measured against
// min_e0 of the reference; dist against its unitary orbit.
struct convergence_row {
    double mu = 0.0;
    double min_gap_emu = 0.0;  // E_mu at the computed minimizer - min E0
    double e0_excess = 0.0;    // E0 at the computed minimizer - min E0
    double dist = 0.0;
    bool converged = true;
    std::optional<double> order_gap, order_e0, order_dist;
};

// Fill the order columns of a mu-halving ladder: each row after the first
// receives log2(previous value / own value) per column. Rows flagged as
// non-converged contribute no orders.
inline void convergence_orders(std::vector<convergence_row>& rows) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double ratio = rows[i - 1].mu / rows[i].mu;
        if (!(std::abs(ratio - 2.0) <= 1e-9))
            throw std::invalid_argument("convergence_orders: ladder must halve mu");
        if (!rows[i - 1].converged || !rows[i].converged) continue;
        auto order = [](double prev, double cur) -> std::optional<double> {
            if (!(prev > 0.0) || !(cur > 0.0)) return std::nullopt;
            return std::log2(prev / cur);
        };
        rows[i].order_gap = order(rows[i - 1].min_gap_emu, rows[i].min_gap_emu);
        rows[i].order_e0 = order(rows[i - 1].e0_excess, rows[i].e0_excess);
        rows[i].order_dist = order(rows[i - 1].dist, rows[i].dist);
    }
}

struct sparsity_summary {
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> activity;  // per-entry nonzero iterations
    long final_nnz = 0;
    long peak_nnz = 0;
};

inline sparsity_summary sparsity_stats(const iterate_trace& trace) {
    if (!trace.entry_activity)
        throw std::invalid_argument("sparsity_stats: trace carries no entry counters");
    sparsity_summary s;
    s.activity = *trace.entry_activity;
    for (const trace_record& r : trace.records) s.peak_nnz = std::max(s.peak_nnz, r.nnz);
    if (!trace.records.empty()) s.final_nnz = trace.records.back().nnz;
    return s;
}

// First-order optimality of the penalized functional at X: at a stationary
// point the smooth gradient must sit inside mu times the l1 subdifferential,
// i.e. |g_ij| <= mu where x_ij = 0 and g_ij = -mu * sign(x_ij) elsewhere.
// The report carries the worst violations so callers choose the tolerance.
struct stationarity_report {
    double max_zero_excess = 0.0;       // max over zero entries of |g_ij| - mu
    double max_support_deviation = 0.0; // max over nonzeros of |g_ij + mu*sign(x_ij)|
    double grad_fro = 0.0;              // ||grad E0||_F, bounded by mu*sqrt(N*m)
    long zero_entries = 0;
    long support_entries = 0;
};

template <typename Scalar>
stationarity_report stationarity_certificate(const hermitian_operator& h,
                                             const matrix_t<Scalar>& x, double mu) {
    const matrix_t<Scalar> g = grad_e0(h, x);
    stationarity_report rep;
    rep.grad_fro = g.norm();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mag = std::abs(x(i, j));
            if (mag == 0.0) {
                ++rep.zero_entries;
                rep.max_zero_excess = std::max(rep.max_zero_excess, std::abs(g(i, j)) - mu);
            } else {
                ++rep.support_entries;
                const Scalar sign = x(i, j) / Scalar(mag);
                rep.max_support_deviation =
                    std::max(rep.max_support_deviation, std::abs(g(i, j) + mu * sign));
            }
        }
    return rep;
}

}  // namespace omm
