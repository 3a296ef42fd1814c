#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <stdexcept>
#include <type_traits>

#include "omm/hamiltonian.hpp"

namespace omm {

template <class Sc>
using matrix_t = Eigen::Matrix<Sc, Eigen::Dynamic, Eigen::Dynamic>;

template <class Derived>
long count_nonzeros(const Eigen::MatrixBase<Derived>& x) {
    using Sc = typename Derived::Scalar;
    return (x.derived().array() != Sc(0)).count();
}

// Iterate matrix with its nonzero count kept alongside, plus the fixed
// support pattern used by the truncated steepest-descent baseline.
struct orbital_matrix {
    Eigen::MatrixXd entries;
    long nnz = 0;
    std::optional<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> support_mask;

    orbital_matrix() = default;
    explicit orbital_matrix(Eigen::MatrixXd m)
        : entries(std::move(m)), nnz(count_nonzeros(entries)) {}
};

template <class Derived>
double l1_norm(const Eigen::MatrixBase<Derived>& x) {
    return x.derived().cwiseAbs().sum();
}

template <class Derived>
long l0_count(const Eigen::MatrixBase<Derived>& x) {
    return count_nonzeros(x);
}

// Plain entrywise product sum for real arguments; for complex arguments the
// real part of the conjugated inner product, which is the pairing that makes
// the backtracking majorization valid.
template <class DA, class DB>
double frobenius_inner(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("frobenius_inner: shape mismatch");
    return std::real(a.derived().cwiseProduct(b.derived().conjugate()).sum());
}

// The m x m products every energy/gradient evaluation is built from:
// W = HX, S = X*X, M = X*W. Columns are filled one at a time so that the
// full-matrix path and the single-column block path perform identical
// arithmetic (the block solver relies on this).
template <class Sc>
struct kernel_set {
    matrix_t<Sc> w;  // H X
    matrix_t<Sc> s;  // X* X
    matrix_t<Sc> m;  // X* H X

    static kernel_set compute(const hermitian_operator& h, const matrix_t<Sc>& x) {
        kernel_set k;
        k.w = h.apply(x);
        const Eigen::Index mm = x.cols();
        k.s.resize(mm, mm);
        k.m.resize(mm, mm);
        for (Eigen::Index b = 0; b < mm; ++b) {
            k.s.col(b) = x.adjoint() * x.col(b);
            k.m.col(b) = x.adjoint() * k.w.col(b);
        }
        return k;
    }

    // tr[(2I - S) M], real by Hermitian symmetry of S and M.
    double e0() const {
        std::complex<double> tr_m = 0.0, tr_sm = 0.0;
        for (Eigen::Index i = 0; i < m.rows(); ++i) tr_m += std::complex<double>(m(i, i));
        tr_sm = (s.array() * m.transpose().array()).sum();
        return std::real(2.0 * tr_m - tr_sm);
    }

    // Column b of 4W - 2XM - 2WS (the last term uses (HX)S = H(XS)).
    Eigen::Matrix<Sc, Eigen::Dynamic, 1>
    grad_col(const matrix_t<Sc>& x, Eigen::Index b) const {
        return 4.0 * w.col(b) - 2.0 * (x * m.col(b)) - 2.0 * (w * s.col(b));
    }
};

template <class Derived>
double e0(const hermitian_operator& h, const Eigen::MatrixBase<Derived>& x) {
    using Sc = typename Derived::Scalar;
    matrix_t<Sc> xm = x;
    return kernel_set<Sc>::compute(h, xm).e0();
}

inline double e0(const hermitian_operator& h, const orbital_matrix& x) {
    return e0(h, x.entries);
}

template <class X>
double e_mu(const hermitian_operator& h, const X& x, double mu) {
    if (mu < 0.0) throw std::invalid_argument("e_mu: mu must be >= 0");
    if constexpr (std::is_same_v<X, orbital_matrix>)
        return e0(h, x.entries) + mu * l1_norm(x.entries);
    else
        return e0(h, x) + mu * l1_norm(x);
}

template <class Derived>
matrix_t<typename Derived::Scalar>
grad_e0(const hermitian_operator& h, const Eigen::MatrixBase<Derived>& x) {
    using Sc = typename Derived::Scalar;
    matrix_t<Sc> xm = x;
    auto k = kernel_set<Sc>::compute(h, xm);
    matrix_t<Sc> g(xm.rows(), xm.cols());
    for (Eigen::Index b = 0; b < xm.cols(); ++b) g.col(b) = k.grad_col(xm, b);
    return g;
}

template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
block_grad_e0(const hermitian_operator& h, const Eigen::MatrixBase<Derived>& x, Eigen::Index b) {
    using Sc = typename Derived::Scalar;
    if (b < 0 || b >= x.cols()) throw std::out_of_range("block_grad_e0: column index");
    matrix_t<Sc> xm = x;
    auto k = kernel_set<Sc>::compute(h, xm);
    return k.grad_col(xm, b);
}

// E0 restricted to the line t -> tU for unit-Frobenius U is the even quartic
// c1 t^4 + c2 t^2 with c1 = -tr[U*U U*HU] and c2 = 2 tr[U*HU].
template <class Derived>
std::pair<double, double>
line_coefficients(const hermitian_operator& h, const Eigen::MatrixBase<Derived>& u) {
    const double nf = u.derived().norm();
    if (nf == 0.0) throw std::invalid_argument("line_coefficients: zero direction");
    if (std::abs(nf - 1.0) > 1e-8)
        throw std::invalid_argument("line_coefficients: direction must have unit Frobenius norm");
    using Sc = typename Derived::Scalar;
    matrix_t<Sc> um = u;
    auto k = kernel_set<Sc>::compute(h, um);
    const double tr_m = [&] {
        std::complex<double> t = 0.0;
        for (Eigen::Index i = 0; i < k.m.rows(); ++i) t += std::complex<double>(k.m(i, i));
        return std::real(t);
    }();
    const double tr_sm = std::real((k.s.array() * k.m.transpose().array()).sum());
    return {-tr_sm, 2.0 * tr_m};
}

// Perturbation about an eigenvector frame: column i of X is
// z_i + sum_j c[i][j] y_j, with z_i = y_i when occupied[i] and 0 otherwise.
// Eigenvalues may arrive in any order; coefficients are indexed against that
// same order.
template <class Sc>
struct perturbation_spec {
    Eigen::Array<bool, Eigen::Dynamic, 1> occupied;  // chi_i, size m
    matrix_t<Sc> coeffs;                             // m rows, N cols: c_j^{(i)} = coeffs(i, j)
    Eigen::VectorXd eigenvalues;                     // size N, order matching coeffs columns
    Eigen::MatrixXd eigenvectors;                    // N x N, same order
};

template <class Sc>
matrix_t<Sc> build_perturbed(const perturbation_spec<Sc>& p) {
    const Eigen::Index m = p.occupied.size();
    const Eigen::Index n = p.eigenvalues.size();
    matrix_t<Sc> x = matrix_t<Sc>::Zero(n, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (p.occupied[i]) x.col(i) = p.eigenvectors.col(i).template cast<Sc>();
        for (Eigen::Index j = 0; j < n; ++j)
            x.col(i) += p.coeffs(i, j) * p.eigenvectors.col(j).template cast<Sc>();
    }
    return x;
}

// Second-order energy change predicted by the quadratic expansion about Z.
// This is a verification oracle, so it follows the three displayed sums
// literally instead of vectorizing them.
template <class Sc>
double expansion_delta(const perturbation_spec<Sc>& p) {
    const Eigen::Index m = p.occupied.size();
    const Eigen::Index n = p.eigenvalues.size();
    auto lam = [&](Eigen::Index i) { return p.eigenvalues[i]; };
    auto chi = [&](Eigen::Index i) { return p.occupied[i] ? 1.0 : 0.0; };
    auto c = [&](Eigen::Index j, Eigen::Index i) { return std::complex<double>(p.coeffs(i, j)); };

    std::complex<double> total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index k = m; k < n; ++k)
            total += std::norm(c(k, i)) * (2.0 * lam(k) - (lam(k) + lam(i)) * chi(i));

    for (Eigen::Index i = 0; i < m; ++i) {
        const double re = std::real(c(i, i));
        total += 2.0 * ((1.0 - chi(i)) * std::norm(c(i, i)) - 2.0 * re * re * chi(i)) * lam(i);
    }

    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            std::complex<double> term =
                c(i, j) * c(j, i) * lam(i) * chi(i) * chi(j) +
                std::conj(c(i, j)) * std::conj(c(j, i)) * lam(j) * chi(i) * chi(j) +
                std::norm(c(i, j)) * lam(i) * chi(i) +
                std::norm(c(j, i)) * lam(j) * chi(j) -
                std::norm(c(j, i)) * (2.0 * lam(j) - (lam(j) + lam(i)) * chi(i));
            total -= term;
        }
    return std::real(total);
}

}  // namespace omm
