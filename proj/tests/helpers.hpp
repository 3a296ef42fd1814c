#pragma once

// Shared fixtures and independent oracles for the test suite. Oracles here
// deliberately recompute quantities through dense, brute-force routes so a
// library bug cannot hide behind its own arithmetic.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "omm/energy.hpp"
#include "omm/hamiltonian.hpp"

namespace test {

// Diagonal operator without potential machinery; the workhorse toy is
// diag(-1, -2).
inline omm::hermitian_operator diag_operator(const std::vector<double>& d) {
    Eigen::VectorXd diag(static_cast<Eigen::Index>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i) diag[static_cast<Eigen::Index>(i)] = d[i];
    Eigen::VectorXd sub = Eigen::VectorXd::Zero(diag.size() - 1);
    return omm::hermitian_operator(diag, sub, 0.0, 0.0);
}

// Small random negative-definite operator in the library's banded shape:
// random diagonal/subdiagonal/corner, shifted below its largest eigenvalue.
inline omm::hermitian_operator random_negdef_operator(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd diag(n), sub(n - 1);
    for (int i = 0; i < n; ++i) diag[i] = u(gen);
    for (int i = 0; i + 1 < n; ++i) sub[i] = u(gen);
    const double corner = u(gen);
    omm::hermitian_operator h0(diag, sub, corner, 0.0);
    const double lmax = omm::eigendecomposition(h0).eigenvalues.maxCoeff();
    diag.array() -= lmax + 1.0;
    return omm::hermitian_operator(diag, sub, corner, lmax + 1.0);
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, unsigned seed, double scale = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::MatrixXd x(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) x(i, j) = u(gen);
    return x;
}

// Dense-arithmetic oracle for E0 = tr[(2I - X^T X) X^T H X]; forms every
// product explicitly.
inline double dense_e0(const omm::hermitian_operator& h, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd hd = h.dense();
    const Eigen::Index m = x.cols();
    const Eigen::MatrixXd s = x.transpose() * x;
    const Eigen::MatrixXd mm = x.transpose() * (hd * x);
    return ((2.0 * Eigen::MatrixXd::Identity(m, m) - s) * mm).trace();
}

// Dense-arithmetic oracle for the gradient 4HX - 2X(X^T H X) - 2HX(X^T X).
inline Eigen::MatrixXd dense_grad(const omm::hermitian_operator& h, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd hd = h.dense();
    const Eigen::MatrixXd hx = hd * x;
    return 4.0 * hx - 2.0 * x * (x.transpose() * hx) - 2.0 * hx * (x.transpose() * x);
}

// Central finite differences of E0, entry by entry.
inline Eigen::MatrixXd fd_grad(const omm::hermitian_operator& h, Eigen::MatrixXd x, double eps) {
    Eigen::MatrixXd g(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double step = eps * (1.0 + std::abs(x(i, j)));
            const double save = x(i, j);
            x(i, j) = save + step;
            const double up = omm::e0(h, x);
            x(i, j) = save - step;
            const double dn = omm::e0(h, x);
            x(i, j) = save;
            g(i, j) = (up - dn) / (2.0 * step);
        }
    return g;
}

// Closed-form eigenvalues of the unshifted kinetic operator on the periodic
// grid: (1 - cos(2 pi k / N)) / h^2, k = 0..N-1.
inline std::vector<double> kinetic_eigenvalues(int n, double domain) {
    const double h = domain / n;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
        v[static_cast<std::size_t>(k)] = (1.0 - std::cos(2.0 * M_PI * k / n)) / (h * h);
    return v;
}

}  // namespace test
