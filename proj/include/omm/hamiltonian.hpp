#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omm {

struct grid_spec {
    double domain_length = 10.0;
    int n_points = 0;

    double spacing() const { return domain_length / n_points; }
    double point(int i) const { return i * spacing(); }
    // Grid index closest to x, wrapped periodically.
    int nearest_index(double x) const {
        long i = std::lround(x / spacing());
        long n = n_points;
        return static_cast<int>(((i % n) + n) % n);
    }
};

struct gaussian_potential {
    double alpha = -100.0;
    double beta = 0.1;
    std::vector<double> centers;

    // The standard well chain: centers at 0.5, 1.5, ..., count-0.5.
    static gaussian_potential well_chain(double alpha, double beta, int count = 10) {
        gaussian_potential p{alpha, beta, {}};
        p.centers.reserve(count);
        for (int j = 0; j < count; ++j) p.centers.push_back(j + 0.5);
        return p;
    }

    // Periodic images are not summed: with beta = 0.1 the nearest image is
    // suppressed by e^{-50}, far below double precision relevance.
    double operator()(double x) const {
        double v = 0.0;
        for (double r : centers) {
            double d = x - r;
            v += std::exp(-d * d / (2.0 * beta * beta));
        }
        return alpha * v;
    }
};

struct shift_policy {
    enum class kind { auto_margin, explicit_eta };
    kind mode = kind::auto_margin;
    double value = 1.0;

    static shift_policy margin(double delta = 1.0) { return {kind::auto_margin, delta}; }
    static shift_policy exact(double eta) { return {kind::explicit_eta, eta}; }
};

struct spectral_data {
    Eigen::VectorXd eigenvalues;   // ascending
    Eigen::MatrixXd eigenvectors;  // orthonormal columns, same order
};

// Shifted discretized operator: tridiagonal plus the two periodic corner
// entries, kept in banded storage. The dense view is materialized once and
// reused by the eigendecomposition; matrix application always goes through
// the banded arrays.
class hermitian_operator {
public:
    hermitian_operator() = default;
    hermitian_operator(Eigen::VectorXd diag, Eigen::VectorXd sub, double corner, double shift)
        : diag_(std::move(diag)), sub_(std::move(sub)), corner_(corner), shift_(shift) {
        if (diag_.size() < 2) throw std::invalid_argument("operator dimension must be >= 2");
        if (sub_.size() != diag_.size() - 1)
            throw std::invalid_argument("subdiagonal length must be dimension-1");
    }

    int dimension() const { return static_cast<int>(diag_.size()); }
    double shift() const { return shift_; }
    const Eigen::VectorXd& diagonal() const { return diag_; }
    const Eigen::VectorXd& subdiagonal() const { return sub_; }
    double corner() const { return corner_; }

    // Banded product H*X, one column at a time. Works for real and complex
    // iterate matrices; the operator entries themselves are real.
    template <class Derived>
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
    apply(const Eigen::MatrixBase<Derived>& x) const {
        using mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
        const int n = dimension();
        if (x.rows() != n) throw std::invalid_argument("apply: row count mismatch");
        mat y(n, x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            for (int i = 0; i < n; ++i) {
                auto acc = diag_[i] * x(i, c);
                if (i > 0) acc += sub_[i - 1] * x(i - 1, c);
                if (i < n - 1) acc += sub_[i] * x(i + 1, c);
                y(i, c) = acc;
            }
            y(0, c) += corner_ * x(n - 1, c);
            y(n - 1, c) += corner_ * x(0, c);
        }
        return y;
    }

    const Eigen::MatrixXd& dense() const {
        if (dense_.size() == 0) {
            const int n = dimension();
            dense_ = Eigen::MatrixXd::Zero(n, n);
            dense_.diagonal() = diag_;
            for (int i = 0; i + 1 < n; ++i) {
                dense_(i, i + 1) = sub_[i];
                dense_(i + 1, i) = sub_[i];
            }
            // += so that the n = 2 edge case (corner and subdiagonal share
            // an entry) stays consistent with apply()
            dense_(0, n - 1) += corner_;
            dense_(n - 1, 0) += corner_;
        }
        return dense_;
    }

private:
    Eigen::VectorXd diag_;
    Eigen::VectorXd sub_;
    double corner_ = 0.0;
    double shift_ = 0.0;
    mutable Eigen::MatrixXd dense_;
};

inline double potential_eval(const gaussian_potential& pot, double x) { return pot(x); }

inline spectral_data eigendecomposition(const hermitian_operator& h) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.dense());
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eigendecomposition did not converge");
    return {es.eigenvalues(), es.eigenvectors()};
}

// Centered-difference discretization of -1/2 d^2/dx^2 + V on the periodic
// grid, then shifted by eta so the result is negative definite. auto_margin
// picks eta = lambda_max + delta; an explicit eta is validated against
// lambda_max. The returned spectrum belongs to the shifted operator.
inline std::pair<hermitian_operator, spectral_data>
build_hamiltonian(const grid_spec& grid, const gaussian_potential& pot,
                  const shift_policy& policy = shift_policy::margin()) {
    const int n = grid.n_points;
    if (n < 3) throw std::invalid_argument("need at least 3 grid points");
    const double h = grid.spacing();
    const double inv_h2 = 1.0 / (h * h);

    Eigen::VectorXd diag(n);
    for (int i = 0; i < n; ++i) diag[i] = inv_h2 + pot(grid.point(i));
    Eigen::VectorXd sub = Eigen::VectorXd::Constant(n - 1, -0.5 * inv_h2);
    const double corner = -0.5 * inv_h2;

    hermitian_operator unshifted(diag, sub, corner, 0.0);
    spectral_data spec = eigendecomposition(unshifted);
    const double lambda_max = spec.eigenvalues[n - 1];

    double eta;
    if (policy.mode == shift_policy::kind::auto_margin) {
        if (policy.value <= 0.0) throw std::invalid_argument("shift margin must be > 0");
        eta = lambda_max + policy.value;
    } else {
        eta = policy.value;
        if (lambda_max - eta >= 0.0)
            throw std::invalid_argument("explicit shift does not make the operator negative definite");
    }

    diag.array() -= eta;
    spec.eigenvalues.array() -= eta;
    return {hermitian_operator(std::move(diag), std::move(sub), corner, eta), std::move(spec)};
}

// Plain-text triplet export: header "N m_bands", then one "row col value"
// line per stored entry (diagonal, subdiagonal, and the periodic corner;
// indices 0-based, lower triangle only). Values carry 17 significant digits
// so a round trip is exact.
inline void write_triplets(std::ostream& os, const hermitian_operator& h) {
    const int n = h.dimension();
    os << n << " 1\n";
    char buf[64];
    auto emit = [&](int r, int c, double v) {
        std::snprintf(buf, sizeof buf, "%d %d %.17g\n", r, c, v);
        os << buf;
    };
    for (int i = 0; i < n; ++i) emit(i, i, h.diagonal()[i]);
    if (n == 2) {
        // The wrap-around entry coincides with the subdiagonal slot and the
        // operator action only sees their sum, so fold them together.
        emit(1, 0, h.subdiagonal()[0] + h.corner());
        return;
    }
    for (int i = 0; i + 1 < n; ++i) emit(i + 1, i, h.subdiagonal()[i]);
    emit(n - 1, 0, h.corner());
}

inline hermitian_operator read_triplets(std::istream& is) {
    int n = 0, bands = 0;
    if (!(is >> n >> bands)) throw std::runtime_error("triplet header unreadable");
    if (n < 2) throw std::runtime_error("triplet header: dimension must be >= 2");
    if (bands != 1) throw std::runtime_error("triplet header: unsupported band count");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub = Eigen::VectorXd::Zero(n - 1);
    double corner = 0.0;
    int r, c;
    double v;
    while (is >> r >> c >> v) {
        if (r < 0 || c < 0 || r >= n || c >= n) throw std::runtime_error("triplet index out of range");
        if (r == c) diag[r] = v;
        else if (r == c + 1) sub[c] = v;
        else if (c == r + 1) sub[r] = v;
        else if ((r == n - 1 && c == 0) || (r == 0 && c == n - 1)) corner = v;
        else throw std::runtime_error("triplet entry outside the tridiagonal+corner pattern");
    }
    return hermitian_operator(std::move(diag), std::move(sub), corner, 0.0);
}

}  // namespace omm
