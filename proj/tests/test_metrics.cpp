#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "omm/metrics.hpp"

using namespace omm;

namespace {

Eigen::MatrixXd random_orthogonal(int n, unsigned seed) {
    const Eigen::MatrixXd a = test::random_matrix(n, n, seed);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    // Fix the sign convention so Q is a deterministic function of A.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < n; ++i)
        if (r(i, i) < 0) q.col(i) = -q.col(i);
    return q;
}

// Closed-form 2x2 Procrustes distance: minimizing over rotations and
// reflections separately reduces each branch to the amplitude of a single
// sinusoid in the rotation angle.
double procrustes_2x2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& u) {
    const Eigen::MatrixXd a = u.transpose() * x;
    const double rot = std::hypot(a(0, 0) + a(1, 1), a(1, 0) - a(0, 1));
    const double refl = std::hypot(a(0, 0) - a(1, 1), a(0, 1) + a(1, 0));
    const double d_sq = x.squaredNorm() + 2.0 - 2.0 * std::max(rot, refl);
    return std::sqrt(std::max(0.0, d_sq));
}

// Independent distance identity: min over orthogonal G of ||X - U G||^2
// equals ||X||^2 + m - 2 * sum of singular values of U^T X. The singular
// values come from an eigensolve of A^T A rather than an SVD.
double sigma_sum_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& u) {
    const Eigen::MatrixXd a = u.transpose() * x;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        sum += std::sqrt(std::max(0.0, es.eigenvalues()[i]));
    const double d_sq = x.squaredNorm() + static_cast<double>(a.cols()) - 2.0 * sum;
    return std::sqrt(std::max(0.0, d_sq));
}

eigenspace_reference basis_only(Eigen::MatrixXd u) {
    eigenspace_reference ref;
    ref.basis = std::move(u);
    return ref;
}

}  // namespace

TEST_CASE("eigenspace reference extraction", "[metrics]") {
    const hermitian_operator h = test::diag_operator({-3.0, -1.0, 2.0});
    const spectral_data sd = eigendecomposition(h);

    SECTION("lowest block, energy, and gap") {
        const eigenspace_reference r2 = make_reference(sd, 2);
        CHECK_THAT(r2.min_e0, Catch::Matchers::WithinAbs(-4.0, 1e-12));
        CHECK_THAT(r2.gap, Catch::Matchers::WithinAbs(3.0, 1e-12));
        CHECK_FALSE(r2.degenerate);
        CHECK(r2.basis.rows() == 3);
        CHECK(r2.basis.cols() == 2);
        // Columns span the two lowest coordinate directions.
        CHECK_THAT(std::abs(r2.basis.col(0)(0)), Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK_THAT(std::abs(r2.basis.col(1)(1)), Catch::Matchers::WithinAbs(1.0, 1e-12));

        const eigenspace_reference r1 = make_reference(sd, 1);
        CHECK_THAT(r1.min_e0, Catch::Matchers::WithinAbs(-3.0, 1e-12));
        CHECK_THAT(r1.gap, Catch::Matchers::WithinAbs(2.0, 1e-12));
    }

    SECTION("orbital count must be interior") {
        CHECK_THROWS_AS(make_reference(sd, 0), std::invalid_argument);
        CHECK_THROWS_AS(make_reference(sd, 3), std::invalid_argument);
    }

    SECTION("a free-particle doublet is flagged degenerate") {
        // The periodic kinetic operator pairs +k and -k momenta, so
        // the second and third eigenvalues coincide exactly.
        const grid_spec grid{10.0, 4};
        const auto built = build_hamiltonian(grid, gaussian_potential{0.0, 0.1, {}},
                                             shift_policy::margin(1.0));
        CHECK(make_reference(built.second, 2).degenerate);
        CHECK_FALSE(make_reference(built.second, 1).degenerate);
        CHECK_FALSE(make_reference(built.second, 3).degenerate);
    }
}

TEST_CASE("distance to the reference orbit", "[metrics]") {
    SECTION("one orbital: distance to the closer of the two signs") {
        Eigen::MatrixXd u(3, 1);
        u << 1.0, 0.0, 0.0;
        const eigenspace_reference ref = basis_only(u);

        Eigen::MatrixXd x(3, 1);
        x << 0.5, 0.0, 0.0;
        CHECK_THAT(distance_to_s0<double>(x, ref), Catch::Matchers::WithinAbs(0.5, 1e-13));

        x << -1.0, 0.0, 0.0;  // the sign flip is inside the orbit
        CHECK_THAT(distance_to_s0<double>(x, ref), Catch::Matchers::WithinAbs(0.0, 1e-13));

        x << 0.0, 1.0, 0.0;  // orthogonal to the whole orbit
        CHECK_THAT(distance_to_s0<double>(x, ref),
                   Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-13));

        // Generic vectors against the two-sign minimum.
        for (unsigned seed : {1u, 2u, 3u}) {
            const Eigen::MatrixXd y = test::random_matrix(3, 1, seed, 1.5);
            const double expected = std::min((y - u).norm(), (y + u).norm());
            CHECK_THAT(distance_to_s0<double>(y, ref),
                       Catch::Matchers::WithinAbs(expected, 1e-12));
        }
    }

    SECTION("two orbitals against the closed-form Procrustes minimum") {
        const Eigen::MatrixXd u = random_orthogonal(5, 11).leftCols(2);
        const eigenspace_reference ref = basis_only(u);
        for (unsigned seed : {4u, 5u, 6u, 7u}) {
            const Eigen::MatrixXd x = test::random_matrix(5, 2, seed, 0.8);
            CHECK_THAT(distance_to_s0<double>(x, ref),
                       Catch::Matchers::WithinAbs(procrustes_2x2(x, u), 1e-11));
        }
    }

    SECTION("three orbitals against the singular-value identity") {
        const Eigen::MatrixXd u = random_orthogonal(7, 23).leftCols(3);
        const eigenspace_reference ref = basis_only(u);
        for (unsigned seed : {8u, 9u, 10u}) {
            const Eigen::MatrixXd x = test::random_matrix(7, 3, seed, 0.9);
            CHECK_THAT(distance_to_s0<double>(x, ref),
                       Catch::Matchers::WithinAbs(sigma_sum_distance(x, u), 1e-10));
        }
    }

    SECTION("orbit points have distance zero and the orbit is a symmetry") {
        const Eigen::MatrixXd u = random_orthogonal(6, 31).leftCols(3);
        const eigenspace_reference ref = basis_only(u);
        const Eigen::MatrixXd q = random_orthogonal(3, 5);

        CHECK_THAT(distance_to_s0<double>(Eigen::MatrixXd(u * q), ref),
                   Catch::Matchers::WithinAbs(0.0, 1e-12));

        const Eigen::MatrixXd x = test::random_matrix(6, 3, 12, 0.7);
        CHECK_THAT(distance_to_s0<double>(Eigen::MatrixXd(x * q), ref),
                   Catch::Matchers::WithinAbs(distance_to_s0<double>(x, ref), 1e-11));

        // Any particular orbit point is an upper bound for the minimum,
        // and the reported nearest point attains the reported distance.
        const double d = distance_to_s0<double>(x, ref);
        for (unsigned seed : {13u, 14u, 15u}) {
            const Eigen::MatrixXd g = random_orthogonal(3, seed);
            CHECK(d <= (x - u * g).norm() + 1e-12);
        }
        const Eigen::MatrixXd nearest = nearest_orbit_point<double>(x, ref);
        CHECK_THAT((x - nearest).norm(), Catch::Matchers::WithinAbs(d, 1e-12));
        CHECK_THAT(orthogonality_error<double>(nearest), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }

    SECTION("shape mismatch is rejected") {
        const eigenspace_reference ref = basis_only(Eigen::MatrixXd::Identity(4, 2));
        CHECK_THROWS_AS(distance_to_s0<double>(Eigen::MatrixXd::Zero(4, 3), ref),
                        std::invalid_argument);
        CHECK_THROWS_AS(distance_to_s0<double>(Eigen::MatrixXd::Zero(5, 2), ref),
                        std::invalid_argument);
    }
}

TEST_CASE("orthogonality error", "[metrics]") {
    CHECK_THAT(orthogonality_error<double>(Eigen::MatrixXd::Identity(5, 3)),
               Catch::Matchers::WithinAbs(0.0, 1e-15));

    Eigen::MatrixXd x(2, 1);
    x << 2.0, 0.0;  // overlap 4, error |4 - 1| = 3
    CHECK_THAT(orthogonality_error<double>(x), Catch::Matchers::WithinAbs(3.0, 1e-15));

    CHECK_THAT(orthogonality_error<double>(Eigen::MatrixXd::Zero(4, 3)),
               Catch::Matchers::WithinAbs(std::sqrt(3.0), 1e-15));

    Eigen::MatrixXd two(2, 2);
    two << 1.0, 1.0, 0.0, 0.0;  // S - I has the two unit off-diagonals
    CHECK_THAT(orthogonality_error<double>(two), Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-15));

    const Eigen::MatrixXd q = random_orthogonal(6, 3).leftCols(4);
    CHECK(orthogonality_error<double>(q) <= 1e-13);
}

TEST_CASE("density errors", "[metrics]") {
    SECTION("scaled projector hand values") {
        Eigen::MatrixXd u(3, 1);
        u << 0.0, 1.0, 0.0;
        const eigenspace_reference ref = basis_only(u);
        const density_error_pair d = density_errors<double>(Eigen::MatrixXd(2.0 * u), ref);
        // X X^T = 4 P0, so the raw error is 3 ||P0|| = 3 while the
        // normalized projector matches exactly.
        CHECK_THAT(d.tilde, Catch::Matchers::WithinAbs(3.0, 1e-12));
        REQUIRE(d.proj.has_value());
        CHECK_THAT(*d.proj, Catch::Matchers::WithinAbs(0.0, 1e-7));
    }

    SECTION("agreement with dense density matrices") {
        const int n = 20, m = 3;
        const Eigen::MatrixXd u = random_orthogonal(n, 17).leftCols(m);
        const eigenspace_reference ref = basis_only(u);
        const Eigen::MatrixXd p0 = u * u.transpose();

        for (unsigned seed : {21u, 22u, 23u}) {
            const Eigen::MatrixXd x = test::random_matrix(n, m, seed, 0.6);
            const density_error_pair d = density_errors<double>(x, ref);

            const Eigen::MatrixXd tilde_dense = x * x.transpose() - p0;
            CHECK_THAT(d.tilde, Catch::Matchers::WithinAbs(tilde_dense.norm(), 1e-10));

            const Eigen::MatrixXd s = x.transpose() * x;
            const Eigen::MatrixXd proj_dense = x * s.inverse() * x.transpose() - p0;
            REQUIRE(d.proj.has_value());
            CHECK_THAT(*d.proj, Catch::Matchers::WithinAbs(proj_dense.norm(), 1e-8));
        }
    }

    SECTION("rank deficiency suppresses the normalized error") {
        const Eigen::MatrixXd u = random_orthogonal(4, 2).leftCols(2);
        const eigenspace_reference ref = basis_only(u);

        Eigen::MatrixXd x = test::random_matrix(4, 2, 3, 0.5);
        x.col(1).setZero();
        CHECK_FALSE(density_errors<double>(x, ref).proj.has_value());

        x.col(1) = x.col(0);  // duplicated column, exactly singular overlap
        CHECK_FALSE(density_errors<double>(x, ref).proj.has_value());

        CHECK_THROWS_AS(density_errors<double>(Eigen::MatrixXd::Zero(4, 3), ref),
                        std::invalid_argument);
    }
}

TEST_CASE("orthonormality-corrected energy", "[metrics]") {
    const hermitian_operator h = test::diag_operator({-3.0, -1.0, 2.0});
    const spectral_data sd = eigendecomposition(h);

    SECTION("equals the eigenvalue sum on the exact basis") {
        const eigenspace_reference ref = make_reference(sd, 2);
        CHECK_THAT(rayleigh_energy<double>(h, Eigen::MatrixXd(ref.basis)),
                   Catch::Matchers::WithinAbs(-4.0, 1e-12));
    }

    SECTION("scale invariance and agreement with e0 on orthonormal frames") {
        const Eigen::MatrixXd q = random_orthogonal(3, 9).leftCols(2);
        CHECK_THAT(rayleigh_energy<double>(h, q),
                   Catch::Matchers::WithinAbs(e0(h, q), 1e-10));
        const Eigen::MatrixXd x = test::random_matrix(3, 2, 6, 0.8);
        CHECK_THAT(rayleigh_energy<double>(h, Eigen::MatrixXd(3.0 * x)),
                   Catch::Matchers::WithinAbs(rayleigh_energy<double>(h, x), 1e-9));
    }

    SECTION("dense oracle on generic iterates") {
        const hermitian_operator hr = test::random_negdef_operator(8, 41);
        const Eigen::MatrixXd x = test::random_matrix(8, 2, 19, 0.7);
        const Eigen::MatrixXd s = x.transpose() * x;
        const Eigen::MatrixXd t = x.transpose() * hr.dense() * x;
        CHECK_THAT(rayleigh_energy<double>(hr, x),
                   Catch::Matchers::WithinAbs((s.inverse() * t).trace(), 1e-8));
    }

    SECTION("rank-deficient iterates are rejected") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
        x(0, 0) = 1.0;
        CHECK_THROWS_AS(rayleigh_energy<double>(h, x), std::invalid_argument);
    }
}

TEST_CASE("convergence order extraction", "[metrics]") {
    auto row = [](double mu, double gap, double e0x, double dist, bool conv) {
        convergence_row r;
        r.mu = mu;
        r.min_gap_emu = gap;
        r.e0_excess = e0x;
        r.dist = dist;
        r.converged = conv;
        return r;
    };

    SECTION("clean first and second order signals") {
        // gap ~ mu, excess ~ mu^2, dist ~ mu.
        std::vector<convergence_row> rows{row(0.4, 0.8, 0.16, 0.4, true),
                                          row(0.2, 0.4, 0.04, 0.2, true),
                                          row(0.1, 0.2, 0.01, 0.1, true)};
        convergence_orders(rows);
        CHECK_FALSE(rows[0].order_gap.has_value());
        for (std::size_t i : {std::size_t{1}, std::size_t{2}}) {
            REQUIRE(rows[i].order_gap.has_value());
            REQUIRE(rows[i].order_e0.has_value());
            REQUIRE(rows[i].order_dist.has_value());
            CHECK_THAT(*rows[i].order_gap, Catch::Matchers::WithinAbs(1.0, 1e-12));
            CHECK_THAT(*rows[i].order_e0, Catch::Matchers::WithinAbs(2.0, 1e-12));
            CHECK_THAT(*rows[i].order_dist, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }

    SECTION("non-halving ladders are rejected") {
        std::vector<convergence_row> rows{row(0.4, 1, 1, 1, true), row(0.3, 1, 1, 1, true)};
        CHECK_THROWS_AS(convergence_orders(rows), std::invalid_argument);
    }

    SECTION("non-converged rows contribute no orders") {
        std::vector<convergence_row> rows{row(0.4, 0.8, 0.16, 0.4, true),
                                          row(0.2, 0.4, 0.04, 0.2, false),
                                          row(0.1, 0.2, 0.01, 0.1, true)};
        convergence_orders(rows);
        CHECK_FALSE(rows[1].order_gap.has_value());
        CHECK_FALSE(rows[2].order_gap.has_value());  // its predecessor is unusable
    }

    SECTION("non-positive values yield empty orders") {
        std::vector<convergence_row> rows{row(0.4, 0.8, 0.0, 0.4, true),
                                          row(0.2, 0.4, 0.0, -0.1, true)};
        convergence_orders(rows);
        REQUIRE(rows[1].order_gap.has_value());
        CHECK_FALSE(rows[1].order_e0.has_value());
        CHECK_FALSE(rows[1].order_dist.has_value());
    }
}

TEST_CASE("sparsity summary", "[metrics]") {
    iterate_trace trace;
    CHECK_THROWS_AS(sparsity_stats(trace), std::invalid_argument);

    trace.entry_activity.emplace(Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(2, 1));
    (*trace.entry_activity)(0, 0) = 3;
    trace_record r;
    for (long nnz : {5L, 9L, 3L}) {
        r.nnz = nnz;
        trace.records.push_back(r);
    }
    const sparsity_summary s = sparsity_stats(trace);
    CHECK(s.peak_nnz == 9);
    CHECK(s.final_nnz == 3);
    CHECK(s.activity(0, 0) == 3);
}

TEST_CASE("stationarity certificate", "[metrics]") {
    const hermitian_operator h = test::diag_operator({-1.0, -0.5});
    const double mu = 0.2;

    SECTION("a solved penalized minimizer certifies cleanly") {
        // Along t*e1 the smooth gradient is 4t^3 - 4t, so the positive
        // stationary point solves 4t^3 - 4t + mu = 0. Solve it here with
        // bisection-started Newton to full precision.
        double t = 1.0;
        for (int k = 0; k < 60; ++k) {
            const double f = 4.0 * t * t * t - 4.0 * t + mu;
            const double fp = 12.0 * t * t - 4.0;
            t -= f / fp;
        }
        REQUIRE(std::abs(4.0 * t * t * t - 4.0 * t + mu) < 1e-14);

        Eigen::MatrixXd x(2, 1);
        x << t, 0.0;
        const stationarity_report rep = stationarity_certificate<double>(h, x, mu);
        CHECK(rep.support_entries == 1);
        CHECK(rep.zero_entries == 1);
        CHECK(rep.max_support_deviation <= 1e-12);
        CHECK(rep.max_zero_excess == 0.0);  // the off-support gradient vanishes
        CHECK_THAT(rep.grad_fro, Catch::Matchers::WithinAbs(mu, 1e-12));

        x << -t, 0.0;  // odd symmetry flips the sign convention consistently
        CHECK(stationarity_certificate<double>(h, x, mu).max_support_deviation <= 1e-12);
    }

    SECTION("a smooth critical point is not a penalized one") {
        Eigen::MatrixXd x(2, 1);
        x << 1.0, 0.0;  // gradient of the smooth energy vanishes here
        const stationarity_report rep = stationarity_certificate<double>(h, x, mu);
        CHECK_THAT(rep.max_support_deviation, Catch::Matchers::WithinAbs(mu, 1e-12));
        CHECK(rep.grad_fro <= 1e-12);
    }

    SECTION("zero matrix") {
        const stationarity_report rep =
            stationarity_certificate<double>(h, Eigen::MatrixXd::Zero(2, 1), mu);
        CHECK(rep.zero_entries == 2);
        CHECK(rep.support_entries == 0);
        CHECK(rep.max_zero_excess == 0.0);
        CHECK(rep.grad_fro == 0.0);
    }
}
