#include <cmath>
#include <complex>
#include <stdexcept>

#include "doctest.h"
#include "helpers.hpp"
#include "nvhf/random.hpp"
#include "nvhf/spin_core.hpp"

using namespace nvhf;
using std::complex;

namespace {

Eigen::MatrixXcd commutator(const Eigen::MatrixXcd& a,
                            const Eigen::MatrixXcd& b)
{
    return a * b - b * a;
}

}  // namespace

TEST_CASE("spin matrices satisfy angular-momentum algebra")
{
    const complex<double> i1(0.0, 1.0);
    for (double s : {0.5, 1.0}) {
        const auto j = spin_matrices(s);
        const auto n = j[0].rows();
        CHECK(n == Eigen::Index(2 * s + 1.5));
        // [Jx, Jy] = i Jz and cyclic permutations.
        CHECK((commutator(j[0], j[1]) - i1 * j[2]).norm() < 1e-14);
        CHECK((commutator(j[1], j[2]) - i1 * j[0]).norm() < 1e-14);
        CHECK((commutator(j[2], j[0]) - i1 * j[1]).norm() < 1e-14);
        // Casimir: Jx^2 + Jy^2 + Jz^2 = s(s+1) I.
        const Eigen::MatrixXcd casimir =
            j[0] * j[0] + j[1] * j[1] + j[2] * j[2];
        CHECK((casimir - s * (s + 1.0) * Eigen::MatrixXcd::Identity(n, n))
                  .norm() < 1e-14);
        // Hermitian components.
        for (int k = 0; k < 3; ++k)
            CHECK((j[k] - j[k].adjoint()).norm() < 1e-14);
    }
    // Jz is diagonal with descending quantum numbers.
    const auto j1 = spin_matrices(1.0);
    CHECK(j1[2](0, 0).real() == doctest::Approx(1.0));
    CHECK(j1[2](1, 1).real() == doctest::Approx(0.0));
    CHECK(j1[2](2, 2).real() == doctest::Approx(-1.0));

    CHECK_THROWS_AS(spin_matrices(1.5), std::invalid_argument);
    CHECK_THROWS_AS(spin_matrices(0.0), std::invalid_argument);
}

TEST_CASE("Hamiltonian is Hermitian with trace 4D for arbitrary inputs")
{
    RandomStream rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        SpinSystemParams sys;
        sys.d_zfs_mhz = rng.uniform(1000.0, 4000.0);
        const HyperfineTensor a{rng.uniform(-250.0, 250.0),
                                rng.uniform(-250.0, 250.0),
                                rng.uniform(-250.0, 250.0),
                                rng.uniform(-250.0, 250.0)};
        const FieldOrientation field{rng.uniform(0.1, 10.0),
                                     rng.uniform(0.0, 180.0),
                                     rng.uniform(0.0, 360.0)};
        const Matrix6cd h = build_hamiltonian(sys, a, field);
        CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() < 1e-12);
        const double tr = h.trace().real();
        CHECK(std::abs(tr - 4.0 * sys.d_zfs_mhz) <
              1e-9 * std::abs(4.0 * sys.d_zfs_mhz));
        CHECK(std::abs(h.trace().imag()) < 1e-12);
    }
}

TEST_CASE("field along the symmetry axis reproduces the reference spectrum")
{
    const auto sys = testref::system();
    const FieldOrientation field = testref::field(0.0, 0.0);
    const auto levels = eigensystem(build_hamiltonian(sys, testref::sol1(), field));

    // Independently computed eigenvalues (MHz), ascending.
    const double expected[6] = {-4.807869938,   -4.587420158,
                                2745.869861621, 2871.590971706,
                                2873.389314651, 2999.345142118};
    for (int k = 0; k < 6; ++k)
        CHECK(std::abs(levels.eigenvalues[k] - expected[k]) < 1e-6);
    for (int k = 0; k < 5; ++k)
        CHECK(levels.eigenvalues[k] <= levels.eigenvalues[k + 1]);

    // Orthonormal eigenvectors that actually diagonalize H.
    const Matrix6cd h = build_hamiltonian(sys, testref::sol1(), field);
    CHECK((levels.eigenvectors.adjoint() * levels.eigenvectors -
           Matrix6cd::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    for (int k = 0; k < 6; ++k) {
        const auto v = levels.eigenvectors.col(k);
        CHECK((h * v - levels.eigenvalues[k] * v).norm() < 1e-9);
    }

    // Labels: the two near-zero states are m_S = 0; the upper manifolds
    // alternate -1, +1, -1, +1 in ascending energy at this field. The two
    // middle upper states sit only 1.8 MHz apart and hybridize through
    // second-order coupling via the m_S = 0 manifold, so their block
    // overlaps drop to ~0.63 -- still above the ambiguity threshold.
    const int expected_ms[6] = {0, 0, -1, 1, -1, 1};
    for (int k = 0; k < 6; ++k) {
        CHECK(levels.labels[k].ms == expected_ms[k]);
        CHECK(levels.labels[k].overlap > 0.6);
        CHECK_FALSE(levels.labels[k].ambiguous);
    }
    for (int k : {0, 1, 2, 5})  // far from any near degeneracy
        CHECK(levels.labels[k].overlap > 0.99);
    CHECK(levels.labels_balanced);
    CHECK_FALSE(levels.any_ambiguous());

    // index_of finds each labelled state; branch 0 is the lower of a pair.
    CHECK(levels.index_of(0, 0) == 0);
    CHECK(levels.index_of(0, 1) == 1);
    CHECK(levels.index_of(-1, 0) == 2);
    CHECK(levels.index_of(-1, 1) == 4);
    CHECK(levels.index_of(1, 0) == 3);
    CHECK(levels.index_of(1, 1) == 5);
    CHECK(levels.index_of(2, 0) == -1);
}

TEST_CASE("eigensystem rejects non-Hermitian input")
{
    Matrix6cd h = Matrix6cd::Zero();
    h(0, 1) = complex<double>(1.0, 0.0);  // no conjugate partner
    CHECK_THROWS_AS(eigensystem(h), std::invalid_argument);
}

TEST_CASE("parameter validation rejects unphysical inputs")
{
    SpinSystemParams sys;
    CHECK_NOTHROW(sys.validate());
    sys.d_zfs_mhz = 0.0;
    CHECK_THROWS_AS(sys.validate(), std::invalid_argument);
    sys = SpinSystemParams{};
    sys.gamma_e_mhz_per_mt = -1.0;
    CHECK_THROWS_AS(sys.validate(), std::invalid_argument);
    sys = SpinSystemParams{};
    sys.gamma_n_mhz_per_mt = 1.0;  // nuclear ratio must stay tiny
    CHECK_THROWS_AS(sys.validate(), std::invalid_argument);

    FieldOrientation field;
    CHECK_NOTHROW(field.validate());
    field.b_mt = -0.1;
    CHECK_THROWS_AS(field.validate(), std::invalid_argument);
    field = FieldOrientation{};
    field.theta_deg = 181.0;
    CHECK_THROWS_AS(field.validate(), std::invalid_argument);

    MicrowaveField mw;
    CHECK_NOTHROW(mw.validate());
    mw.direction = Eigen::Vector3d(1.0, 1.0, 0.0);
    CHECK_THROWS_AS(mw.validate(), std::invalid_argument);
    CHECK_NOTHROW(MicrowaveField::along({1.0, 1.0, 0.0}).validate());
    CHECK_THROWS_AS(MicrowaveField::along({0.0, 0.0, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("field direction helpers")
{
    const FieldOrientation f{2.0, 90.0, 90.0};
    const Eigen::Vector3d u = f.unit();
    CHECK(u.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(u.y() == doctest::Approx(1.0));
    CHECK(u.z() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((f.vector_mt() - 2.0 * u).norm() < 1e-12);
}

TEST_CASE("analytic Hamiltonian derivatives match finite differences")
{
    RandomStream rng(99);
    const double h_step = 1e-4;
    for (int trial = 0; trial < 20; ++trial) {
        SpinSystemParams sys;
        sys.d_zfs_mhz = rng.uniform(2000.0, 3500.0);
        HyperfineTensor a{rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0),
                          rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0)};
        const FieldOrientation field{rng.uniform(0.5, 5.0),
                                     rng.uniform(0.0, 180.0),
                                     rng.uniform(0.0, 360.0)};

        double* comps[4] = {&a.a_xx_mhz, &a.a_yy_mhz, &a.a_zz_mhz, &a.a_xz_mhz};
        for (int c = 0; c < 4; ++c) {
            const double saved = *comps[c];
            *comps[c] = saved + h_step;
            const Matrix6cd hp = build_hamiltonian(sys, a, field);
            *comps[c] = saved - h_step;
            const Matrix6cd hm = build_hamiltonian(sys, a, field);
            *comps[c] = saved;
            const Matrix6cd fd = (hp - hm) / (2.0 * h_step);
            // Entries ~3000 MHz divided by the 2e-4 step leave ~4e-9 of
            // floating-point rounding; an actual generator bug would be O(1).
            CHECK((fd - hamiltonian_derivative_tensor(c)).cwiseAbs().maxCoeff() <
                  1e-7);
        }

        {
            SpinSystemParams sp = sys, sm = sys;
            sp.d_zfs_mhz += h_step;
            sm.d_zfs_mhz -= h_step;
            const Matrix6cd fd = (build_hamiltonian(sp, a, field) -
                                  build_hamiltonian(sm, a, field)) /
                                 (2.0 * h_step);
            CHECK((fd - hamiltonian_derivative_d()).cwiseAbs().maxCoeff() < 1e-7);
        }

        {
            // d/ds of H with field scaled by s, at s = 1.
            FieldOrientation fp = field, fm = field;
            fp.b_mt = field.b_mt * (1.0 + h_step);
            fm.b_mt = field.b_mt * (1.0 - h_step);
            const Matrix6cd fd = (build_hamiltonian(sys, a, fp) -
                                  build_hamiltonian(sys, a, fm)) /
                                 (2.0 * h_step);
            CHECK((fd - hamiltonian_derivative_field(sys, field))
                      .cwiseAbs()
                      .maxCoeff() < 1e-7);
        }
    }

    CHECK_THROWS_AS(hamiltonian_derivative_tensor(4), std::invalid_argument);
    CHECK_THROWS_AS(hamiltonian_derivative_tensor(-1), std::invalid_argument);
}

TEST_CASE("random stream is reproducible and well distributed")
{
    RandomStream a(20260815), b(20260815);
    for (int k = 0; k < 100; ++k) {
        CHECK(a.uniform() == b.uniform());
        CHECK(a.gaussian() == b.gaussian());
    }
    // Crude distribution sanity: mean and variance of the Gaussian stream.
    RandomStream c(7);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int k = 0; k < n; ++k) {
        const double g = c.gaussian();
        sum += g;
        sum2 += g * g;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}
