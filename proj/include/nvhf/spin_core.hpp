#pragma once

#include <Eigen/Dense>
#include <array>

#include "nvhf/types.hpp"

namespace nvhf {

// Angular-momentum matrices (Jx, Jy, Jz) in the standard basis ordered by
// descending magnetic quantum number. Supported spins: 1 (3x3) and 1/2 (2x2).
// The matrices satisfy [Jx, Jy] = i Jz and Jx^2 + Jy^2 + Jz^2 = j(j+1) * I.
// Throws std::invalid_argument for any other spin value.
std::array<Eigen::MatrixXcd, 3> spin_matrices(double spin_quantum_number);

// Full 6x6 Hamiltonian (MHz) of the coupled S = 1 electron / I = 1/2 nuclear
// spin in the fixed product basis (m_S = +1, 0, -1) x (m_I = +1/2, -1/2):
//
//   H = D Sz^2 + gamma_e B.S + gamma_n B.I
//       + a_xx Sx Ix + a_yy Sy Iy + a_zz Sz Iz + a_xz (Sx Iz + Sz Ix)
//
// The result is Hermitian to machine precision and has trace 4D exactly
// (all Zeeman and hyperfine generators are traceless).
Matrix6cd build_hamiltonian(const SpinSystemParams& sys,
                            const HyperfineTensor& a,
                            const FieldOrientation& field);

// Exact diagonalization of a Hermitian 6x6 matrix: ascending eigenvalues,
// orthonormal eigenvectors, and state labels from label_states(). Throws
// std::invalid_argument when the input is not Hermitian (elementwise check)
// and std::runtime_error when the eigensolver fails to converge.
EnergyLevels eigensystem(const Matrix6cd& h);

// Assigns each eigenvector the m_S of the basis block with which it has
// maximal squared overlap; the nuclear branch index orders the two states of
// each block by energy. Overlaps below constants::label_overlap_threshold
// are flagged ambiguous rather than silently assigned, and labels_balanced
// records whether every m_S block received exactly two states.
void label_states(EnergyLevels& levels);

// Partial derivatives of the Hamiltonian used for analytic Jacobians via
// first-order eigenvalue perturbation theory (dE_k/dp = <k| dH/dp |k>).
//
// component: 0 -> a_xx, 1 -> a_yy, 2 -> a_zz, 3 -> a_xz.
const Matrix6cd& hamiltonian_derivative_tensor(int component);
// dH / dD = Sz^2 (x) identity.
const Matrix6cd& hamiltonian_derivative_d();
// dH / d(field scale) at fixed direction: gamma_e b (u.S) + gamma_n b (u.I)
// where u is the unit field direction and b the magnitude in mT.
Matrix6cd hamiltonian_derivative_field(const SpinSystemParams& sys,
                                       const FieldOrientation& field);

}  // namespace nvhf
