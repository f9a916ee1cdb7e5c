#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>

#include "nvhf/constants.hpp"

namespace nvhf {

using Matrix6cd = Eigen::Matrix<std::complex<double>, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

// Static parameters of the coupled electron (S = 1) / nuclear (I = 1/2) spin
// system: zero-field splitting and the two gyromagnetic ratios.
struct SpinSystemParams {
  double d_zfs_mhz = constants::default_d_zfs_mhz;
  double gamma_e_mhz_per_mt = constants::default_gamma_e_mhz_per_mt;
  double gamma_n_mhz_per_mt = constants::default_gamma_n_mhz_per_mt;

  // Throws std::invalid_argument when d_zfs <= 0, gamma_e <= 0, or
  // |gamma_n| / gamma_e >= 1e-3 (the nuclear ratio must be small).
  void validate() const;
};

// The four independent components of the symmetric hyperfine coupling tensor
// in the NV frame. Mirror symmetry about the xz-plane forces a_xy = a_yz = 0,
// so the y-axis is a principal axis and the full 3x3 tensor is
//   [ a_xx   0    a_xz ]
//   [  0    a_yy   0   ]
//   [ a_xz   0    a_zz ]
struct HyperfineTensor {
  double a_xx_mhz = 0.0;
  double a_yy_mhz = 0.0;
  double a_zz_mhz = 0.0;
  double a_xz_mhz = 0.0;

  Eigen::Matrix3d matrix() const;
};

// Magnetic field in the NV frame: magnitude plus polar angle theta from the
// NV symmetry axis (z) and azimuth phi from the x-axis, so that the Cartesian
// field is B * (sin t cos p, sin t sin p, cos t).
struct FieldOrientation {
  double b_mt = constants::default_b_mt;
  double theta_deg = 0.0;
  double phi_deg = 0.0;

  // Unit direction vector (sin t cos p, sin t sin p, cos t).
  Eigen::Vector3d unit() const;
  // Field vector in mT.
  Eigen::Vector3d vector_mt() const;
  // Throws std::invalid_argument on b < 0, non-finite angles, or theta
  // outside [0, 180] (up to a small numerical slack).
  void validate() const;
};

// Direction of the linearly polarized microwave drive field in the NV frame.
// Only the direction matters for relative amplitudes; the stored vector is
// required to have unit norm. The nuclear contribution to the drive operator
// scales with gamma_n / gamma_e and is derived from SpinSystemParams.
struct MicrowaveField {
  Eigen::Vector3d direction{1.0, 0.0, 0.0};

  // Builds a MicrowaveField from an arbitrary non-zero vector (normalizes).
  static MicrowaveField along(const Eigen::Vector3d& v);
  // Throws std::invalid_argument unless |direction| == 1 within 1e-10.
  void validate() const;
};

// Electron-spin label of an eigenstate: the m_S block (+1, 0, -1) of maximal
// squared overlap, the nuclear branch index (0 = lower energy of the pair in
// that block), the overlap itself, and an ambiguity flag raised when the
// overlap falls below constants::label_overlap_threshold.
struct StateLabel {
  int ms = 0;
  int branch = 0;
  double overlap = 0.0;
  bool ambiguous = false;
};

// Eigensystem of the 6-level Hamiltonian: ascending eigenvalues, orthonormal
// eigenvector columns, and per-state labels.
struct EnergyLevels {
  Vector6d eigenvalues = Vector6d::Zero();
  Matrix6cd eigenvectors = Matrix6cd::Identity();
  std::array<StateLabel, 6> labels{};
  // True when exactly two states carry each of the labels +1, 0, -1. Far from
  // level anticrossings this always holds; it can break in strongly mixed
  // regimes together with the per-state ambiguity flags.
  bool labels_balanced = false;

  bool any_ambiguous() const;
  // Index of the state labelled (ms, branch), or -1 when absent.
  int index_of(int ms, int branch) const;
};

enum class LineKind { esr, zero_quantum };

// One labelled transition: frequency, relative transition probability
// (squared drive matrix element), and the labels of the connected states.
struct SpectralLine {
  double freq_mhz = 0.0;
  double amplitude = 0.0;
  StateLabel initial_label{};
  StateLabel final_label{};
  LineKind kind = LineKind::esr;
};

}  // namespace nvhf
