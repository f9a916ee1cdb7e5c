#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>

#include "nvhf/spectra.hpp"
#include "nvhf/types.hpp"

namespace nvhf {

// Principal-axis decomposition of the hyperfine tensor. Because the y-axis
// is a principal axis (mirror symmetry), the decomposition reduces to the
// closed-form eigendecomposition of the 2x2 (x, z) block plus a_yy.
//
//   principal_mhz       : the three principal values ordered by increasing
//                         magnitude
//   zeta_deg            : angle in [0, 180) between the NV z-axis and the
//                         principal axis of the largest-magnitude principal
//                         value (90 when that value is a_yy, whose axis is
//                         the NV y-axis)
//   equivalent_angles   : {zeta, -zeta, 180 - zeta, 180 + zeta}; all describe
//                         the same physical orientation
//   axes                : columns = principal axes, ordered like
//                         principal_mhz; the y principal axis is the NV
//                         y-axis
//   geometry_preferred_angle_deg : the member of the equivalent set (mod 360)
//                         closest to the tetrahedral bond angle 109.5 deg;
//                         geometry_preferred marks whether it lies within
//                         5 deg of it.
struct PasDecomposition {
  std::array<double, 3> principal_mhz{};
  double zeta_deg = 0.0;
  std::array<double, 4> equivalent_angles_deg{};
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();
  bool geometry_preferred = false;
  double geometry_preferred_angle_deg = 0.0;
};
PasDecomposition pas_decompose(const HyperfineTensor& a);

// Inverse of pas_decompose: rotates diag(pas_xx, pas_yy, pas_zz) by zeta
// about the y-axis. pas_zz is placed on the axis at angle zeta from the NV
// z-axis, so pas_decompose(from_pas(p, zeta)) reproduces (p, zeta modulo the
// equivalent-angle set) when |pas_zz| is the largest magnitude.
HyperfineTensor from_pas(double pas_xx_mhz, double pas_yy_mhz,
                         double pas_zz_mhz, double zeta_deg);

// Signed determinant of the full 3x3 tensor:
// det = a_yy (a_xx a_zz - a_xz^2). sign is -1, 0, or +1.
struct DetSign {
  double det_mhz3 = 0.0;
  int sign = 0;
};
DetSign det_sign(const HyperfineTensor& a);

// The four NV-frame tensors that produce identical transition frequencies
// (and, up to the nuclear Zeeman term, identical amplitudes). They are
// generated by the even sign flips of the principal values (p_small, p_y,
// p_large) -- equivalently, pi-rotations of the nuclear spin about each
// principal axis:
//   [0] identity                                      (+, +, +)
//   [1] pi-rotation about the y principal axis        (-, +, -)
//   [2] pi-rotation about the small in-plane axis     (+, -, -)
//   [3] pi-rotation about the large in-plane axis     (-, -, +)
// All four therefore share the same determinant. The remaining sign freedom
// a_xz -> -a_xz is a global pi-rotation about the NV z-axis (it maps
// phi -> phi + 180 in the field azimuth) and is reported through
// axz_sign_freedom instead of doubling the solution set.
//
// Every returned candidate is verified spectrally against the input by
// brute-force eigenvalue comparison with gamma_n = 0 at seeded random field
// orientations; a deviation above the tolerance throws std::runtime_error
// (correctness tripwire, not a recoverable state).
struct EquivalenceCheckOptions {
  SpinSystemParams sys{};  // gamma_n is forced to zero for the check
  double b_mt = constants::default_b_mt;
  int n_orientations = 20;
  std::uint64_t seed = 20260815;
  double tolerance_mhz = 1e-6;
};
struct EquivalentSolutions {
  std::array<HyperfineTensor, 4> solutions{};
  bool axz_sign_freedom = true;
  double verification_max_dev_mhz = 0.0;
};
EquivalentSolutions equivalent_solutions(
    const HyperfineTensor& a, const EquivalenceCheckOptions& options = {});

// Determinant-sign classification from an amplitude-ratio profile.
//
// det > 0 when the ratio R = (I1 + I4) / (I2 + I3) oscillates strongly
// (peak-to-mean above the threshold), I1 and I4 vary in phase (positive
// correlation), and R actually dips below 1 somewhere (strong oscillations
// pass through unity; this guards against the det < 0 regime where R is
// large everywhere and spikes only because I2, I3 graze zero).
//
// det < 0 when the dominant amplitudes are nearly constant (max/min of I1 and
// of I4 below the constancy threshold) and I2, I3 stay below the smallness
// fraction of I1 pointwise.
//
// Anything else is inconclusive (e.g. a fully decoupled nucleus, where
// R == 1 identically). Requires the profile to span at least 180 degrees of
// azimuth; throws std::invalid_argument otherwise.
enum class DetVerdict { positive, negative, inconclusive };
struct ClassifyThresholds {
  double peak_to_mean = 3.0;
  double constancy_max_over_min = 1.5;
  double smallness_fraction = 0.2;
};
struct DetClassification {
  DetVerdict verdict = DetVerdict::inconclusive;
  double peak_to_mean = 0.0;
  double corr_i1_i4 = 0.0;
  double min_ratio = 0.0;
  double i1_max_over_min = 0.0;
  double i4_max_over_min = 0.0;
  double max_weak_fraction = 0.0;  // max over phi of max(I2, I3) / I1
};
DetClassification classify_det_sign(const AmplitudeProfile& profile,
                                    const ClassifyThresholds& thresholds = {});

}  // namespace nvhf
