#pragma once

#include <cstdint>
#include <vector>

#include "nvhf/spin_core.hpp"
#include "nvhf/types.hpp"

namespace nvhf {

// Full-width line widths used when synthesizing noisy datasets. The Gaussian
// center-frequency noise applied is sigma = linewidth / 2.
struct Linewidths {
  double esr_mhz = 0.6;
  double zq_mhz = 0.06;
};

// The eight electron-spin transitions from the two m_S = 0 states to the four
// m_S = +-1 states, sorted ascending in frequency. Frequencies are
// E_final - E_initial; amplitudes are squared matrix elements of the drive
// operator V = n.S + (gamma_n / gamma_e) n.I with n the microwave direction.
// Requires only that the m_S = 0 pair is identifiable (throws
// std::runtime_error otherwise); the final-state labels may carry ambiguity
// flags near theta = 90, where the degenerate m_S = +-1 manifolds mix into
// symmetric/antisymmetric combinations.
std::vector<SpectralLine> esr_lines(const EnergyLevels& levels,
                                    const MicrowaveField& mw,
                                    const SpinSystemParams& sys);

// Nuclear zero-quantum frequency: |E(m_S = 0, branch 1) - E(m_S = 0,
// branch 0)| from the exact eigensystem. Throws std::runtime_error when the
// m_S = 0 pair is missing.
double zq_frequency_exact(const EnergyLevels& levels);

// Second-order closed-form approximation of the zero-quantum frequency:
//   (2 |gamma_e B sin t| / D) * (sqrt(a_xx^2 + a_xz^2) cos^2 p
//                                + |a_yy| sin^2 p)
// Valid for gamma_e B / D << 1; exact 0 at theta = 0.
double zq_frequency_perturbative(const SpinSystemParams& sys,
                                 const HyperfineTensor& a,
                                 const FieldOrientation& field);

// Ratio of the two (unsquared) drive matrix elements connecting the two
// m_S = 0 states to one common upper state; proportional to the ratio of the
// Rabi frequencies of the two transitions that differ by the zero-quantum
// frequency. Reported >= 1 by convention; stronger_branch records which
// m_S = 0 branch (0 or 1) carries the larger moment. A zero denominator
// (selection rule, e.g. a fully decoupled nucleus) is reported through the
// infinite flag rather than a division by zero. Throws std::runtime_error
// when the m_S = 0 pair or the requested upper state is not cleanly
// labelled.
struct RabiRatio {
  double ratio = 1.0;
  bool infinite = false;
  int stronger_branch = 0;
  double moment_branch0 = 0.0;
  double moment_branch1 = 0.0;
};
RabiRatio rabi_ratio(const EnergyLevels& levels, const MicrowaveField& mw,
                     const SpinSystemParams& sys, int upper_ms,
                     int upper_branch);

// Amplitudes I1..I4 of the four lowest-frequency electron-spin lines and the
// ratio (I1 + I4) / (I2 + I3), evaluated over a grid of field azimuths at
// fixed polar angle (intended for theta near 90, i.e. the field sweeping the
// xy-plane). Lines are re-sorted by frequency at each grid point. When two
// line frequencies coincide within constants::line_coincidence_tol_mhz the
// ordering within the coincident cluster is physically meaningless: the point
// is flagged and the cluster's total amplitude is split equally among its
// members (the per-cluster sum is the well-defined observable).
struct AmplitudeProfilePoint {
  double phi_deg = 0.0;
  std::array<double, 4> intensity{};  // I1..I4, ascending line frequency
  double ratio = 0.0;                 // (I1 + I4) / (I2 + I3)
  bool ordering_flagged = false;
};
struct AmplitudeProfile {
  double theta_deg = 90.0;
  std::vector<AmplitudeProfilePoint> points;
};
AmplitudeProfile amplitude_ratio_profile(const SpinSystemParams& sys,
                                         const HyperfineTensor& a, double b_mt,
                                         double theta_deg,
                                         const MicrowaveField& mw,
                                         const std::vector<double>& phi_grid_deg);

// Synthetic noisy measurement of the full line set (8 electron-spin lines +
// 1 zero-quantum line) for each requested field orientation. Frequencies are
// exact frequencies plus independent Gaussian noise of standard deviation
// linewidth / 2; the generator is a fixed Box-Muller transform over
// std::mt19937_64, so output is bit-reproducible from the seed on any
// platform. Zero linewidths are allowed and reproduce exact frequencies.
// Throws std::invalid_argument on an empty orientation list or negative
// linewidths.
struct SyntheticRecord {
  LineKind kind = LineKind::esr;
  double freq_mhz = 0.0;
  double sigma_mhz = 0.0;
  double amplitude = 0.0;
};
struct SyntheticOrientation {
  FieldOrientation field;
  std::vector<SyntheticRecord> records;
};
struct SyntheticDataset {
  std::vector<SyntheticOrientation> orientations;
  Linewidths linewidths;
  std::uint64_t seed = 0;
};
SyntheticDataset synth_dataset(const SpinSystemParams& sys,
                               const HyperfineTensor& a,
                               const std::vector<FieldOrientation>& orientations,
                               const MicrowaveField& mw,
                               const Linewidths& linewidths,
                               std::uint64_t noise_seed);

}  // namespace nvhf
