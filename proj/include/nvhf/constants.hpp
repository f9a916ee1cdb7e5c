#pragma once

// Physical constants and unit conventions.
//
// Units used throughout the library:
//   - energies / frequencies : MHz (h = 1)
//   - magnetic fields        : mT
//   - angles at interfaces   : degrees (converted to radians internally)

namespace nvhf::constants {

// Zero-field splitting of the NV (nitrogen-vacancy) electron spin ground
// state. Overridable through SpinSystemParams / the run configuration.
inline constexpr double default_d_zfs_mhz = 2870.2;

// Electron gyromagnetic ratio, 28024.95 MHz/T. The library follows the
// convention that both Zeeman terms enter the Hamiltonian with a plus sign
// and a positive gamma_e.
inline constexpr double default_gamma_e_mhz_per_mt = 28.02495;

// 13C nuclear gyromagnetic ratio, 10.7084 MHz/T.
inline constexpr double default_gamma_n_mhz_per_mt = 0.0107084;

// Default electron Zeeman interaction strength gamma_e * B and the field
// magnitude it corresponds to at the default gamma_e.
inline constexpr double default_geb_mhz = 63.3;
inline constexpr double default_b_mt =
    default_geb_mhz / default_gamma_e_mhz_per_mt;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double deg_to_rad = pi / 180.0;
inline constexpr double rad_to_deg = 180.0 / pi;

// Eigenstate labelling: an eigenvector is assigned the electron-spin
// projection (m_S) of the basis block it overlaps most with; below this
// squared-overlap threshold the assignment is flagged as ambiguous.
inline constexpr double label_overlap_threshold = 0.6;

// Two transition frequencies closer than this are treated as coincident when
// ordering amplitude profiles (the ordering is then flagged, and amplitudes
// within the coincident cluster are symmetrized).
inline constexpr double line_coincidence_tol_mhz = 1e-3;

}  // namespace nvhf::constants
