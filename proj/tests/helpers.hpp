// Shared fixtures for the test suite: reference spin-system parameters and
// the four observationally equivalent hyperfine tensors used throughout.
#pragma once

#include <cmath>

#include "nvhf/types.hpp"

namespace testref {

// Default system: zero-field splitting and gyromagnetic ratios in MHz, MHz/mT.
inline nvhf::SpinSystemParams system()
{
    return nvhf::SpinSystemParams{};
}

// Field magnitude chosen so that the electron Zeeman energy is 63.3 MHz.
inline double field_mt()
{
    return 63.3 / nvhf::SpinSystemParams{}.gamma_e_mhz_per_mt;
}

inline nvhf::FieldOrientation field(double theta_deg, double phi_deg)
{
    return nvhf::FieldOrientation{field_mt(), theta_deg, phi_deg};
}

// The four equivalent solutions of the reference hyperfine tensor,
// in MHz, full precision (independently computed).
inline nvhf::HyperfineTensor sol1() { return {189.3, 128.4, 128.9, 24.1}; }
inline nvhf::HyperfineTensor sol2() { return {-189.3, 128.4, -128.9, -24.1}; }
inline nvhf::HyperfineTensor sol3()
{
    return {-162.994073440, -128.4, 85.719239244, -99.238258869};
}
inline nvhf::HyperfineTensor sol4()
{
    return {162.994073440, -128.4, -85.719239244, 99.238258869};
}

// Principal values of sol1 sorted by increasing magnitude, and the tilt of the
// largest principal axis from the symmetry axis (degrees).
inline constexpr double kPrincipalSmall = 120.462582902;
inline constexpr double kPrincipalMid = 128.4;
inline constexpr double kPrincipalLarge = 197.737417098;
inline constexpr double kZetaDeg = 70.704834607;

inline constexpr double kDetSol1Mhz3 = 3058482.864;  // +- ~0.5 in last digit

inline nvhf::MicrowaveField mw_x()
{
    return nvhf::MicrowaveField{};
}

inline bool near(double a, double b, double tol)
{
    return std::abs(a - b) <= tol;
}

}  // namespace testref
