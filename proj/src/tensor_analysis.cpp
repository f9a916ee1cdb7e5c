#include "nvhf/tensor_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "nvhf/random.hpp"
#include "nvhf/spin_core.hpp"

namespace nvhf {

namespace {

struct XzBlock {
  double lam_small = 0.0;  // eigenvalue whose |.| is smaller
  double lam_large = 0.0;  // eigenvalue whose |.| is larger
  // Unit eigenvector of lam_large within the xz-plane, (x, z) components.
  double vx = 0.0;
  double vz = 1.0;
};

// Closed-form eigendecomposition of the symmetric 2x2 (x, z) block
// [[a_xx, a_xz], [a_xz, a_zz]].
XzBlock decompose_xz_block(const HyperfineTensor& a) {
  const double tr = a.a_xx_mhz + a.a_zz_mhz;
  const double det = a.a_xx_mhz * a.a_zz_mhz - a.a_xz_mhz * a.a_xz_mhz;
  const double disc = std::sqrt(std::max(tr * tr - 4.0 * det, 0.0));
  const double lo = (tr - disc) / 2.0;
  const double hi = (tr + disc) / 2.0;

  XzBlock block;
  if (std::abs(hi) >= std::abs(lo)) {
    block.lam_small = lo;
    block.lam_large = hi;
  } else {
    block.lam_small = hi;
    block.lam_large = lo;
  }
  // Eigenvector of lam_large: (a_xz, lam - a_xx), except in the (near-)
  // diagonal case where the axes are the coordinate axes themselves.
  const double scale =
      std::max({std::abs(a.a_xx_mhz), std::abs(a.a_zz_mhz), std::abs(a.a_xz_mhz), 1e-300});
  if (std::abs(a.a_xz_mhz) > 1e-14 * scale) {
    const double vx = a.a_xz_mhz;
    const double vz = block.lam_large - a.a_xx_mhz;
    const double n = std::hypot(vx, vz);
    block.vx = vx / n;
    block.vz = vz / n;
  } else {
    // Diagonal block: the eigenvalues are a_xx and a_zz with axes x and z.
    // Ties (|a_xx| == |a_zz|) resolve to the z-axis.
    const bool large_is_xx = std::abs(a.a_xx_mhz) > std::abs(a.a_zz_mhz);
    block.vx = large_is_xx ? 1.0 : 0.0;
    block.vz = large_is_xx ? 0.0 : 1.0;
  }
  return block;
}

double reduce_mod(double angle_deg, double period) {
  double a = std::fmod(angle_deg, period);
  if (a < 0.0) a += period;
  return a;
}

}  // namespace

PasDecomposition pas_decompose(const HyperfineTensor& a) {
  const XzBlock block = decompose_xz_block(a);

  PasDecomposition pas;
  // Principal values ordered by increasing magnitude.
  std::array<std::pair<double, int>, 3> vals = {
      std::make_pair(block.lam_small, 0),
      std::make_pair(a.a_yy_mhz, 1),
      std::make_pair(block.lam_large, 2)};
  std::stable_sort(vals.begin(), vals.end(), [](const auto& l, const auto& r) {
    return std::abs(l.first) < std::abs(r.first);
  });

  // Principal axes: the lam_large axis is (vx, 0, vz), the lam_small axis is
  // perpendicular to it within the xz-plane, the a_yy axis is the y-axis.
  const Eigen::Vector3d axis_small(-block.vz, 0.0, block.vx);
  const Eigen::Vector3d axis_y(0.0, 1.0, 0.0);
  const Eigen::Vector3d axis_large(block.vx, 0.0, block.vz);
  const std::array<Eigen::Vector3d, 3> axes_by_id = {axis_small, axis_y,
                                                     axis_large};
  for (int k = 0; k < 3; ++k) {
    pas.principal_mhz[static_cast<std::size_t>(k)] = vals[static_cast<std::size_t>(k)].first;
    pas.axes.col(k) = axes_by_id[static_cast<std::size_t>(vals[static_cast<std::size_t>(k)].second)];
  }

  // zeta: angle from the NV z-axis to the axis of the largest-magnitude
  // principal value, reported in [0, 180). When that value is a_yy the axis
  // is the NV y-axis, perpendicular to z.
  if (vals[2].second == 1) {
    pas.zeta_deg = 90.0;
  } else {
    pas.zeta_deg = reduce_mod(
        std::atan2(block.vx, block.vz) * constants::rad_to_deg, 180.0);
  }
  const double z = pas.zeta_deg;
  pas.equivalent_angles_deg = {z, -z, 180.0 - z, 180.0 + z};

  // Geometry-preferred representative: the equivalent angle closest to the
  // tetrahedral bond angle 109.5 deg (within 5 deg), when one exists.
  const double target = 109.5;
  double best = pas.equivalent_angles_deg[0];
  double best_dist = std::abs(reduce_mod(best, 360.0) - target);
  for (const double cand : pas.equivalent_angles_deg) {
    const double d = std::abs(reduce_mod(cand, 360.0) - target);
    if (d < best_dist) {
      best_dist = d;
      best = reduce_mod(cand, 360.0);
    }
  }
  pas.geometry_preferred = best_dist <= 5.0;
  pas.geometry_preferred_angle_deg = reduce_mod(best, 360.0);
  return pas;
}

HyperfineTensor from_pas(double pas_xx_mhz, double pas_yy_mhz,
                         double pas_zz_mhz, double zeta_deg) {
  const double c = std::cos(zeta_deg * constants::deg_to_rad);
  const double s = std::sin(zeta_deg * constants::deg_to_rad);
  HyperfineTensor a;
  a.a_xx_mhz = c * c * pas_xx_mhz + s * s * pas_zz_mhz;
  a.a_zz_mhz = s * s * pas_xx_mhz + c * c * pas_zz_mhz;
  a.a_xz_mhz = c * s * (pas_zz_mhz - pas_xx_mhz);
  a.a_yy_mhz = pas_yy_mhz;
  return a;
}

DetSign det_sign(const HyperfineTensor& a) {
  DetSign out;
  out.det_mhz3 =
      a.a_yy_mhz * (a.a_xx_mhz * a.a_zz_mhz - a.a_xz_mhz * a.a_xz_mhz);
  out.sign = out.det_mhz3 > 0.0 ? 1 : (out.det_mhz3 < 0.0 ? -1 : 0);
  return out;
}

EquivalentSolutions equivalent_solutions(const HyperfineTensor& a,
                                         const EquivalenceCheckOptions& options) {
  const XzBlock block = decompose_xz_block(a);

  // Even sign flips of the principal values (p_small, p_y, p_large) are
  // pi-rotations of the nuclear spin about one principal axis each; they
  // leave the frequency spectrum invariant once the (tiny) nuclear Zeeman
  // term is dropped. Odd flips change the spectrum and are not equivalences.
  static constexpr int kEvenSignPatterns[4][3] = {
      {+1, +1, +1},  // identity
      {-1, +1, -1},  // pi-rotation about the y principal axis
      {+1, -1, -1},  // pi-rotation about the in-plane small axis
      {-1, -1, +1},  // pi-rotation about the in-plane large axis
  };

  EquivalentSolutions out;
  for (int n = 0; n < 4; ++n) {
    const double ps = kEvenSignPatterns[n][0] * block.lam_small;
    const double py = kEvenSignPatterns[n][1] * a.a_yy_mhz;
    const double pl = kEvenSignPatterns[n][2] * block.lam_large;
    // Reassemble in the NV frame with the same principal axes:
    // A' = v_small p_s v_small^T + y p_y y^T + v_large p_l v_large^T.
    HyperfineTensor t;
    t.a_xx_mhz = ps * block.vz * block.vz + pl * block.vx * block.vx;
    t.a_zz_mhz = ps * block.vx * block.vx + pl * block.vz * block.vz;
    t.a_xz_mhz = (pl - ps) * block.vx * block.vz;
    t.a_yy_mhz = py;
    out.solutions[static_cast<std::size_t>(n)] = t;
  }

  // Brute-force spectral verification at seeded random orientations with the
  // nuclear Zeeman term dropped. Failure means a broken equivalence (or a
  // broken reassembly) and is a correctness tripwire.
  SpinSystemParams sys = options.sys;
  sys.gamma_n_mhz_per_mt = 0.0;
  RandomStream rng(options.seed);
  double max_dev = 0.0;
  for (int k = 0; k < options.n_orientations; ++k) {
    const double cos_t = rng.uniform(-1.0, 1.0);
    const double theta = std::acos(cos_t) * constants::rad_to_deg;
    const double phi = rng.uniform(0.0, 360.0);
    const FieldOrientation field{options.b_mt, theta, phi};

    const Matrix6cd h_ref = build_hamiltonian(sys, a, field);
    Eigen::SelfAdjointEigenSolver<Matrix6cd> ref(h_ref,
                                                 Eigen::EigenvaluesOnly);
    for (const HyperfineTensor& t : out.solutions) {
      const Matrix6cd h = build_hamiltonian(sys, t, field);
      Eigen::SelfAdjointEigenSolver<Matrix6cd> cand(h, Eigen::EigenvaluesOnly);
      const double dev =
          (cand.eigenvalues() - ref.eigenvalues()).cwiseAbs().maxCoeff();
      max_dev = std::max(max_dev, dev);
    }
  }
  out.verification_max_dev_mhz = max_dev;
  if (max_dev > options.tolerance_mhz)
    throw std::runtime_error(
        "equivalent_solutions: spectral equivalence verification failed "
        "(max deviation " +
        std::to_string(max_dev) + " MHz exceeds tolerance " +
        std::to_string(options.tolerance_mhz) + " MHz)");
  return out;
}

DetClassification classify_det_sign(const AmplitudeProfile& profile,
                                    const ClassifyThresholds& thresholds) {
  const auto& pts = profile.points;
  if (pts.size() < 4)
    throw std::invalid_argument("classify_det_sign: too few profile points");
  double phi_min = pts.front().phi_deg;
  double phi_max = pts.front().phi_deg;
  for (const auto& p : pts) {
    phi_min = std::min(phi_min, p.phi_deg);
    phi_max = std::max(phi_max, p.phi_deg);
  }
  if (phi_max - phi_min < 180.0 - 1e-9)
    throw std::invalid_argument(
        "classify_det_sign: profile must span at least 180 degrees of "
        "azimuth");

  DetClassification c;
  const std::size_t n = pts.size();
  double ratio_sum = 0.0;
  double ratio_max = 0.0;
  double ratio_min = std::numeric_limits<double>::infinity();
  double i1_min = std::numeric_limits<double>::infinity(), i1_max = 0.0;
  double i4_min = std::numeric_limits<double>::infinity(), i4_max = 0.0;
  double weak_frac = 0.0;
  double s1 = 0.0, s4 = 0.0, s11 = 0.0, s44 = 0.0, s14 = 0.0;
  for (const auto& p : pts) {
    ratio_sum += p.ratio;
    ratio_max = std::max(ratio_max, p.ratio);
    ratio_min = std::min(ratio_min, p.ratio);
    i1_min = std::min(i1_min, p.intensity[0]);
    i1_max = std::max(i1_max, p.intensity[0]);
    i4_min = std::min(i4_min, p.intensity[3]);
    i4_max = std::max(i4_max, p.intensity[3]);
    if (p.intensity[0] > 0.0)
      weak_frac = std::max(
          weak_frac, std::max(p.intensity[1], p.intensity[2]) / p.intensity[0]);
    else
      weak_frac = std::numeric_limits<double>::infinity();
    s1 += p.intensity[0];
    s4 += p.intensity[3];
    s11 += p.intensity[0] * p.intensity[0];
    s44 += p.intensity[3] * p.intensity[3];
    s14 += p.intensity[0] * p.intensity[3];
  }
  const double nn = static_cast<double>(n);
  const double cov14 = s14 / nn - (s1 / nn) * (s4 / nn);
  const double var1 = s11 / nn - (s1 / nn) * (s1 / nn);
  const double var4 = s44 / nn - (s4 / nn) * (s4 / nn);
  c.corr_i1_i4 =
      (var1 > 0.0 && var4 > 0.0) ? cov14 / std::sqrt(var1 * var4) : 0.0;
  c.peak_to_mean = ratio_sum > 0.0 ? ratio_max / (ratio_sum / nn) : 0.0;
  c.min_ratio = ratio_min;
  c.i1_max_over_min =
      i1_min > 0.0 ? i1_max / i1_min : std::numeric_limits<double>::infinity();
  c.i4_max_over_min =
      i4_min > 0.0 ? i4_max / i4_min : std::numeric_limits<double>::infinity();
  c.max_weak_fraction = weak_frac;

  // Strong oscillation passing through unity with I1, I4 in phase.
  const bool positive_like = c.peak_to_mean > thresholds.peak_to_mean &&
                             c.corr_i1_i4 > 0.0 && c.min_ratio < 1.0;
  // Nearly constant dominant amplitudes with uniformly weak I2, I3.
  const bool negative_like =
      c.i1_max_over_min < thresholds.constancy_max_over_min &&
      c.i4_max_over_min < thresholds.constancy_max_over_min &&
      c.max_weak_fraction < thresholds.smallness_fraction;

  if (positive_like && !negative_like)
    c.verdict = DetVerdict::positive;
  else if (negative_like && !positive_like)
    c.verdict = DetVerdict::negative;
  else
    c.verdict = DetVerdict::inconclusive;
  return c;
}

}  // namespace nvhf
