#include "nvhf/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nvhf/random.hpp"

namespace nvhf {

namespace {

// Drive operator V = n.S + (gamma_n / gamma_e) n.I for a unit microwave
// direction n. The nuclear term is negligible in magnitude but kept for
// exactness.
Matrix6cd drive_operator(const MicrowaveField& mw, const SpinSystemParams& sys) {
  mw.validate();
  const auto se = spin_matrices(1.0);
  const auto in = spin_matrices(0.5);
  Eigen::MatrixXcd v3 = Eigen::MatrixXcd::Zero(3, 3);
  Eigen::MatrixXcd v2 = Eigen::MatrixXcd::Zero(2, 2);
  for (int k = 0; k < 3; ++k) {
    v3 += mw.direction[k] * se[k];
    v2 += mw.direction[k] * in[k];
  }
  const double rel = sys.gamma_n_mhz_per_mt / sys.gamma_e_mhz_per_mt;
  Matrix6cd v = Matrix6cd::Zero();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int r2 = 0; r2 < 2; ++r2)
        for (int c2 = 0; c2 < 2; ++c2)
          v(2 * r + r2, 2 * c + c2) =
              v3(r, c) * (r2 == c2 ? 1.0 : 0.0) +
              (r == c ? 1.0 : 0.0) * rel * v2(r2, c2);
  return v;
}

// The line taxonomy only needs the m_S = 0 pair to be identifiable: exactly
// two states dominated by the m_S = 0 block, neither flagged ambiguous. The
// m_S = +-1 labels are allowed to be ambiguous -- with the field in the
// xy-plane the +-1 manifolds are degenerate and their eigenstates are
// symmetric/antisymmetric mixtures, which is physical, not an error.
void require_zero_pair(const EnergyLevels& levels, const char* who) {
  int n_zero = 0;
  bool zero_ambiguous = false;
  for (const auto& l : levels.labels) {
    if (l.ms == 0) {
      ++n_zero;
      zero_ambiguous = zero_ambiguous || l.ambiguous;
    }
  }
  if (n_zero != 2 || zero_ambiguous)
    throw std::runtime_error(
        std::string(who) +
        ": the m_S = 0 state pair is not identifiable (strongly mixed "
        "regime); spectrum taxonomy undefined");
}

}  // namespace

std::vector<SpectralLine> esr_lines(const EnergyLevels& levels,
                                    const MicrowaveField& mw,
                                    const SpinSystemParams& sys) {
  require_zero_pair(levels, "esr_lines");
  const Matrix6cd v = drive_operator(mw, sys);

  std::vector<SpectralLine> lines;
  lines.reserve(8);
  for (int k = 0; k < 6; ++k) {
    if (levels.labels[k].ms != 0) continue;
    for (int f = 0; f < 6; ++f) {
      if (levels.labels[f].ms == 0) continue;
      const std::complex<double> m =
          levels.eigenvectors.col(f).dot(v * levels.eigenvectors.col(k));
      SpectralLine line;
      line.kind = LineKind::esr;
      line.freq_mhz = levels.eigenvalues[f] - levels.eigenvalues[k];
      line.amplitude = std::norm(m);
      line.initial_label = levels.labels[k];
      line.final_label = levels.labels[f];
      lines.push_back(line);
    }
  }
  std::stable_sort(lines.begin(), lines.end(),
                   [](const SpectralLine& a, const SpectralLine& b) {
                     return a.freq_mhz < b.freq_mhz;
                   });
  return lines;
}

double zq_frequency_exact(const EnergyLevels& levels) {
  const int i0 = levels.index_of(0, 0);
  const int i1 = levels.index_of(0, 1);
  if (i0 < 0 || i1 < 0)
    throw std::runtime_error(
        "zq_frequency_exact: missing m_S = 0 state pair");
  return std::abs(levels.eigenvalues[i1] - levels.eigenvalues[i0]);
}

double zq_frequency_perturbative(const SpinSystemParams& sys,
                                 const HyperfineTensor& a,
                                 const FieldOrientation& field) {
  const double t = field.theta_deg * constants::deg_to_rad;
  const double p = field.phi_deg * constants::deg_to_rad;
  const double geb = sys.gamma_e_mhz_per_mt * field.b_mt;
  const double prefactor = 2.0 * std::abs(geb * std::sin(t)) / sys.d_zfs_mhz;
  const double kx = std::hypot(a.a_xx_mhz, a.a_xz_mhz);
  const double cos_p = std::cos(p);
  const double sin_p = std::sin(p);
  return prefactor *
         (kx * cos_p * cos_p + std::abs(a.a_yy_mhz) * sin_p * sin_p);
}

RabiRatio rabi_ratio(const EnergyLevels& levels, const MicrowaveField& mw,
                     const SpinSystemParams& sys, int upper_ms,
                     int upper_branch) {
  require_zero_pair(levels, "rabi_ratio");
  if (upper_ms == 0)
    throw std::invalid_argument("rabi_ratio: upper state must have m_S != 0");
  const int up = levels.index_of(upper_ms, upper_branch);
  if (up < 0)
    throw std::invalid_argument("rabi_ratio: requested upper state not found");
  if (levels.labels[static_cast<std::size_t>(up)].ambiguous)
    throw std::runtime_error(
        "rabi_ratio: the requested upper state label is ambiguous (m_S = +-1 "
        "manifolds strongly mixed); the branch-resolved ratio is undefined");
  const int lo0 = levels.index_of(0, 0);
  const int lo1 = levels.index_of(0, 1);

  const Matrix6cd v = drive_operator(mw, sys);
  const double m0 = std::abs(
      levels.eigenvectors.col(up).dot(v * levels.eigenvectors.col(lo0)));
  const double m1 = std::abs(
      levels.eigenvectors.col(up).dot(v * levels.eigenvectors.col(lo1)));

  RabiRatio out;
  out.moment_branch0 = m0;
  out.moment_branch1 = m1;
  out.stronger_branch = m0 >= m1 ? 0 : 1;
  const double hi = std::max(m0, m1);
  const double lo = std::min(m0, m1);
  // Treat a denominator that vanishes relative to the larger moment as a
  // selection rule rather than dividing into noise.
  if (lo <= hi * 1e-12) {
    out.infinite = true;
    out.ratio = std::numeric_limits<double>::infinity();
  } else {
    out.ratio = hi / lo;
  }
  return out;
}

AmplitudeProfile amplitude_ratio_profile(
    const SpinSystemParams& sys, const HyperfineTensor& a, double b_mt,
    double theta_deg, const MicrowaveField& mw,
    const std::vector<double>& phi_grid_deg) {
  AmplitudeProfile profile;
  profile.theta_deg = theta_deg;
  profile.points.reserve(phi_grid_deg.size());

  for (const double phi : phi_grid_deg) {
    const FieldOrientation field{b_mt, theta_deg, phi};
    const EnergyLevels levels = eigensystem(build_hamiltonian(sys, a, field));
    std::vector<SpectralLine> lines = esr_lines(levels, mw, sys);

    // Group frequency-coincident lines and symmetrize their amplitudes: the
    // split of intensity within a degenerate cluster is basis-dependent, so
    // only the cluster average is reported (and the point flagged).
    bool flagged = false;
    std::size_t start = 0;
    while (start < lines.size()) {
      std::size_t end = start + 1;
      while (end < lines.size() &&
             lines[end].freq_mhz - lines[end - 1].freq_mhz <
                 constants::line_coincidence_tol_mhz)
        ++end;
      if (end - start > 1) {
        double total = 0.0;
        for (std::size_t k = start; k < end; ++k) total += lines[k].amplitude;
        const double mean = total / static_cast<double>(end - start);
        for (std::size_t k = start; k < end; ++k) lines[k].amplitude = mean;
        // Only clusters touching the four low-frequency lines affect I1..I4.
        if (start < 4) flagged = true;
      }
      start = end;
    }

    AmplitudeProfilePoint point;
    point.phi_deg = phi;
    point.ordering_flagged = flagged;
    for (int k = 0; k < 4; ++k)
      point.intensity[static_cast<std::size_t>(k)] =
          lines[static_cast<std::size_t>(k)].amplitude;
    point.ratio = (point.intensity[0] + point.intensity[3]) /
                  (point.intensity[1] + point.intensity[2]);
    profile.points.push_back(point);
  }
  return profile;
}

SyntheticDataset synth_dataset(const SpinSystemParams& sys,
                               const HyperfineTensor& a,
                               const std::vector<FieldOrientation>& orientations,
                               const MicrowaveField& mw,
                               const Linewidths& linewidths,
                               std::uint64_t noise_seed) {
  if (orientations.empty())
    throw std::invalid_argument("synth_dataset: empty orientation list");
  if (linewidths.esr_mhz < 0.0 || linewidths.zq_mhz < 0.0)
    throw std::invalid_argument("synth_dataset: linewidths must be >= 0");

  SyntheticDataset dataset;
  dataset.linewidths = linewidths;
  dataset.seed = noise_seed;
  RandomStream rng(noise_seed);
  const double esr_sigma = linewidths.esr_mhz / 2.0;
  const double zq_sigma = linewidths.zq_mhz / 2.0;

  for (const FieldOrientation& field : orientations) {
    SyntheticOrientation entry;
    entry.field = field;
    const EnergyLevels levels = eigensystem(build_hamiltonian(sys, a, field));
    for (const SpectralLine& line : esr_lines(levels, mw, sys)) {
      SyntheticRecord rec;
      rec.kind = LineKind::esr;
      rec.freq_mhz = line.freq_mhz + esr_sigma * rng.gaussian();
      rec.sigma_mhz = esr_sigma;
      rec.amplitude = line.amplitude;
      entry.records.push_back(rec);
    }
    SyntheticRecord zq;
    zq.kind = LineKind::zero_quantum;
    zq.freq_mhz = zq_frequency_exact(levels) + zq_sigma * rng.gaussian();
    zq.sigma_mhz = zq_sigma;
    zq.amplitude = 1.0;
    entry.records.push_back(zq);
    dataset.orientations.push_back(std::move(entry));
  }
  return dataset;
}

}  // namespace nvhf
