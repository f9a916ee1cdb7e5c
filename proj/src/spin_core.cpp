#include "nvhf/spin_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nvhf {

namespace {

using std::complex;
constexpr complex<double> kI{0.0, 1.0};

Eigen::MatrixXcd kron(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  Eigen::MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Precomputed 6x6 generators in the product basis
// (m_S = +1, 0, -1) x (m_I = +1/2, -1/2).
struct Generators {
  // Electron spin operators S_alpha (x) identity.
  std::array<Matrix6cd, 3> s;
  // Nuclear spin operators identity (x) I_alpha.
  std::array<Matrix6cd, 3> i;
  // Sz^2 (x) identity (zero-field splitting generator).
  Matrix6cd sz2;
  // Hyperfine generators: Sx Ix, Sy Iy, Sz Iz, Sx Iz + Sz Ix.
  std::array<Matrix6cd, 4> hyperfine;

  Generators() {
    const auto se = spin_matrices(1.0);
    const auto in = spin_matrices(0.5);
    const Eigen::MatrixXcd id3 = Eigen::MatrixXcd::Identity(3, 3);
    const Eigen::MatrixXcd id2 = Eigen::MatrixXcd::Identity(2, 2);
    for (int k = 0; k < 3; ++k) {
      s[k] = kron(se[k], id2);
      i[k] = kron(id3, in[k]);
    }
    sz2 = kron(se[2] * se[2], id2);
    hyperfine[0] = s[0] * i[0];
    hyperfine[1] = s[1] * i[1];
    hyperfine[2] = s[2] * i[2];
    hyperfine[3] = s[0] * i[2] + s[2] * i[0];
  }
};

const Generators& generators() {
  static const Generators g;
  return g;
}

}  // namespace

void SpinSystemParams::validate() const {
  if (!(d_zfs_mhz > 0.0))
    throw std::invalid_argument("SpinSystemParams: d_zfs must be > 0");
  if (!(gamma_e_mhz_per_mt > 0.0))
    throw std::invalid_argument("SpinSystemParams: gamma_e must be > 0");
  if (!(std::abs(gamma_n_mhz_per_mt) / gamma_e_mhz_per_mt < 1e-3))
    throw std::invalid_argument(
        "SpinSystemParams: |gamma_n| / gamma_e must be below 1e-3");
}

Eigen::Matrix3d HyperfineTensor::matrix() const {
  Eigen::Matrix3d m;
  m << a_xx_mhz, 0.0, a_xz_mhz,  //
      0.0, a_yy_mhz, 0.0,        //
      a_xz_mhz, 0.0, a_zz_mhz;
  return m;
}

Eigen::Vector3d FieldOrientation::unit() const {
  const double t = theta_deg * constants::deg_to_rad;
  const double p = phi_deg * constants::deg_to_rad;
  return {std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)};
}

Eigen::Vector3d FieldOrientation::vector_mt() const { return b_mt * unit(); }

void FieldOrientation::validate() const {
  if (!(b_mt >= 0.0))
    throw std::invalid_argument("FieldOrientation: field magnitude must be >= 0");
  if (!std::isfinite(theta_deg) || !std::isfinite(phi_deg))
    throw std::invalid_argument("FieldOrientation: angles must be finite");
  if (theta_deg < -1e-9 || theta_deg > 180.0 + 1e-9)
    throw std::invalid_argument(
        "FieldOrientation: polar angle must lie in [0, 180] degrees");
}

MicrowaveField MicrowaveField::along(const Eigen::Vector3d& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::invalid_argument("MicrowaveField: direction must be non-zero");
  return MicrowaveField{v / n};
}

void MicrowaveField::validate() const {
  if (std::abs(direction.norm() - 1.0) > 1e-10)
    throw std::invalid_argument("MicrowaveField: direction must have unit norm");
}

bool EnergyLevels::any_ambiguous() const {
  for (const auto& l : labels)
    if (l.ambiguous) return true;
  return false;
}

int EnergyLevels::index_of(int ms, int branch) const {
  for (int k = 0; k < 6; ++k)
    if (labels[k].ms == ms && labels[k].branch == branch) return k;
  return -1;
}

std::array<Eigen::MatrixXcd, 3> spin_matrices(double spin_quantum_number) {
  const double j = spin_quantum_number;
  if (j != 1.0 && j != 0.5)
    throw std::invalid_argument("spin_matrices: supported spins are 1 and 1/2");
  const int dim = static_cast<int>(std::lround(2.0 * j + 1.0));
  Eigen::MatrixXcd jz = Eigen::MatrixXcd::Zero(dim, dim);
  Eigen::MatrixXcd jplus = Eigen::MatrixXcd::Zero(dim, dim);
  for (int k = 0; k < dim; ++k) {
    const double m = j - k;  // descending magnetic quantum number
    jz(k, k) = m;
    if (k > 0) {
      // <j, m+1 | J+ | j, m> = sqrt(j(j+1) - m(m+1))
      jplus(k - 1, k) = std::sqrt(j * (j + 1.0) - m * (m + 1.0));
    }
  }
  const Eigen::MatrixXcd jminus = jplus.adjoint();
  Eigen::MatrixXcd jx = (jplus + jminus) / 2.0;
  Eigen::MatrixXcd jy = (jplus - jminus) / (2.0 * kI);
  return {jx, jy, jz};
}

Matrix6cd build_hamiltonian(const SpinSystemParams& sys,
                            const HyperfineTensor& a,
                            const FieldOrientation& field) {
  sys.validate();
  field.validate();
  const Generators& g = generators();
  const Eigen::Vector3d b = field.vector_mt();

  Matrix6cd h = sys.d_zfs_mhz * g.sz2;
  for (int k = 0; k < 3; ++k) {
    h += sys.gamma_e_mhz_per_mt * b[k] * g.s[k];
    h += sys.gamma_n_mhz_per_mt * b[k] * g.i[k];
  }
  h += a.a_xx_mhz * g.hyperfine[0];
  h += a.a_yy_mhz * g.hyperfine[1];
  h += a.a_zz_mhz * g.hyperfine[2];
  h += a.a_xz_mhz * g.hyperfine[3];

  // The generators are exactly Hermitian, but enforce it bitwise so that
  // downstream eigensolves see a symmetric input regardless of rounding.
  h = ((h + Matrix6cd(h.adjoint())) / 2.0).eval();
  return h;
}

EnergyLevels eigensystem(const Matrix6cd& h) {
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if ((h - Matrix6cd(h.adjoint())).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw std::invalid_argument("eigensystem: input matrix is not Hermitian");

  Eigen::SelfAdjointEigenSolver<Matrix6cd> solver(h);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigensystem: eigensolver failed to converge");

  EnergyLevels levels;
  levels.eigenvalues = solver.eigenvalues();
  levels.eigenvectors = solver.eigenvectors();
  label_states(levels);
  return levels;
}

void label_states(EnergyLevels& levels) {
  // Squared overlap of eigenvector k with the m_S block rows {2e, 2e+1},
  // where e = 0, 1, 2 corresponds to m_S = +1, 0, -1.
  static constexpr int kBlockMs[3] = {+1, 0, -1};
  std::array<std::vector<int>, 3> members;
  for (int k = 0; k < 6; ++k) {
    double best = -1.0;
    int best_block = 0;
    for (int e = 0; e < 3; ++e) {
      const double ov = std::norm(levels.eigenvectors(2 * e, k)) +
                        std::norm(levels.eigenvectors(2 * e + 1, k));
      if (ov > best) {
        best = ov;
        best_block = e;
      }
    }
    levels.labels[k].ms = kBlockMs[best_block];
    levels.labels[k].overlap = best;
    levels.labels[k].ambiguous = best < constants::label_overlap_threshold;
    members[best_block].push_back(k);
  }
  // Branch index: order the states of each block by energy (eigenvalues are
  // already ascending, so the stored order within a block is the energy
  // order; ties keep the eigensolver's stable ordering).
  for (int e = 0; e < 3; ++e)
    for (std::size_t r = 0; r < members[e].size(); ++r)
      levels.labels[members[e][r]].branch = static_cast<int>(r);
  levels.labels_balanced = members[0].size() == 2 && members[1].size() == 2 &&
                           members[2].size() == 2;
}

const Matrix6cd& hamiltonian_derivative_tensor(int component) {
  if (component < 0 || component > 3)
    throw std::invalid_argument(
        "hamiltonian_derivative_tensor: component must be 0..3");
  return generators().hyperfine[static_cast<std::size_t>(component)];
}

const Matrix6cd& hamiltonian_derivative_d() { return generators().sz2; }

Matrix6cd hamiltonian_derivative_field(const SpinSystemParams& sys,
                                       const FieldOrientation& field) {
  const Generators& g = generators();
  const Eigen::Vector3d b = field.vector_mt();
  Matrix6cd out = Matrix6cd::Zero();
  for (int k = 0; k < 3; ++k) {
    out += sys.gamma_e_mhz_per_mt * b[k] * g.s[k];
    out += sys.gamma_n_mhz_per_mt * b[k] * g.i[k];
  }
  return out;
}

}  // namespace nvhf
