#include "nvhf/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nvhf/errors.hpp"
#include "nvhf/random.hpp"
#include "nvhf/spectra.hpp"
#include "nvhf/spin_core.hpp"

namespace nvhf {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

Eigen::MatrixXd solve_covariance(const Eigen::MatrixXd& jtj, double chi2,
                                 int dof, bool* ok) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
  *ok = lu.isInvertible();
  if (!*ok) return {};
  Eigen::MatrixXd cov = lu.inverse();
  const double s2 = dof > 0 ? chi2 / static_cast<double>(dof) : 1.0;
  cov *= s2;
  cov = ((cov + cov.transpose()) / 2.0).eval();  // enforce exact symmetry
  return cov;
}

}  // namespace

const OrientationRecord* MeasuredDataset::find_orientation(
    const std::string& id) const {
  for (const auto& o : orientations)
    if (o.id == id) return &o;
  return nullptr;
}

std::vector<LineRecord> MeasuredDataset::lines_for(const std::string& orient_id,
                                                   LineKind kind) const {
  std::vector<LineRecord> out;
  for (const auto& l : lines)
    if (l.orient_id == orient_id && l.kind == kind) out.push_back(l);
  std::stable_sort(out.begin(), out.end(),
                   [](const LineRecord& a, const LineRecord& b) {
                     return a.freq_mhz < b.freq_mhz;
                   });
  return out;
}

Eigen::MatrixXd central_difference_jacobian(const ResidualFn& residual,
                                            const Eigen::VectorXd& x,
                                            double rel_step) {
  const Eigen::VectorXd r0 = residual(x);
  Eigen::MatrixXd jac(r0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(std::abs(x[j]), 1.0);
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (residual(xp) - residual(xm)) / (2.0 * h);
  }
  return jac;
}

FitResult lm_minimize(const ResidualFn& residual, const Eigen::VectorXd& initial,
                      const LmOptions& options, const JacobianFn& jacobian) {
  FitResult result;
  result.parameters = initial;

  if (!initial.allFinite()) {
    result.message = "initial parameters are not finite";
    return result;
  }

  const auto jac_at = [&](const Eigen::VectorXd& x) {
    return jacobian ? jacobian(x) : central_difference_jacobian(residual, x);
  };

  Eigen::VectorXd x = initial;
  Eigen::VectorXd r = residual(x);
  double cost = r.squaredNorm();
  double lambda = options.initial_lambda;
  int stall_count = 0;
  bool singular_warning = false;

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (cost == 0.0) {
      result.converged = true;
      result.message = "exact fit (zero residual)";
      break;
    }
    const Eigen::MatrixXd jac = jac_at(x);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;

    // Marquardt scaling with a floor so parameters absent from the residual
    // do not produce a singular system outright.
    Eigen::VectorXd diag = jtj.diagonal();
    const double diag_floor = std::max(diag.maxCoeff(), 1.0) * 1e-14;
    for (Eigen::Index k = 0; k < diag.size(); ++k)
      diag[k] = std::max(diag[k], diag_floor);

    // Try an undamped Gauss-Newton step first (solves exactly linear
    // problems in one step), then escalate the damping until a step reduces
    // the cost.
    bool accepted = false;
    double try_lambda = 0.0;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::MatrixXd m = jtj;
      m.diagonal() += try_lambda * diag;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd step = ldlt.solve(-grad);
        if (step.allFinite()) {
          const Eigen::VectorXd x_new = x + step;
          const Eigen::VectorXd r_new = residual(x_new);
          const double cost_new =
              r_new.allFinite() ? r_new.squaredNorm()
                                : std::numeric_limits<double>::infinity();
          if (cost_new <= cost) {
            const double rel_step = step.norm() / (x.norm() + kEps);
            const double rel_decrease = (cost - cost_new) / (cost + kEps);
            x = x_new;
            r = r_new;
            cost = cost_new;
            accepted = true;
            lambda = std::max(try_lambda / 10.0, 1e-12);

            if (rel_step < options.step_tolerance) {
              result.converged = true;
              result.message = "converged: relative step below tolerance";
            } else if (rel_decrease < options.residual_tolerance) {
              if (++stall_count >= options.residual_stall_iterations) {
                result.converged = true;
                result.message =
                    "converged: relative residual decrease below tolerance";
              }
            } else {
              stall_count = 0;
            }
            break;
          }
        }
      } else {
        singular_warning = true;
      }
      // Escalate damping: 0 -> lambda -> 10 lambda -> ...
      try_lambda = try_lambda == 0.0 ? lambda : try_lambda * 10.0;
      if (try_lambda > 1e14) break;
    }

    if (!accepted) {
      result.message = singular_warning
                           ? "stalled: singular Jacobian persists under damping"
                           : "stalled: no damped step reduced the residual";
      break;
    }
    if (result.converged) {
      ++it;
      break;
    }
  }

  result.parameters = x;
  result.iterations = it;
  result.chi2 = cost;
  result.dof = static_cast<int>(r.size() - x.size());
  result.reduced_chi2 =
      result.dof > 0 ? result.chi2 / static_cast<double>(result.dof) : 0.0;
  if (!result.converged && result.message.empty())
    result.message = "not converged: iteration limit reached";

  if (result.converged) {
    const Eigen::MatrixXd jac = jac_at(x);
    bool cov_ok = false;
    result.covariance =
        solve_covariance(jac.transpose() * jac, result.chi2, result.dof, &cov_ok);
    if (!cov_ok)
      result.message += "; covariance unavailable (singular J^T J)";
  }
  return result;
}

ZqLinearFit fit_zq_linear(const std::vector<std::array<double, 3>>& data) {
  if (data.size() < 2)
    throw std::invalid_argument("fit_zq_linear: need at least 2 points");

  // Weighted normal equations in the basis {cos^2 phi, sin^2 phi}.
  Eigen::Matrix2d n = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  for (const auto& row : data) {
    const double phi = row[0] * constants::deg_to_rad;
    const double sigma = row[2];
    if (!(sigma > 0.0))
      throw std::invalid_argument("fit_zq_linear: uncertainties must be > 0");
    const double w = 1.0 / (sigma * sigma);
    const Eigen::Vector2d basis(std::cos(phi) * std::cos(phi),
                                std::sin(phi) * std::sin(phi));
    n += w * basis * basis.transpose();
    b += w * basis * row[1];
  }
  const double det = n(0, 0) * n(1, 1) - n(0, 1) * n(1, 0);
  if (det <= 1e-12 * std::max(n(0, 0) * n(1, 1), kEps))
    throw std::invalid_argument(
        "fit_zq_linear: rank-deficient design matrix; one coefficient is "
        "unidentifiable (all azimuths at nodes of cos^2 or sin^2)");
  const Eigen::Vector2d kappa = n.inverse() * b;

  ZqLinearFit fit;
  fit.kappa1_mhz = kappa[0];
  fit.kappa2_mhz = kappa[1];
  double chi2 = 0.0;
  for (const auto& row : data) {
    const double phi = row[0] * constants::deg_to_rad;
    const double model = kappa[0] * std::cos(phi) * std::cos(phi) +
                         kappa[1] * std::sin(phi) * std::sin(phi);
    const double z = (row[1] - model) / row[2];
    chi2 += z * z;
  }
  fit.chi2 = chi2;
  fit.dof = static_cast<int>(data.size()) - 2;
  const double s2 = fit.dof > 0 ? chi2 / fit.dof : 1.0;
  const Eigen::Matrix2d cov = s2 * n.inverse();
  fit.kappa1_sigma_mhz = std::sqrt(std::max(cov(0, 0), 0.0));
  fit.kappa2_sigma_mhz = std::sqrt(std::max(cov(1, 1), 0.0));
  fit.covariance01 = cov(0, 1);
  return fit;
}

LorentzianFit fit_lorentzian(const std::vector<std::array<double, 3>>& data) {
  if (data.size() < 4)
    throw std::invalid_argument(
        "fit_lorentzian: need at least 4 points spanning the peak");

  double phi_lo = data[0][0], phi_hi = data[0][0];
  std::size_t peak_idx = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    phi_lo = std::min(phi_lo, data[k][0]);
    phi_hi = std::max(phi_hi, data[k][0]);
    if (data[k][1] > data[peak_idx][1]) peak_idx = k;
  }
  const double span = phi_hi - phi_lo;
  const double peak_phi = data[peak_idx][0];
  const double peak_val = data[peak_idx][1];

  // Half-width estimate: nearest distance at which the data falls below half
  // the peak; defaults to span / 6 when the peak never decays that far.
  double b0 = span / 6.0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& row : data) {
    if (row[1] <= peak_val / 2.0) {
      best_dist = std::min(best_dist, std::abs(row[0] - peak_phi));
    }
  }
  if (std::isfinite(best_dist) && best_dist > 0.0) b0 = best_dist;
  const double a0 = peak_val * b0;

  const auto weight = [&](std::size_t k) {
    const double sigma = data[k][2];
    return sigma > 0.0 ? 1.0 / sigma : 1.0;
  };
  const auto residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double dx = data[k][0] - p[2];
      const double denom = dx * dx + p[1] * p[1];
      r[static_cast<Eigen::Index>(k)] =
          weight(k) * (p[0] * p[1] / denom - data[k][1]);
    }
    return r;
  };
  const auto jacobian = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(data.size()), 3);
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double w = weight(k);
      const double dx = data[k][0] - p[2];
      const double denom = dx * dx + p[1] * p[1];
      const auto row = static_cast<Eigen::Index>(k);
      jac(row, 0) = w * p[1] / denom;
      jac(row, 1) = w * p[0] * (dx * dx - p[1] * p[1]) / (denom * denom);
      jac(row, 2) = w * p[0] * p[1] * 2.0 * dx / (denom * denom);
    }
    return jac;
  };

  Eigen::VectorXd p0(3);
  p0 << a0, b0, peak_phi;
  FitResult fit = lm_minimize(residual, p0, {}, jacobian);

  LorentzianFit out;
  out.detail = fit;
  out.detail.names = {"a", "b_deg", "phi1_deg"};
  out.a = fit.parameters[0];
  out.b_deg = std::abs(fit.parameters[1]);  // the model is even in b
  out.phi1_deg = fit.parameters[2];
  if (fit.converged && fit.covariance.size() == 9) {
    out.a_sigma = std::sqrt(std::max(fit.covariance(0, 0), 0.0));
    out.b_sigma_deg = std::sqrt(std::max(fit.covariance(1, 1), 0.0));
    out.phi1_sigma_deg = std::sqrt(std::max(fit.covariance(2, 2), 0.0));
  }
  out.peak_resolved = fit.converged && out.b_deg < span;
  return out;
}

// ---------------------------------------------------------------------------
// Orientation fit
// ---------------------------------------------------------------------------

namespace {

Eigen::Vector3d unit_from_angles(double polar_deg, double azimuth_deg) {
  const double t = polar_deg * constants::deg_to_rad;
  const double p = azimuth_deg * constants::deg_to_rad;
  return {std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)};
}

// Transition frequencies of the bare S = 1 center (no nucleus) at polar
// angle theta from its axis: the two transitions from the m_S = 0-like
// ground state, ascending.
std::array<double, 2> electron_only_lines(double d, double geb, double theta_deg) {
  const double t = theta_deg * constants::deg_to_rad;
  Eigen::Matrix3cd h = Eigen::Matrix3cd::Zero();
  const auto s = spin_matrices(1.0);
  h += d * (s[2] * s[2]).cast<std::complex<double>>();
  h += geb * (std::sin(t) * s[0] + std::cos(t) * s[2]);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> solver(h);
  const auto& ev = solver.eigenvalues();
  return {ev[1] - ev[0], ev[2] - ev[0]};
}

struct OrientationProblem {
  std::vector<Eigen::Vector3d> lab_dirs;
  std::vector<double> b_mags;
  std::vector<std::vector<double>> freqs;   // sorted measured frequencies
  std::vector<std::vector<double>> sigmas;  // matching uncertainties
  int total_lines = 0;
};

// Checks the orientations are non-coplanar: smallest eigenvalue of the
// direction second-moment matrix sum(u u^T) must be well away from zero.
void require_non_coplanar(const std::vector<Eigen::Vector3d>& dirs) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& u : dirs) m += u * u.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(m);
  if (solver.eigenvalues()[0] < 1e-4 * static_cast<double>(dirs.size()))
    throw std::invalid_argument(
        "fit_orientation: field orientations are coplanar; the axis "
        "direction is unidentifiable");
}

}  // namespace

OrientationFit fit_orientation(const MeasuredDataset& dataset,
                               OrientationModelKind model_kind,
                               const SpinSystemParams& base,
                               const OrientationFitOptions& options) {
  OrientationProblem prob;
  for (const auto& o : dataset.orientations) {
    if (o.frame != Frame::lab)
      throw std::invalid_argument(
          "fit_orientation: needs lab-frame orientations (frame=lab)");
    const auto lines = dataset.lines_for(o.id, LineKind::esr);
    if (lines.empty()) continue;
    const std::size_t expected =
        model_kind == OrientationModelKind::electron_only ? 2 : 8;
    if (lines.size() > expected)
      throw DataError("fit_orientation: orientation '" + o.id + "' carries " +
                      std::to_string(lines.size()) +
                      " electron-spin lines, more than the model's " +
                      std::to_string(expected));
    prob.lab_dirs.push_back(unit_from_angles(o.angle1_deg, o.angle2_deg));
    prob.b_mags.push_back(o.b_mt);
    std::vector<double> f, s;
    for (const auto& l : lines) {
      f.push_back(l.freq_mhz);
      s.push_back(l.sigma_mhz);
    }
    prob.freqs.push_back(std::move(f));
    prob.sigmas.push_back(std::move(s));
    prob.total_lines += static_cast<int>(lines.size());
  }
  if (prob.lab_dirs.size() < 3)
    throw std::invalid_argument(
        "fit_orientation: need at least 3 orientations carrying "
        "electron-spin lines");
  require_non_coplanar(prob.lab_dirs);

  double b_mean = 0.0;
  for (double b : prob.b_mags) b_mean += b;
  b_mean /= static_cast<double>(prob.b_mags.size());
  if (!(b_mean > 0.0))
    throw std::invalid_argument("fit_orientation: field magnitudes must be > 0");

  // Moment-based starting estimates for D and gamma_e*B: the two-line mean
  // approximates D and the largest half-splitting approximates gamma_e*B.
  double d0 = 0.0;
  double geb0 = 0.0;
  for (const auto& f : prob.freqs) {
    d0 += (f.front() + f.back()) / 2.0;
    geb0 = std::max(geb0, (f.back() - f.front()) / 2.0);
  }
  d0 /= static_cast<double>(prob.freqs.size());
  if (geb0 <= 0.0) geb0 = 1.0;

  const bool with_hf = model_kind == OrientationModelKind::with_hyperfine;
  const int n_params = with_hf ? 6 : 4;

  SpinSystemParams sys = base;

  // Residuals for parameters (polar, azimuth, D, field scale[, k_axial,
  // k_perp]). Order-preserving matching on sorted frequency lists.
  const auto residual = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(prob.total_lines);
    Eigen::Index at = 0;
    const Eigen::Vector3d axis = unit_from_angles(p[0], p[1]);
    for (std::size_t k = 0; k < prob.lab_dirs.size(); ++k) {
      const double cos_t =
          std::clamp(axis.dot(prob.lab_dirs[k]), -1.0, 1.0);
      const double theta = std::acos(cos_t) * constants::rad_to_deg;
      std::vector<double> model;
      if (!with_hf) {
        const auto two = electron_only_lines(
            p[2], sys.gamma_e_mhz_per_mt * p[3] * prob.b_mags[k], theta);
        model = {two[0], two[1]};
      } else {
        SpinSystemParams s2 = sys;
        s2.d_zfs_mhz = p[2];
        HyperfineTensor axial{p[5], p[5], p[4], 0.0};
        const FieldOrientation field{p[3] * prob.b_mags[k], theta, 0.0};
        try {
          const EnergyLevels levels =
              eigensystem(build_hamiltonian(s2, axial, field));
          for (const auto& line : esr_lines(levels, MicrowaveField{}, s2))
            model.push_back(line.freq_mhz);
        } catch (const std::exception&) {
          // Unphysical trial point (labels lost); report a huge misfit so
          // the step is rejected.
          for (Eigen::Index j = 0;
               j < static_cast<Eigen::Index>(prob.freqs[k].size()); ++j)
            r[at++] = 1e6;
          continue;
        }
      }
      // Order-preserving nearest assignment of the sorted measured lines to
      // the sorted model lines (subsets allowed).
      const auto& meas = prob.freqs[k];
      const auto& sig = prob.sigmas[k];
      const std::size_t nm = model.size();
      std::size_t next_free = 0;
      for (std::size_t j = 0; j < meas.size(); ++j) {
        // Greedy: choose the closest remaining model line that leaves enough
        // model lines for the remaining measurements.
        std::size_t best = next_free;
        double best_d = std::numeric_limits<double>::infinity();
        const std::size_t last_allowed = nm - (meas.size() - j);
        for (std::size_t m = next_free; m <= last_allowed; ++m) {
          const double dist = std::abs(meas[j] - model[m]);
          if (dist < best_d) {
            best_d = dist;
            best = m;
          }
        }
        r[at++] = (model[best] - meas[j]) / sig[j];
        next_free = best + 1;
      }
    }
    return r;
  };

  // Coarse grid over the axis sphere for a robust start, then LM refinement.
  double best_cost = std::numeric_limits<double>::infinity();
  double best_polar = 0.0, best_azimuth = 0.0;
  const double step = options.grid_step_deg;
  for (double polar = 0.0; polar <= 180.0 + 1e-9; polar += step) {
    for (double azimuth = 0.0; azimuth < 360.0 - 1e-9; azimuth += step) {
      Eigen::VectorXd p(n_params);
      p[0] = polar;
      p[1] = azimuth;
      p[2] = d0;
      p[3] = geb0 / (sys.gamma_e_mhz_per_mt * b_mean);
      if (with_hf) {
        p[4] = options.k_axial_mhz;
        p[5] = options.k_perp_mhz;
      }
      const double cost = residual(p).squaredNorm();
      if (cost < best_cost) {
        best_cost = cost;
        best_polar = polar;
        best_azimuth = azimuth;
      }
      if (polar == 0.0 || polar == 180.0) break;  // azimuth degenerate at poles
    }
  }

  Eigen::VectorXd p0(n_params);
  p0[0] = best_polar;
  p0[1] = best_azimuth;
  p0[2] = d0;
  p0[3] = geb0 / (sys.gamma_e_mhz_per_mt * b_mean);
  if (with_hf) {
    p0[4] = options.k_axial_mhz;
    p0[5] = options.k_perp_mhz;
  }
  FitResult fit = lm_minimize(residual, p0, options.lm);
  fit.names = with_hf
                  ? std::vector<std::string>{"axis_polar_deg", "axis_azimuth_deg",
                                             "d_mhz", "field_scale",
                                             "k_axial_mhz", "k_perp_mhz"}
                  : std::vector<std::string>{"axis_polar_deg", "axis_azimuth_deg",
                                             "d_mhz", "field_scale"};

  OrientationFit out;
  out.detail = fit;
  // Canonicalize the axis: report with polar angle in [0, 90] (n and -n are
  // physically equivalent).
  Eigen::Vector3d axis = unit_from_angles(fit.parameters[0], fit.parameters[1]);
  if (axis[2] < 0.0) axis = -axis;
  out.axis_polar_deg = std::acos(std::clamp(axis[2], -1.0, 1.0)) *
                       constants::rad_to_deg;
  out.axis_azimuth_deg =
      std::atan2(axis[1], axis[0]) * constants::rad_to_deg;
  if (out.axis_azimuth_deg < 0.0) out.axis_azimuth_deg += 360.0;
  out.d_mhz = fit.parameters[2];
  out.geb_mhz = sys.gamma_e_mhz_per_mt * fit.parameters[3] * b_mean;
  if (with_hf) {
    out.k_axial_mhz = fit.parameters[4];
    out.k_perp_mhz = fit.parameters[5];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Combined hyperfine fit
// ---------------------------------------------------------------------------

namespace {

struct HyperfineProblem {
  std::vector<FieldOrientation> fields;
  std::vector<std::vector<double>> esr_freqs;   // sorted per orientation
  std::vector<std::vector<double>> esr_sigmas;
  std::vector<std::vector<double>> zq_freqs;
  std::vector<std::vector<double>> zq_sigmas;
  int total_residuals = 0;
  std::string lines_used;
};

HyperfineProblem build_hyperfine_problem(const MeasuredDataset& dataset) {
  HyperfineProblem prob;
  std::ostringstream used;
  for (const auto& o : dataset.orientations) {
    if (o.frame != Frame::nv)
      throw std::invalid_argument(
          "fit_hyperfine_full: needs NV-frame orientations (frame=nv)");
    const auto esr = dataset.lines_for(o.id, LineKind::esr);
    const auto zq = dataset.lines_for(o.id, LineKind::zero_quantum);
    if (esr.empty() && zq.empty()) continue;
    if (esr.size() > 8)
      throw DataError("fit_hyperfine_full: orientation '" + o.id +
                      "' carries more than 8 electron-spin lines");
    if (zq.size() > 1)
      throw DataError("fit_hyperfine_full: orientation '" + o.id +
                      "' carries more than one zero-quantum line");
    prob.fields.push_back(
        FieldOrientation{o.b_mt, o.angle1_deg, o.angle2_deg});
    std::vector<double> ef, es, zf, zs;
    for (const auto& l : esr) {
      ef.push_back(l.freq_mhz);
      es.push_back(l.sigma_mhz);
    }
    for (const auto& l : zq) {
      zf.push_back(l.freq_mhz);
      zs.push_back(l.sigma_mhz);
    }
    prob.total_residuals += static_cast<int>(ef.size() + zf.size());
    used << o.id << ": " << ef.size() << " esr + " << zf.size() << " zq; ";
    prob.esr_freqs.push_back(std::move(ef));
    prob.esr_sigmas.push_back(std::move(es));
    prob.zq_freqs.push_back(std::move(zf));
    prob.zq_sigmas.push_back(std::move(zs));
  }
  if (prob.fields.empty())
    throw std::invalid_argument(
        "fit_hyperfine_full: dataset contains no usable lines");
  prob.lines_used = used.str();
  return prob;
}

// Order-preserving assignment of sorted measured lines to sorted model lines;
// returns the chosen model index for each measured line.
std::vector<std::size_t> assign_sorted(const std::vector<double>& meas,
                                       const std::vector<double>& model) {
  std::vector<std::size_t> pick(meas.size());
  std::size_t next_free = 0;
  for (std::size_t j = 0; j < meas.size(); ++j) {
    std::size_t best = next_free;
    double best_d = std::numeric_limits<double>::infinity();
    const std::size_t last_allowed = model.size() - (meas.size() - j);
    for (std::size_t m = next_free; m <= last_allowed; ++m) {
      const double d = std::abs(meas[j] - model[m]);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    pick[j] = best;
    next_free = best + 1;
  }
  return pick;
}

// Parameters: (a_xx, a_yy, a_zz, a_xz, D, field_scale).
struct HyperfineModelEval {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
};

HyperfineModelEval eval_hyperfine_model(const HyperfineProblem& prob,
                                        const SpinSystemParams& base,
                                        const Eigen::VectorXd& p,
                                        bool want_jacobian) {
  HyperfineModelEval out;
  out.residual.resize(prob.total_residuals);
  if (want_jacobian) out.jacobian.resize(prob.total_residuals, 6);

  SpinSystemParams sys = base;
  sys.d_zfs_mhz = p[4];
  const HyperfineTensor tensor{p[0], p[1], p[2], p[3]};

  Eigen::Index at = 0;
  for (std::size_t k = 0; k < prob.fields.size(); ++k) {
    FieldOrientation field = prob.fields[k];
    field.b_mt *= p[5];
    const Matrix6cd h = build_hamiltonian(sys, tensor, field);
    const EnergyLevels levels = eigensystem(h);

    // Model line set. Transitions are identified by their level index pair
    // so that derivatives can use first-order perturbation theory.
    struct ModelLine {
      double freq;
      int lower, upper;
    };
    std::vector<ModelLine> esr_model;
    std::vector<int> zero_states, excited_states;
    for (int s = 0; s < 6; ++s)
      (levels.labels[s].ms == 0 ? zero_states : excited_states).push_back(s);
    if (zero_states.size() != 2)
      throw std::runtime_error(
          "fit_hyperfine_full: lost the m_S = 0 pair at a trial point");
    for (int lo : zero_states)
      for (int up : excited_states)
        esr_model.push_back(
            {levels.eigenvalues[up] - levels.eigenvalues[lo], lo, up});
    std::sort(esr_model.begin(), esr_model.end(),
              [](const ModelLine& a, const ModelLine& b) {
                return a.freq < b.freq;
              });

    // Per-level parameter gradients <k| dH/dp |k> (first-order perturbation
    // theory; exact away from degeneracies).
    Eigen::MatrixXd level_grad;
    if (want_jacobian) {
      level_grad.resize(6, 6);
      const Matrix6cd dh_field = hamiltonian_derivative_field(sys, field) *
                                 (1.0 / p[5]);
      for (int s = 0; s < 6; ++s) {
        const auto v = levels.eigenvectors.col(s);
        for (int c = 0; c < 4; ++c)
          level_grad(s, c) =
              v.dot(hamiltonian_derivative_tensor(c) * v).real();
        level_grad(s, 4) = v.dot(hamiltonian_derivative_d() * v).real();
        level_grad(s, 5) = v.dot(dh_field * v).real();
      }
    }

    std::vector<double> model_freqs(esr_model.size());
    for (std::size_t m = 0; m < esr_model.size(); ++m)
      model_freqs[m] = esr_model[m].freq;

    const auto& meas = prob.esr_freqs[k];
    if (!meas.empty()) {
      const auto pick = assign_sorted(meas, model_freqs);
      for (std::size_t j = 0; j < meas.size(); ++j) {
        const ModelLine& line = esr_model[pick[j]];
        const double w = 1.0 / prob.esr_sigmas[k][j];
        out.residual[at] = w * (line.freq - meas[j]);
        if (want_jacobian)
          out.jacobian.row(at) =
              w * (level_grad.row(line.upper) - level_grad.row(line.lower));
        ++at;
      }
    }
    for (std::size_t j = 0; j < prob.zq_freqs[k].size(); ++j) {
      const int z0 = zero_states[0];
      const int z1 = zero_states[1];
      const double model_zq =
          std::abs(levels.eigenvalues[z1] - levels.eigenvalues[z0]);
      const double sign =
          levels.eigenvalues[z1] >= levels.eigenvalues[z0] ? 1.0 : -1.0;
      const double w = 1.0 / prob.zq_sigmas[k][j];
      out.residual[at] = w * (model_zq - prob.zq_freqs[k][j]);
      if (want_jacobian)
        out.jacobian.row(at) =
            w * sign * (level_grad.row(z1) - level_grad.row(z0));
      ++at;
    }
  }
  return out;
}

HyperfineCandidate run_single_hyperfine_fit(const HyperfineProblem& prob,
                                            const SpinSystemParams& base,
                                            const Eigen::VectorXd& p0,
                                            double b_mean,
                                            const LmOptions& lm) {
  const auto residual = [&](const Eigen::VectorXd& p) {
    return eval_hyperfine_model(prob, base, p, false).residual;
  };
  const auto jacobian = [&](const Eigen::VectorXd& p) {
    return eval_hyperfine_model(prob, base, p, true).jacobian;
  };
  FitResult fit = lm_minimize(residual, p0, lm, jacobian);
  fit.names = {"a_xx_mhz", "a_yy_mhz", "a_zz_mhz",
               "a_xz_mhz", "d_mhz",    "field_scale"};

  HyperfineCandidate cand;
  cand.tensor = HyperfineTensor{fit.parameters[0], fit.parameters[1],
                                fit.parameters[2], fit.parameters[3]};
  cand.d_mhz = fit.parameters[4];
  cand.field_scale = fit.parameters[5];
  cand.geb_mhz = base.gamma_e_mhz_per_mt * fit.parameters[5] * b_mean;
  cand.det = det_sign(cand.tensor).sign;
  cand.fit = std::move(fit);
  return cand;
}

double candidate_distance(const HyperfineCandidate& a,
                          const HyperfineCandidate& b) {
  return std::max({std::abs(a.tensor.a_xx_mhz - b.tensor.a_xx_mhz),
                   std::abs(a.tensor.a_yy_mhz - b.tensor.a_yy_mhz),
                   std::abs(a.tensor.a_zz_mhz - b.tensor.a_zz_mhz),
                   std::abs(a.tensor.a_xz_mhz - b.tensor.a_xz_mhz)});
}

double mean_field(const HyperfineProblem& prob) {
  double b = 0.0;
  for (const auto& f : prob.fields) b += f.b_mt;
  return b / static_cast<double>(prob.fields.size());
}

}  // namespace

FullFitOutcome fit_hyperfine_full(const MeasuredDataset& dataset,
                                  const FullFitConstraints& constraints,
                                  const HyperfineTensor& initial,
                                  const SpinSystemParams& base,
                                  const FullFitOptions& options) {
  const HyperfineProblem prob = build_hyperfine_problem(dataset);
  const double b_mean = mean_field(prob);

  FullFitOutcome outcome;
  outcome.lines_used = prob.lines_used;

  // Seeds: the supplied tensor, its determinant-flipped twin (a_yy negated;
  // the even sign flips of equivalent_solutions cannot reach the other
  // determinant branch), and optional dispersed starts.
  std::vector<Eigen::VectorXd> starts;
  const auto make_start = [&](const HyperfineTensor& t) {
    Eigen::VectorXd p(6);
    p << t.a_xx_mhz, t.a_yy_mhz, t.a_zz_mhz, t.a_xz_mhz, base.d_zfs_mhz, 1.0;
    return p;
  };
  starts.push_back(make_start(initial));
  HyperfineTensor flipped = initial;
  flipped.a_yy_mhz = -flipped.a_yy_mhz;
  starts.push_back(make_start(flipped));
  RandomStream rng(options.seed);
  for (int k = 0; k < options.n_starts; ++k) {
    HyperfineTensor t = initial;
    t.a_xx_mhz *= 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
    t.a_yy_mhz *= (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
    t.a_zz_mhz *= 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
    t.a_xz_mhz *= (k % 4 < 2 ? 1.0 : -1.0) * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
    starts.push_back(make_start(t));
  }

  // Local optimum per start, then expansion through the equivalence group
  // and a short re-polish of each member (with the physical nuclear Zeeman
  // term the four members are only near-equivalent, so each gets its own
  // optimum and chi^2).
  std::vector<HyperfineCandidate> pool;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    HyperfineCandidate cand =
        run_single_hyperfine_fit(prob, base, starts[s], b_mean, options.lm);
    if (!cand.fit.converged) {
      outcome.diagnostics.push_back("start " + std::to_string(s) +
                                    " did not converge: " + cand.fit.message);
      continue;
    }
    EquivalenceCheckOptions eq = options.equivalence;
    eq.sys = base;
    eq.b_mt = b_mean;
    const EquivalentSolutions equiv = equivalent_solutions(cand.tensor, eq);
    for (const HyperfineTensor& t : equiv.solutions) {
      Eigen::VectorXd p(6);
      p << t.a_xx_mhz, t.a_yy_mhz, t.a_zz_mhz, t.a_xz_mhz,
          cand.fit.parameters[4], cand.fit.parameters[5];
      HyperfineCandidate member =
          run_single_hyperfine_fit(prob, base, p, b_mean, options.lm);
      if (member.fit.converged) pool.push_back(std::move(member));
    }
  }

  // Deduplicate converged optima and rank by chi^2.
  std::sort(pool.begin(), pool.end(),
            [](const HyperfineCandidate& a, const HyperfineCandidate& b) {
              return a.fit.chi2 < b.fit.chi2;
            });
  std::vector<HyperfineCandidate> unique;
  for (auto& cand : pool) {
    bool dup = false;
    for (const auto& kept : unique)
      if (candidate_distance(cand, kept) < options.dedup_tol_mhz) {
        dup = true;
        break;
      }
    if (!dup) unique.push_back(std::move(cand));
  }

  // Constraint filters.
  for (auto& cand : unique) {
    if (constraints.det == FullFitConstraints::Det::positive && cand.det <= 0) {
      outcome.diagnostics.push_back(
          "candidate with det < 0 rejected by det-sign constraint (chi2 " +
          std::to_string(cand.fit.chi2) + ")");
      continue;
    }
    if (constraints.det == FullFitConstraints::Det::negative && cand.det >= 0) {
      outcome.diagnostics.push_back(
          "candidate with det > 0 rejected by det-sign constraint (chi2 " +
          std::to_string(cand.fit.chi2) + ")");
      continue;
    }
    if (constraints.rabi_bound_enabled) {
      const auto& t = cand.tensor;
      const bool same_sign = t.a_xx_mhz * t.a_zz_mhz > 0.0;
      if (same_sign && t.a_zz_mhz != 0.0 &&
          std::abs(t.a_xz_mhz / t.a_zz_mhz) >= constraints.rabi_bound) {
        outcome.diagnostics.push_back(
            "candidate rejected by Rabi-ratio bound |a_xz/a_zz| < " +
            std::to_string(constraints.rabi_bound));
        continue;
      }
    }
    outcome.candidates.push_back(cand);
  }
  if (outcome.candidates.empty() && outcome.diagnostics.empty())
    outcome.diagnostics.push_back("no start converged");
  return outcome;
}

std::vector<HyperfineCandidate> multi_start_hyperfine(
    const MeasuredDataset& dataset, const HyperfineTensor& initial,
    int n_starts, std::uint64_t seed, const SpinSystemParams& base,
    const LmOptions& lm) {
  if (n_starts < 1)
    throw std::invalid_argument("multi_start_hyperfine: n_starts must be >= 1");
  const HyperfineProblem prob = build_hyperfine_problem(dataset);
  const double b_mean = mean_field(prob);

  RandomStream rng(seed);
  std::vector<HyperfineCandidate> found;
  for (int k = 0; k < n_starts; ++k) {
    HyperfineTensor t = initial;
    if (k > 0) {
      // Dispersion: +-50% per magnitude, alternating a_xz sign branch.
      t.a_xx_mhz *= 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
      t.a_yy_mhz *= 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
      t.a_zz_mhz *= 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
      t.a_xz_mhz *= (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * rng.uniform(-1.0, 1.0));
    }
    Eigen::VectorXd p0(6);
    p0 << t.a_xx_mhz, t.a_yy_mhz, t.a_zz_mhz, t.a_xz_mhz, base.d_zfs_mhz, 1.0;
    HyperfineCandidate cand =
        run_single_hyperfine_fit(prob, base, p0, b_mean, lm);
    if (!cand.fit.converged) continue;
    bool dup = false;
    for (const auto& kept : found)
      if (candidate_distance(cand, kept) < 0.1) {
        dup = true;
        break;
      }
    if (!dup) found.push_back(std::move(cand));
  }
  std::sort(found.begin(), found.end(),
            [](const HyperfineCandidate& a, const HyperfineCandidate& b) {
              return a.fit.chi2 < b.fit.chi2;
            });
  return found;
}

}  // namespace nvhf
