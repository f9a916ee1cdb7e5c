#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nvhf/dataset.hpp"
#include "nvhf/tensor_analysis.hpp"
#include "nvhf/types.hpp"

namespace nvhf {

// ---------------------------------------------------------------------------
// Generic Levenberg-Marquardt minimizer
// ---------------------------------------------------------------------------

struct LmOptions {
  int max_iterations = 500;
  // Converged when the relative step |dx| / (|x| + eps) falls below this ...
  double step_tolerance = 1e-10;
  // ... or when the relative residual decrease stays below this for
  // residual_stall_iterations consecutive accepted iterations.
  double residual_tolerance = 1e-12;
  int residual_stall_iterations = 3;
  double initial_lambda = 1e-3;
};

struct FitResult {
  Eigen::VectorXd parameters;
  std::vector<std::string> names;  // optional parameter names/units
  double chi2 = 0.0;               // sum of squared (weighted) residuals
  int dof = 0;                     // residual count minus parameter count
  double reduced_chi2 = 0.0;       // chi2 / dof (0 when dof <= 0)
  // Covariance of the parameters, (J^T J)^-1 scaled by the residual variance
  // chi2 / dof; symmetric positive semidefinite; empty unless converged.
  Eigen::MatrixXd covariance;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

// Levenberg-Marquardt descent on 0.5 * |r(x)|^2. Each iteration first
// attempts an undamped Gauss-Newton step and falls back to increasingly
// damped steps, so exactly linear problems converge in <= 2 iterations. A
// singular Jacobian is handled by the damping (and reported in the message
// if the solver stalls on it). When no analytic Jacobian is supplied,
// central finite differences are used.
FitResult lm_minimize(const ResidualFn& residual,
                      const Eigen::VectorXd& initial,
                      const LmOptions& options = {},
                      const JacobianFn& jacobian = {});

// Central-difference Jacobian used as the numeric fallback and by tests to
// validate analytic Jacobians.
Eigen::MatrixXd central_difference_jacobian(const ResidualFn& residual,
                                            const Eigen::VectorXd& x,
                                            double rel_step = 1e-6);

// ---------------------------------------------------------------------------
// Zero-quantum azimuthal fit (closed-form weighted linear least squares)
// ---------------------------------------------------------------------------

// Fits measured zero-quantum frequencies Delta(phi) to
//   kappa1 cos^2(phi) + kappa2 sin^2(phi)
// by weighted linear least squares in the basis {cos^2, sin^2} (closed-form
// normal equations; exact on noiseless data). Parameter uncertainties come
// from the inverse normal matrix scaled by the residual variance.
// Input rows are (phi_deg, delta_mhz, sigma_mhz). Throws
// std::invalid_argument when the design matrix is rank deficient (e.g. all
// phi at nodes of cos^2 or sin^2, leaving one coefficient unidentifiable).
struct ZqLinearFit {
  double kappa1_mhz = 0.0;
  double kappa2_mhz = 0.0;
  double kappa1_sigma_mhz = 0.0;
  double kappa2_sigma_mhz = 0.0;
  double covariance01 = 0.0;
  double chi2 = 0.0;
  int dof = 0;
};
ZqLinearFit fit_zq_linear(const std::vector<std::array<double, 3>>& data);

// ---------------------------------------------------------------------------
// Lorentzian amplitude-ratio fit
// ---------------------------------------------------------------------------

// Fits (phi, ratio[, sigma]) data to the Lorentzian a*b / ((phi-phi1)^2 +
// b^2) with an analytic Jacobian. The initial guess places phi1 at the
// argmax, estimates b from the half width and a from peak * b. Requires at
// least 4 points. Non-convergence is reported through the embedded
// FitResult; peak_resolved is false when the fitted width exceeds the data
// span (no resolvable peak, b effectively unbounded).
struct LorentzianFit {
  double a = 0.0;
  double b_deg = 0.0;
  double phi1_deg = 0.0;
  double a_sigma = 0.0;
  double b_sigma_deg = 0.0;
  double phi1_sigma_deg = 0.0;
  bool peak_resolved = false;
  FitResult detail;
};
LorentzianFit fit_lorentzian(const std::vector<std::array<double, 3>>& data);

// ---------------------------------------------------------------------------
// NV-axis / orientation fit (lab-frame datasets)
// ---------------------------------------------------------------------------

// Model used to generate transition frequencies in the orientation fit:
//   electron_only  : bare S = 1 center (two lines per orientation), the
//                    reference model for a center without a coupled nucleus
//   with_hyperfine : 6-level model with an axially symmetric coupling
//                    diag(k_perp, k_perp, k_axial) (eight lines per
//                    orientation); both models are azimuthally symmetric
//                    about the NV axis, which is what makes a lab-frame fit
//                    of just the axis direction well posed.
enum class OrientationModelKind { electron_only, with_hyperfine };

struct OrientationFitOptions {
  LmOptions lm{};
  // Coarse grid step (degrees) for the initial axis search.
  double grid_step_deg = 15.0;
  // Initial guesses for the axial coupling magnitudes (with_hyperfine only).
  double k_axial_mhz = 120.0;
  double k_perp_mhz = 120.0;
};

// Result: NV z-axis direction in the lab frame (polar/azimuth, defined up to
// the physically equivalent inversion n -> -n), zero-field splitting, the
// electron Zeeman strength gamma_e * B at the mean field magnitude, and the
// axial coupling magnitudes when fitted.
struct OrientationFit {
  double axis_polar_deg = 0.0;
  double axis_azimuth_deg = 0.0;
  double d_mhz = 0.0;
  double geb_mhz = 0.0;
  double k_axial_mhz = 0.0;
  double k_perp_mhz = 0.0;
  FitResult detail;
};

// Fits the NV axis, D, and the field scale (plus axial hyperfine magnitudes
// for with_hyperfine) to electron-spin lines measured at lab-frame field
// directions. Requires at least 3 orientations whose directions are
// non-coplanar (checked through the smallest eigenvalue of the direction
// second-moment matrix); coplanar input is rejected with
// std::invalid_argument since the axis is then unidentifiable.
OrientationFit fit_orientation(const MeasuredDataset& dataset,
                               OrientationModelKind model_kind,
                               const SpinSystemParams& base,
                               const OrientationFitOptions& options = {});

// ---------------------------------------------------------------------------
// Combined hyperfine-tensor fit
// ---------------------------------------------------------------------------

struct FullFitConstraints {
  enum class Det { any, positive, negative };
  Det det = Det::any;
  // Exclusion rule: when a_xx and a_zz share a sign, |a_xz / a_zz| must stay
  // below rabi_bound (a bound inferred from Rabi-frequency ratios of line
  // pairs separated by the zero-quantum frequency).
  bool rabi_bound_enabled = false;
  double rabi_bound = 0.3;
};

struct HyperfineCandidate {
  HyperfineTensor tensor;
  double d_mhz = 0.0;
  double field_scale = 1.0;  // fitted multiplier on the recorded |B| values
  double geb_mhz = 0.0;      // gamma_e * scale * mean(|B|)
  int det = 0;
  FitResult fit;
};

struct FullFitOptions {
  LmOptions lm{};
  // Number of dispersed starts (in addition to the supplied initial tensor
  // and its determinant-flipped twin, which are always tried).
  int n_starts = 0;
  std::uint64_t seed = 1;
  // Parameter-space distance below which two converged optima are considered
  // the same solution.
  double dedup_tol_mhz = 0.1;
  EquivalenceCheckOptions equivalence{};
};

struct FullFitOutcome {
  // Surviving candidates ranked by chi^2 (ascending). Empty when no
  // candidate converged or all were filtered out; diagnostics then explain
  // what happened to each start/candidate.
  std::vector<HyperfineCandidate> candidates;
  bool axz_sign_freedom = true;
  std::string lines_used;  // which measured lines entered the fit
  std::vector<std::string> diagnostics;
};

// Combined weighted fit of the hyperfine tensor (a_xx, a_yy, a_zz, a_xz)
// plus nuisance parameters D and field scale against exact-diagonalization
// frequencies, over NV-frame orientations carrying electron-spin and
// zero-quantum lines. Measured lines are matched to model lines by
// order-preserving nearest assignment on the frequency-sorted lists (any
// subset of the 8 electron-spin lines is accepted; more measured than model
// lines is an input error). Converged optima are expanded through
// equivalent_solutions, re-polished, deduplicated, filtered by the
// constraints, and ranked by chi^2.
FullFitOutcome fit_hyperfine_full(const MeasuredDataset& dataset,
                                  const FullFitConstraints& constraints,
                                  const HyperfineTensor& initial,
                                  const SpinSystemParams& base,
                                  const FullFitOptions& options = {});

// Seeded multi-start wrapper around the single combined fit: n_starts
// initial guesses dispersed +-50% around the supplied tensor magnitudes with
// both a_xz sign branches, converged optima deduplicated by parameter
// distance and ranked by chi^2. No equivalence expansion and no constraint
// filtering -- this is the raw local-optimum survey.
std::vector<HyperfineCandidate> multi_start_hyperfine(
    const MeasuredDataset& dataset, const HyperfineTensor& initial,
    int n_starts, std::uint64_t seed, const SpinSystemParams& base,
    const LmOptions& lm = {});

}  // namespace nvhf
