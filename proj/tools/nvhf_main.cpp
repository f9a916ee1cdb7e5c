// Command-line interface for the coupled electron-nuclear spin model:
// simulation of transition spectra by exact diagonalization, hyperfine-tensor
// analysis (principal axes, equivalent solutions, determinant sign), and the
// fitting pipeline that recovers the tensor from measured line positions and
// amplitude ratios.
//
// Exit codes: 0 success, 2 usage error, 3 data/validation error,
// 4 fit non-convergence.

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "nvhf/dataset_io.hpp"
#include "nvhf/errors.hpp"
#include "nvhf/fitting.hpp"
#include "nvhf/spectra.hpp"
#include "nvhf/spin_core.hpp"
#include "nvhf/tensor_analysis.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace nvhf;

namespace {

// A missing input file or an invalid flag combination detected after CLI11
// parsing; mapped to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliArgs {
  std::string config_path;
  std::string orientations_path;
  std::string lines_path;
  std::string ratios_path;
  std::string out_dir;       // empty: use the config's output_dir
  std::string det_sign;      // empty: use the config's constraint
  long long seed = -1;       // negative: use the config's seed
  bool gamma_n_zero = false;
  std::string model = "electron";  // fit-orientation model
  double classify_theta_deg = 90.0;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string label_str(const StateLabel& l) {
  std::ostringstream os;
  os << "(m_S=" << std::showpos << l.ms << std::noshowpos << ", branch "
     << l.branch << ")";
  return os.str();
}

// Collects the human-readable report and the machine-readable result; both
// embed the full configuration snapshot and contain no timestamps, so output
// is byte-identical across runs with identical inputs.
struct ReportWriter {
  std::ostringstream text;
  ordered_json result;
  fs::path dir;
  std::vector<std::pair<std::string, std::string>> csv_files;

  ReportWriter(const std::string& command, const RunConfig& config,
               const fs::path& out_dir)
      : dir(out_dir) {
    result["command"] = command;
    result["config"] = config_to_json(config);
    text << "command: " << command << "\n";
    text << "config: " << config_to_json(config).dump() << "\n\n";
  }

  void add_csv(const std::string& name, const std::string& content) {
    csv_files.emplace_back(name, content);
  }

  void write() {
    fs::create_directories(dir);
    {
      std::ofstream out(dir / "report.txt", std::ios::binary);
      if (!out)
        throw DataError("cannot write " + (dir / "report.txt").string());
      out << text.str();
    }
    {
      std::ofstream out(dir / "result.json", std::ios::binary);
      if (!out)
        throw DataError("cannot write " + (dir / "result.json").string());
      out << result.dump(2) << "\n";
    }
    for (const auto& [name, content] : csv_files) {
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) throw DataError("cannot write " + (dir / name).string());
      out << content;
    }
    std::cout << text.str();
    std::cout << "wrote " << (dir / "report.txt").string() << " and "
              << (dir / "result.json").string() << "\n";
  }
};

ordered_json tensor_json(const HyperfineTensor& t) {
  return {{"a_xx_mhz", t.a_xx_mhz},
          {"a_yy_mhz", t.a_yy_mhz},
          {"a_zz_mhz", t.a_zz_mhz},
          {"a_xz_mhz", t.a_xz_mhz}};
}

std::string tensor_str(const HyperfineTensor& t) {
  std::ostringstream os;
  os << "(a_xx=" << fmt(t.a_xx_mhz) << ", a_yy=" << fmt(t.a_yy_mhz)
     << ", a_zz=" << fmt(t.a_zz_mhz) << ", a_xz=" << fmt(t.a_xz_mhz) << ") MHz";
  return os.str();
}

MeasuredDataset load_cli_dataset(const CliArgs& args, bool need_lines,
                                 bool need_ratios) {
  if (args.orientations_path.empty())
    throw UsageError("this subcommand requires --orientations <file.csv>");
  if (need_lines && args.lines_path.empty())
    throw UsageError("this subcommand requires --lines <file.csv>");
  if (need_ratios && args.ratios_path.empty())
    throw UsageError("this subcommand requires --ratios <file.csv>");
  std::vector<LineRecord> lines;
  std::vector<RatioRecord> ratios;
  if (!args.lines_path.empty()) lines = load_lines(args.lines_path);
  if (!args.ratios_path.empty()) ratios = load_ratios(args.ratios_path);
  return make_dataset(load_orientations(args.orientations_path),
                      std::move(lines), std::move(ratios));
}

std::vector<double> phi_grid(double start, double stop_exclusive, double step) {
  std::vector<double> grid;
  for (double phi = start; phi < stop_exclusive - 1e-9; phi += step)
    grid.push_back(phi);
  return grid;
}

// ---------------------------------------------------------------------------
// Subcommand handlers
// ---------------------------------------------------------------------------

void run_simulate(const RunConfig& config, const fs::path& out) {
  ReportWriter rep("simulate", config, out);

  const EnergyLevels levels =
      eigensystem(build_hamiltonian(config.sys, config.tensor, config.field));
  const auto lines = esr_lines(levels, config.mw, config.sys);
  const double zq = zq_frequency_exact(levels);
  const double zq_pert =
      zq_frequency_perturbative(config.sys, config.tensor, config.field);

  rep.text << "energy levels (MHz), ascending, with electron-spin labels:\n";
  ordered_json jlevels = ordered_json::array();
  for (int k = 0; k < 6; ++k) {
    const auto& l = levels.labels[static_cast<std::size_t>(k)];
    rep.text << "  E" << k << " = " << fmt(levels.eigenvalues[k]) << "  "
             << label_str(l) << "  overlap " << fmt(l.overlap)
             << (l.ambiguous ? "  [ambiguous]" : "") << "\n";
    jlevels.push_back({{"energy_mhz", levels.eigenvalues[k]},
                       {"ms", l.ms},
                       {"branch", l.branch},
                       {"overlap", l.overlap},
                       {"ambiguous", l.ambiguous}});
  }
  rep.text << "\nelectron-spin transitions from the m_S = 0 pair:\n";
  ordered_json jlines = ordered_json::array();
  std::ostringstream csv;
  csv << "freq_MHz,amplitude,initial_ms,initial_branch,final_ms,final_branch\n";
  for (const auto& line : lines) {
    rep.text << "  " << fmt(line.freq_mhz) << " MHz  amplitude "
             << fmt(line.amplitude) << "  " << label_str(line.initial_label)
             << " -> " << label_str(line.final_label) << "\n";
    jlines.push_back({{"freq_mhz", line.freq_mhz},
                      {"amplitude", line.amplitude},
                      {"initial_ms", line.initial_label.ms},
                      {"initial_branch", line.initial_label.branch},
                      {"final_ms", line.final_label.ms},
                      {"final_branch", line.final_label.branch}});
    csv << fmt(line.freq_mhz) << "," << fmt(line.amplitude) << ","
        << line.initial_label.ms << "," << line.initial_label.branch << ","
        << line.final_label.ms << "," << line.final_label.branch << "\n";
  }
  rep.text << "\nzero-quantum frequency (MHz): exact " << fmt(zq)
           << ", closed-form approximation " << fmt(zq_pert) << "\n";

  rep.result["levels"] = jlevels;
  rep.result["esr_lines"] = jlines;
  rep.result["zq_mhz"] = zq;
  rep.result["zq_perturbative_mhz"] = zq_pert;
  rep.add_csv("simulated_lines.csv", csv.str());
  rep.write();
}

void run_zq(const RunConfig& config, const fs::path& out) {
  ReportWriter rep("zq", config, out);

  const auto grid = phi_grid(0.0, 180.0, 5.0);
  std::vector<std::array<double, 3>> rows;
  std::ostringstream csv;
  csv << "phi_deg,zq_exact_MHz,zq_perturbative_MHz\n";
  ordered_json jsweep = ordered_json::array();
  for (double phi : grid) {
    FieldOrientation field = config.field;
    field.phi_deg = phi;
    const EnergyLevels levels =
        eigensystem(build_hamiltonian(config.sys, config.tensor, field));
    const double exact = zq_frequency_exact(levels);
    const double pert =
        zq_frequency_perturbative(config.sys, config.tensor, field);
    rows.push_back({phi, exact, 0.01});
    csv << fmt(phi) << "," << fmt(exact) << "," << fmt(pert) << "\n";
    jsweep.push_back(
        {{"phi_deg", phi}, {"zq_mhz", exact}, {"zq_perturbative_mhz", pert}});
  }
  const ZqLinearFit fit = fit_zq_linear(rows);

  rep.text << "zero-quantum azimuthal sweep at theta = "
           << fmt(config.field.theta_deg) << " deg, |B| = "
           << fmt(config.field.b_mt) << " mT (" << grid.size()
           << " azimuths)\n\n";
  rep.text << "coefficients of kappa1 cos^2(phi) + kappa2 sin^2(phi), fitted "
              "to the exact frequencies:\n";
  rep.text << "  kappa1 = " << fmt(fit.kappa1_mhz) << " MHz\n";
  rep.text << "  kappa2 = " << fmt(fit.kappa2_mhz) << " MHz\n";
  rep.text << "  kappa1 / kappa2 = " << fmt(fit.kappa1_mhz / fit.kappa2_mhz)
           << "\n";

  rep.result["sweep"] = jsweep;
  rep.result["kappa1_mhz"] = fit.kappa1_mhz;
  rep.result["kappa2_mhz"] = fit.kappa2_mhz;
  rep.add_csv("zq_sweep.csv", csv.str());
  rep.write();
}

void run_amplitudes(const RunConfig& config, const fs::path& out) {
  ReportWriter rep("amplitudes", config, out);

  const auto grid = phi_grid(0.0, 360.0, 5.0);
  const AmplitudeProfile profile =
      amplitude_ratio_profile(config.sys, config.tensor, config.field.b_mt,
                              config.field.theta_deg, config.mw, grid);

  std::ostringstream csv;
  csv << "phi_deg,i1,i2,i3,i4,ratio,ordering_flagged\n";
  ordered_json jpoints = ordered_json::array();
  for (const auto& p : profile.points) {
    csv << fmt(p.phi_deg) << "," << fmt(p.intensity[0]) << ","
        << fmt(p.intensity[1]) << "," << fmt(p.intensity[2]) << ","
        << fmt(p.intensity[3]) << "," << fmt(p.ratio) << ","
        << (p.ordering_flagged ? 1 : 0) << "\n";
    jpoints.push_back({{"phi_deg", p.phi_deg},
                       {"i1", p.intensity[0]},
                       {"i2", p.intensity[1]},
                       {"i3", p.intensity[2]},
                       {"i4", p.intensity[3]},
                       {"ratio", p.ratio},
                       {"ordering_flagged", p.ordering_flagged}});
  }

  rep.text << "amplitudes I1..I4 of the four lowest transitions and the ratio "
              "(I1+I4)/(I2+I3)\n";
  rep.text << "field: theta = " << fmt(config.field.theta_deg)
           << " deg, |B| = " << fmt(config.field.b_mt) << " mT; "
           << grid.size() << " azimuths (see amplitude_profile.csv)\n";
  double rmin = profile.points.front().ratio, rmax = rmin;
  for (const auto& p : profile.points) {
    rmin = std::min(rmin, p.ratio);
    rmax = std::max(rmax, p.ratio);
  }
  rep.text << "ratio range over the sweep: [" << fmt(rmin) << ", " << fmt(rmax)
           << "]\n";

  rep.result["theta_deg"] = profile.theta_deg;
  rep.result["points"] = jpoints;
  rep.add_csv("amplitude_profile.csv", csv.str());
  rep.write();
}

void run_fit_orientation(const RunConfig& config, const CliArgs& args,
                         const fs::path& out) {
  ReportWriter rep("fit-orientation", config, out);
  const MeasuredDataset ds = load_cli_dataset(args, true, false);

  const OrientationModelKind kind = args.model == "hyperfine"
                                        ? OrientationModelKind::with_hyperfine
                                        : OrientationModelKind::electron_only;
  OrientationFitOptions opts;
  opts.lm = config.lm;
  const OrientationFit fit = fit_orientation(ds, kind, config.sys, opts);
  if (!fit.detail.converged)
    throw ConvergenceError("orientation fit did not converge: " +
                           fit.detail.message);

  rep.text << "model: "
           << (kind == OrientationModelKind::electron_only
                   ? "bare S = 1 center (2 lines per orientation)"
                   : "S = 1 center with axially symmetric coupling (8 lines)")
           << "\n\n";
  rep.text << "symmetry-axis direction in the lab frame (defined up to "
              "n -> -n):\n";
  rep.text << "  polar   = " << fmt(fit.axis_polar_deg) << " deg\n";
  rep.text << "  azimuth = " << fmt(fit.axis_azimuth_deg) << " deg\n";
  rep.text << "zero-field splitting D = " << fmt(fit.d_mhz) << " MHz\n";
  rep.text << "electron Zeeman gamma_e * B (at mean |B|) = "
           << fmt(fit.geb_mhz) << " MHz\n";
  if (kind == OrientationModelKind::with_hyperfine) {
    rep.text << "axial coupling: k_axial = " << fmt(fit.k_axial_mhz)
             << " MHz, k_perp = " << fmt(fit.k_perp_mhz) << " MHz\n";
  }
  rep.text << "chi2 = " << fmt(fit.detail.chi2) << " over " << fit.detail.dof
           << " degrees of freedom (" << fit.detail.iterations
           << " iterations)\n";

  rep.result["model"] = args.model;
  rep.result["axis_polar_deg"] = fit.axis_polar_deg;
  rep.result["axis_azimuth_deg"] = fit.axis_azimuth_deg;
  rep.result["d_mhz"] = fit.d_mhz;
  rep.result["geb_mhz"] = fit.geb_mhz;
  if (kind == OrientationModelKind::with_hyperfine) {
    rep.result["k_axial_mhz"] = fit.k_axial_mhz;
    rep.result["k_perp_mhz"] = fit.k_perp_mhz;
  }
  rep.result["chi2"] = fit.detail.chi2;
  rep.result["dof"] = fit.detail.dof;
  rep.result["iterations"] = fit.detail.iterations;
  rep.write();
}

void run_fit_zq(const RunConfig& config, const CliArgs& args,
                const fs::path& out) {
  ReportWriter rep("fit-zq", config, out);
  const MeasuredDataset ds = load_cli_dataset(args, true, false);

  std::vector<std::array<double, 3>> rows;
  double theta_ref = 0.0;
  bool have_theta = false;
  for (const auto& o : ds.orientations) {
    if (o.frame != Frame::nv)
      throw DataError(
          "fit-zq: orientations must be in the nv frame (theta, phi)");
    for (const auto& l : ds.lines_for(o.id, LineKind::zero_quantum)) {
      if (!have_theta) {
        theta_ref = o.angle1_deg;
        have_theta = true;
      } else if (std::abs(o.angle1_deg - theta_ref) > 1e-6) {
        throw DataError(
            "fit-zq: all zero-quantum lines must share one polar angle (the "
            "azimuthal model holds theta fixed); found " +
            fmt(theta_ref) + " and " + fmt(o.angle1_deg));
      }
      rows.push_back({o.angle2_deg, l.freq_mhz, l.sigma_mhz});
    }
  }
  if (rows.size() < 2)
    throw DataError("fit-zq: need at least 2 zero-quantum lines, found " +
                    std::to_string(rows.size()));

  const ZqLinearFit fit = fit_zq_linear(rows);
  rep.text << "fit of kappa1 cos^2(phi) + kappa2 sin^2(phi) to " << rows.size()
           << " zero-quantum lines at theta = " << fmt(theta_ref)
           << " deg:\n";
  rep.text << "  kappa1 = " << fmt(fit.kappa1_mhz) << " +- "
           << fmt(fit.kappa1_sigma_mhz) << " MHz\n";
  rep.text << "  kappa2 = " << fmt(fit.kappa2_mhz) << " +- "
           << fmt(fit.kappa2_sigma_mhz) << " MHz\n";
  rep.text << "  chi2 = " << fmt(fit.chi2) << " over " << fit.dof
           << " degrees of freedom\n";

  rep.result["theta_deg"] = theta_ref;
  rep.result["kappa1_mhz"] = fit.kappa1_mhz;
  rep.result["kappa2_mhz"] = fit.kappa2_mhz;
  rep.result["kappa1_sigma_mhz"] = fit.kappa1_sigma_mhz;
  rep.result["kappa2_sigma_mhz"] = fit.kappa2_sigma_mhz;
  rep.result["chi2"] = fit.chi2;
  rep.result["dof"] = fit.dof;
  rep.write();
}

void run_fit_amplitudes(const RunConfig& config, const CliArgs& args,
                        const fs::path& out) {
  ReportWriter rep("fit-amplitudes", config, out);
  if (args.ratios_path.empty())
    throw UsageError("fit-amplitudes requires --ratios <file.csv>");
  const auto ratios = load_ratios(args.ratios_path);
  if (ratios.empty())
    throw DataError("fit-amplitudes: ratios file contains no rows");

  // Group by orientation id, preserving first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::array<double, 3>>> groups;
  for (const auto& r : ratios) {
    if (!groups.count(r.orient_id)) order.push_back(r.orient_id);
    groups[r.orient_id].push_back({r.phi_deg, r.ratio, r.sigma});
  }

  ordered_json jfits = ordered_json::array();
  for (const auto& id : order) {
    const LorentzianFit fit = fit_lorentzian(groups[id]);
    if (!fit.detail.converged)
      throw ConvergenceError("fit-amplitudes: peak fit for orientation '" +
                             id + "' did not converge: " + fit.detail.message);
    rep.text << "orientation '" << id << "' (" << groups[id].size()
             << " points): a*b/((phi-phi1)^2 + b^2)\n";
    rep.text << "  a    = " << fmt(fit.a) << " +- " << fmt(fit.a_sigma) << "\n";
    rep.text << "  b    = " << fmt(fit.b_deg) << " +- " << fmt(fit.b_sigma_deg)
             << " deg\n";
    rep.text << "  phi1 = " << fmt(fit.phi1_deg) << " +- "
             << fmt(fit.phi1_sigma_deg) << " deg\n";
    rep.text << "  chi2 = " << fmt(fit.detail.chi2) << " over "
             << fit.detail.dof << " degrees of freedom"
             << (fit.peak_resolved ? "" : "  [peak not resolved]") << "\n\n";
    jfits.push_back({{"orient_id", id},
                     {"a", fit.a},
                     {"a_sigma", fit.a_sigma},
                     {"b_deg", fit.b_deg},
                     {"b_sigma_deg", fit.b_sigma_deg},
                     {"phi1_deg", fit.phi1_deg},
                     {"phi1_sigma_deg", fit.phi1_sigma_deg},
                     {"peak_resolved", fit.peak_resolved},
                     {"chi2", fit.detail.chi2},
                     {"dof", fit.detail.dof}});
  }
  rep.result["fits"] = jfits;
  rep.write();
}

void run_fit_full(const RunConfig& config, const CliArgs& args,
                  const fs::path& out) {
  ReportWriter rep("fit-full", config, out);
  const MeasuredDataset ds = load_cli_dataset(args, true, false);

  FullFitOptions opts;
  opts.lm = config.lm;
  opts.n_starts = config.multi_start_count;
  opts.seed = config.seed;
  const FullFitOutcome outcome = fit_hyperfine_full(
      ds, config.constraints, config.tensor, config.sys, opts);

  if (outcome.candidates.empty()) {
    bool any_rejected = false;
    for (const auto& d : outcome.diagnostics)
      if (d.find("rejected") != std::string::npos) any_rejected = true;
    if (!any_rejected)
      throw ConvergenceError(
          "fit-full: no start converged (see diagnostics); try more starts "
          "or a different initial tensor");
  }

  rep.text << "lines used: " << outcome.lines_used << "\n";
  rep.text << "candidates (ranked by chi2):\n";
  ordered_json jcands = ordered_json::array();
  std::ostringstream csv;
  csv << "rank,a_xx_mhz,a_yy_mhz,a_zz_mhz,a_xz_mhz,d_mhz,field_scale,det,"
         "chi2,dof\n";
  for (std::size_t k = 0; k < outcome.candidates.size(); ++k) {
    const auto& c = outcome.candidates[k];
    rep.text << "  #" << (k + 1) << "  " << tensor_str(c.tensor) << "\n";
    rep.text << "      D = " << fmt(c.d_mhz)
             << " MHz, field scale = " << fmt(c.field_scale) << ", det sign = "
             << (c.det > 0 ? "+" : (c.det < 0 ? "-" : "0"))
             << ", chi2 = " << fmt(c.fit.chi2) << " over " << c.fit.dof
             << " dof\n";
    if (c.fit.covariance.size() == 36) {
      rep.text << "      1-sigma: a_xx "
               << fmt(std::sqrt(std::max(c.fit.covariance(0, 0), 0.0)))
               << ", a_yy "
               << fmt(std::sqrt(std::max(c.fit.covariance(1, 1), 0.0)))
               << ", a_zz "
               << fmt(std::sqrt(std::max(c.fit.covariance(2, 2), 0.0)))
               << ", a_xz "
               << fmt(std::sqrt(std::max(c.fit.covariance(3, 3), 0.0)))
               << " MHz\n";
    }
    ordered_json jc = {{"tensor", tensor_json(c.tensor)},
                       {"d_mhz", c.d_mhz},
                       {"field_scale", c.field_scale},
                       {"geb_mhz", c.geb_mhz},
                       {"det", c.det},
                       {"chi2", c.fit.chi2},
                       {"dof", c.fit.dof},
                       {"iterations", c.fit.iterations}};
    if (c.fit.covariance.size() == 36) {
      jc["sigma"] = {
          {"a_xx_mhz", std::sqrt(std::max(c.fit.covariance(0, 0), 0.0))},
          {"a_yy_mhz", std::sqrt(std::max(c.fit.covariance(1, 1), 0.0))},
          {"a_zz_mhz", std::sqrt(std::max(c.fit.covariance(2, 2), 0.0))},
          {"a_xz_mhz", std::sqrt(std::max(c.fit.covariance(3, 3), 0.0))},
          {"d_mhz", std::sqrt(std::max(c.fit.covariance(4, 4), 0.0))},
          {"field_scale", std::sqrt(std::max(c.fit.covariance(5, 5), 0.0))}};
    }
    jcands.push_back(jc);
    csv << (k + 1) << "," << fmt(c.tensor.a_xx_mhz) << ","
        << fmt(c.tensor.a_yy_mhz) << "," << fmt(c.tensor.a_zz_mhz) << ","
        << fmt(c.tensor.a_xz_mhz) << "," << fmt(c.d_mhz) << ","
        << fmt(c.field_scale) << "," << c.det << "," << fmt(c.fit.chi2) << ","
        << c.fit.dof << "\n";
  }
  if (outcome.candidates.empty())
    rep.text << "  (none survived the constraint filters)\n";
  rep.text << "\nnote: a_xz -> -a_xz is an exact symmetry (global rotation "
              "mapping phi -> phi + 180); only one sign is listed.\n";
  if (!outcome.diagnostics.empty()) {
    rep.text << "diagnostics:\n";
    for (const auto& d : outcome.diagnostics) rep.text << "  - " << d << "\n";
  }

  rep.result["candidates"] = jcands;
  rep.result["axz_sign_freedom"] = outcome.axz_sign_freedom;
  rep.result["lines_used"] = outcome.lines_used;
  rep.result["diagnostics"] = outcome.diagnostics;
  rep.add_csv("candidates.csv", csv.str());
  rep.write();
}

void run_pas(const RunConfig& config, const fs::path& out) {
  ReportWriter rep("pas", config, out);

  const PasDecomposition pas = pas_decompose(config.tensor);
  const DetSign det = det_sign(config.tensor);
  EquivalenceCheckOptions eq;
  eq.sys = config.sys;
  eq.b_mt = config.field.b_mt;
  eq.seed = config.seed;
  const EquivalentSolutions equiv = equivalent_solutions(config.tensor, eq);

  rep.text << "input tensor: " << tensor_str(config.tensor) << "\n\n";
  rep.text << "principal values (MHz, ascending magnitude): "
           << fmt(pas.principal_mhz[0]) << ", " << fmt(pas.principal_mhz[1])
           << ", " << fmt(pas.principal_mhz[2]) << "\n";
  rep.text << "principal-axis polar angle zeta = " << fmt(pas.zeta_deg)
           << " deg (largest-|value| axis vs the symmetry axis)\n";
  rep.text << "equivalent angles mod 360: ";
  for (std::size_t k = 0; k < 4; ++k)
    rep.text << (k ? ", " : "") << fmt(pas.equivalent_angles_deg[k]);
  rep.text << " deg\n";
  if (pas.geometry_preferred)
    rep.text << "closest to the tetrahedral bond angle (109.5 deg): "
             << fmt(pas.geometry_preferred_angle_deg) << " deg\n";
  rep.text << "determinant = " << fmt(det.det_mhz3) << " MHz^3 (sign "
           << (det.sign > 0 ? "+" : (det.sign < 0 ? "-" : "0")) << ")\n\n";

  rep.text << "spectrally equivalent tensors (identical frequencies up to the "
              "nuclear Zeeman term; verified to "
           << fmt(equiv.verification_max_dev_mhz) << " MHz):\n";
  ordered_json jsol = ordered_json::array();
  for (const auto& t : equiv.solutions) {
    rep.text << "  " << tensor_str(t) << "\n";
    jsol.push_back(tensor_json(t));
  }
  rep.text << "plus the exact sign freedom a_xz -> -a_xz for each.\n";

  rep.result["principal_mhz"] = {pas.principal_mhz[0], pas.principal_mhz[1],
                                 pas.principal_mhz[2]};
  rep.result["zeta_deg"] = pas.zeta_deg;
  rep.result["equivalent_angles_deg"] = {
      pas.equivalent_angles_deg[0], pas.equivalent_angles_deg[1],
      pas.equivalent_angles_deg[2], pas.equivalent_angles_deg[3]};
  rep.result["geometry_preferred"] = pas.geometry_preferred;
  rep.result["geometry_preferred_angle_deg"] = pas.geometry_preferred_angle_deg;
  rep.result["det_mhz3"] = det.det_mhz3;
  rep.result["det_sign"] = det.sign;
  rep.result["equivalent_solutions"] = jsol;
  rep.result["axz_sign_freedom"] = equiv.axz_sign_freedom;
  rep.result["verification_max_dev_mhz"] = equiv.verification_max_dev_mhz;
  rep.write();
}

void run_equiv(const RunConfig& config, const fs::path& out) {
  ReportWriter rep("equiv", config, out);

  EquivalenceCheckOptions eq;
  eq.sys = config.sys;
  eq.b_mt = config.field.b_mt;
  eq.seed = config.seed;
  const EquivalentSolutions equiv = equivalent_solutions(config.tensor, eq);

  rep.text << "input tensor: " << tensor_str(config.tensor) << "\n";
  rep.text << "spectrally equivalent tensors (even sign flips of the "
              "principal values; all share one determinant):\n";
  ordered_json jsol = ordered_json::array();
  for (const auto& t : equiv.solutions) {
    const DetSign d = det_sign(t);
    rep.text << "  " << tensor_str(t) << "  det " << fmt(d.det_mhz3)
             << " MHz^3\n";
    ordered_json jt = tensor_json(t);
    jt["det_mhz3"] = d.det_mhz3;
    jsol.push_back(jt);
  }
  rep.text << "verified spectrally (nuclear Zeeman off) to "
           << fmt(equiv.verification_max_dev_mhz)
           << " MHz at seeded random field orientations.\n";
  rep.text << "a_xz -> -a_xz remains a separate exact sign freedom.\n";

  rep.result["equivalent_solutions"] = jsol;
  rep.result["axz_sign_freedom"] = equiv.axz_sign_freedom;
  rep.result["verification_max_dev_mhz"] = equiv.verification_max_dev_mhz;
  rep.write();
}

void run_classify_det(const RunConfig& config, const CliArgs& args,
                      const fs::path& out) {
  ReportWriter rep("classify-det", config, out);

  const auto grid = phi_grid(0.0, 360.0, 5.0);
  const AmplitudeProfile profile =
      amplitude_ratio_profile(config.sys, config.tensor, config.field.b_mt,
                              args.classify_theta_deg, config.mw, grid);
  const DetClassification cls = classify_det_sign(profile);
  const DetSign det = det_sign(config.tensor);

  const char* verdict =
      cls.verdict == DetVerdict::positive
          ? "positive"
          : (cls.verdict == DetVerdict::negative ? "negative" : "inconclusive");
  rep.text << "determinant-sign classification from the amplitude-ratio "
              "profile at theta = "
           << fmt(args.classify_theta_deg) << " deg:\n";
  rep.text << "  verdict: " << verdict << "\n";
  rep.text << "  ratio peak-to-mean = " << fmt(cls.peak_to_mean)
           << ", min ratio = " << fmt(cls.min_ratio) << "\n";
  rep.text << "  corr(I1, I4) = " << fmt(cls.corr_i1_i4) << "\n";
  rep.text << "  I1 max/min = " << fmt(cls.i1_max_over_min)
           << ", I4 max/min = " << fmt(cls.i4_max_over_min) << "\n";
  rep.text << "  max over phi of max(I2, I3)/I1 = "
           << fmt(cls.max_weak_fraction) << "\n";
  rep.text << "actual determinant of the input tensor: " << fmt(det.det_mhz3)
           << " MHz^3\n";

  rep.result["verdict"] = verdict;
  rep.result["theta_deg"] = args.classify_theta_deg;
  rep.result["peak_to_mean"] = cls.peak_to_mean;
  rep.result["min_ratio"] = cls.min_ratio;
  rep.result["corr_i1_i4"] = cls.corr_i1_i4;
  rep.result["i1_max_over_min"] = cls.i1_max_over_min;
  rep.result["i4_max_over_min"] = cls.i4_max_over_min;
  rep.result["max_weak_fraction"] = cls.max_weak_fraction;
  rep.result["det_mhz3"] = det.det_mhz3;
  rep.write();
}

void run_gen_synthetic(const RunConfig& config, const CliArgs& args,
                       const fs::path& out) {
  ReportWriter rep("gen-synthetic", config, out);
  if (args.orientations_path.empty())
    throw UsageError("gen-synthetic requires --orientations <file.csv>");
  if (!(config.linewidths.esr_mhz > 0.0) || !(config.linewidths.zq_mhz > 0.0))
    throw DataError(
        "gen-synthetic: linewidths must be > 0 so the generated dataset "
        "carries positive uncertainties");

  const auto records = load_orientations(args.orientations_path);
  std::vector<FieldOrientation> fields;
  for (const auto& o : records) {
    if (o.frame != Frame::nv)
      throw DataError(
          "gen-synthetic: orientations must be given in the nv frame");
    fields.push_back(FieldOrientation{o.b_mt, o.angle1_deg, o.angle2_deg});
  }

  const SyntheticDataset synth =
      synth_dataset(config.sys, config.tensor, fields, config.mw,
                    config.linewidths, config.seed);
  save_synthetic_dataset(synth, config.tensor, config.sys, out.string());

  std::size_t n_lines = 0;
  for (const auto& o : synth.orientations) n_lines += o.records.size();
  rep.text << "generated " << n_lines << " synthetic lines over "
           << synth.orientations.size() << " orientations (seed "
           << config.seed << ")\n";
  rep.text << "dataset written to " << out.string()
           << " (orientations.csv, lines.csv)\n";

  rep.result["n_orientations"] = synth.orientations.size();
  rep.result["n_lines"] = n_lines;
  rep.result["seed"] = synth.seed;
  rep.write();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Coupled electron (S=1) / nuclear (I=1/2) spin model: spectra by exact "
      "diagonalization, hyperfine-tensor analysis, and fitting"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  CliArgs args;
  app.add_option("--config", args.config_path,
                 "JSON run configuration (defaults used when omitted)");
  app.add_option("--orientations", args.orientations_path,
                 "orientations.csv: orient_id,frame,angle1_deg,angle2_deg,b_mT");
  app.add_option("--lines", args.lines_path,
                 "lines.csv: orient_id,kind,freq_MHz,sigma_MHz");
  app.add_option("--ratios", args.ratios_path,
                 "ratios.csv: orient_id,phi_deg,ratio,sigma");
  app.add_option("--out", args.out_dir,
                 "output directory (default: config output_dir)");
  app.add_option("--seed", args.seed, "random seed override (non-negative)");
  app.add_flag("--gamma-n-zero", args.gamma_n_zero,
               "switch the nuclear Zeeman term off");
  app.add_option("--det-sign", args.det_sign,
                 "determinant-sign constraint for fit-full")
      ->check(CLI::IsMember({"pos", "neg", "any"}));

  auto* cmd_simulate = app.add_subcommand(
      "simulate",
      "energy levels, transition lines, and the zero-quantum frequency at "
      "one field orientation");
  auto* cmd_zq = app.add_subcommand(
      "zq",
      "zero-quantum frequency vs field azimuth with the cos^2/sin^2 "
      "coefficient fit");
  auto* cmd_amplitudes = app.add_subcommand(
      "amplitudes",
      "amplitudes of the four lowest transitions vs field azimuth");
  auto* cmd_fit_orientation = app.add_subcommand(
      "fit-orientation",
      "fit the symmetry-axis direction, D, and field scale to lab-frame "
      "line positions");
  cmd_fit_orientation
      ->add_option("--model", args.model,
                   "line model: electron (2 lines) or hyperfine (8 lines)")
      ->check(CLI::IsMember({"electron", "hyperfine"}));
  auto* cmd_fit_zq = app.add_subcommand(
      "fit-zq",
      "fit the azimuthal cos^2/sin^2 model to measured zero-quantum lines");
  auto* cmd_fit_amplitudes = app.add_subcommand(
      "fit-amplitudes",
      "fit a Lorentzian peak to measured amplitude-ratio profiles");
  auto* cmd_fit_full = app.add_subcommand(
      "fit-full",
      "recover the full hyperfine tensor from line positions (multi-start, "
      "equivalence-expanded, constraint-filtered)");
  auto* cmd_pas = app.add_subcommand(
      "pas",
      "principal values and principal-axis angle of the configured tensor, "
      "with the spectrally equivalent solution set");
  auto* cmd_equiv = app.add_subcommand(
      "equiv", "the four spectrally equivalent tensors and their determinant");
  auto* cmd_classify = app.add_subcommand(
      "classify-det",
      "classify the determinant sign from the model amplitude-ratio profile");
  cmd_classify->add_option(
      "--theta", args.classify_theta_deg,
      "polar angle of the azimuthal sweep in degrees (default 90)");
  auto* cmd_gen = app.add_subcommand(
      "gen-synthetic",
      "generate a noisy synthetic dataset (orientations.csv + lines.csv) "
      "from the configured tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig config;
    if (!args.config_path.empty()) config = load_config(args.config_path);
    if (args.gamma_n_zero) config.sys.gamma_n_mhz_per_mt = 0.0;
    if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.det_sign.empty()) {
      if (args.det_sign == "pos")
        config.constraints.det = FullFitConstraints::Det::positive;
      else if (args.det_sign == "neg")
        config.constraints.det = FullFitConstraints::Det::negative;
      else
        config.constraints.det = FullFitConstraints::Det::any;
    }
    if (!args.out_dir.empty()) config.output_dir = args.out_dir;
    const fs::path out(config.output_dir);

    if (cmd_simulate->parsed()) run_simulate(config, out);
    else if (cmd_zq->parsed()) run_zq(config, out);
    else if (cmd_amplitudes->parsed()) run_amplitudes(config, out);
    else if (cmd_fit_orientation->parsed())
      run_fit_orientation(config, args, out);
    else if (cmd_fit_zq->parsed()) run_fit_zq(config, args, out);
    else if (cmd_fit_amplitudes->parsed()) run_fit_amplitudes(config, args, out);
    else if (cmd_fit_full->parsed()) run_fit_full(config, args, out);
    else if (cmd_pas->parsed()) run_pas(config, out);
    else if (cmd_equiv->parsed()) run_equiv(config, out);
    else if (cmd_classify->parsed()) run_classify_det(config, args, out);
    else if (cmd_gen->parsed()) run_gen_synthetic(config, args, out);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConvergenceError& e) {
    std::cerr << "fit did not converge: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
