#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "nvhf/dataset.hpp"
#include "nvhf/fitting.hpp"
#include "nvhf/spectra.hpp"
#include "nvhf/types.hpp"

namespace nvhf {

// ---------------------------------------------------------------------------
// CSV dataset files
// ---------------------------------------------------------------------------
// All files are UTF-8, comma-separated with a '.' decimal separator, one
// required header row, and optional leading comment lines starting with '#'
// (used to label synthetic data with its generator settings). Angles are in
// degrees.
//
//   orientations.csv : orient_id,frame,angle1_deg,angle2_deg,b_mT
//                      frame in {nv, lab}; for nv, angle1 = theta and
//                      angle2 = phi
//   lines.csv        : orient_id,kind,freq_MHz,sigma_MHz
//                      kind in {esr, zq}
//   ratios.csv       : orient_id,phi_deg,ratio,sigma
//
// Parse errors (missing column, non-numeric cell, unknown orientation id,
// non-positive uncertainty, bad enum value) throw DataError with the file,
// line, and column of the offending cell.

std::vector<OrientationRecord> load_orientations(const std::string& path);
std::vector<LineRecord> load_lines(const std::string& path);
std::vector<RatioRecord> load_ratios(const std::string& path);

// CSV enum spellings ("nv"/"lab", "esr"/"zq").
std::string to_string(Frame frame);
std::string to_string(LineKind kind);

// Loads a dataset directory containing orientations.csv and optionally
// lines.csv / ratios.csv, then validates the cross-references (every line
// and ratio must name a declared orientation).
MeasuredDataset load_dataset(const std::string& dir);

// Assembles and validates a dataset from individually loaded pieces
// (the CLI uses this when files are given explicitly).
MeasuredDataset make_dataset(std::vector<OrientationRecord> orientations,
                             std::vector<LineRecord> lines,
                             std::vector<RatioRecord> ratios);

// Writes a synthetic dataset as orientations.csv + lines.csv in `dir`,
// prefixed by '#' comment lines recording the generator settings. Output is
// byte-deterministic for fixed inputs and directly loadable by
// load_dataset().
void save_synthetic_dataset(const SyntheticDataset& dataset,
                            const HyperfineTensor& generator,
                            const SpinSystemParams& sys,
                            const std::string& dir);

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------
// A single JSON document; every field is optional and falls back to the
// defaults below (which describe the bundled example system: a first-shell
// 13C coupling with the field tilted 84.5 degrees from the NV axis).

struct RunConfig {
  SpinSystemParams sys{};
  FieldOrientation field{constants::default_b_mt, 84.5, 0.0};
  HyperfineTensor tensor{189.3, 128.4, 128.9, 24.1};
  MicrowaveField mw{};  // x-axis
  LmOptions lm{};
  int multi_start_count = 8;
  std::uint64_t seed = 20260815;
  FullFitConstraints constraints{};
  Linewidths linewidths{};
  std::string output_dir = "out";
};

// Loads a config JSON file; unknown keys are rejected (typo protection).
// Throws DataError on parse or validation failure.
RunConfig load_config(const std::string& path);

// Applies config keys from a parsed JSON object onto `config`.
void apply_config_json(const nlohmann::json& j, RunConfig& config);

// Full snapshot of a configuration, including every constant in effect;
// embedded in all machine-readable outputs for reproducibility.
nlohmann::ordered_json config_to_json(const RunConfig& config);

}  // namespace nvhf
