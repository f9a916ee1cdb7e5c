#pragma once

#include <string>
#include <vector>

#include "nvhf/types.hpp"

namespace nvhf {

// Frame in which an orientation record expresses the field direction:
//   nv  -> angle1 = polar angle theta from the NV axis, angle2 = azimuth phi
//          in the NV frame (tensor fits need this frame)
//   lab -> angle1/angle2 = polar/azimuth of the field direction in the
//          laboratory frame (orientation fits determine the NV axis from
//          these)
enum class Frame { nv, lab };

struct OrientationRecord {
  std::string id;
  Frame frame = Frame::nv;
  double angle1_deg = 0.0;
  double angle2_deg = 0.0;
  double b_mt = 0.0;
};

struct LineRecord {
  std::string orient_id;
  LineKind kind = LineKind::esr;
  double freq_mhz = 0.0;
  double sigma_mhz = 0.0;
};

struct RatioRecord {
  std::string orient_id;
  double phi_deg = 0.0;
  double ratio = 0.0;
  double sigma = 0.0;
};

// A measured (or synthetic) dataset: declared field orientations plus the
// frequency lines and amplitude ratios that reference them. Invariants are
// enforced at load time: every record references a declared orientation and
// all uncertainties are positive.
struct MeasuredDataset {
  std::vector<OrientationRecord> orientations;
  std::vector<LineRecord> lines;
  std::vector<RatioRecord> ratios;

  const OrientationRecord* find_orientation(const std::string& id) const;
  std::vector<LineRecord> lines_for(const std::string& orient_id,
                                    LineKind kind) const;
};

}  // namespace nvhf
