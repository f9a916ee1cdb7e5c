#include "nvhf/dataset_io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nvhf/errors.hpp"

namespace nvhf {

namespace {

// ---------------------------------------------------------------------------
// CSV machinery
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

struct CsvRow {
  int line_number = 0;  // 1-based physical line in the file
  std::vector<std::string> cells;
};

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  [[noreturn]] void fail(int line, int column, const std::string& what) const {
    throw DataError(path + ":" + std::to_string(line) + ":" +
                    std::to_string(column) + ": " + what);
  }

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    return -1;
  }

  int require_column(const std::string& name) const {
    const int c = column(name);
    if (c < 0)
      throw DataError(path + ":1:1: header is missing required column '" +
                      name + "' (found: " + joined_header() + ")");
    return c;
  }

  std::string joined_header() const {
    std::string s;
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (k) s += ",";
      s += header[k];
    }
    return s;
  }

  const std::string& text(const CsvRow& row, int col) const {
    const auto& cell = row.cells[static_cast<std::size_t>(col)];
    if (cell.empty())
      fail(row.line_number, col + 1,
           "empty value in column '" + header[static_cast<std::size_t>(col)] +
               "'");
    return cell;
  }

  double number(const CsvRow& row, int col) const {
    const std::string& cell = text(row, col);
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE ||
        !std::isfinite(value))
      fail(row.line_number, col + 1,
           "cannot parse '" + cell + "' in column '" +
               header[static_cast<std::size_t>(col)] + "' as a finite number");
    return value;
  }
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);

  CsvTable table;
  table.path = path;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto cells = split_cells(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      table.fail(line_number, static_cast<int>(cells.size()),
                 "expected " + std::to_string(table.header.size()) +
                     " columns, got " + std::to_string(cells.size()));
    table.rows.push_back({line_number, std::move(cells)});
  }
  if (table.header.empty())
    throw DataError(path + ":1:1: missing header row (file has no data)");
  return table;
}

// Deterministic numeric formatting for generated files: shortest digit count
// is not needed, just a fixed high-precision round-trippable format.
std::string fmt(double value) {
  std::ostringstream os;
  os << std::setprecision(15) << value;
  return os.str();
}

}  // namespace

std::string to_string(Frame frame) {
  return frame == Frame::nv ? "nv" : "lab";
}

std::string to_string(LineKind kind) {
  return kind == LineKind::esr ? "esr" : "zq";
}

std::vector<OrientationRecord> load_orientations(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int c_id = table.require_column("orient_id");
  const int c_frame = table.require_column("frame");
  const int c_a1 = table.require_column("angle1_deg");
  const int c_a2 = table.require_column("angle2_deg");
  const int c_b = table.require_column("b_mT");

  std::vector<OrientationRecord> out;
  std::set<std::string> seen;
  for (const auto& row : table.rows) {
    OrientationRecord rec;
    rec.id = table.text(row, c_id);
    if (!seen.insert(rec.id).second)
      table.fail(row.line_number, c_id + 1,
                 "duplicate orient_id '" + rec.id + "'");
    const std::string& frame = table.text(row, c_frame);
    if (frame == "nv")
      rec.frame = Frame::nv;
    else if (frame == "lab")
      rec.frame = Frame::lab;
    else
      table.fail(row.line_number, c_frame + 1,
                 "frame must be 'nv' or 'lab', got '" + frame + "'");
    rec.angle1_deg = table.number(row, c_a1);
    if (rec.angle1_deg < 0.0 || rec.angle1_deg > 180.0)
      table.fail(row.line_number, c_a1 + 1,
                 "polar angle must lie in [0, 180] degrees, got " +
                     std::to_string(rec.angle1_deg));
    rec.angle2_deg = table.number(row, c_a2);
    rec.b_mt = table.number(row, c_b);
    if (!(rec.b_mt > 0.0))
      table.fail(row.line_number, c_b + 1,
                 "field magnitude b_mT must be > 0, got " +
                     std::to_string(rec.b_mt));
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LineRecord> load_lines(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int c_id = table.require_column("orient_id");
  const int c_kind = table.require_column("kind");
  const int c_freq = table.require_column("freq_MHz");
  const int c_sigma = table.require_column("sigma_MHz");

  std::vector<LineRecord> out;
  for (const auto& row : table.rows) {
    LineRecord rec;
    rec.orient_id = table.text(row, c_id);
    const std::string& kind = table.text(row, c_kind);
    if (kind == "esr")
      rec.kind = LineKind::esr;
    else if (kind == "zq")
      rec.kind = LineKind::zero_quantum;
    else
      table.fail(row.line_number, c_kind + 1,
                 "kind must be 'esr' or 'zq', got '" + kind + "'");
    rec.freq_mhz = table.number(row, c_freq);
    rec.sigma_mhz = table.number(row, c_sigma);
    if (!(rec.sigma_mhz > 0.0))
      table.fail(row.line_number, c_sigma + 1,
                 "sigma_MHz must be > 0, got " + std::to_string(rec.sigma_mhz));
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<RatioRecord> load_ratios(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int c_id = table.require_column("orient_id");
  const int c_phi = table.require_column("phi_deg");
  const int c_ratio = table.require_column("ratio");
  const int c_sigma = table.require_column("sigma");

  std::vector<RatioRecord> out;
  for (const auto& row : table.rows) {
    RatioRecord rec;
    rec.orient_id = table.text(row, c_id);
    rec.phi_deg = table.number(row, c_phi);
    rec.ratio = table.number(row, c_ratio);
    rec.sigma = table.number(row, c_sigma);
    if (!(rec.sigma > 0.0))
      table.fail(row.line_number, c_sigma + 1,
                 "sigma must be > 0, got " + std::to_string(rec.sigma));
    out.push_back(std::move(rec));
  }
  return out;
}

MeasuredDataset make_dataset(std::vector<OrientationRecord> orientations,
                             std::vector<LineRecord> lines,
                             std::vector<RatioRecord> ratios) {
  MeasuredDataset ds;
  ds.orientations = std::move(orientations);
  ds.lines = std::move(lines);
  ds.ratios = std::move(ratios);

  std::set<std::string> ids;
  for (const auto& o : ds.orientations) {
    if (!ids.insert(o.id).second)
      throw DataError("duplicate orient_id '" + o.id + "'");
  }
  for (const auto& l : ds.lines)
    if (!ids.count(l.orient_id))
      throw DataError("line record references undeclared orient_id '" +
                      l.orient_id + "'");
  for (const auto& r : ds.ratios)
    if (!ids.count(r.orient_id))
      throw DataError("ratio record references undeclared orient_id '" +
                      r.orient_id + "'");
  return ds;
}

MeasuredDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  const fs::path orient_path = base / "orientations.csv";
  if (!fs::exists(orient_path))
    throw DataError("dataset directory '" + dir +
                    "' does not contain orientations.csv");
  auto orientations = load_orientations(orient_path.string());
  std::vector<LineRecord> lines;
  std::vector<RatioRecord> ratios;
  if (fs::exists(base / "lines.csv"))
    lines = load_lines((base / "lines.csv").string());
  if (fs::exists(base / "ratios.csv"))
    ratios = load_ratios((base / "ratios.csv").string());
  return make_dataset(std::move(orientations), std::move(lines),
                      std::move(ratios));
}

void save_synthetic_dataset(const SyntheticDataset& dataset,
                            const HyperfineTensor& generator,
                            const SpinSystemParams& sys,
                            const std::string& dir) {
  namespace fs = std::filesystem;
  for (const auto& o : dataset.orientations)
    for (const auto& rec : o.records)
      if (!(rec.sigma_mhz > 0.0))
        throw std::invalid_argument(
            "save_synthetic_dataset: records must carry positive "
            "uncertainties to produce a loadable file (use nonzero "
            "linewidths)");

  fs::create_directories(dir);

  std::ostringstream provenance;
  provenance << std::setprecision(15);
  provenance << "# synthetic dataset\n"
             << "# generator tensor (MHz): a_xx=" << generator.a_xx_mhz
             << " a_yy=" << generator.a_yy_mhz << " a_zz=" << generator.a_zz_mhz
             << " a_xz=" << generator.a_xz_mhz << "\n"
             << "# system: d_mhz=" << sys.d_zfs_mhz
             << " gamma_e_mhz_per_mt=" << sys.gamma_e_mhz_per_mt
             << " gamma_n_mhz_per_mt=" << sys.gamma_n_mhz_per_mt << "\n"
             << "# noise: seed=" << dataset.seed
             << " esr_linewidth_mhz=" << dataset.linewidths.esr_mhz
             << " zq_linewidth_mhz=" << dataset.linewidths.zq_mhz << "\n";

  {
    std::ofstream out((fs::path(dir) / "orientations.csv").string(),
                      std::ios::binary);
    if (!out)
      throw DataError("cannot write " + dir + "/orientations.csv");
    out << provenance.str();
    out << "orient_id,frame,angle1_deg,angle2_deg,b_mT\n";
    for (std::size_t k = 0; k < dataset.orientations.size(); ++k) {
      const auto& field = dataset.orientations[k].field;
      out << "o" << (k + 1) << ",nv," << fmt(field.theta_deg) << ","
          << fmt(field.phi_deg) << "," << fmt(field.b_mt) << "\n";
    }
  }
  {
    std::ofstream out((fs::path(dir) / "lines.csv").string(),
                      std::ios::binary);
    if (!out) throw DataError("cannot write " + dir + "/lines.csv");
    out << provenance.str();
    out << "orient_id,kind,freq_MHz,sigma_MHz\n";
    for (std::size_t k = 0; k < dataset.orientations.size(); ++k) {
      for (const auto& rec : dataset.orientations[k].records) {
        out << "o" << (k + 1) << "," << to_string(rec.kind) << ","
            << fmt(rec.freq_mhz) << "," << fmt(rec.sigma_mhz) << "\n";
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

[[noreturn]] void config_fail(const std::string& what) {
  throw DataError("config: " + what);
}

void require_keys(const json& j, const std::string& section,
                  const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      config_fail("unknown key '" +
                  (section.empty() ? it.key() : section + "." + it.key()) +
                  "'");
}

double get_number(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number())
    config_fail("'" + key + "' must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    config_fail("'" + key + "' must be an integer");
  return j.at(key).get<int>();
}

}  // namespace

void apply_config_json(const nlohmann::json& j, RunConfig& config) {
  if (!j.is_object()) config_fail("top level must be a JSON object");
  require_keys(j, "",
               {"system", "field", "tensor", "microwave", "lm",
                "multi_start_count", "seed", "constraints", "linewidths",
                "output_dir"});

  if (j.contains("system")) {
    const json& s = j.at("system");
    require_keys(s, "system",
                 {"d_mhz", "gamma_e_mhz_per_mt", "gamma_n_mhz_per_mt"});
    config.sys.d_zfs_mhz = get_number(s, "d_mhz", config.sys.d_zfs_mhz);
    config.sys.gamma_e_mhz_per_mt =
        get_number(s, "gamma_e_mhz_per_mt", config.sys.gamma_e_mhz_per_mt);
    config.sys.gamma_n_mhz_per_mt =
        get_number(s, "gamma_n_mhz_per_mt", config.sys.gamma_n_mhz_per_mt);
  }
  if (j.contains("field")) {
    const json& f = j.at("field");
    require_keys(f, "field", {"b_mt", "theta_deg", "phi_deg"});
    config.field.b_mt = get_number(f, "b_mt", config.field.b_mt);
    config.field.theta_deg = get_number(f, "theta_deg", config.field.theta_deg);
    config.field.phi_deg = get_number(f, "phi_deg", config.field.phi_deg);
  }
  if (j.contains("tensor")) {
    const json& t = j.at("tensor");
    require_keys(t, "tensor", {"a_xx_mhz", "a_yy_mhz", "a_zz_mhz", "a_xz_mhz"});
    config.tensor.a_xx_mhz = get_number(t, "a_xx_mhz", config.tensor.a_xx_mhz);
    config.tensor.a_yy_mhz = get_number(t, "a_yy_mhz", config.tensor.a_yy_mhz);
    config.tensor.a_zz_mhz = get_number(t, "a_zz_mhz", config.tensor.a_zz_mhz);
    config.tensor.a_xz_mhz = get_number(t, "a_xz_mhz", config.tensor.a_xz_mhz);
  }
  if (j.contains("microwave")) {
    const json& m = j.at("microwave");
    require_keys(m, "microwave", {"direction"});
    if (m.contains("direction")) {
      const json& d = m.at("direction");
      if (!d.is_array() || d.size() != 3)
        config_fail("'microwave.direction' must be an array of 3 numbers");
      Eigen::Vector3d v;
      for (int c = 0; c < 3; ++c) {
        if (!d.at(c).is_number())
          config_fail("'microwave.direction' must be an array of 3 numbers");
        v[c] = d.at(c).get<double>();
      }
      const double norm = v.norm();
      if (!(norm > 0.0) || !v.allFinite())
        config_fail("'microwave.direction' must be a nonzero finite vector");
      config.mw.direction = v / norm;
    }
  }
  if (j.contains("lm")) {
    const json& l = j.at("lm");
    require_keys(l, "lm",
                 {"max_iterations", "step_tolerance", "residual_tolerance",
                  "residual_stall_iterations", "initial_lambda"});
    config.lm.max_iterations =
        get_int(l, "max_iterations", config.lm.max_iterations);
    config.lm.step_tolerance =
        get_number(l, "step_tolerance", config.lm.step_tolerance);
    config.lm.residual_tolerance =
        get_number(l, "residual_tolerance", config.lm.residual_tolerance);
    config.lm.residual_stall_iterations = get_int(
        l, "residual_stall_iterations", config.lm.residual_stall_iterations);
    config.lm.initial_lambda =
        get_number(l, "initial_lambda", config.lm.initial_lambda);
    if (config.lm.max_iterations < 1)
      config_fail("'lm.max_iterations' must be >= 1");
  }
  if (j.contains("multi_start_count")) {
    config.multi_start_count = get_int(j, "multi_start_count", 0);
    if (config.multi_start_count < 0)
      config_fail("'multi_start_count' must be >= 0");
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      config_fail("'seed' must be a non-negative integer");
    const auto v = j.at("seed").get<std::int64_t>();
    if (v < 0) config_fail("'seed' must be a non-negative integer");
    config.seed = static_cast<std::uint64_t>(v);
  }
  if (j.contains("constraints")) {
    const json& c = j.at("constraints");
    require_keys(c, "constraints",
                 {"det_sign", "rabi_bound_enabled", "rabi_bound"});
    if (c.contains("det_sign")) {
      const json& d = c.at("det_sign");
      if (!d.is_string()) config_fail("'constraints.det_sign' must be a string");
      const std::string s = d.get<std::string>();
      if (s == "any")
        config.constraints.det = FullFitConstraints::Det::any;
      else if (s == "pos")
        config.constraints.det = FullFitConstraints::Det::positive;
      else if (s == "neg")
        config.constraints.det = FullFitConstraints::Det::negative;
      else
        config_fail("'constraints.det_sign' must be one of any|pos|neg, got '" +
                    s + "'");
    }
    if (c.contains("rabi_bound_enabled")) {
      if (!c.at("rabi_bound_enabled").is_boolean())
        config_fail("'constraints.rabi_bound_enabled' must be a boolean");
      config.constraints.rabi_bound_enabled =
          c.at("rabi_bound_enabled").get<bool>();
    }
    config.constraints.rabi_bound =
        get_number(c, "rabi_bound", config.constraints.rabi_bound);
    if (!(config.constraints.rabi_bound > 0.0))
      config_fail("'constraints.rabi_bound' must be > 0");
  }
  if (j.contains("linewidths")) {
    const json& w = j.at("linewidths");
    require_keys(w, "linewidths", {"esr_mhz", "zq_mhz"});
    config.linewidths.esr_mhz =
        get_number(w, "esr_mhz", config.linewidths.esr_mhz);
    config.linewidths.zq_mhz = get_number(w, "zq_mhz", config.linewidths.zq_mhz);
    if (config.linewidths.esr_mhz < 0.0 || config.linewidths.zq_mhz < 0.0)
      config_fail("'linewidths' must be >= 0");
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string())
      config_fail("'output_dir' must be a string");
    config.output_dir = j.at("output_dir").get<std::string>();
    if (config.output_dir.empty()) config_fail("'output_dir' must be nonempty");
  }

  // Physical validation of the assembled configuration.
  try {
    config.sys.validate();
    config.field.validate();
    config.mw.validate();
  } catch (const std::exception& e) {
    config_fail(e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in,
                    /*callback=*/nullptr,
                    /*allow_exceptions=*/true,
                    /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  RunConfig config;
  apply_config_json(j, config);
  return config;
}

nlohmann::ordered_json config_to_json(const RunConfig& config) {
  nlohmann::ordered_json j;
  j["system"] = {{"d_mhz", config.sys.d_zfs_mhz},
                 {"gamma_e_mhz_per_mt", config.sys.gamma_e_mhz_per_mt},
                 {"gamma_n_mhz_per_mt", config.sys.gamma_n_mhz_per_mt}};
  j["field"] = {{"b_mt", config.field.b_mt},
                {"theta_deg", config.field.theta_deg},
                {"phi_deg", config.field.phi_deg}};
  j["tensor"] = {{"a_xx_mhz", config.tensor.a_xx_mhz},
                 {"a_yy_mhz", config.tensor.a_yy_mhz},
                 {"a_zz_mhz", config.tensor.a_zz_mhz},
                 {"a_xz_mhz", config.tensor.a_xz_mhz}};
  j["microwave"] = {{"direction",
                     {config.mw.direction[0], config.mw.direction[1],
                      config.mw.direction[2]}}};
  j["lm"] = {{"max_iterations", config.lm.max_iterations},
             {"step_tolerance", config.lm.step_tolerance},
             {"residual_tolerance", config.lm.residual_tolerance},
             {"residual_stall_iterations", config.lm.residual_stall_iterations},
             {"initial_lambda", config.lm.initial_lambda}};
  j["multi_start_count"] = config.multi_start_count;
  j["seed"] = config.seed;
  const char* det = "any";
  if (config.constraints.det == FullFitConstraints::Det::positive) det = "pos";
  if (config.constraints.det == FullFitConstraints::Det::negative) det = "neg";
  j["constraints"] = {{"det_sign", det},
                      {"rabi_bound_enabled", config.constraints.rabi_bound_enabled},
                      {"rabi_bound", config.constraints.rabi_bound}};
  j["linewidths"] = {{"esr_mhz", config.linewidths.esr_mhz},
                     {"zq_mhz", config.linewidths.zq_mhz}};
  j["output_dir"] = config.output_dir;
  return j;
}

}  // namespace nvhf
