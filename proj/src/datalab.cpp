#include "nvlab/datalab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <ostream>
#include <sstream>

namespace nvlab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void SpotRecord::validate() const {
  if (!(dose_per_cm2 > 0)) fail("SpotRecord: dose must be positive");
  if (!(fluorescence >= 0)) fail("SpotRecord: fluorescence must be non-negative");
  if (!(concentration_ppm >= 0)) fail("SpotRecord: concentration must be non-negative");
}

const std::vector<SpotRecord>& load_table1() {
  static const std::vector<SpotRecord> table = {
      {5, 1400, 1.1e19, 0.2, 3530},  {6, 2600, 2.1e19, 0.3, 3530},
      {7, 5700, 4.2e19, 0.7, 3530},  {8, 10000, 8.5e19, 1.2, 3530},
      {9, 6300, 1.7e20, 0.7, 3530},  {10, 2900, 3.4e20, 3.3, 3530},
      {11, 50000, 6.8e20, 5.5, 3530}, {12, 39000, 1.3e21, 4.3, 3530},
      {13, 65000, 2.5e21, 7.1, 3530}, {14, 8300, 6.1e19, 3.9, 2530},
  };
  return table;
}

void CalibrationReference::validate() const {
  if (!(reference_concentration_ppm > 0)) fail("CalibrationReference: concentration must be positive");
  if (!(reference_fluorescence > 0)) fail("CalibrationReference: fluorescence must be positive");
  if (!(systematic_factor_bound >= 1)) fail("CalibrationReference: factor bound must be >= 1");
}

ConcentrationEstimate fluorescence_to_concentration(double fluorescence,
                                                    const CalibrationReference& ref) {
  ref.validate();
  if (!(fluorescence >= 0)) fail("fluorescence_to_concentration: fluorescence must be >= 0");
  ConcentrationEstimate out;
  out.ppm = ref.reference_concentration_ppm * (fluorescence / ref.reference_fluorescence);
  out.systematic_factor_bound = ref.systematic_factor_bound;
  out.systematic_low_ppm = out.ppm / ref.systematic_factor_bound;
  out.systematic_high_ppm = out.ppm * ref.systematic_factor_bound;
  return out;
}

double interpolate_concentration_at_dose(double dose_per_cm2) {
  if (!(dose_per_cm2 > 0)) fail("interpolate_concentration_at_dose: dose must be positive");
  std::vector<std::pair<double, double>> pts;
  for (const SpotRecord& s : load_table1()) pts.emplace_back(s.dose_per_cm2, s.concentration_ppm);
  std::sort(pts.begin(), pts.end());
  if (dose_per_cm2 <= pts.front().first) return pts.front().second;
  if (dose_per_cm2 >= pts.back().first) return pts.back().second;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (dose_per_cm2 <= pts[i].first) {
      const double f = (dose_per_cm2 - pts[i - 1].first) / (pts[i].first - pts[i - 1].first);
      return pts[i - 1].second + f * (pts[i].second - pts[i - 1].second);
    }
  }
  return pts.back().second;
}

// ---------------------------------------------------------------------------
// Formatting and parsing primitives.

ParseError::ParseError(const std::string& source, int line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& cell, const std::string& source, int line) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && *(end - 1) == ' ') --end;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ParseError(source, line, "not a number: '" + cell + "'");
  return value;
}

std::vector<std::string> split_row(const std::string& line, const std::string& source,
                                   int line_no) {
  if (line.find('\t') != std::string::npos || line.find(';') != std::string::npos)
    throw ParseError(source, line_no, "mixed delimiters (expected comma-separated fields)");
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};

Table read_table(std::istream& is, const std::string& source) {
  Table table;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    if (!header_seen) {
      for (const std::string& name : split_row(stripped, source, line_no))
        table.names.push_back(trim(name));
      if (table.names.empty() || table.names.front().empty())
        throw ParseError(source, line_no, "malformed header");
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells = split_row(stripped, source, line_no);
    if (cells.size() != table.names.size()) {
      std::ostringstream msg;
      msg << "expected " << table.names.size() << " fields, found " << cells.size();
      throw ParseError(source, line_no, msg.str());
    }
    for (std::string& c : cells) c = trim(c);
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(line_no);
  }
  if (!header_seen) throw ParseError(source, line_no, "missing header line");
  return table;
}

int require_column(const Table& table, const std::string& name, const std::string& source) {
  for (std::size_t i = 0; i < table.names.size(); ++i)
    if (table.names[i] == name) return static_cast<int>(i);
  throw ParseError(source, 1, "malformed header: missing column '" + name + "'");
}

void collect_extras(const Table& table, const std::vector<int>& known,
                    std::vector<std::string>& extra_names,
                    std::vector<std::vector<std::string>>& extra_cells) {
  std::vector<int> extra_idx;
  for (std::size_t i = 0; i < table.names.size(); ++i)
    if (std::find(known.begin(), known.end(), static_cast<int>(i)) == known.end())
      extra_idx.push_back(static_cast<int>(i));
  for (int idx : extra_idx) extra_names.push_back(table.names[idx]);
  for (const auto& row : table.rows) {
    std::vector<std::string> cells;
    for (int idx : extra_idx) cells.push_back(row[idx]);
    extra_cells.push_back(std::move(cells));
  }
}

void write_row_tail(std::ostream& os, const std::vector<std::string>& extras) {
  for (const std::string& cell : extras) os << ',' << cell;
  os << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Spectrum files.

void write_spectrum(std::ostream& os, const OdmrSpectrum& spec) {
  write_spectrum(os, SpectrumFile{spec, {}, {}});
}

void write_spectrum(std::ostream& os, const SpectrumFile& file) {
  const OdmrSpectrum& spec = file.spectrum;
  os << "# odmr spectrum: normalized fluorescence vs microwave frequency\n";
  if (spec.meta.linewidth_fwhm_mhz > 0) {
    os << "# field_gauss = " << format_double(spec.meta.field_gauss.x()) << ' '
       << format_double(spec.meta.field_gauss.y()) << ' '
       << format_double(spec.meta.field_gauss.z()) << '\n';
    os << "# linewidth_fwhm_mhz = " << format_double(spec.meta.linewidth_fwhm_mhz)
       << ", shape = " << to_string(spec.meta.shape) << '\n';
  }
  os << "freq_mhz,signal";
  for (const std::string& name : file.extra_names) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < spec.freqs_mhz.size(); ++i) {
    os << format_double(spec.freqs_mhz[i]) << ',' << format_double(spec.signal[i]);
    write_row_tail(os, file.extra_cells.empty() ? std::vector<std::string>{}
                                                : file.extra_cells[i]);
  }
}

SpectrumFile read_spectrum(std::istream& is, const std::string& source) {
  const Table table = read_table(is, source);
  const int c_freq = require_column(table, "freq_mhz", source);
  const int c_sig = require_column(table, "signal", source);

  SpectrumFile out;
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const int line = table.line_numbers[r];
    const double f = parse_double(table.rows[r][c_freq], source, line);
    const double s = parse_double(table.rows[r][c_sig], source, line);
    if (!(f > prev))
      throw ParseError(source, line, "frequency not strictly increasing");
    prev = f;
    out.spectrum.freqs_mhz.push_back(f);
    out.spectrum.signal.push_back(s);
  }
  if (out.spectrum.freqs_mhz.size() < 2)
    throw ParseError(source, 1, "spectrum needs at least 2 rows");
  collect_extras(table, {c_freq, c_sig}, out.extra_names, out.extra_cells);
  return out;
}

// ---------------------------------------------------------------------------
// Decay-curve files.

void write_decay_curve(std::ostream& os, const DecayCurve& curve, bool raw_branches) {
  write_decay_curve(os, DecayCurveFile{curve, raw_branches, {}, {}});
}

void write_decay_curve(std::ostream& os, const DecayCurveFile& file) {
  const DecayCurve& curve = file.curve;
  const bool raw = file.raw_branches && !curve.branch_no_pi.empty();
  os << "# t1 relaxation decay curve ("
     << (raw ? "raw differential branches" : "normalized") << ")\n";
  os << (raw ? "tau_us,signal_nopi,signal_pi" : "tau_us,I");
  for (const std::string& name : file.extra_names) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < curve.tau_us.size(); ++i) {
    os << format_double(curve.tau_us[i]) << ',';
    if (raw)
      os << format_double(curve.branch_no_pi[i]) << ',' << format_double(curve.branch_pi[i]);
    else
      os << format_double(curve.normalized[i]);
    write_row_tail(os, file.extra_cells.empty() ? std::vector<std::string>{}
                                                : file.extra_cells[i]);
  }
}

DecayCurveFile read_decay_curve(std::istream& is, const std::string& source) {
  const Table table = read_table(is, source);
  const int c_tau = require_column(table, "tau_us", source);

  DecayCurveFile out;
  std::vector<int> known{c_tau};
  int c_nopi = -1, c_pi = -1, c_i = -1;
  const bool raw = std::find(table.names.begin(), table.names.end(), "signal_nopi") !=
                   table.names.end();
  if (raw) {
    c_nopi = require_column(table, "signal_nopi", source);
    c_pi = require_column(table, "signal_pi", source);
    known.push_back(c_nopi);
    known.push_back(c_pi);
  } else {
    c_i = require_column(table, "I", source);
    known.push_back(c_i);
  }
  out.raw_branches = raw;

  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const int line = table.line_numbers[r];
    const double tau = parse_double(table.rows[r][c_tau], source, line);
    if (!(tau > prev)) throw ParseError(source, line, "tau not strictly increasing");
    prev = tau;
    out.curve.tau_us.push_back(tau);
    if (raw) {
      out.curve.branch_no_pi.push_back(parse_double(table.rows[r][c_nopi], source, line));
      out.curve.branch_pi.push_back(parse_double(table.rows[r][c_pi], source, line));
    } else {
      out.curve.normalized.push_back(parse_double(table.rows[r][c_i], source, line));
    }
  }
  if (out.curve.tau_us.empty()) throw ParseError(source, 1, "decay curve has no rows");

  if (raw) {
    const double denom = out.curve.branch_no_pi[0] - out.curve.branch_pi[0];
    if (!(std::abs(denom) > 0))
      throw ParseError(source, table.line_numbers.front(),
                       "branches coincide at the first tau; cannot normalize");
    for (std::size_t i = 0; i < out.curve.tau_us.size(); ++i)
      out.curve.normalized.push_back(
          (out.curve.branch_no_pi[i] - out.curve.branch_pi[i]) / denom);
  }
  collect_extras(table, known, out.extra_names, out.extra_cells);
  return out;
}

// ---------------------------------------------------------------------------
// Reports.

void write_peak_report(std::ostream& os, const std::vector<PeakEstimate>& peaks) {
  os << "center_mhz,depth,uncertainty_mhz\n";
  for (const PeakEstimate& p : peaks)
    os << format_double(p.center_mhz) << ',' << format_double(p.depth) << ','
       << format_double(p.uncertainty_mhz) << '\n';
}

void write_fit_report(std::ostream& os, const StretchedExpFit& fit) {
  os << "t1_ms,beta,amplitude,offset,t1_err,beta_err,chi2_reduced,converged,iterations\n";
  os << format_double(fit.t1_ms) << ',' << format_double(fit.beta) << ','
     << format_double(fit.amplitude) << ',' << format_double(fit.offset) << ','
     << format_double(fit.t1_err_ms) << ',' << format_double(fit.beta_err) << ','
     << format_double(fit.chi2_reduced) << ',' << (fit.converged ? 1 : 0) << ','
     << fit.iterations << '\n';
}

void write_rate_table(std::ostream& os,
                      const std::vector<std::pair<double, double>>& rates) {
  os << "b_gauss,rate_per_s\n";
  for (const auto& [b, r] : rates)
    os << format_double(b) << ',' << format_double(r) << '\n';
}

void write_resonance_table(std::ostream& os, const std::vector<ResonanceField>& res) {
  os << "b_gauss,kind,detuning_slope_mhz_per_g\n";
  for (const ResonanceField& r : res)
    os << format_double(r.b_gauss) << ',' << to_string(r.kind) << ','
       << format_double(r.detuning_slope_mhz_per_g) << '\n';
}

void write_spot_table(std::ostream& os, const std::vector<SpotRecord>& spots,
                      const std::optional<CalibrationReference>& recalibration) {
  os << "spot,fluorescence,dose_per_cm2,concentration_ppm,flux_per_nm2_s";
  if (recalibration) os << ",recalibrated_ppm";
  os << '\n';
  for (const SpotRecord& s : spots) {
    os << s.spot_id << ',' << format_double(s.fluorescence) << ','
       << format_double(s.dose_per_cm2) << ',' << format_double(s.concentration_ppm)
       << ',' << format_double(s.electron_flux_per_nm2_s);
    if (recalibration)
      os << ',' << format_double(
                       fluorescence_to_concentration(s.fluorescence, *recalibration).ppm);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace nvlab
