#ifndef NVLAB_DATALAB_HPP
#define NVLAB_DATALAB_HPP

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvlab/fitting.hpp"
#include "nvlab/odmr.hpp"
#include "nvlab/relaxometry.hpp"

// Bundled reference data and delimited-text persistence. Files are UTF-8,
// comma-delimited with a mandatory header line; '#' lines are comments.
// Numbers serialize as shortest exact round-trip decimals.
namespace nvlab {

// One irradiated spot of the bundled reference sample: integrated red
// fluorescence, electron dose, and the estimated NV- concentration.
struct SpotRecord {
  int spot_id = 0;
  double fluorescence = 0.0;       // arb. units
  double dose_per_cm2 = 0.0;       // electrons / cm^2
  double concentration_ppm = 0.0;  // estimated NV-
  double electron_flux_per_nm2_s = 0.0;
  void validate() const;
};

// The ten bundled spots (ids 5-14). Spots 5-13 were irradiated at flux
// 3530 nm^-2 s^-1 with strictly increasing dose; spot 14 repeats an
// intermediate dose at flux 2530 to compare irradiation rates.
const std::vector<SpotRecord>& load_table1();

struct CalibrationReference {
  double reference_concentration_ppm = 10.0;
  double reference_fluorescence = 0.0;
  double systematic_factor_bound = 5.0;  // overall normalization uncertainty
  void validate() const;
};

struct ConcentrationEstimate {
  double ppm = 0.0;
  double systematic_low_ppm = 0.0;   // ppm / bound
  double systematic_high_ppm = 0.0;  // ppm * bound
  double systematic_factor_bound = 5.0;
};

// Linear map: concentration = reference_concentration * (F / F_reference),
// annotated with the multiplicative systematic bound.
ConcentrationEstimate fluorescence_to_concentration(double fluorescence,
                                                    const CalibrationReference& ref);

// Concentration versus dose from the bundled records, linearly interpolated
// (the data are deliberately not fit with a law; they are non-monotonic in
// fluorescence). Doses outside the tabulated range clamp to the endpoints.
double interpolate_concentration_at_dose(double dose_per_cm2);

// ---------------------------------------------------------------------------
// Delimited-text I/O.

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

// Shortest decimal that parses back to exactly the same double.
std::string format_double(double value);

// Spectrum files: columns freq_mhz,signal. Unknown columns are preserved
// across one read -> write round trip.
struct SpectrumFile {
  OdmrSpectrum spectrum;
  std::vector<std::string> extra_names;
  std::vector<std::vector<std::string>> extra_cells;  // per row
};

void write_spectrum(std::ostream& os, const OdmrSpectrum& spec);
void write_spectrum(std::ostream& os, const SpectrumFile& file);
SpectrumFile read_spectrum(std::istream& is, const std::string& source = "<stream>");

// Decay-curve files: raw three-column tau_us,signal_nopi,signal_pi or
// normalized two-column tau_us,I. Reading a raw file recomputes I.
struct DecayCurveFile {
  DecayCurve curve;
  bool raw_branches = false;
  std::vector<std::string> extra_names;
  std::vector<std::vector<std::string>> extra_cells;
};

void write_decay_curve(std::ostream& os, const DecayCurve& curve, bool raw_branches);
void write_decay_curve(std::ostream& os, const DecayCurveFile& file);
DecayCurveFile read_decay_curve(std::istream& is, const std::string& source = "<stream>");

// Structured reports.
void write_peak_report(std::ostream& os, const std::vector<PeakEstimate>& peaks);
void write_fit_report(std::ostream& os, const StretchedExpFit& fit);
void write_rate_table(std::ostream& os,
                      const std::vector<std::pair<double, double>>& rates);
void write_resonance_table(std::ostream& os, const std::vector<ResonanceField>& res);
void write_spot_table(std::ostream& os, const std::vector<SpotRecord>& spots,
                      const std::optional<CalibrationReference>& recalibration = {});

// Path helpers ("-" means stdout/stdin).
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace nvlab

#endif
