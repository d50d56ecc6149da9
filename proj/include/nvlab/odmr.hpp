#ifndef NVLAB_ODMR_HPP
#define NVLAB_ODMR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "nvlab/spin_core.hpp"

// Forward synthesis of CW ODMR spectra and the inverse problems: peak
// finding with parabola refinement, zero-field D/E extraction, and field
// calibration from peak positions.
namespace nvlab {

enum class Lineshape { lorentzian, gaussian };

struct LineshapeParams {
  double fwhm_mhz = 6.0;
  double contrast_per_center = 0.02;  // dip depth per orientation transition
  Lineshape shape = Lineshape::lorentzian;
  void validate() const;
};

struct FrequencyGrid {
  double min_mhz = 2700.0;
  double max_mhz = 3050.0;
  double step_mhz = 0.2;
  void validate() const;
  std::size_t size() const;
};

struct SpectrumMeta {
  Eigen::Vector3d field_gauss = Eigen::Vector3d::Zero();
  double linewidth_fwhm_mhz = 0.0;  // 0 = unknown (e.g. loaded from file)
  Lineshape shape = Lineshape::lorentzian;
  double contrast_per_center = 0.0;
  int n_systems = 0;
};

struct OdmrSpectrum {
  std::vector<double> freqs_mhz;  // strictly increasing grid
  std::vector<double> signal;     // normalized fluorescence, baseline 1
  SpectrumMeta meta;
  void validate() const;
};

struct PeakEstimate {
  double center_mhz = 0.0;
  double depth = 0.0;      // baseline minus refined minimum
  double curvature = 0.0;  // from the parabola fit
  double uncertainty_mhz = 0.0;
};

// signal(f) = 1 - sum over systems and transitions of contrast * L(f - f_t).
// Orientation weights are population-proportional: each system in the list
// contributes once per transition, so passing all four orientations yields
// the 3:1 off-axis/aligned ratio for B || [111].
OdmrSpectrum simulate_odmr(const std::vector<SpinSystem>& systems,
                           const FieldVector& field, const LineshapeParams& lines,
                           const FrequencyGrid& grid, double noise_rms = 0.0,
                           std::uint64_t seed = 0);

// Local minima below (1 - min_depth), refined by a 5-point parabola fit
// (7 points when the linewidth spans more than 10 grid steps). Plateau ties
// break toward lower frequency. Centers return in ascending order.
std::vector<PeakEstimate> find_peaks(const OdmrSpectrum& spec, double min_depth);

struct ZeroFieldSplitting {
  double d_mhz = 0.0;
  double e_mhz = 0.0;
  double d_err_mhz = 0.0;
  double e_err_mhz = 0.0;
  bool e_is_upper_bound = false;  // single unresolved peak: E <= linewidth/2
};

// Zero-field analysis: with peaks f1 <= f2, D = (f1+f2)/2 and E = (f2-f1)/2.
// One unresolved peak gives D = center and an upper bound on E. More than
// two peaks is an error (field not zero or multiple strain domains).
ZeroFieldSplitting extract_d_e(const OdmrSpectrum& zero_field_spec);

struct FieldCalibration {
  double b_magnitude_gauss = 0.0;
  Eigen::Vector3d b_direction = Eigen::Vector3d::UnitZ();
  double residual_rms_mhz = 0.0;
};

// Least-squares fit of field magnitude and direction to observed peak
// centers, multi-started from the four <111> axes. Needs >= 3 distinct
// centers. The recovered direction is one member of the crystal-symmetry
// orbit of the true field (the four-axis frame cannot distinguish signed
// permutation images).
FieldCalibration calibrate_field(const std::vector<PeakEstimate>& peaks,
                                 const SpinSystem& sys_template);

const char* to_string(Lineshape shape);

}  // namespace nvlab

#endif
