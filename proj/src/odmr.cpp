#include "nvlab/odmr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>

#include "nvlab/fitting.hpp"
#include "nvlab/rng.hpp"

namespace nvlab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double lineshape(double delta_mhz, double fwhm_mhz, Lineshape shape) {
  if (shape == Lineshape::lorentzian) {
    const double u = 2.0 * delta_mhz / fwhm_mhz;
    return 1.0 / (1.0 + u * u);
  }
  const double ln2 = 0.6931471805599453;
  const double u = delta_mhz / fwhm_mhz;
  return std::exp(-4.0 * ln2 * u * u);
}

}  // namespace

const char* to_string(Lineshape shape) {
  return shape == Lineshape::lorentzian ? "lorentzian" : "gaussian";
}

void LineshapeParams::validate() const {
  if (!(fwhm_mhz > 0)) fail("LineshapeParams: linewidth must be positive");
  if (!(contrast_per_center > 0 && contrast_per_center <= 0.5))
    fail("LineshapeParams: contrast must be in (0, 0.5]");
}

void FrequencyGrid::validate() const {
  if (!(step_mhz > 0)) fail("FrequencyGrid: step must be positive");
  if (!(max_mhz > min_mhz)) fail("FrequencyGrid: max must exceed min");
}

std::size_t FrequencyGrid::size() const {
  return static_cast<std::size_t>(std::floor((max_mhz - min_mhz) / step_mhz + 1e-9)) + 1;
}

void OdmrSpectrum::validate() const {
  const std::size_t n = freqs_mhz.size();
  if (n < 2 || signal.size() != n) fail("OdmrSpectrum: need matching freq/signal arrays");
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(freqs_mhz[i] > freqs_mhz[i - 1]))
      fail("OdmrSpectrum: frequency grid must be strictly increasing");
    if (!(signal[i] > 0.0 && signal[i] <= 1.05))
      fail("OdmrSpectrum: signal outside (0, 1.05]");
  }
}

OdmrSpectrum simulate_odmr(const std::vector<SpinSystem>& systems,
                           const FieldVector& field, const LineshapeParams& lines,
                           const FrequencyGrid& grid, double noise_rms,
                           std::uint64_t seed) {
  lines.validate();
  grid.validate();
  if (!(noise_rms >= 0)) fail("simulate_odmr: noise rms must be >= 0");

  const auto spectrum = transition_spectrum(systems, field);  // validates systems

  std::vector<double> transitions;
  for (const auto& [orientation, t] : spectrum) {
    transitions.push_back(t.f_minus_mhz);
    transitions.push_back(t.f_plus_mhz);
  }
  for (double f : transitions) {
    if (f < grid.min_mhz || f > grid.max_mhz) {
      std::ostringstream msg;
      msg.precision(10);
      msg << "simulate_odmr: grid [" << grid.min_mhz << ", " << grid.max_mhz
          << "] MHz does not cover the transition at " << f << " MHz";
      throw std::invalid_argument(msg.str());
    }
  }

  OdmrSpectrum out;
  const std::size_t n = grid.size();
  out.freqs_mhz.resize(n);
  out.signal.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = grid.min_mhz + static_cast<double>(i) * grid.step_mhz;
    double s = 1.0;
    for (double ft : transitions)
      s -= lines.contrast_per_center * lineshape(f - ft, lines.fwhm_mhz, lines.shape);
    if (noise_rms > 0) s += noise_rms * rng::normal(seed, static_cast<std::uint64_t>(i));
    out.freqs_mhz[i] = f;
    out.signal[i] = s;
  }

  out.meta.field_gauss = field.gauss;
  out.meta.linewidth_fwhm_mhz = lines.fwhm_mhz;
  out.meta.shape = lines.shape;
  out.meta.contrast_per_center = lines.contrast_per_center;
  out.meta.n_systems = static_cast<int>(systems.size());

  out.validate();  // total contrast too deep or noise too large fails here
  return out;
}

std::vector<PeakEstimate> find_peaks(const OdmrSpectrum& spec, double min_depth) {
  const std::size_t n = spec.freqs_mhz.size();
  if (n < 5) fail("find_peaks: spectrum needs at least 5 grid points");
  if (!(min_depth > 0 && min_depth < 1)) fail("find_peaks: min_depth must be in (0, 1)");

  const double baseline = 1.0;
  const double threshold = baseline * (1.0 - min_depth);
  const double grid_step = spec.freqs_mhz[1] - spec.freqs_mhz[0];
  const bool wide = spec.meta.linewidth_fwhm_mhz > 10.0 * grid_step;
  const int half_window = wide ? 3 : 2;

  // Candidates must also be the minimum of a half-linewidth neighborhood so
  // noise on a dip's flanks does not spawn spurious peaks.
  long guard = 2;
  if (spec.meta.linewidth_fwhm_mhz > 0)
    guard = std::max<long>(guard,
                           std::lround(0.5 * spec.meta.linewidth_fwhm_mhz / grid_step));
  auto neighborhood_min = [&](std::size_t idx) {
    const long lo = std::max<long>(0, static_cast<long>(idx) - guard);
    const long hi = std::min<long>(static_cast<long>(n) - 1,
                                   static_cast<long>(idx) + guard);
    for (long k = lo; k <= hi; ++k)
      if (spec.signal[static_cast<std::size_t>(k)] < spec.signal[idx]) return false;
    return true;
  };

  std::vector<PeakEstimate> peaks;
  std::size_t i = 1;
  while (i + 1 < n) {
    // Plateau run [i, j] of equal values; ties break toward lower frequency.
    std::size_t j = i;
    while (j + 1 < n && spec.signal[j + 1] == spec.signal[i]) ++j;
    const bool is_min = spec.signal[i] < spec.signal[i - 1] &&
                        (j + 1 < n ? spec.signal[i] < spec.signal[j + 1] : false);
    if (is_min && spec.signal[i] < threshold && neighborhood_min(i)) {
      const long lo = std::max<long>(0, static_cast<long>(i) - half_window);
      const long hi = std::min<long>(static_cast<long>(n) - 1,
                                     static_cast<long>(i) + half_window);
      const std::span<const double> xs(spec.freqs_mhz.data() + lo,
                                       static_cast<std::size_t>(hi - lo + 1));
      const std::span<const double> ys(spec.signal.data() + lo,
                                       static_cast<std::size_t>(hi - lo + 1));
      const ParabolaVertex v = parabola_refine(xs, ys);

      PeakEstimate peak;
      peak.center_mhz = v.interior ? v.x_vertex : spec.freqs_mhz[i];
      peak.uncertainty_mhz = v.uncertainty;
      peak.curvature = v.curvature;
      double y_min = spec.signal[i];
      if (v.interior && v.curvature > 0) {
        // Evaluate the fitted parabola at its vertex for a sub-grid depth.
        const double y0 = spec.signal[i];
        const double d = peak.center_mhz - spec.freqs_mhz[i];
        y_min = std::min(y_min, y0 - 0.5 * v.curvature * d * d);
      }
      peak.depth = baseline - y_min;
      peaks.push_back(peak);
    }
    i = j + 1;
  }
  return peaks;  // scan order is ascending frequency
}

ZeroFieldSplitting extract_d_e(const OdmrSpectrum& zero_field_spec) {
  zero_field_spec.validate();
  double deepest = 0.0;
  for (double s : zero_field_spec.signal) deepest = std::max(deepest, 1.0 - s);
  if (!(deepest > 0)) fail("extract_d_e: no resonance found (flat spectrum)");

  const auto peaks = find_peaks(zero_field_spec, 0.25 * deepest);
  if (peaks.empty()) fail("extract_d_e: no resonance found");
  if (peaks.size() > 2)
    fail("extract_d_e: more than two zero-field peaks (field not zero or "
         "multiple strain domains)");

  ZeroFieldSplitting out;
  if (peaks.size() == 2) {
    const double f1 = peaks[0].center_mhz, f2 = peaks[1].center_mhz;
    out.d_mhz = 0.5 * (f1 + f2);
    out.e_mhz = 0.5 * (f2 - f1);
    out.d_err_mhz = 0.5 * std::hypot(peaks[0].uncertainty_mhz, peaks[1].uncertainty_mhz);
    out.e_err_mhz = out.d_err_mhz;
    return out;
  }

  // Single unresolved peak: E is bounded by half the linewidth. Use the
  // synthesis linewidth when known, otherwise estimate the width from the
  // parabola curvature of a Lorentzian dip (w^2 = 8 * depth / curvature).
  const PeakEstimate& p = peaks[0];
  out.d_mhz = p.center_mhz;
  out.d_err_mhz = p.uncertainty_mhz;
  out.e_is_upper_bound = true;
  double fwhm = zero_field_spec.meta.linewidth_fwhm_mhz;
  if (!(fwhm > 0) && p.curvature > 0 && p.depth > 0)
    fwhm = std::sqrt(8.0 * p.depth / p.curvature);
  out.e_mhz = fwhm > 0 ? 0.5 * fwhm : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Field calibration.

namespace {

Eigen::Vector3d direction_from_angles(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
          std::cos(theta)};
}

double assignment_cost(const std::vector<double>& observed,
                       const std::vector<double>& predicted) {
  double cost = 0.0;
  for (double obs : observed) {
    double best = std::numeric_limits<double>::infinity();
    for (double pred : predicted) best = std::min(best, std::abs(obs - pred));
    cost += best * best;
  }
  return cost;
}

}  // namespace

FieldCalibration calibrate_field(const std::vector<PeakEstimate>& peaks,
                                 const SpinSystem& sys_template) {
  sys_template.validate();

  std::vector<double> observed;
  for (const PeakEstimate& p : peaks) observed.push_back(p.center_mhz);
  std::sort(observed.begin(), observed.end());
  std::vector<double> distinct;
  for (double f : observed)
    if (distinct.empty() || f - distinct.back() > 1e-6) distinct.push_back(f);
  if (distinct.size() < 3)
    throw std::invalid_argument(
        "calibrate_field: under-determined (need >= 3 distinct peak centers)");

  const auto systems = all_orientation_systems(sys_template.d_mhz, sys_template.e_mhz,
                                               sys_template.constants);

  auto predict = [&](double b, const Eigen::Vector3d& dir) {
    FieldVector f{b * dir.normalized()};
    std::vector<double> out;
    for (const auto& [o, t] : transition_spectrum(systems, f)) {
      out.push_back(t.f_minus_mhz);
      out.push_back(t.f_plus_mhz);
    }
    return out;
  };

  auto cost = [&](const Eigen::VectorXd& x) {
    const double b = x(0);
    if (!(b >= 0) || b > 9e4) return std::numeric_limits<double>::infinity();
    const Eigen::Vector3d dir = direction_from_angles(x(1), x(2));
    return assignment_cost(distinct, predict(b, dir));
  };

  // Magnitude seed from the outer-peak span; the span underestimates |B|
  // when no orientation is well aligned, so try a few scalings.
  const double gamma = sys_template.constants.gamma_nv_mhz_per_g;
  const double span = distinct.back() - distinct.front();
  const double b_span = std::max(span / (2.0 * gamma), 1.0);

  SimplexOptions sopts;
  sopts.x_tolerance = 1e-12;
  sopts.f_tolerance = 1e-24;
  sopts.max_iterations = 3000;

  Eigen::VectorXd best_x;
  double best_cost = std::numeric_limits<double>::infinity();
  auto try_start = [&](double b0, double theta, double phi) {
    Eigen::VectorXd x0(3);
    x0 << b0, theta, phi;
    Eigen::VectorXd step(3);
    step << std::max(0.05 * b_span, 0.5), 0.12, 0.12;
    const SimplexResult r = nelder_mead(cost, x0, step, sopts);
    if (r.fmin < best_cost) {
      best_cost = r.fmin;
      best_x = r.x;
    }
  };

  // The span underestimates |B| by up to 1/max_k|cos| = sqrt(3).
  const double scales[] = {1.0, 1.2, 1.45, 1.732};
  for (const NvOrientation& o : nv_orientations()) {
    const double theta = std::acos(std::clamp(o.axis.z(), -1.0, 1.0));
    const double phi = std::atan2(o.axis.y(), o.axis.x());
    for (double scale : scales) try_start(b_span * scale, theta, phi);
  }

  // Randomized restarts until the residual reaches the noise floor of the
  // peak centers; merged peaks leave shallow local minima behind.
  const double target_cost = 4e-4 * static_cast<double>(distinct.size());  // 0.02 MHz rms
  for (int trial = 0; trial < 120 && best_cost > target_cost; ++trial) {
    const double u = rng::uniform(0x5eedULL, static_cast<std::uint64_t>(trial), 0ULL);
    const double v = rng::uniform(0x5eedULL, static_cast<std::uint64_t>(trial), 1ULL);
    const double w = rng::uniform(0x5eedULL, static_cast<std::uint64_t>(trial), 2ULL);
    try_start(b_span * (0.8 + 1.2 * u), std::acos(2.0 * v - 1.0),
              2.0 * std::numbers::pi * w);
  }

  // Local polish around the best point.
  {
    Eigen::VectorXd x0 = best_x;
    Eigen::VectorXd step(3);
    step << 0.02 * (1.0 + std::abs(x0(0))), 0.01, 0.01;
    SimplexOptions polish = sopts;
    const SimplexResult r = nelder_mead(cost, x0, step, polish);
    if (r.fmin < best_cost) {
      best_cost = r.fmin;
      best_x = r.x;
    }
  }

  FieldCalibration out;
  out.b_magnitude_gauss = best_x(0);
  out.b_direction = direction_from_angles(best_x(1), best_x(2));
  out.residual_rms_mhz = std::sqrt(best_cost / static_cast<double>(distinct.size()));
  return out;
}

}  // namespace nvlab
