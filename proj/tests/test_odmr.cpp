#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nvlab/fitting.hpp"
#include "nvlab/odmr.hpp"
#include "nvlab/rng.hpp"
#include "oracles.hpp"

using namespace nvlab;

namespace {

Eigen::Vector3d axis111() { return Eigen::Vector3d(1, 1, 1).normalized(); }

OdmrSpectrum four_dip_spectrum(double fwhm = 6.0, double contrast = 0.02,
                           double noise = 0.0) {
  LineshapeParams lines;
  lines.fwhm_mhz = fwhm;
  lines.contrast_per_center = contrast;
  return simulate_odmr(all_orientation_systems(2870.0, 0.0),
                       FieldVector{30.0 * axis111()}, lines,
                       FrequencyGrid{2700.0, 3050.0, 0.2}, noise, 5);
}

std::vector<double> true_transitions(const std::vector<SpinSystem>& systems,
                                     const FieldVector& field) {
  std::vector<double> out;
  for (const auto& [o, t] : transition_spectrum(systems, field)) {
    out.push_back(t.f_minus_mhz);
    out.push_back(t.f_plus_mhz);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// simulate_odmr

TEST_CASE("four-dip spectrum at 30 G along [111] with 3:1 inner depth") {
  const auto spec = four_dip_spectrum();
  const auto peaks = find_peaks(spec, 0.01);
  REQUIRE(peaks.size() == 4);

  CHECK(std::abs(peaks[0].center_mhz - 2785.925) < 0.3);
  CHECK(std::abs(peaks[1].center_mhz - 2845.246) < 0.3);
  CHECK(std::abs(peaks[2].center_mhz - 2901.317) < 0.3);
  CHECK(std::abs(peaks[3].center_mhz - 2954.075) < 0.3);

  // inner dips stack the three equivalent off-axis orientations
  CHECK(peaks[1].depth / peaks[0].depth == doctest::Approx(3.0).epsilon(0.05));
  CHECK(peaks[2].depth / peaks[3].depth == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("zero field: one dip for a single orientation, strain splits it") {
  LineshapeParams lines;
  lines.fwhm_mhz = 3.0;
  lines.contrast_per_center = 0.02;
  const FrequencyGrid grid{2840.0, 2900.0, 0.1};

  const std::vector<SpinSystem> one = {all_orientation_systems(2870.0, 0.0)[0]};
  const auto spec = simulate_odmr(one, FieldVector{}, lines, grid);
  const auto peaks = find_peaks(spec, 0.01);
  REQUIRE(peaks.size() == 1);
  CHECK(std::abs(peaks[0].center_mhz - 2870.0) < 1e-6);
  // two degenerate transitions stack
  CHECK(peaks[0].depth == doctest::Approx(2.0 * 0.02).epsilon(0.01));

  const std::vector<SpinSystem> strained = {all_orientation_systems(2870.0, 4.0)[0]};
  const auto split = simulate_odmr(strained, FieldVector{}, lines, grid);
  const auto split_peaks = find_peaks(split, 0.01);
  REQUIRE(split_peaks.size() == 2);
  CHECK(std::abs(split_peaks[0].center_mhz - 2866.0) < 0.1);
  CHECK(std::abs(split_peaks[1].center_mhz - 2874.0) < 0.1);
}

TEST_CASE("grid must cover every transition; error names the frequency") {
  LineshapeParams lines;
  const FrequencyGrid grid{2800.0, 2900.0, 0.2};
  try {
    simulate_odmr(all_orientation_systems(2870.0, 0.0), FieldVector{30.0 * axis111()},
                  lines, grid);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& err) {
    CHECK(std::string(err.what()).find("2785.925") != std::string::npos);
  }
}

TEST_CASE("excessive stacked contrast is rejected") {
  LineshapeParams lines;
  lines.contrast_per_center = 0.5;  // 8 transitions stack at 2870
  CHECK_THROWS_AS(simulate_odmr(all_orientation_systems(2870.0, 0.0), FieldVector{},
                                lines, FrequencyGrid{2700.0, 3050.0, 0.5}),
                  std::invalid_argument);
}

TEST_CASE("noisy synthesis is seed-deterministic") {
  const auto a = four_dip_spectrum(6.0, 0.02, 0.002);
  const auto b = four_dip_spectrum(6.0, 0.02, 0.002);
  CHECK(a.signal == b.signal);
  const auto peaks = find_peaks(a, 0.015);
  CHECK(peaks.size() == 4);
}

// ---------------------------------------------------------------------------
// find_peaks

TEST_CASE("find_peaks on a flat spectrum returns nothing") {
  OdmrSpectrum flat;
  for (int i = 0; i < 100; ++i) {
    flat.freqs_mhz.push_back(2800.0 + i);
    flat.signal.push_back(1.0);
  }
  CHECK(find_peaks(flat, 0.1).empty());
}

TEST_CASE("find_peaks input validation") {
  const auto spec = four_dip_spectrum();
  CHECK_THROWS_AS(find_peaks(spec, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(find_peaks(spec, 1.0), std::invalid_argument);
  OdmrSpectrum tiny;
  tiny.freqs_mhz = {1, 2, 3};
  tiny.signal = {1, 0.5, 1};
  CHECK_THROWS_AS(find_peaks(tiny, 0.1), std::invalid_argument);
}

TEST_CASE("merged dips at 0.3 linewidth separation give one center") {
  const double w = 6.0, d1 = 0.03, d2 = 0.06;
  const double f1 = 2868.0, f2 = f1 + 0.3 * w;
  auto value = [&](double f) {
    const double u1 = 2.0 * (f - f1) / w, u2 = 2.0 * (f - f2) / w;
    return 1.0 - d1 / (1.0 + u1 * u1) - d2 / (1.0 + u2 * u2);
  };
  OdmrSpectrum spec;
  spec.meta.linewidth_fwhm_mhz = w;
  for (double f = 2840.0; f <= 2900.0; f += 0.2) {
    spec.freqs_mhz.push_back(f);
    spec.signal.push_back(value(f));
  }
  const auto peaks = find_peaks(spec, 0.02);
  REQUIRE(peaks.size() == 1);

  // numeric oracle: minimum of the analytic sum on a fine grid
  double best_f = 0.0, best_v = 2.0;
  for (double f = f1 - w; f <= f2 + w; f += 1e-4) {
    const double v = value(f);
    if (v < best_v) {
      best_v = v;
      best_f = f;
    }
  }
  CHECK(std::abs(peaks[0].center_mhz - best_f) < 0.1);
  const double weighted_mean = (d1 * f1 + d2 * f2) / (d1 + d2);
  CHECK(std::abs(best_f - weighted_mean) < 0.35 * w);  // oracle sits near the mean
}

TEST_CASE("plateau minima break toward lower frequency") {
  OdmrSpectrum spec;
  for (int i = 0; i < 60; ++i) {
    spec.freqs_mhz.push_back(2800.0 + i);
    spec.signal.push_back(1.0);
  }
  spec.signal[30] = 0.9;
  spec.signal[31] = 0.9;
  const auto peaks = find_peaks(spec, 0.05);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].center_mhz == doctest::Approx(2830.5).epsilon(1e-3));
}

TEST_CASE("min_depth filters shallow dips") {
  const auto spec = four_dip_spectrum();  // outer dips ~0.02, inner ~0.06
  CHECK(find_peaks(spec, 0.04).size() == 2);
  CHECK(find_peaks(spec, 0.01).size() == 4);
}

TEST_CASE("round trip: find_peaks recovers transitions within 0.2 linewidth") {
  for (std::uint64_t trial = 0; trial < 25; ++trial) {
    const double d = 2866.0 + 8.0 * rng::uniform(trial, 0);
    const double e = 3.0 * rng::uniform(trial, 1);
    const int orient = static_cast<int>(trial % 4);
    const SpinSystem sys = all_orientation_systems(d, e)[orient];
    // axial-dominant field keeps the two lines well separated
    const double b = 8.0 + 30.0 * rng::uniform(trial, 2);
    const FieldVector field{b * sys.orientation.axis};

    LineshapeParams lines;
    lines.fwhm_mhz = 4.0;
    lines.contrast_per_center = 0.03;
    const auto spec = simulate_odmr({sys}, field, lines, FrequencyGrid{2600.0, 3150.0, 0.2});
    const auto peaks = find_peaks(spec, 0.02);
    const auto truth = true_transitions({sys}, field);
    REQUIRE(peaks.size() == truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
      CHECK(std::abs(peaks[i].center_mhz - truth[i]) < 0.2 * lines.fwhm_mhz);
  }
}

TEST_CASE("raising contrast deepens dips without moving centers") {
  const auto lo = four_dip_spectrum(6.0, 0.015);
  const auto hi = four_dip_spectrum(6.0, 0.03);
  const auto pl = find_peaks(lo, 0.01);
  const auto ph = find_peaks(hi, 0.02);
  REQUIRE(pl.size() == 4);
  REQUIRE(ph.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(ph[i].depth > pl[i].depth * 1.9);
    CHECK(std::abs(ph[i].center_mhz - pl[i].center_mhz) < 1e-9);
  }
}

TEST_CASE("inner to outer integrated area ratio is 3:1 within 2 percent") {
  const auto spec = four_dip_spectrum(4.0, 0.015);
  const auto fit = fit_lorentzian_dip(spec.freqs_mhz, spec.signal, 4);
  REQUIRE(fit.components.size() == 4);
  REQUIRE(fit.converged);
  // lorentzian component area = (pi/2) * depth * fwhm
  const double outer = fit.components[0].depth * fit.components[0].fwhm_mhz;
  const double inner = fit.components[1].depth * fit.components[1].fwhm_mhz;
  const double outer2 = fit.components[3].depth * fit.components[3].fwhm_mhz;
  const double inner2 = fit.components[2].depth * fit.components[2].fwhm_mhz;
  CHECK(inner / outer == doctest::Approx(3.0).epsilon(0.02));
  CHECK(inner2 / outer2 == doctest::Approx(3.0).epsilon(0.02));
}

// ---------------------------------------------------------------------------
// extract_d_e

TEST_CASE("extract_d_e from two resolved peaks") {
  LineshapeParams lines;
  lines.fwhm_mhz = 3.0;
  lines.contrast_per_center = 0.02;
  const auto spec = simulate_odmr({all_orientation_systems(2870.0, 4.0)[0]},
                                  FieldVector{}, lines, FrequencyGrid{2840.0, 2900.0, 0.1});
  const auto result = extract_d_e(spec);
  CHECK(!result.e_is_upper_bound);
  CHECK(std::abs(result.d_mhz - 2870.0) < 0.1);
  CHECK(std::abs(result.e_mhz - 4.0) < 0.1);
}

TEST_CASE("extract_d_e round trip at E = 6, linewidth 5") {
  LineshapeParams lines;
  lines.fwhm_mhz = 5.0;
  lines.contrast_per_center = 0.02;
  const auto spec = simulate_odmr({all_orientation_systems(2870.0, 6.0)[0]},
                                  FieldVector{}, lines, FrequencyGrid{2830.0, 2910.0, 0.1});
  const auto result = extract_d_e(spec);
  CHECK(!result.e_is_upper_bound);
  CHECK(std::abs(result.d_mhz - 2870.0) < 0.2);
  CHECK(std::abs(result.e_mhz - 6.0) < 0.3);
}

TEST_CASE("extract_d_e flags an unresolved single peak with an E bound") {
  LineshapeParams lines;
  lines.fwhm_mhz = 10.0;
  lines.contrast_per_center = 0.02;
  const auto spec = simulate_odmr({all_orientation_systems(2870.0, 1.5)[0]},
                                  FieldVector{}, lines, FrequencyGrid{2820.0, 2920.0, 0.1});
  const auto result = extract_d_e(spec);
  CHECK(result.e_is_upper_bound);
  CHECK(std::abs(result.d_mhz - 2870.0) < 0.5);
  CHECK(result.e_mhz == doctest::Approx(5.0).epsilon(0.05));  // linewidth / 2
}

TEST_CASE("extract_d_e rejects spectra with more than two peaks") {
  CHECK_THROWS_AS(extract_d_e(four_dip_spectrum()), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// calibrate_field

namespace {

std::vector<PeakEstimate> peaks_from_field(double b, const Eigen::Vector3d& dir,
                                           const SpinSystem& tmpl) {
  const auto systems =
      all_orientation_systems(tmpl.d_mhz, tmpl.e_mhz, tmpl.constants);
  std::vector<double> freqs = true_transitions(systems, FieldVector{b * dir.normalized()});
  // merge near-coincident transitions the way a peak finder would
  std::vector<PeakEstimate> peaks;
  for (double f : freqs) {
    if (!peaks.empty() && f - peaks.back().center_mhz < 0.5) continue;
    PeakEstimate p;
    p.center_mhz = f;
    p.depth = 0.02;
    peaks.push_back(p);
  }
  return peaks;
}

}  // namespace

TEST_CASE("calibrate_field inverts the forward model at 30 G along [111]") {
  SpinSystem tmpl = all_orientation_systems(2870.0, 0.0)[0];
  const auto peaks = peaks_from_field(30.0, axis111(), tmpl);
  const auto cal = calibrate_field(peaks, tmpl);
  CHECK(std::abs(cal.b_magnitude_gauss - 30.0) < 0.5);
  CHECK(oracle::direction_error_deg(cal.b_direction, axis111()) < 1.0);
  CHECK(cal.residual_rms_mhz < 0.5);
}

TEST_CASE("calibrate_field recovers a field tilted 5 degrees off [111]") {
  SpinSystem tmpl = all_orientation_systems(2870.0, 0.0)[0];
  // tilt 5 degrees toward the lab x axis
  const Eigen::Vector3d axis = axis111();
  const Eigen::Vector3d perp = (Eigen::Vector3d::UnitX() -
                                axis * axis.x()).normalized();
  const double tilt = 5.0 * std::numbers::pi / 180.0;
  const Eigen::Vector3d dir = (std::cos(tilt) * axis + std::sin(tilt) * perp).normalized();

  const auto peaks = peaks_from_field(30.0, dir, tmpl);
  const auto cal = calibrate_field(peaks, tmpl);
  CHECK(std::abs(cal.b_magnitude_gauss - 30.0) < 0.5);
  CHECK(oracle::direction_error_deg(cal.b_direction, dir) < 1.0);
}

TEST_CASE("calibrate_field needs at least three distinct centers") {
  SpinSystem tmpl = all_orientation_systems(2870.0, 0.0)[0];
  std::vector<PeakEstimate> one(1);
  one[0].center_mhz = 2870.0;
  CHECK_THROWS_AS(calibrate_field(one, tmpl), std::invalid_argument);

  std::vector<PeakEstimate> dupes(4);
  for (auto& p : dupes) p.center_mhz = 2870.0;
  dupes[1].center_mhz = 2900.0;
  CHECK_THROWS_AS(calibrate_field(dupes, tmpl), std::invalid_argument);
}

TEST_CASE("calibrate_field handles random fields between 20 and 100 G") {
  SpinSystem tmpl = all_orientation_systems(2870.0, 0.0)[0];
  int ok = 0;
  const int trials = 12;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const double b = 20.0 + 80.0 * rng::uniform(t, 101);
    const double z = 2.0 * rng::uniform(t, 102) - 1.0;
    const double phi = 2.0 * std::numbers::pi * rng::uniform(t, 103);
    const Eigen::Vector3d dir(std::sqrt(1 - z * z) * std::cos(phi),
                              std::sqrt(1 - z * z) * std::sin(phi), z);
    const auto peaks = peaks_from_field(b, dir, tmpl);
    if (peaks.size() < 3) continue;
    const auto cal = calibrate_field(peaks, tmpl);
    if (std::abs(cal.b_magnitude_gauss - b) < 0.5 &&
        oracle::direction_error_deg(cal.b_direction, dir) < 1.0)
      ++ok;
  }
  CHECK(ok >= trials - 1);
}
