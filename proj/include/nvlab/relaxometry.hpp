#ifndef NVLAB_RELAXOMETRY_HPP
#define NVLAB_RELAXOMETRY_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nvlab/spin_core.hpp"

// T1 measurement protocol on NV ensembles: optical pumping into m_S = 0,
// dark evolution under a uniform pairwise relaxation rate, an optional
// microwave pi pulse, and differential normalized fluorescence readout.
namespace nvlab {

enum class PiTarget { plus_one, minus_one };

struct PulseSequence {
  double pump_duration_us = 50.0;
  std::vector<double> tau_us;  // strictly increasing, all > 0
  PiTarget pi_target = PiTarget::minus_one;
  double readout_window_us = 5.0;
  int repeats = 5;
  int averages = 1024;
  void validate() const;
};

// Sublevel populations ordered {|+1>, |0>, |-1>}.
struct GroundStatePopulations {
  std::array<double, 3> p{0.0, 1.0, 0.0};
  void validate() const;  // each in [0,1], sum == 1 to 1e-9
};

enum class RateFamily { delta, log_normal };

struct RateDistribution {
  RateFamily family = RateFamily::delta;
  double median_t1_ms = 3.0;
  double sigma_log = 0.0;  // spread of ln(T1); delta requires 0
  void validate() const;
};

struct DecayCurve {
  std::vector<double> tau_us;
  std::vector<double> normalized;     // I(tau), I(tau_first) == 1
  std::vector<double> branch_no_pi;   // raw fluorescence, no-pi branch
  std::vector<double> branch_pi;      // raw fluorescence, pi branch
  double noise_rms = 0.0;
  void validate() const;
};

struct RateResonance {
  double b_gauss = 0.0;
  double width_gauss = 10.0;
  double relative_amplitude = 1.0;
};

// 1/T1(B) = phonon + dipolar * concentration * (1 + sum of Lorentzians in B).
struct RateModel {
  double phonon_rate_per_s = 60.8;
  double dipolar_coeff_per_s_ppm = 35.0;
  std::vector<RateResonance> resonances;
  double concentration_ppm = 1.0;
  void validate() const;
};

// Uniform pairwise flip rate W = 1/(3*T1) between all sublevel pairs;
// closed form p(tau) = 1/3 + (p0 - 1/3) exp(-tau/T1) componentwise.
GroundStatePopulations evolve_dark(const GroundStatePopulations& p0, double t1_ms,
                                   double tau_us);

// Exact swap of the |0> population with |+1> or |-1>.
GroundStatePopulations apply_pi_pulse(const GroundStatePopulations& p, PiTarget target);

// Full differential protocol over an ensemble whose per-center T1 is drawn
// from `dist` (counter-seeded: member i's draw depends only on (seed, i)).
// I(tau) = (F_nopi - F_pi)(tau) / (F_nopi - F_pi)(tau_first).
DecayCurve simulate_sequence(const PulseSequence& seq, const RateDistribution& dist,
                             std::size_t ensemble_size, double readout_contrast,
                             double noise_rms = 0.0, std::uint64_t seed = 0);

std::vector<std::pair<double, double>> rate_vs_field(const RateModel& model,
                                                     const std::vector<double>& b_gauss);

// Calibrated concentration -> rate-distribution map: median rate follows the
// default field model at B = 30 G and the log spread grows with
// concentration, reaching the delta family as concentration -> 0.
RateDistribution concentration_to_sigma(double concentration_ppm,
                                        double coupling_scale = 1.2);

// Default model: resonance centers from degeneracy_scan over 0-700 G along
// [111]; amplitudes and widths are artifact calibration constants.
RateModel default_rate_model(double concentration_ppm,
                             const PhysicalConstants& constants = {});

// Log- or linearly-spaced grids for tau lists and field scans.
std::vector<double> log_spaced(double lo, double hi, int n);
std::vector<double> linear_spaced(double lo, double hi, int n);

}  // namespace nvlab

#endif
