#include "nvlab/relaxometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nvlab/rng.hpp"

namespace nvlab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr std::uint64_t kTagT1 = 0x7431;
constexpr std::uint64_t kTagNoiseNoPi = 0xA0;
constexpr std::uint64_t kTagNoisePi = 0xA1;

}  // namespace

void PulseSequence::validate() const {
  if (!(pump_duration_us > 0) || !(readout_window_us > 0))
    fail("PulseSequence: durations must be positive");
  if (repeats < 1 || averages < 1) fail("PulseSequence: repeats/averages must be >= 1");
  if (tau_us.empty()) fail("PulseSequence: tau list is empty");
  for (std::size_t i = 0; i < tau_us.size(); ++i) {
    if (!(tau_us[i] > 0)) fail("PulseSequence: tau values must be positive");
    if (i > 0 && !(tau_us[i] > tau_us[i - 1]))
      fail("PulseSequence: tau list must be strictly increasing");
  }
}

void GroundStatePopulations::validate() const {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0))
      fail("GroundStatePopulations: values must lie in [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail("GroundStatePopulations: populations must sum to 1");
}

void RateDistribution::validate() const {
  if (!(median_t1_ms > 0)) fail("RateDistribution: median T1 must be positive");
  if (!(sigma_log >= 0)) fail("RateDistribution: sigma_log must be non-negative");
  if (family == RateFamily::delta && sigma_log != 0.0)
    fail("RateDistribution: delta family requires sigma_log == 0");
}

void DecayCurve::validate() const {
  const std::size_t n = tau_us.size();
  if (n == 0) fail("DecayCurve: empty");
  if (normalized.size() != n) fail("DecayCurve: tau/I length mismatch");
  if (!branch_no_pi.empty() && (branch_no_pi.size() != n || branch_pi.size() != n))
    fail("DecayCurve: branch length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(tau_us[i] > tau_us[i - 1]))
      fail("DecayCurve: tau must be strictly increasing");
    if (!(normalized[i] >= -0.1 && normalized[i] <= 1.1))
      fail("DecayCurve: normalized signal outside [-0.1, 1.1]");
  }
}

void RateModel::validate() const {
  if (!(phonon_rate_per_s >= 0) || !(dipolar_coeff_per_s_ppm >= 0))
    fail("RateModel: rates must be non-negative");
  if (!(concentration_ppm >= 0)) fail("RateModel: concentration must be non-negative");
  for (const RateResonance& r : resonances) {
    if (!(r.width_gauss > 0)) fail("RateModel: resonance widths must be positive");
    if (!(r.relative_amplitude >= 0)) fail("RateModel: resonance amplitudes must be >= 0");
  }
}

GroundStatePopulations evolve_dark(const GroundStatePopulations& p0, double t1_ms,
                                   double tau_us) {
  p0.validate();
  if (!(t1_ms > 0)) fail("evolve_dark: T1 must be positive");
  if (!(tau_us >= 0)) fail("evolve_dark: tau must be non-negative");
  const double decay = std::exp(-(tau_us / 1000.0) / t1_ms);
  GroundStatePopulations out;
  for (int i = 0; i < 3; ++i)
    out.p[i] = 1.0 / 3.0 + (p0.p[i] - 1.0 / 3.0) * decay;
  return out;
}

GroundStatePopulations apply_pi_pulse(const GroundStatePopulations& p, PiTarget target) {
  p.validate();
  GroundStatePopulations out = p;
  std::swap(out.p[1], out.p[target == PiTarget::minus_one ? 2 : 0]);
  return out;
}

DecayCurve simulate_sequence(const PulseSequence& seq, const RateDistribution& dist,
                             std::size_t ensemble_size, double readout_contrast,
                             double noise_rms, std::uint64_t seed) {
  seq.validate();
  dist.validate();
  if (ensemble_size < 1) fail("simulate_sequence: ensemble size must be >= 1");
  if (!(readout_contrast > 0 && readout_contrast <= 0.5))
    fail("simulate_sequence: readout contrast must be in (0, 0.5]");
  if (!(noise_rms >= 0)) fail("simulate_sequence: noise rms must be >= 0");

  // Per-center relaxation rates, seeded by member index only.
  std::vector<double> inv_t1;
  if (dist.family == RateFamily::delta) {
    inv_t1.assign(1, 1.0 / dist.median_t1_ms);
  } else {
    inv_t1.resize(ensemble_size);
    for (std::size_t i = 0; i < ensemble_size; ++i) {
      const double z = rng::normal(seed, kTagT1, static_cast<std::uint64_t>(i));
      inv_t1[i] = 1.0 / (dist.median_t1_ms * std::exp(dist.sigma_log * z));
    }
  }

  const std::size_t n = seq.tau_us.size();
  DecayCurve out;
  out.tau_us = seq.tau_us;
  out.branch_no_pi.resize(n);
  out.branch_pi.resize(n);
  out.normalized.resize(n);

  const double noise_sigma =
      noise_rms / std::sqrt(static_cast<double>(seq.averages) *
                            static_cast<double>(seq.repeats));
  out.noise_rms = noise_sigma;

  // Ensemble mean of exp(-tau/T1); both branches share it. The pump sets
  // p = (0, 1, 0); the pi branch swaps |0> with the target sublevel.
  for (std::size_t j = 0; j < n; ++j) {
    const double tau_ms = seq.tau_us[j] / 1000.0;
    double m = 0.0;
    for (double r : inv_t1) m += std::exp(-tau_ms * r);
    m /= static_cast<double>(inv_t1.size());

    const double p0_no_pi = 1.0 / 3.0 + (2.0 / 3.0) * m;
    const double p0_pi = 1.0 / 3.0 - (1.0 / 3.0) * m;
    double f_no_pi = 1.0 - readout_contrast * (1.0 - p0_no_pi);
    double f_pi = 1.0 - readout_contrast * (1.0 - p0_pi);
    if (noise_sigma > 0) {
      f_no_pi += noise_sigma * rng::normal(seed, kTagNoiseNoPi, static_cast<std::uint64_t>(j),
                                           static_cast<std::uint64_t>(seq.averages),
                                           static_cast<std::uint64_t>(seq.repeats));
      f_pi += noise_sigma * rng::normal(seed, kTagNoisePi, static_cast<std::uint64_t>(j),
                                        static_cast<std::uint64_t>(seq.averages),
                                        static_cast<std::uint64_t>(seq.repeats));
    }
    out.branch_no_pi[j] = f_no_pi;
    out.branch_pi[j] = f_pi;
  }

  const double denom = out.branch_no_pi[0] - out.branch_pi[0];
  if (!(std::abs(denom) > 0))
    throw std::runtime_error("simulate_sequence: vanishing normalization difference");
  for (std::size_t j = 0; j < n; ++j)
    out.normalized[j] = (out.branch_no_pi[j] - out.branch_pi[j]) / denom;

  out.validate();
  return out;
}

std::vector<std::pair<double, double>> rate_vs_field(const RateModel& model,
                                                     const std::vector<double>& b_gauss) {
  model.validate();
  std::vector<std::pair<double, double>> out;
  out.reserve(b_gauss.size());
  for (double b : b_gauss) {
    double resonant = 1.0;
    for (const RateResonance& r : model.resonances) {
      const double u = (b - r.b_gauss) / r.width_gauss;
      resonant += r.relative_amplitude / (1.0 + u * u);
    }
    out.emplace_back(b, model.phonon_rate_per_s +
                            model.dipolar_coeff_per_s_ppm * model.concentration_ppm * resonant);
  }
  return out;
}

RateModel default_rate_model(double concentration_ppm, const PhysicalConstants& constants) {
  if (!(concentration_ppm >= 0)) fail("default_rate_model: concentration must be >= 0");

  SpinSystem prototype;
  prototype.constants = constants;
  prototype.d_mhz = constants.zero_field_d_mhz;
  FieldRange range{0.0, 700.0, 2.0};
  const auto resonances =
      degeneracy_scan(Eigen::Vector3d(1, 1, 1), range, DegeneracyTargets{}, prototype);

  RateModel model;
  model.concentration_ppm = concentration_ppm;
  for (const ResonanceField& r : resonances) {
    RateResonance res;
    res.b_gauss = r.b_gauss;
    if (r.b_gauss < 1.0) {
      res.width_gauss = 12.0;
      res.relative_amplitude = 1.0;
    } else if (r.kind == ResonanceKind::nv_p1) {
      res.width_gauss = 10.0;
      res.relative_amplitude = 0.6;
    } else {
      res.width_gauss = 10.0;
      res.relative_amplitude = 0.8;
    }
    model.resonances.push_back(res);
  }
  return model;
}

RateDistribution concentration_to_sigma(double concentration_ppm, double coupling_scale) {
  if (!(concentration_ppm > 0)) fail("concentration_to_sigma: concentration must be > 0");
  if (!(coupling_scale >= 0)) fail("concentration_to_sigma: coupling scale must be >= 0");

  const RateModel model = default_rate_model(concentration_ppm);
  const double rate = rate_vs_field(model, {30.0}).front().second;  // s^-1

  RateDistribution dist;
  dist.median_t1_ms = 1000.0 / rate;
  dist.sigma_log = coupling_scale * concentration_ppm / (concentration_ppm + 2.0);
  if (dist.sigma_log < 1e-6) {
    dist.family = RateFamily::delta;
    dist.sigma_log = 0.0;
  } else {
    dist.family = RateFamily::log_normal;
  }
  dist.validate();
  return dist;
}

std::vector<double> log_spaced(double lo, double hi, int n) {
  if (!(lo > 0) || !(hi > lo) || n < 2)
    fail("log_spaced: need 0 < lo < hi and n >= 2");
  std::vector<double> out(n);
  const double step = std::log(hi / lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[i] = lo * std::exp(step * i);
  out.back() = hi;
  return out;
}

std::vector<double> linear_spaced(double lo, double hi, int n) {
  if (!(hi >= lo) || n < 1) fail("linear_spaced: need hi >= lo and n >= 1");
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[i] = lo + step * i;
  out.back() = hi;
  return out;
}

}  // namespace nvlab
