// nvlab: forward-simulate NV- ground-state spin physics (ODMR spectra, T1
// relaxation protocols, rate-vs-field models) and solve the matching inverse
// problems from delimited data files.

#include <CLI11.hpp>
#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nvlab/datalab.hpp"
#include "nvlab/fitting.hpp"
#include "nvlab/odmr.hpp"
#include "nvlab/relaxometry.hpp"
#include "nvlab/spin_core.hpp"
#include "run_config.hpp"

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitParse = 3;
constexpr int kExitFit = 4;

// Fit-specific failures (degenerate data, non-convergence) get their own
// exit class, distinct from config and file-parse errors.
struct FitFailure {
  std::string message;
};

std::string flag_for(const std::string& key) {
  std::string flag = "--";
  for (char c : key) flag += c == '_' ? '-' : c;
  return flag;
}

const double kUnset = std::numeric_limits<double>::quiet_NaN();
bool is_set(double v) { return !std::isnan(v); }

// Couples a CLI11 subcommand with config-file bindings; command-line flags
// override config values, which override defaults.
struct CommandContext {
  CLI::App* cmd = nullptr;
  nvcli::ConfigBinder binder;
  std::string config_path;

  explicit CommandContext(CLI::App* c) : cmd(c) {
    cmd->add_option("--config", config_path, "flat key = value config file");
  }

  CLI::Option* number(const std::string& key, double* target, const std::string& desc) {
    binder.bind_number(key, target);
    return cmd->add_option(flag_for(key), *target, desc)->capture_default_str();
  }
  CLI::Option* integer(const std::string& key, int* target, const std::string& desc) {
    binder.bind_int(key, target);
    return cmd->add_option(flag_for(key), *target, desc)->capture_default_str();
  }
  CLI::Option* unsigned_int(const std::string& key, std::uint64_t* target,
                            const std::string& desc) {
    binder.bind_unsigned(key, target);
    return cmd->add_option(flag_for(key), *target, desc)->capture_default_str();
  }
  CLI::Option* text(const std::string& key, std::string* target, const std::string& desc) {
    binder.bind_text(key, target);
    return cmd->add_option(flag_for(key), *target, desc)->capture_default_str();
  }
  CLI::Option* flag(const std::string& key, bool* target, const std::string& desc) {
    binder.bind_flag(key, target);
    return cmd->add_flag(flag_for(key), *target, desc);
  }

  // Load + apply the config file; flags that were passed keep their values.
  void apply_config() const {
    if (config_path.empty()) return;
    const nvcli::RunConfig cfg = nvcli::RunConfig::load(config_path, binder.keys());
    binder.apply(cfg, [this](const std::string& key) {
      return cmd->count(flag_for(key)) > 0;
    });
  }
};

nvlab::Lineshape parse_shape(const std::string& name) {
  if (name == "lorentzian") return nvlab::Lineshape::lorentzian;
  if (name == "gaussian") return nvlab::Lineshape::gaussian;
  throw nvcli::ConfigError("shape must be 'lorentzian' or 'gaussian', got '" + name + "'");
}

std::vector<double> make_tau_list(double lo, double hi, int n, const std::string& spacing) {
  if (spacing == "log") return nvlab::log_spaced(lo, hi, n);
  if (spacing == "linear") return nvlab::linear_spaced(lo, hi, n);
  throw nvcli::ConfigError("tau_spacing must be 'log' or 'linear', got '" + spacing + "'");
}

void emit(const std::string& path, const std::string& content) {
  nvlab::write_text_file(path, content);
}

// ---------------------------------------------------------------------------
// odmr-sim

void register_odmr_sim(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    double d = 2870.0, e = 0.0, gamma = 2.8025;
    double b_mag = 30.0;
    std::string b_dir = "1,1,1", b_vec;
    double linewidth = 6.0, contrast = 0.02;
    std::string shape = "lorentzian";
    double fmin = kUnset, fmax = kUnset, fstep = kUnset;
    double noise = 0.0, min_depth = 0.01;
    std::string orientations = "all";
    std::uint64_t seed = 12345;
    std::string output = "-", peaks_output;
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "odmr-sim", "simulate an ODMR spectrum and report its peaks");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.number("d_mhz", &s->d, "zero-field splitting D [MHz]");
  ctx.number("e_mhz", &s->e, "strain parameter E [MHz]");
  ctx.number("gamma_mhz_per_g", &s->gamma, "NV gyromagnetic constant [MHz/G]");
  ctx.number("b_mag_gauss", &s->b_mag, "field magnitude [G]");
  ctx.text("b_dir", &s->b_dir, "field direction x,y,z (normalized)");
  ctx.text("b_vec_gauss", &s->b_vec, "explicit field vector bx,by,bz [G]; overrides magnitude+direction");
  ctx.number("linewidth_mhz", &s->linewidth, "lineshape FWHM [MHz]");
  ctx.number("contrast", &s->contrast, "fluorescence contrast per orientation transition");
  ctx.text("shape", &s->shape, "lineshape: lorentzian | gaussian");
  ctx.number("fmin_mhz", &s->fmin, "frequency grid start [MHz] (required)");
  ctx.number("fmax_mhz", &s->fmax, "frequency grid end [MHz] (required)");
  ctx.number("fstep_mhz", &s->fstep, "frequency grid step [MHz] (required)");
  ctx.number("noise_rms", &s->noise, "additive gaussian noise rms");
  ctx.number("min_depth", &s->min_depth, "peak report threshold, fraction of baseline");
  ctx.text("orientations", &s->orientations, "all | 0 | 1 | 2 | 3");
  ctx.unsigned_int("seed", &s->seed, "noise seed");
  ctx.text("output", &s->output, "spectrum file ('-' = stdout)");
  ctx.text("peaks_output", &s->peaks_output, "peak report file (default: <output>.peaks)");

  cmd->callback([s] {
    s->ctx->apply_config();
    const std::vector<std::pair<double, std::string>> grid_keys = {
        {s->fmin, "fmin_mhz"}, {s->fmax, "fmax_mhz"}, {s->fstep, "fstep_mhz"}};
    for (const auto& [value, key] : grid_keys)
      if (!is_set(value))
        throw nvcli::ConfigError("missing grid key '" + key + "' (flag " +
                                 flag_for(key) + ")");

    nvlab::PhysicalConstants constants;
    constants.gamma_nv_mhz_per_g = s->gamma;

    std::vector<nvlab::SpinSystem> systems =
        nvlab::all_orientation_systems(s->d, s->e, constants);
    if (s->orientations != "all") {
      const long long idx = nvcli::parse_integer("orientations", s->orientations);
      if (idx < 0 || idx > 3)
        throw nvcli::ConfigError("orientations must be 'all' or an index 0-3");
      systems = {systems[static_cast<std::size_t>(idx)]};
    }

    nvlab::FieldVector field;
    if (!s->b_vec.empty()) {
      field.gauss = nvcli::parse_vector3("b_vec_gauss", s->b_vec);
    } else {
      const Eigen::Vector3d dir = nvcli::parse_vector3("b_dir", s->b_dir);
      if (dir.norm() == 0.0) throw nvcli::ConfigError("b_dir must be a nonzero vector");
      field.gauss = s->b_mag * dir.normalized();
    }

    nvlab::LineshapeParams lines;
    lines.fwhm_mhz = s->linewidth;
    lines.contrast_per_center = s->contrast;
    lines.shape = parse_shape(s->shape);

    const nvlab::FrequencyGrid grid{s->fmin, s->fmax, s->fstep};
    const nvlab::OdmrSpectrum spec =
        nvlab::simulate_odmr(systems, field, lines, grid, s->noise, s->seed);
    const auto peaks = nvlab::find_peaks(spec, s->min_depth);

    std::ostringstream spec_os;
    nvlab::write_spectrum(spec_os, spec);
    emit(s->output, spec_os.str());

    std::ostringstream peaks_os;
    nvlab::write_peak_report(peaks_os, peaks);
    const std::string peaks_path =
        !s->peaks_output.empty() ? s->peaks_output
                                 : (s->output == "-" ? "-" : s->output + ".peaks");
    emit(peaks_path, peaks_os.str());
  });
}

// ---------------------------------------------------------------------------
// t1-sim

void register_t1_sim(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    double median_t1 = 3.0, sigma = 0.0, concentration = kUnset;
    double contrast = 0.3, noise = 0.0;
    std::uint64_t ensemble = 10000, seed = 12345;
    int averages = 1024, repeats = 5, n_tau = 30;
    double pump = 50.0, readout = 5.0, tau_min = 30.0, tau_max = 15000.0;
    std::string spacing = "log", output = "-";
    bool normalized = false;
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "t1-sim", "simulate the differential T1 decay-curve protocol");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.number("median_t1_ms", &s->median_t1, "median T1 of the ensemble [ms]");
  ctx.number("sigma_log", &s->sigma, "log-normal spread of T1 (0 = single rate)");
  ctx.number("concentration_ppm", &s->concentration,
             "derive T1 distribution from NV concentration (overrides t1/sigma)");
  ctx.unsigned_int("ensemble", &s->ensemble, "number of centers in the ensemble");
  ctx.number("readout_contrast", &s->contrast, "fluorescence readout contrast");
  ctx.number("noise_rms", &s->noise, "per-shot noise rms (scaled by 1/sqrt(averages*repeats))");
  ctx.integer("averages", &s->averages, "oscilloscope averages");
  ctx.integer("repeats", &s->repeats, "sequence repeats");
  ctx.number("pump_us", &s->pump, "green pump pulse duration [us]");
  ctx.number("readout_us", &s->readout, "readout window [us]");
  ctx.number("tau_min_us", &s->tau_min, "shortest dark time [us]");
  ctx.number("tau_max_us", &s->tau_max, "longest dark time [us]");
  ctx.integer("n_tau", &s->n_tau, "number of dark times");
  ctx.text("tau_spacing", &s->spacing, "log | linear");
  ctx.unsigned_int("seed", &s->seed, "sampling/noise seed");
  ctx.flag("normalized", &s->normalized, "write normalized I(tau) instead of raw branches");
  ctx.text("output", &s->output, "decay-curve file ('-' = stdout)");

  cmd->callback([s] {
    s->ctx->apply_config();

    nvlab::RateDistribution dist;
    if (is_set(s->concentration)) {
      dist = nvlab::concentration_to_sigma(s->concentration);
    } else {
      dist.median_t1_ms = s->median_t1;
      dist.sigma_log = s->sigma;
      dist.family = s->sigma > 0 ? nvlab::RateFamily::log_normal : nvlab::RateFamily::delta;
    }

    nvlab::PulseSequence seq;
    seq.pump_duration_us = s->pump;
    seq.readout_window_us = s->readout;
    seq.repeats = s->repeats;
    seq.averages = s->averages;
    seq.tau_us = make_tau_list(s->tau_min, s->tau_max, s->n_tau, s->spacing);

    const std::size_t ensemble =
        dist.family == nvlab::RateFamily::delta ? 1 : static_cast<std::size_t>(s->ensemble);
    const nvlab::DecayCurve curve =
        nvlab::simulate_sequence(seq, dist, ensemble, s->contrast, s->noise, s->seed);

    std::ostringstream os;
    nvlab::write_decay_curve(os, curve, !s->normalized);
    emit(s->output, os.str());
  });
}

// ---------------------------------------------------------------------------
// t1-fit

void register_t1_fit(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    std::string input, output = "-";
    bool offset_free = false;
    double beta_fixed = kUnset, tolerance = 1e-12;
    int max_iterations = 400;
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "t1-fit", "fit a stretched exponential to a decay-curve file");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.text("input", &s->input, "decay-curve file, raw or normalized ('-' = stdin)");
  ctx.text("output", &s->output, "fit report file ('-' = stdout)");
  ctx.flag("offset_free", &s->offset_free, "fit a constant offset");
  ctx.number("beta_fixed", &s->beta_fixed, "hold beta at this value");
  ctx.number("tolerance", &s->tolerance, "relative parameter-change tolerance");
  ctx.integer("max_iterations", &s->max_iterations, "iteration cap");

  cmd->callback([s] {
    s->ctx->apply_config();
    if (s->input.empty())
      throw nvcli::ConfigError("missing input file (flag --input)");

    const std::string content = nvlab::read_text_file(s->input);
    std::istringstream is(content);
    const nvlab::DecayCurveFile file = nvlab::read_decay_curve(is, s->input);

    std::vector<double> tau_ms;
    for (double t : file.curve.tau_us) tau_ms.push_back(t / 1000.0);

    nvlab::FitOptions opts;
    opts.offset_free = s->offset_free;
    opts.tolerance = s->tolerance;
    opts.max_iterations = s->max_iterations;
    if (is_set(s->beta_fixed)) opts.beta_fixed = s->beta_fixed;

    nvlab::StretchedExpFit fit;
    try {
      fit = nvlab::fit_stretched_exp(tau_ms, file.curve.normalized, opts);
    } catch (const std::invalid_argument& err) {
      throw FitFailure{err.what()};
    }

    std::ostringstream os;
    nvlab::write_fit_report(os, fit);
    emit(s->output, os.str());
    if (!fit.converged) throw FitFailure{"fit did not converge; report written"};
  });
}

// ---------------------------------------------------------------------------
// rate-scan

void register_rate_scan(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    double concentration = 1.0;
    double phonon = kUnset, dipolar = kUnset;
    double b_min = 0.0, b_max = 700.0, b_step = 1.0;
    std::string output = "-";
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "rate-scan", "tabulate the longitudinal relaxation rate versus field");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.number("concentration_ppm", &s->concentration, "NV- concentration [ppm]");
  ctx.number("phonon_rate_per_s", &s->phonon, "override the phonon floor [1/s]");
  ctx.number("dipolar_coeff_per_s_ppm", &s->dipolar, "override the dipolar coefficient");
  ctx.number("b_min_gauss", &s->b_min, "scan start [G]");
  ctx.number("b_max_gauss", &s->b_max, "scan end [G]");
  ctx.number("b_step_gauss", &s->b_step, "scan step [G]");
  ctx.text("output", &s->output, "rate table file ('-' = stdout)");

  cmd->callback([s] {
    s->ctx->apply_config();
    if (!(s->b_step > 0)) throw nvcli::ConfigError("b_step_gauss must be positive");

    nvlab::RateModel model = nvlab::default_rate_model(s->concentration);
    if (is_set(s->phonon)) model.phonon_rate_per_s = s->phonon;
    if (is_set(s->dipolar)) model.dipolar_coeff_per_s_ppm = s->dipolar;

    std::vector<double> grid;
    for (double b = s->b_min; b <= s->b_max + 1e-9 * s->b_step; b += s->b_step)
      grid.push_back(std::min(b, s->b_max));

    std::ostringstream os;
    nvlab::write_rate_table(os, nvlab::rate_vs_field(model, grid));
    emit(s->output, os.str());
  });
}

// ---------------------------------------------------------------------------
// degeneracies

void register_degeneracies(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    double d = 2870.0, e = 0.0, gamma = 2.8025, gamma_e = 2.8025;
    double b_min = 0.0, b_max = 700.0, b_step = 1.0;
    std::string axis = "1,1,1", targets = "both", output = "-";
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "degeneracies", "locate cross-relaxation resonance fields");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.number("d_mhz", &s->d, "zero-field splitting D [MHz]");
  ctx.number("e_mhz", &s->e, "strain parameter E [MHz]");
  ctx.number("gamma_mhz_per_g", &s->gamma, "NV gyromagnetic constant [MHz/G]");
  ctx.number("gamma_e_mhz_per_g", &s->gamma_e, "bare electron gyromagnetic constant [MHz/G]");
  ctx.number("b_min_gauss", &s->b_min, "scan start [G]");
  ctx.number("b_max_gauss", &s->b_max, "scan end [G]");
  ctx.number("b_step_gauss", &s->b_step, "scan step [G]");
  ctx.text("axis", &s->axis, "scan direction x,y,z");
  ctx.text("targets", &s->targets, "both | nv_nv | nv_p1");
  ctx.text("output", &s->output, "resonance table file ('-' = stdout)");

  cmd->callback([s] {
    s->ctx->apply_config();

    nvlab::DegeneracyTargets targets;
    if (s->targets == "nv_nv") {
      targets.nv_p1 = false;
    } else if (s->targets == "nv_p1") {
      targets.nv_nv = false;
    } else if (s->targets != "both") {
      throw nvcli::ConfigError("targets must be 'both', 'nv_nv' or 'nv_p1'");
    }

    nvlab::SpinSystem prototype;
    prototype.d_mhz = s->d;
    prototype.e_mhz = s->e;
    prototype.constants.gamma_nv_mhz_per_g = s->gamma;
    prototype.constants.gamma_e_mhz_per_g = s->gamma_e;
    prototype.constants.zero_field_d_mhz = s->d;

    const Eigen::Vector3d axis = nvcli::parse_vector3("axis", s->axis);
    const auto resonances = nvlab::degeneracy_scan(
        axis, nvlab::FieldRange{s->b_min, s->b_max, s->b_step}, targets, prototype);

    std::ostringstream os;
    nvlab::write_resonance_table(os, resonances);
    emit(s->output, os.str());
  });
}

// ---------------------------------------------------------------------------
// spots

void register_spots(CLI::App& app) {
  struct State {
    std::unique_ptr<CommandContext> ctx;
    bool all = false;
    std::vector<long long> ids;
    double reference_fluorescence = kUnset;
    std::string output = "-";
  };
  auto s = std::make_shared<State>();
  CLI::App* cmd = app.add_subcommand(
      "spots", "list the bundled irradiated-spot records");
  s->ctx = std::make_unique<CommandContext>(cmd);
  CommandContext& ctx = *s->ctx;

  ctx.flag("all", &s->all, "emit every record");
  cmd->add_option("--id", s->ids, "spot id (repeatable)");
  ctx.number("reference_fluorescence", &s->reference_fluorescence,
             "recalibrate concentrations against this 10 ppm reference fluorescence");
  ctx.text("output", &s->output, "spot table file ('-' = stdout)");

  cmd->callback([s] {
    s->ctx->apply_config();
    if (!s->all && s->ids.empty())
      throw nvcli::ConfigError("select records with --all or --id <n>");

    std::vector<nvlab::SpotRecord> rows;
    if (s->all) {
      rows = nvlab::load_table1();
    } else {
      for (long long id : s->ids) {
        bool found = false;
        for (const auto& spot : nvlab::load_table1()) {
          if (spot.spot_id == id) {
            rows.push_back(spot);
            found = true;
          }
        }
        if (!found)
          throw nvcli::ConfigError("no spot with id " + std::to_string(id) +
                                   " (bundled ids are 5-14)");
      }
    }

    std::optional<nvlab::CalibrationReference> recal;
    if (is_set(s->reference_fluorescence)) {
      nvlab::CalibrationReference ref;
      ref.reference_fluorescence = s->reference_fluorescence;
      recal = ref;
    }

    std::ostringstream os;
    nvlab::write_spot_table(os, rows, recal);
    emit(s->output, os.str());
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"virtual NV- relaxometry laboratory"};
  app.require_subcommand(1);

  register_odmr_sim(app);
  register_t1_sim(app);
  register_t1_fit(app);
  register_rate_scan(app);
  register_degeneracies(app);
  register_spots(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  } catch (const FitFailure& err) {
    std::cerr << "error: " << err.message << '\n';
    return kExitFit;
  } catch (const nvlab::ParseError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitParse;
  } catch (const nvcli::ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return kExitInternal;
  }
  return 0;
}
