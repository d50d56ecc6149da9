#include "nvlab/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace nvlab {

namespace {

constexpr double kTiny = 1e-300;

double max_relative_change(const Eigen::VectorXd& p_old, const Eigen::VectorXd& p_new) {
  double rel = 0.0;
  for (Eigen::Index i = 0; i < p_old.size(); ++i) {
    const double scale = std::max({std::abs(p_old(i)), std::abs(p_new(i)), 1e-12});
    rel = std::max(rel, std::abs(p_new(i) - p_old(i)) / scale);
  }
  return rel;
}

Eigen::MatrixXd robust_inverse(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& w = es.eigenvalues();
  const double cutoff = std::max(w.cwiseAbs().maxCoeff(), kTiny) * 1e-14;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (std::abs(w(i)) > cutoff) inv(i) = 1.0 / w(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Damped least squares.

LmResult levenberg_marquardt(int n_residuals, const ResidualFn& fn,
                             const Eigen::VectorXd& initial, const LmOptions& opts) {
  const int k = static_cast<int>(initial.size());
  LmResult out;
  out.params = initial;
  out.covariance = Eigen::MatrixXd::Zero(k, k);

  Eigen::VectorXd r(n_residuals);
  Eigen::MatrixXd jac(n_residuals, k);
  if (!fn(out.params, r, &jac) || !r.allFinite() || !jac.allFinite()) return out;

  double chi2 = r.squaredNorm();
  double lambda = 1e-3;
  bool stalled = false;

  while (out.iterations < opts.max_iterations && !out.converged && !stalled) {
    ++out.iterations;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r;

    bool accepted = false;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      const Eigen::VectorXd d = jtj.diagonal().cwiseMax(1e-12 * jtj.diagonal().maxCoeff() + kTiny);
      damped.diagonal() += lambda * d;

      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      Eigen::VectorXd step = ldlt.solve(-grad);
      if (ldlt.info() != Eigen::Success || !step.allFinite()) {
        lambda *= 10.0;
        continue;
      }

      const Eigen::VectorXd trial = out.params + step;
      Eigen::VectorXd r_trial(n_residuals);
      if (!fn(trial, r_trial, nullptr) || !r_trial.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const double chi2_trial = r_trial.squaredNorm();
      if (chi2_trial <= chi2) {
        const double rel = max_relative_change(out.params, trial);
        const double drop = chi2 - chi2_trial;
        out.params = trial;
        chi2 = chi2_trial;
        lambda = std::max(lambda / 3.0, 1e-14);
        accepted = true;
        if (rel < opts.tolerance || drop <= 1e-14 * (chi2 + kTiny)) out.converged = true;
        break;
      }
      lambda *= 4.0;
    }

    if (accepted) {
      if (!fn(out.params, r, &jac) || !jac.allFinite()) break;
    } else {
      // No downhill step at any damping: either a stationary point (accept)
      // or a badly conditioned Jacobian (hand over to the simplex).
      const double cosine =
          grad.norm() / (jac.norm() * std::sqrt(chi2) + kTiny);
      if (cosine < 1e-6) {
        out.converged = true;
      } else {
        stalled = true;
      }
    }
  }

  if (stalled) {
    Eigen::VectorXd scale(k);
    for (int i = 0; i < k; ++i) scale(i) = std::max(1e-4, 0.05 * std::abs(out.params(i)));
    auto objective = [&](const Eigen::VectorXd& p) {
      Eigen::VectorXd rr(n_residuals);
      if (!fn(p, rr, nullptr) || !rr.allFinite())
        return std::numeric_limits<double>::infinity();
      return rr.squaredNorm();
    };
    SimplexOptions sopts;
    sopts.x_tolerance = opts.tolerance;
    const SimplexResult sres = nelder_mead(objective, out.params, scale, sopts);
    if (sres.fmin <= chi2) {
      out.params = sres.x;
      chi2 = sres.fmin;
      out.converged = sres.converged;
      out.used_simplex_fallback = true;
      out.iterations += sres.iterations;
      fn(out.params, r, &jac);
    }
  }

  out.chi2 = chi2;
  const int dof = n_residuals - k;
  const double sigma2 = dof > 0 ? chi2 / dof : 0.0;
  out.covariance = sigma2 * robust_inverse((jac.transpose() * jac).eval());
  return out;
}

// ---------------------------------------------------------------------------
// Nelder-Mead simplex.

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                          const SimplexOptions& opts) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 0; i < n; ++i) xs[i + 1](i) += step(i);
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);

  SimplexResult out;
  std::vector<int> order(n + 1);

  for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];

    double size = 0.0;
    for (int i = 0; i <= n; ++i)
      size = std::max(size, (xs[i] - xs[best]).cwiseAbs().maxCoeff());
    const double fspread = std::abs(fs[worst] - fs[best]);
    if (size < opts.x_tolerance * (1.0 + xs[best].cwiseAbs().maxCoeff()) ||
        fspread < opts.f_tolerance * (1.0 + std::abs(fs[best]))) {
      out.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= n;

    const Eigen::VectorXd xr = centroid + (centroid - xs[worst]);
    const double fr = f(xr);
    if (fr < fs[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (xs[worst] - centroid);
      const double fc = f(xc);
      if (fc < fs[worst]) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
          fs[i] = f(xs[i]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  out.x = xs[best];
  out.fmin = fs[best];
  return out;
}

// ---------------------------------------------------------------------------
// Parabola refinement.

ParabolaVertex parabola_refine(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 3 || n > 7 || y.size() != n)
    throw std::invalid_argument("parabola_refine: need 3-7 (x, y) points");

  const double x0 = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - x0;
    design(i, 0) = 1.0;
    design(i, 1) = dx;
    design(i, 2) = dx * dx;
    rhs(i) = y[i];
  }
  const Eigen::MatrixXd xtx = design.transpose() * design;
  const Eigen::VectorXd coef = xtx.ldlt().solve(design.transpose() * rhs);

  ParabolaVertex out;
  out.curvature = 2.0 * coef(2);
  if (coef(2) == 0.0 || !std::isfinite(coef(2))) {
    out.interior = false;
    out.x_vertex = x[n / 2];
    return out;
  }
  // Monotone samples do not bracket an extremum; flag and clamp.
  bool increasing = true, decreasing = true;
  for (std::size_t i = 1; i < n; ++i) {
    if (!(y[i] > y[i - 1])) increasing = false;
    if (!(y[i] < y[i - 1])) decreasing = false;
  }
  double vertex = x0 - coef(1) / (2.0 * coef(2));
  if (increasing || decreasing || vertex < x.front() || vertex > x.back()) {
    out.interior = false;
    vertex = std::abs(vertex - x.front()) < std::abs(vertex - x.back()) ? x.front() : x.back();
  }
  out.x_vertex = vertex;

  if (n > 3) {
    const Eigen::VectorXd resid = rhs - design * coef;
    const double sigma2 = resid.squaredNorm() / static_cast<double>(n - 3);
    const Eigen::MatrixXd cov = sigma2 * robust_inverse(xtx);
    const double dvd1 = -1.0 / (2.0 * coef(2));
    const double dvd2 = coef(1) / (2.0 * coef(2) * coef(2));
    const double var = dvd1 * dvd1 * cov(1, 1) + dvd2 * dvd2 * cov(2, 2) +
                       2.0 * dvd1 * dvd2 * cov(1, 2);
    out.uncertainty = var > 0 ? std::sqrt(var) : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stretched exponential.

double stretched_exp_model(double tau, double t1, double beta, double amplitude,
                           double offset) {
  const double s = tau / t1;
  return amplitude * std::exp(-std::pow(s, beta)) + offset;
}

std::array<double, 4> stretched_exp_gradient(double tau, double t1, double beta,
                                             double amplitude, double offset) {
  (void)offset;
  const double s = tau / t1;
  const double sb = std::pow(s, beta);
  const double g = std::exp(-sb);
  std::array<double, 4> grad{};
  grad[0] = amplitude * g * sb * beta / t1;          // d/dT1
  grad[1] = s == 1.0 ? 0.0 : -amplitude * g * sb * std::log(s);  // d/dbeta
  grad[2] = g;                                       // d/dA
  grad[3] = 1.0;                                     // d/dc
  return grad;
}

namespace {

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double logit(double b) { return std::log(b / (1.0 - b)); }

}  // namespace

StretchedExpFit fit_stretched_exp(std::span<const double> tau_ms,
                                  std::span<const double> signal,
                                  const FitOptions& opts) {
  const std::size_t n = tau_ms.size();
  if (n < 5 || signal.size() != n)
    throw std::invalid_argument("fit_stretched_exp: need >= 5 (tau, I) points");
  if (!opts.weights.empty() && opts.weights.size() != n)
    throw std::invalid_argument("fit_stretched_exp: weights size mismatch");
  double lo = signal[0], hi = signal[0];
  for (std::size_t i = 0; i < n; ++i) {
    if (!(tau_ms[i] > 0))
      throw std::invalid_argument("fit_stretched_exp: tau values must be positive");
    if (i > 0 && !(tau_ms[i] > tau_ms[i - 1]))
      throw std::invalid_argument("fit_stretched_exp: tau must be strictly increasing");
    lo = std::min(lo, signal[i]);
    hi = std::max(hi, signal[i]);
  }
  if (hi - lo <= 1e-14 * std::max(std::abs(hi), 1.0))
    throw std::invalid_argument("fit_stretched_exp: degenerate data (constant signal)");
  if (opts.beta_fixed && !(*opts.beta_fixed > 0 && *opts.beta_fixed <= 1.0))
    throw std::invalid_argument("fit_stretched_exp: beta_fixed outside (0, 1]");
  if (!(opts.tolerance > 0))
    throw std::invalid_argument("fit_stretched_exp: tolerance must be positive");

  // Initialization: amplitude from the first point, T1 from linear
  // interpolation of the 1/e crossing, beta = 1.
  const double a0 = signal[0] != 0.0 ? signal[0] : (hi != 0.0 ? hi : 1.0);
  double t1_0 = tau_ms[n - 1];
  const double target = a0 / std::numbers::e;
  for (std::size_t i = 1; i < n; ++i) {
    const bool crossed = a0 > 0 ? signal[i] <= target : signal[i] >= target;
    if (crossed) {
      const double f = (signal[i - 1] - target) / (signal[i - 1] - signal[i]);
      t1_0 = tau_ms[i - 1] + f * (tau_ms[i] - tau_ms[i - 1]);
      break;
    }
  }
  if (!(t1_0 > 0) || !std::isfinite(t1_0)) t1_0 = tau_ms[n / 2];

  // Internal parameters: A free, T1 = exp(qT), beta = logistic(qB) on (0, 1),
  // offset free when enabled. Indices of active internal parameters:
  const bool beta_free = !opts.beta_fixed.has_value();
  const int k = 2 + (beta_free ? 1 : 0) + (opts.offset_free ? 1 : 0);
  const int iq_a = 0, iq_t = 1;
  const int iq_b = beta_free ? 2 : -1;
  const int iq_c = opts.offset_free ? (beta_free ? 3 : 2) : -1;

  Eigen::VectorXd q0(k);
  q0(iq_a) = a0;
  q0(iq_t) = std::log(t1_0);
  if (beta_free) q0(iq_b) = logit(0.95);
  if (opts.offset_free) q0(iq_c) = 0.0;

  auto unpack = [&](const Eigen::VectorXd& q, double& t1, double& beta, double& amp,
                    double& c) {
    amp = q(iq_a);
    t1 = std::exp(q(iq_t));
    beta = beta_free ? logistic(q(iq_b)) : *opts.beta_fixed;
    c = opts.offset_free ? q(iq_c) : 0.0;
  };

  auto fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    double t1, beta, amp, c;
    unpack(q, t1, beta, amp, c);
    if (!(t1 > 0) || !std::isfinite(t1) || !(beta > 0)) return false;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = opts.weights.empty() ? 1.0 : opts.weights[i];
      r(i) = w * (stretched_exp_model(tau_ms[i], t1, beta, amp, c) - signal[i]);
      if (jac) {
        const auto g = stretched_exp_gradient(tau_ms[i], t1, beta, amp, c);
        (*jac)(i, iq_a) = w * g[2];
        (*jac)(i, iq_t) = w * g[0] * t1;  // d/d(log T1)
        if (beta_free) (*jac)(i, iq_b) = w * g[1] * beta * (1.0 - beta);
        if (opts.offset_free) (*jac)(i, iq_c) = w * g[3];
      }
    }
    return true;
  };

  LmOptions lm;
  lm.max_iterations = opts.max_iterations;
  lm.tolerance = opts.tolerance;
  LmResult res = levenberg_marquardt(static_cast<int>(n), fn, q0, lm);

  StretchedExpFit fit;
  double t1, beta, amp, c;
  unpack(res.params, t1, beta, amp, c);
  fit.t1_ms = t1;
  fit.beta = beta;
  fit.amplitude = amp;
  fit.offset = c;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  const int dof = static_cast<int>(n) - k;
  fit.chi2_reduced = dof > 0 ? res.chi2 / dof : 0.0;

  // Map the internal covariance to physical (t1, beta, A, c) order.
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, k);
  g(0, iq_t) = t1;
  if (beta_free) g(1, iq_b) = beta * (1.0 - beta);
  g(2, iq_a) = 1.0;
  if (opts.offset_free) g(3, iq_c) = 1.0;
  fit.covariance = g * res.covariance * g.transpose();
  fit.t1_err_ms = std::sqrt(std::max(0.0, fit.covariance(0, 0)));
  fit.beta_err = std::sqrt(std::max(0.0, fit.covariance(1, 1)));
  return fit;
}

// ---------------------------------------------------------------------------
// Multi-Lorentzian dips.

namespace {

struct SeedPeak {
  double center = 0.0;
  double width = 0.0;
  double depth = 0.0;
};

std::vector<SeedPeak> seed_minima(std::span<const double> f, std::span<const double> y,
                                  double baseline, int n_peaks) {
  const std::size_t n = f.size();
  std::vector<SeedPeak> seeds;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!(y[i] <= y[i - 1] && y[i] < y[i + 1])) continue;
    const double depth = baseline - y[i];
    if (depth <= 0) continue;
    const double half = baseline - depth / 2.0;
    std::size_t l = i, rgt = i;
    while (l > 0 && y[l] < half) --l;
    while (rgt + 1 < n && y[rgt] < half) ++rgt;
    SeedPeak s;
    s.center = f[i];
    s.depth = depth;
    s.width = std::max(f[rgt] - f[l], 2.0 * (f[1] - f[0]));
    seeds.push_back(s);
  }
  std::sort(seeds.begin(), seeds.end(),
            [](const SeedPeak& a, const SeedPeak& b) { return a.depth > b.depth; });
  if (static_cast<int>(seeds.size()) > n_peaks) seeds.resize(n_peaks);

  // Over-parameterized request: pad with shallow components near the
  // deepest minimum so the optimizer can park them at zero depth.
  int extra = 1;
  while (static_cast<int>(seeds.size()) < n_peaks) {
    SeedPeak s = seeds.empty()
                     ? SeedPeak{f[f.size() / 2], 4.0 * (f[1] - f[0]), 0.01}
                     : seeds.front();
    s.center += extra * 0.7 * s.width * (extra % 2 == 0 ? 1.0 : -1.0);
    s.center = std::clamp(s.center, f.front(), f.back());
    s.depth *= 0.05;
    seeds.push_back(s);
    ++extra;
  }
  return seeds;
}

}  // namespace

MultiLorentzianFit fit_lorentzian_dip(std::span<const double> freqs_mhz,
                                      std::span<const double> signal, int n_peaks,
                                      const LmOptions& opts) {
  const std::size_t n = freqs_mhz.size();
  if (n < 5 || signal.size() != n)
    throw std::invalid_argument("fit_lorentzian_dip: need >= 5 grid points");
  if (n_peaks < 1) throw std::invalid_argument("fit_lorentzian_dip: n_peaks must be >= 1");
  for (std::size_t i = 1; i < n; ++i)
    if (!(freqs_mhz[i] > freqs_mhz[i - 1]))
      throw std::invalid_argument("fit_lorentzian_dip: frequencies must be increasing");

  // Baseline seed: high percentile of the signal.
  std::vector<double> sorted(signal.begin(), signal.end());
  std::sort(sorted.begin(), sorted.end());
  const double b0 = sorted[static_cast<std::size_t>(0.9 * (n - 1))];

  const std::vector<SeedPeak> seeds = seed_minima(freqs_mhz, signal, b0, n_peaks);

  // Parameters: [baseline, (center, log fwhm, depth) per component].
  const int k = 1 + 3 * n_peaks;
  Eigen::VectorXd q0(k);
  q0(0) = b0;
  for (int j = 0; j < n_peaks; ++j) {
    q0(1 + 3 * j) = seeds[j].center;
    q0(2 + 3 * j) = std::log(seeds[j].width);
    q0(3 + 3 * j) = seeds[j].depth;
  }

  auto fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    for (std::size_t i = 0; i < n; ++i) {
      double y = q(0);
      if (jac) (*jac)(i, 0) = 1.0;
      for (int j = 0; j < n_peaks; ++j) {
        const double c = q(1 + 3 * j);
        const double w = std::exp(q(2 + 3 * j));
        const double d = q(3 + 3 * j);
        const double u = 2.0 * (freqs_mhz[i] - c) / w;
        const double lor = 1.0 / (1.0 + u * u);
        y -= d * lor;
        if (jac) {
          (*jac)(i, 1 + 3 * j) = -4.0 * d * u * lor * lor / w;
          (*jac)(i, 2 + 3 * j) = -2.0 * d * u * u * lor * lor;
          (*jac)(i, 3 + 3 * j) = -lor;
        }
      }
      r(i) = y - signal[i];
    }
    return true;
  };

  const LmResult res = levenberg_marquardt(static_cast<int>(n), fn, q0, opts);

  MultiLorentzianFit fit;
  fit.baseline = res.params(0);
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  const int dof = static_cast<int>(n) - k;
  fit.chi2_reduced = dof > 0 ? res.chi2 / dof : 0.0;

  double max_depth = 0.0;
  for (int j = 0; j < n_peaks; ++j)
    max_depth = std::max(max_depth, std::abs(res.params(3 + 3 * j)));
  for (int j = 0; j < n_peaks; ++j) {
    LorentzianComponent comp;
    comp.center_mhz = res.params(1 + 3 * j);
    comp.fwhm_mhz = std::exp(res.params(2 + 3 * j));
    comp.depth = res.params(3 + 3 * j);
    comp.center_err_mhz = std::sqrt(std::max(0.0, res.covariance(1 + 3 * j, 1 + 3 * j)));
    comp.fwhm_err_mhz =
        comp.fwhm_mhz * std::sqrt(std::max(0.0, res.covariance(2 + 3 * j, 2 + 3 * j)));
    comp.depth_err = std::sqrt(std::max(0.0, res.covariance(3 + 3 * j, 3 + 3 * j)));
    comp.negligible =
        std::abs(comp.depth) < std::max(3.0 * comp.depth_err, 1e-3 * max_depth);
    fit.components.push_back(comp);
  }
  std::sort(fit.components.begin(), fit.components.end(),
            [](const LorentzianComponent& a, const LorentzianComponent& b) {
              return a.center_mhz < b.center_mhz;
            });
  return fit;
}

}  // namespace nvlab
