#ifndef NVLAB_FITTING_HPP
#define NVLAB_FITTING_HPP

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

// Nonlinear least squares used throughout the toolkit: damped (Levenberg-
// Marquardt style) iteration with analytic Jacobians and a derivative-free
// simplex fallback, plus the two model families the analysis needs --
// stretched-exponential decays and multi-Lorentzian dips.
namespace nvlab {

// ---------------------------------------------------------------------------
// Generic engines.

struct LmOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;  // relative parameter change
};

struct LmResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  // chi2_reduced * (J^T J)^-1 at the optimum
  double chi2 = 0.0;
  bool converged = false;
  int iterations = 0;
  bool used_simplex_fallback = false;
};

// Evaluate residuals r(p) (and optionally the Jacobian dr/dp). Return false
// to reject the parameter point (treated as infinite chi2).
using ResidualFn =
    std::function<bool(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd*)>;

LmResult levenberg_marquardt(int n_residuals, const ResidualFn& fn,
                             const Eigen::VectorXd& initial, const LmOptions& opts = {});

struct SimplexOptions {
  int max_iterations = 4000;
  double x_tolerance = 1e-10;
  double f_tolerance = 1e-15;
};

struct SimplexResult {
  Eigen::VectorXd x;
  double fmin = 0.0;
  int iterations = 0;
  bool converged = false;
};

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                          const SimplexOptions& opts = {});

// ---------------------------------------------------------------------------
// Parabola vertex refinement.

struct ParabolaVertex {
  double x_vertex = 0.0;
  double uncertainty = 0.0;
  double curvature = 0.0;  // second derivative of the fitted quadratic
  bool interior = true;    // false: vertex fell outside the sample window
};

// Closed-form quadratic regression through 3-7 points around an extremum.
// A vertex outside [x.front(), x.back()] is flagged non-interior and clamped
// to the nearer endpoint.
ParabolaVertex parabola_refine(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Stretched-exponential decay fits: I(tau) = A * exp(-(tau/T1)^beta) + c.

struct FitOptions {
  int max_iterations = 400;
  double tolerance = 1e-12;  // relative parameter change
  std::optional<double> beta_fixed;
  bool offset_free = false;  // differential protocol removes baselines
  std::vector<double> weights;  // per-point 1/sigma; empty = uniform
};

struct StretchedExpFit {
  double t1_ms = 0.0;
  double beta = 1.0;
  double amplitude = 1.0;
  double offset = 0.0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (t1, beta, A, c)
  double t1_err_ms = 0.0;
  double beta_err = 0.0;
  double chi2_reduced = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Model value and gradient w.r.t. (t1, beta, amplitude, offset); the beta
// derivative at tau == T1 is exactly 0 (ln(tau/T1) vanishes).
double stretched_exp_model(double tau, double t1, double beta, double amplitude,
                           double offset);
std::array<double, 4> stretched_exp_gradient(double tau, double t1, double beta,
                                             double amplitude, double offset);

StretchedExpFit fit_stretched_exp(std::span<const double> tau_ms,
                                  std::span<const double> signal,
                                  const FitOptions& opts = {});

// ---------------------------------------------------------------------------
// Multi-Lorentzian dip fits: y(f) = b - sum_k depth_k / (1 + (2(f-c_k)/w_k)^2).

struct LorentzianComponent {
  double center_mhz = 0.0;
  double fwhm_mhz = 0.0;
  double depth = 0.0;
  double center_err_mhz = 0.0;
  double fwhm_err_mhz = 0.0;
  double depth_err = 0.0;
  bool negligible = false;  // depth consistent with zero
};

struct MultiLorentzianFit {
  double baseline = 1.0;
  std::vector<LorentzianComponent> components;  // ascending center
  double chi2_reduced = 0.0;
  bool converged = false;
  int iterations = 0;
};

MultiLorentzianFit fit_lorentzian_dip(std::span<const double> freqs_mhz,
                                      std::span<const double> signal, int n_peaks,
                                      const LmOptions& opts = {});

}  // namespace nvlab

#endif
