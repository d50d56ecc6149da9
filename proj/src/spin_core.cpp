#include "nvlab/spin_core.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nvlab {

using cd = std::complex<double>;

namespace {

constexpr double kFieldSanityGauss = 1e5;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void PhysicalConstants::validate() const {
  if (!(gamma_nv_mhz_per_g > 0) || !(gamma_e_mhz_per_g > 0) || !(zero_field_d_mhz > 0))
    fail("PhysicalConstants: all constants must be strictly positive");
}

void NvOrientation::validate() const {
  if (!axis.allFinite()) fail("NvOrientation: axis has non-finite components");
  if (std::abs(axis.norm() - 1.0) > 1e-12)
    fail("NvOrientation: axis must be a unit vector");
}

void SpinSystem::validate() const {
  constants.validate();
  orientation.validate();
  if (!(d_mhz > 0)) fail("SpinSystem: D must be positive");
  if (!(e_mhz >= 0)) fail("SpinSystem: E must be non-negative");
  if (!(2.0 * e_mhz < d_mhz)) fail("SpinSystem: 2E must be smaller than D");
}

void FieldVector::validate() const {
  if (!gauss.allFinite()) fail("FieldVector: non-finite components");
  if (gauss.norm() >= kFieldSanityGauss)
    fail("FieldVector: |B| exceeds the 1e5 G sanity bound");
}

void FieldRange::validate() const {
  if (!(step_gauss > 0)) fail("FieldRange: step must be positive");
  if (!(max_gauss >= min_gauss)) fail("FieldRange: max must be >= min");
  if (std::abs(min_gauss) >= kFieldSanityGauss || std::abs(max_gauss) >= kFieldSanityGauss)
    fail("FieldRange: bounds exceed the 1e5 G sanity bound");
}

const std::array<NvOrientation, 4>& nv_orientations() {
  static const std::array<NvOrientation, 4> axes = [] {
    const double s = 1.0 / std::sqrt(3.0);
    std::array<NvOrientation, 4> a;
    a[0] = {Eigen::Vector3d(s, s, s), "[111]", 0};
    a[1] = {Eigen::Vector3d(s, -s, -s), "[1-1-1]", 1};
    a[2] = {Eigen::Vector3d(-s, s, -s), "[-11-1]", 2};
    a[3] = {Eigen::Vector3d(-s, -s, s), "[-1-11]", 3};
    return a;
  }();
  return axes;
}

Eigen::Matrix3cd spin1_sx() {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  const double s = 1.0 / std::sqrt(2.0);
  m(0, 1) = s;
  m(1, 0) = s;
  m(1, 2) = s;
  m(2, 1) = s;
  return m;
}

Eigen::Matrix3cd spin1_sy() {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  const cd js(0.0, 1.0 / std::sqrt(2.0));
  m(0, 1) = -js;
  m(1, 0) = js;
  m(1, 2) = -js;
  m(2, 1) = js;
  return m;
}

Eigen::Matrix3cd spin1_sz() {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  m(0, 0) = 1.0;
  m(2, 2) = -1.0;
  return m;
}

Eigen::Matrix3d nv_frame(const Eigen::Vector3d& axis) {
  const Eigen::Vector3d z = axis.normalized();
  Eigen::Vector3d seed(1, 0, 0);
  if (std::abs(z.dot(seed)) > 1.0 - 1e-9) seed = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d x = (seed - z * z.dot(seed)).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d frame;
  frame.row(0) = x;
  frame.row(1) = y;
  frame.row(2) = z;
  return frame;
}

HamiltonianMatrix build_hamiltonian(const SpinSystem& sys, const FieldVector& field) {
  sys.validate();
  field.validate();

  const Eigen::Matrix3d frame = nv_frame(sys.orientation.axis);
  const Eigen::Vector3d b_nv = frame * field.gauss;
  const double g = sys.constants.gamma_nv_mhz_per_g;

  // Explicit entries of D*Sz^2 + E*(Sx^2-Sy^2) + g*(bx*Sx + by*Sy + bz*Sz)
  // in the {|+1>,|0>,|-1>} basis.
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const cd t = g * inv_sqrt2 * cd(b_nv.x(), -b_nv.y());

  HamiltonianMatrix h = HamiltonianMatrix::Zero();
  h(0, 0) = sys.d_mhz + g * b_nv.z();
  h(1, 1) = 0.0;
  h(2, 2) = sys.d_mhz - g * b_nv.z();
  h(0, 1) = t;
  h(1, 0) = std::conj(t);
  h(1, 2) = t;
  h(2, 1) = std::conj(t);
  h(0, 2) = sys.e_mhz;
  h(2, 0) = sys.e_mhz;
  return h;
}

// ---------------------------------------------------------------------------
// Closed-form Hermitian 3x3 eigensolver.

namespace {

double matrix_scale(const Eigen::Matrix3cd& a) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s = std::max(s, std::abs(a(i, j)));
  return s;
}

// Determinant of a Hermitian 3x3 matrix (real by construction).
double hermitian_det(const Eigen::Matrix3cd& a) {
  const double d0 = a(0, 0).real(), d1 = a(1, 1).real(), d2 = a(2, 2).real();
  const cd p = a(0, 1), q = a(1, 2), r = a(0, 2);
  return d0 * d1 * d2 + 2.0 * (p * q * std::conj(r)).real() -
         d0 * std::norm(q) - d1 * std::norm(r) - d2 * std::norm(p);
}

// Eigenvalues of a Hermitian 3x3 matrix via the shifted trigonometric form
// of the characteristic cubic.
std::array<double, 3> cubic_eigenvalues(const Eigen::Matrix3cd& a) {
  const double q = (a(0, 0).real() + a(1, 1).real() + a(2, 2).real()) / 3.0;
  Eigen::Matrix3cd k = a;
  k(0, 0) -= q;
  k(1, 1) -= q;
  k(2, 2) -= q;

  double p2 = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p2 += std::norm(k(i, j));
  const double p = std::sqrt(p2 / 6.0);

  if (p == 0.0) return {q, q, q};  // scalar matrix

  const double detb = hermitian_det(k) / (p * p * p);
  const double r = std::clamp(detb / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;

  const double two_pi_3 = 2.0 * std::numbers::pi / 3.0;
  std::array<double, 3> w = {q + 2.0 * p * std::cos(phi),
                             q + 2.0 * p * std::cos(phi - two_pi_3),
                             q + 2.0 * p * std::cos(phi + two_pi_3)};
  std::sort(w.begin(), w.end());
  return w;
}

// Unconjugated cross product; rows of (A - wI) are bilinear-orthogonal to
// the eigenvector, so the cross of two independent rows spans it.
Eigen::Vector3cd cross_c(const Eigen::Vector3cd& a, const Eigen::Vector3cd& b) {
  return Eigen::Vector3cd(a(1) * b(2) - a(2) * b(1),
                          a(2) * b(0) - a(0) * b(2),
                          a(0) * b(1) - a(1) * b(0));
}

bool eigenvector_from_rows(const Eigen::Matrix3cd& a, double w, double scale,
                           Eigen::Vector3cd& v_out) {
  Eigen::Matrix3cd m = a;
  for (int i = 0; i < 3; ++i) m(i, i) -= w;

  const Eigen::Vector3cd r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
  const std::array<Eigen::Vector3cd, 3> cand = {cross_c(r0, r1), cross_c(r0, r2),
                                                cross_c(r1, r2)};
  int best = 0;
  double best_norm = -1.0;
  for (int i = 0; i < 3; ++i) {
    const double n = cand[i].squaredNorm();
    if (n > best_norm) {
      best_norm = n;
      best = i;
    }
  }
  // Degenerate eigenvalue or heavy cancellation: rank of (A - wI) < 2.
  const double floor = 1e-24 * scale * scale * scale * scale;
  if (!(best_norm > floor)) return false;
  v_out = cand[best] / std::sqrt(best_norm);
  return true;
}

EigenDecomposition iterative_fallback(const Eigen::Matrix3cd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(a);
  EigenDecomposition out;
  for (int i = 0; i < 3; ++i) out.values[i] = es.eigenvalues()(i);
  out.vectors = es.eigenvectors();
  out.used_fallback = true;
  return out;
}

}  // namespace

EigenDecomposition eig3_hermitian(const Eigen::Matrix3cd& h) {
  // Work on the exactly Hermitian average so roundoff in the input cannot
  // produce complex eigenvalues.
  Eigen::Matrix3cd a = 0.5 * (h + h.adjoint().eval());
  const double scale = matrix_scale(a);

  EigenDecomposition out;
  if (scale == 0.0) {
    out.vectors = Eigen::Matrix3cd::Identity();
    return out;
  }

  // Diagonal fast path keeps axial fields and zero-field cases exact.
  const double off = std::sqrt(std::norm(a(0, 1)) + std::norm(a(0, 2)) + std::norm(a(1, 2)));
  if (off <= 1e-14 * scale) {
    std::array<std::pair<double, int>, 3> d = {
        std::make_pair(a(0, 0).real(), 0), std::make_pair(a(1, 1).real(), 1),
        std::make_pair(a(2, 2).real(), 2)};
    std::sort(d.begin(), d.end());
    out.vectors = Eigen::Matrix3cd::Zero();
    for (int i = 0; i < 3; ++i) {
      out.values[i] = d[i].first;
      out.vectors(d[i].second, i) = 1.0;
    }
    return out;
  }

  const std::array<double, 3> w = cubic_eigenvalues(a);

  // Near-degenerate pairs are handed to the iterative solver; the cross
  // product construction loses accuracy as (A - wI) approaches rank 1.
  const double gap_floor = 1e-7 * scale;
  if (w[1] - w[0] < gap_floor || w[2] - w[1] < gap_floor) return iterative_fallback(a);

  Eigen::Vector3cd v0, v1;
  if (!eigenvector_from_rows(a, w[0], scale, v0) ||
      !eigenvector_from_rows(a, w[1], scale, v1))
    return iterative_fallback(a);

  // Re-orthogonalize the second vector and complete the frame so the basis
  // is orthonormal even with rounding in the cross products.
  v1 -= v0 * v0.dot(v1);
  const double n1 = v1.norm();
  if (!(n1 > 1e-8)) return iterative_fallback(a);
  v1 /= n1;
  Eigen::Vector3cd v2 = cross_c(v0.conjugate(), v1.conjugate());
  v2.normalize();

  out.values = w;
  out.vectors.col(0) = v0;
  out.vectors.col(1) = v1;
  out.vectors.col(2) = v2;

  // Residual check with iterative refinement as the fallback.
  for (int i = 0; i < 3; ++i) {
    const double res = (a * out.vectors.col(i) - w[i] * out.vectors.col(i)).norm();
    if (!(res <= 1e-9 * scale)) return iterative_fallback(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transition labeling.

namespace {

void require_hermitian(const HamiltonianMatrix& h) {
  const double scale = std::max(matrix_scale(h), 1e-300);
  if ((h - h.adjoint().eval()).cwiseAbs().maxCoeff() > 1e-10 * scale + 1e-10)
    throw std::invalid_argument("eigensystem: matrix is not Hermitian");
}

}  // namespace

TransitionSet eigensystem(const HamiltonianMatrix& h, const Eigen::Matrix3cd& reference_basis) {
  require_hermitian(h);
  const EigenDecomposition eig = eig3_hermitian(h);

  TransitionSet t;
  t.eigenvalues_mhz = eig.values;
  t.eigenvectors = eig.vectors;

  Eigen::Matrix3d overlap;  // overlap(i, j) = |<ref_i | v_j>|^2
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      overlap(i, j) = std::norm(reference_basis.col(i).dot(eig.vectors.col(j)));
  t.state_character = overlap;

  // Assign eigenvectors to the reference states {+1-like, 0-like, -1-like}
  // by the permutation with maximum total overlap; ties resolve toward
  // ascending-energy order so zero-field E-split states label as (D-E, D+E).
  static const std::array<std::array<int, 3>, 6> perms = {
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  double best = -1.0;
  std::array<int, 3> asg{0, 1, 2};
  for (const auto& p : perms) {
    const double s = overlap(0, p[0]) + overlap(1, p[1]) + overlap(2, p[2]);
    if (s > best + 1e-12) {
      best = s;
      asg = p;
    }
  }
  t.like_index = asg;

  const double e_zero = eig.values[asg[1]];
  const double fa = std::abs(eig.values[asg[0]] - e_zero);
  const double fb = std::abs(eig.values[asg[2]] - e_zero);
  t.f_minus_mhz = std::min(fa, fb);
  t.f_plus_mhz = std::max(fa, fb);
  return t;
}

TransitionSet eigensystem(const HamiltonianMatrix& h) {
  return eigensystem(h, Eigen::Matrix3cd::Identity());
}

std::vector<SpinSystem> all_orientation_systems(double d_mhz, double e_mhz,
                                                const PhysicalConstants& constants) {
  std::vector<SpinSystem> out;
  out.reserve(4);
  for (const NvOrientation& o : nv_orientations()) {
    SpinSystem s;
    s.d_mhz = d_mhz;
    s.e_mhz = e_mhz;
    s.orientation = o;
    s.constants = constants;
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::pair<NvOrientation, TransitionSet>> transition_spectrum(
    const std::vector<SpinSystem>& systems, const FieldVector& field) {
  if (systems.empty())
    throw std::invalid_argument("transition_spectrum: empty system list");
  std::vector<std::pair<NvOrientation, TransitionSet>> out;
  out.reserve(systems.size());
  for (const SpinSystem& s : systems)
    out.emplace_back(s.orientation, eigensystem(build_hamiltonian(s, field)));
  return out;
}

// ---------------------------------------------------------------------------
// Degeneracy scan.

namespace {

struct ScanPair {
  // Transition frequencies of one orientation pair (or orientation vs P1)
  // evaluated at a field magnitude, with adiabatic label continuation.
  ResonanceKind kind;
  int sys_a;  // orientation index
  int branch_a;  // 0 = f_minus, 1 = f_plus
  int sys_b;  // orientation index for nv_nv, ignored for nv_p1
  int branch_b;
};

class ScanEvaluator {
 public:
  ScanEvaluator(const Eigen::Vector3d& axis, const SpinSystem& prototype)
      : direction_(axis.normalized()) {
    for (const NvOrientation& o : nv_orientations()) {
      SpinSystem s = prototype;
      s.orientation = o;
      systems_.push_back(s);
      references_.push_back(Eigen::Matrix3cd::Identity());
    }
  }

  // Restart adiabatic continuation from the zero-field basis (sweeps begin
  // at the low-field end of the grid).
  void reset() {
    for (auto& r : references_) r = Eigen::Matrix3cd::Identity();
  }

  // Transition set for orientation k at |B| = b, continuing labels from the
  // previous evaluation of this orientation. The stored reference keeps the
  // role order {+1-like, 0-like, -1-like} that eigensystem expects.
  TransitionSet at(int k, double b) {
    FieldVector f{direction_ * b};
    TransitionSet t = eigensystem(build_hamiltonian(systems_[k], f), references_[k]);
    for (int role = 0; role < 3; ++role)
      references_[k].col(role) = t.eigenvectors.col(t.like_index[role]);
    return t;
  }

  double frequency(int k, int branch, double b) {
    const TransitionSet t = at(k, b);
    return branch == 0 ? t.f_minus_mhz : t.f_plus_mhz;
  }

  double detuning(const ScanPair& pair, double b, double gamma_e) {
    const double fa = frequency(pair.sys_a, pair.branch_a, b);
    if (pair.kind == ResonanceKind::nv_p1) return fa - gamma_e * b;
    return fa - frequency(pair.sys_b, pair.branch_b, b);
  }

  int aligned_index() const {
    int best = 0;
    double best_dot = -1.0;
    for (int k = 0; k < 4; ++k) {
      const double d = std::abs(nv_orientations()[k].axis.dot(direction_));
      if (d > best_dot) {
        best_dot = d;
        best = k;
      }
    }
    return best;
  }

 private:
  Eigen::Vector3d direction_;
  std::vector<SpinSystem> systems_;
  std::vector<Eigen::Matrix3cd> references_;
};

}  // namespace

const char* to_string(ResonanceKind kind) {
  return kind == ResonanceKind::nv_nv ? "nv_nv" : "nv_p1";
}

std::vector<ResonanceField> degeneracy_scan(const Eigen::Vector3d& axis,
                                            const FieldRange& range,
                                            const DegeneracyTargets& targets,
                                            const SpinSystem& prototype) {
  range.validate();
  prototype.validate();
  if (axis.norm() == 0.0)
    throw std::invalid_argument("degeneracy_scan: zero scan axis");

  ScanEvaluator eval(axis, prototype);
  const double gamma_e = prototype.constants.gamma_e_mhz_per_g;
  const int aligned = eval.aligned_index();

  std::vector<ScanPair> pairs;
  if (targets.nv_nv) {
    for (int k = 0; k < 4; ++k) {
      if (k == aligned) continue;
      for (int ba = 0; ba < 2; ++ba)
        for (int bb = 0; bb < 2; ++bb)
          pairs.push_back({ResonanceKind::nv_nv, aligned, ba, k, bb});
    }
  }
  if (targets.nv_p1) {
    for (int k = 0; k < 4; ++k)
      for (int ba = 0; ba < 2; ++ba)
        pairs.push_back({ResonanceKind::nv_p1, k, ba, 0, 0});
  }

  std::vector<double> grid;
  for (double b = range.min_gauss; b <= range.max_gauss + 1e-9 * range.step_gauss;
       b += range.step_gauss)
    grid.push_back(std::min(b, range.max_gauss));
  if (grid.empty()) return {};

  constexpr double kDetuningTolMhz = 0.02;   // certificate: |df| < 0.05 MHz
  constexpr double kBisectTolGauss = 1e-4;

  std::vector<ResonanceField> found;
  for (const ScanPair& pair : pairs) {
    eval.reset();
    double prev_b = grid.front();
    double prev_d = eval.detuning(pair, prev_b, gamma_e);

    auto emit = [&](double b_res) {
      const double h = std::max(0.05, 1e-6 * std::abs(b_res));
      const double slope = (eval.detuning(pair, b_res + h, gamma_e) -
                            eval.detuning(pair, b_res - h, gamma_e)) /
                           (2.0 * h);
      found.push_back({b_res, pair.kind, slope});
    };

    if (std::abs(prev_d) < kDetuningTolMhz) emit(prev_b);

    for (std::size_t i = 1; i < grid.size(); ++i) {
      const double b = grid[i];
      const double d = eval.detuning(pair, b, gamma_e);
      if (std::abs(d) < kDetuningTolMhz) {
        emit(b);
      } else if (prev_d * d < 0.0 && std::abs(prev_d) >= kDetuningTolMhz) {
        double lo = prev_b, hi = b, dlo = prev_d;
        double mid = 0.5 * (lo + hi);
        for (int it = 0; it < 80; ++it) {
          mid = 0.5 * (lo + hi);
          const double dm = eval.detuning(pair, mid, gamma_e);
          if (std::abs(dm) < kDetuningTolMhz || hi - lo < kBisectTolGauss) break;
          if (dlo * dm <= 0.0) {
            hi = mid;
          } else {
            lo = mid;
            dlo = dm;
          }
        }
        emit(mid);
      }
      prev_b = b;
      prev_d = d;
    }
  }

  // Merge duplicates: equivalent off-axis orientations and adjacent grid hits
  // land on the same physical resonance.
  std::sort(found.begin(), found.end(), [](const ResonanceField& a, const ResonanceField& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.b_gauss < b.b_gauss;
  });
  std::vector<ResonanceField> merged;
  for (const ResonanceField& r : found) {
    if (!merged.empty() && merged.back().kind == r.kind &&
        std::abs(merged.back().b_gauss - r.b_gauss) < 0.3)
      continue;
    merged.push_back(r);
  }
  std::sort(merged.begin(), merged.end(),
            [](const ResonanceField& a, const ResonanceField& b) {
              return a.b_gauss < b.b_gauss;
            });
  return merged;
}

}  // namespace nvlab
