#ifndef NVLAB_SPIN_CORE_HPP
#define NVLAB_SPIN_CORE_HPP

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

// Ground-state spin Hamiltonian of the NV- center:
//
//   H = D*Sz^2 + E*(Sx^2 - Sy^2) + gamma * B.S
//
// in the NV-axis frame, basis {|+1>, |0>, |-1>}. Energies are in MHz,
// magnetic fields in gauss, gamma in MHz/G.
namespace nvlab {

struct PhysicalConstants {
  double gamma_nv_mhz_per_g = 2.8025;  // NV electron spin
  double gamma_e_mhz_per_g = 2.8025;   // bare electron (P1 model)
  double zero_field_d_mhz = 2870.0;
  void validate() const;
};

// One of the four <111> diamond axes an NV center can lie along.
struct NvOrientation {
  Eigen::Vector3d axis = Eigen::Vector3d(1, 1, 1).normalized();
  std::string label = "[111]";
  int index = 0;
  void validate() const;
};

// The four NV orientations in the crystal cube frame. Pairwise axis dot
// products are exactly -1/3.
const std::array<NvOrientation, 4>& nv_orientations();

struct SpinSystem {
  double d_mhz = 2870.0;
  double e_mhz = 0.0;
  NvOrientation orientation;
  PhysicalConstants constants;
  void validate() const;  // D > 0, E >= 0, 2E < D
};

// Lab-frame (crystal cube frame) magnetic field.
struct FieldVector {
  Eigen::Vector3d gauss = Eigen::Vector3d::Zero();
  void validate() const;  // finite, |B| < 1e5 G
};

// 3x3 complex Hermitian matrix in the {|+1>,|0>,|-1>} NV-frame basis, MHz.
using HamiltonianMatrix = Eigen::Matrix3cd;

// Spin-1 operator matrices in the standard |m> basis (ordered +1, 0, -1).
Eigen::Matrix3cd spin1_sx();
Eigen::Matrix3cd spin1_sy();
Eigen::Matrix3cd spin1_sz();

// Orthonormal NV frame for a given axis. Rows are the frame's x, y, z unit
// vectors expressed in the lab frame; z is the NV axis. The x axis is the
// projection of lab [1,0,0] orthogonal to the axis (lab [0,1,0] when the
// axis is collinear with [1,0,0]), so E-term results are reproducible.
Eigen::Matrix3d nv_frame(const Eigen::Vector3d& axis);

// Eigendecomposition of a 3x3 complex Hermitian matrix. Eigenvalues are
// computed from the characteristic cubic (trigonometric form), eigenvectors
// from complex cross products of rows, with an iterative fallback when the
// closed form is ill-conditioned (near-degenerate spectra).
struct EigenDecomposition {
  std::array<double, 3> values{};  // ascending
  Eigen::Matrix3cd vectors;        // orthonormal columns, matching order
  bool used_fallback = false;
};
EigenDecomposition eig3_hermitian(const Eigen::Matrix3cd& h);

// Eigensystem of one NV Hamiltonian with transitions labeled against a
// reference basis by maximum eigenvector overlap. The default reference is
// the zero-field basis (identity); scans pass the previous point's
// eigenvectors to continue labels adiabatically through anticrossings.
struct TransitionSet {
  double f_minus_mhz = 0.0;  // lower |0>-like transition
  double f_plus_mhz = 0.0;   // upper |0>-like transition
  std::array<double, 3> eigenvalues_mhz{};  // ascending
  Eigen::Matrix3cd eigenvectors;            // columns match eigenvalues
  // positions in eigenvalues_mhz of the {+1-like, 0-like, -1-like} states
  std::array<int, 3> like_index{};
  // state_character(i, j) = |<basis_i | eigenvector_j>|^2
  Eigen::Matrix3d state_character;
};

HamiltonianMatrix build_hamiltonian(const SpinSystem& sys, const FieldVector& field);

// `reference_basis` columns are the {+1-like, 0-like, -1-like} reference
// states in that order; the default identity is the zero-field basis.
TransitionSet eigensystem(const HamiltonianMatrix& h);
TransitionSet eigensystem(const HamiltonianMatrix& h, const Eigen::Matrix3cd& reference_basis);

// Convenience: the four orientations sharing D, E and constants.
std::vector<SpinSystem> all_orientation_systems(double d_mhz, double e_mhz,
                                                const PhysicalConstants& constants = {});

// Per-orientation transition sets for a common lab field.
std::vector<std::pair<NvOrientation, TransitionSet>> transition_spectrum(
    const std::vector<SpinSystem>& systems, const FieldVector& field);

// ---------------------------------------------------------------------------
// Degeneracy scan: fields where spin species cross-relax.

enum class ResonanceKind { nv_nv, nv_p1 };

struct DegeneracyTargets {
  bool nv_nv = true;
  bool nv_p1 = true;
};

struct ResonanceField {
  double b_gauss = 0.0;
  ResonanceKind kind = ResonanceKind::nv_nv;
  double detuning_slope_mhz_per_g = 0.0;  // d(f1 - f2)/dB at the crossing
};

struct FieldRange {
  double min_gauss = 0.0;
  double max_gauss = 700.0;
  double step_gauss = 1.0;
  void validate() const;  // step > 0, within field sanity bound
};

// Scans |B| along `axis` and returns fields where (a) a transition of the
// aligned NV matches a transition of an off-axis NV (nv_nv) or (b) any NV
// transition matches the bare P1 electron frequency gamma_e*B (nv_p1).
// Grid sign changes are refined by bisection until the residual detuning is
// below 0.02 MHz (better than 0.1 G). Exact degeneracies at grid points
// (notably B = 0) are reported directly.
std::vector<ResonanceField> degeneracy_scan(const Eigen::Vector3d& axis,
                                            const FieldRange& range,
                                            const DegeneracyTargets& targets,
                                            const SpinSystem& prototype);

const char* to_string(ResonanceKind kind);

}  // namespace nvlab

#endif
