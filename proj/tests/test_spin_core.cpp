#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "nvlab/rng.hpp"
#include "nvlab/spin_core.hpp"
#include "oracles.hpp"

using namespace nvlab;

namespace {

SpinSystem make_system(double d = 2870.0, double e = 0.0, int orientation = 0) {
  SpinSystem s;
  s.d_mhz = d;
  s.e_mhz = e;
  s.orientation = nv_orientations()[orientation];
  return s;
}

Eigen::Vector3d axis111() { return Eigen::Vector3d(1, 1, 1).normalized(); }

HamiltonianMatrix random_hermitian(std::uint64_t seed, double scale) {
  HamiltonianMatrix h;
  for (int i = 0; i < 3; ++i)
    h(i, i) = scale * (2.0 * nvlab::rng::uniform(seed, i, 0) - 1.0);
  int tag = 10;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      const double re = 2.0 * nvlab::rng::uniform(seed, tag, 1) - 1.0;
      const double im = 2.0 * nvlab::rng::uniform(seed, tag, 2) - 1.0;
      ++tag;
      const std::complex<double> z(re, im);
      h(i, j) = scale * z;
      h(j, i) = std::conj(scale * z);
    }
  return h;
}

}  // namespace

TEST_CASE("nv orientations are unit vectors with pairwise dot -1/3") {
  const auto& axes = nv_orientations();
  for (const auto& o : axes) {
    o.validate();
    CHECK(std::abs(o.axis.norm() - 1.0) < 1e-14);
  }
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      CHECK(axes[i].axis.dot(axes[j].axis) == doctest::Approx(-1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("build_hamiltonian zero field, zero strain is diag(D, 0, D)") {
  const auto h = build_hamiltonian(make_system(), FieldVector{});
  CHECK(h(0, 0) == std::complex<double>(2870.0, 0.0));
  CHECK(h(1, 1) == std::complex<double>(0.0, 0.0));
  CHECK(h(2, 2) == std::complex<double>(2870.0, 0.0));
  CHECK((h - h.diagonal().asDiagonal().toDenseMatrix()).norm() == 0.0);
}

TEST_CASE("build_hamiltonian axial 30 G is diagonal with Zeeman shifts") {
  const SpinSystem sys = make_system();
  const FieldVector field{30.0 * sys.orientation.axis};
  const auto h = build_hamiltonian(sys, field);
  const double zeeman = 2.8025 * 30.0;  // 84.075
  CHECK(h(0, 0).real() == doctest::Approx(2870.0 + zeeman).epsilon(1e-12));
  CHECK(h(2, 2).real() == doctest::Approx(2870.0 - zeeman).epsilon(1e-12));
  CHECK(std::abs(h(0, 1)) < 1e-10);
  CHECK(std::abs(h(1, 2)) < 1e-10);
}

TEST_CASE("strain E splits the +-1 levels by 2E at zero field") {
  const auto h = build_hamiltonian(make_system(2870.0, 5.0), FieldVector{});
  const auto eig = eig3_hermitian(h);
  CHECK(eig.values[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx(2865.0).epsilon(1e-12));
  CHECK(eig.values[2] == doctest::Approx(2875.0).epsilon(1e-12));
}

TEST_CASE("build_hamiltonian rejects invalid inputs") {
  CHECK_THROWS_AS(build_hamiltonian(make_system(),
                                    FieldVector{Eigen::Vector3d(1.0, std::nan(""), 0.0)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_hamiltonian(make_system(), FieldVector{Eigen::Vector3d(2e5, 0, 0)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_hamiltonian(make_system(-1.0), FieldVector{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_hamiltonian(make_system(2870.0, 1500.0), FieldVector{}),
                  std::invalid_argument);
}

TEST_CASE("hamiltonian is hermitian with trace 2D for random fields") {
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    const double d = 2000.0 + 2000.0 * rng::uniform(trial, 1);
    const double e = 10.0 * rng::uniform(trial, 2);
    const Eigen::Vector3d b(400.0 * (rng::uniform(trial, 3) - 0.5),
                            400.0 * (rng::uniform(trial, 4) - 0.5),
                            400.0 * (rng::uniform(trial, 5) - 0.5));
    const int orient = static_cast<int>(trial % 4);
    const auto h = build_hamiltonian(make_system(d, e, orient), FieldVector{b});
    CHECK((h - h.adjoint().eval()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(h.trace().real() - 2.0 * d) < 1e-8);
    CHECK(std::abs(h.trace().imag()) < 1e-10);

    const auto eig = eig3_hermitian(h);
    CHECK(eig.values[0] + eig.values[1] + eig.values[2] ==
          doctest::Approx(2.0 * d).epsilon(1e-9));
  }
}

TEST_CASE("eig3_hermitian matches the jacobi oracle on random matrices") {
  for (std::uint64_t trial = 0; trial < 400; ++trial) {
    const double scale = trial % 3 == 0 ? 1.0 : 3000.0;
    const auto h = random_hermitian(trial, scale);
    const auto mine = eig3_hermitian(h);
    const auto ref = oracle::jacobi_hermitian(h);
    for (int i = 0; i < 3; ++i)
      CHECK(mine.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-10));
    // residual + orthonormality
    for (int i = 0; i < 3; ++i) {
      const double res = (h * mine.vectors.col(i) - mine.values[i] * mine.vectors.col(i)).norm();
      CHECK(res < 1e-8 * (h.norm() + 1.0));
    }
    CHECK((mine.vectors.adjoint() * mine.vectors - Eigen::Matrix3cd::Identity()).norm() <
          1e-9);
  }
}

TEST_CASE("eig3_hermitian handles degenerate and near-degenerate spectra") {
  // exact degeneracy: zero field, E = 0
  const auto h0 = build_hamiltonian(make_system(), FieldVector{});
  const auto eig0 = eig3_hermitian(h0);
  CHECK(eig0.values[0] == 0.0);
  CHECK(eig0.values[1] == 2870.0);
  CHECK(eig0.values[2] == 2870.0);

  // near degeneracy via a tiny transverse field
  for (double b : {1e-7, 1e-5, 1e-3, 0.1}) {
    const FieldVector f{b * Eigen::Vector3d(1, -1, 0).normalized()};
    const auto h = build_hamiltonian(make_system(), f);
    const auto mine = eig3_hermitian(h);
    const auto ref = oracle::jacobi_hermitian(h);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(mine.values[i] - ref.values[i]) < 1e-7);
  }
}

TEST_CASE("eigensystem labels transitions and rejects non-hermitian input") {
  const auto t = eigensystem(build_hamiltonian(make_system(), FieldVector{}));
  CHECK(t.f_minus_mhz == 2870.0);
  CHECK(t.f_plus_mhz == 2870.0);

  HamiltonianMatrix bad = HamiltonianMatrix::Zero();
  bad(0, 1) = 1.0;  // no conjugate partner
  CHECK_THROWS_AS(eigensystem(bad), std::invalid_argument);
}

TEST_CASE("axial 30 G transitions are exact") {
  const SpinSystem sys = make_system();
  const FieldVector f{30.0 * sys.orientation.axis};
  const auto t = eigensystem(build_hamiltonian(sys, f));
  CHECK(t.f_minus_mhz == doctest::Approx(2785.925).epsilon(1e-12));
  CHECK(t.f_plus_mhz == doctest::Approx(2954.075).epsilon(1e-12));
}

TEST_CASE("off-axis orientation at 30 G along [111]: frozen oracle values") {
  // Exact eigensolve for cos(theta) = -1/3; first order predicts
  // 2870 -+ 28.025 MHz, the full diagonalization shifts both up ~3.3 MHz.
  const SpinSystem sys = make_system(2870.0, 0.0, 1);
  const FieldVector f{30.0 * axis111()};
  const auto t = eigensystem(build_hamiltonian(sys, f));
  CHECK(t.f_minus_mhz == doctest::Approx(2845.2460424275).epsilon(1e-9));
  CHECK(t.f_plus_mhz == doctest::Approx(2901.3173897068).epsilon(1e-9));
  CHECK(std::abs(t.f_minus_mhz - (2870.0 - 28.025)) < 3.5);
  CHECK(std::abs(t.f_plus_mhz - (2870.0 + 28.025)) < 3.5);

  // cross-check against the independent oracle
  const auto ref = oracle::jacobi_hermitian(build_hamiltonian(sys, f));
  CHECK(t.eigenvalues_mhz[0] == doctest::Approx(ref.values[0]).epsilon(1e-12));
  CHECK(t.eigenvalues_mhz[2] == doctest::Approx(ref.values[2]).epsilon(1e-12));
}

TEST_CASE("field reversal leaves eigenvalues invariant for E = 0") {
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d b(300.0 * (rng::uniform(trial, 10) - 0.5),
                            300.0 * (rng::uniform(trial, 11) - 0.5),
                            300.0 * (rng::uniform(trial, 12) - 0.5));
    const SpinSystem sys = make_system(2870.0, 0.0, static_cast<int>(trial % 4));
    const auto ep = eig3_hermitian(build_hamiltonian(sys, FieldVector{b}));
    const auto em = eig3_hermitian(build_hamiltonian(sys, FieldVector{-b}));
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(ep.values[i] - em.values[i]) < 1e-8);
  }
}

TEST_CASE("axial exactness: eigenvalues are {0, D - gB, D + gB} for axial fields") {
  for (std::uint64_t trial = 0; trial < 40; ++trial) {
    const double b = 1000.0 * rng::uniform(trial, 20);
    const int orient = static_cast<int>(trial % 4);
    const SpinSystem sys = make_system(2870.0, 0.0, orient);
    const FieldVector f{b * sys.orientation.axis};
    const auto eig = eig3_hermitian(build_hamiltonian(sys, f));
    const double g = sys.constants.gamma_nv_mhz_per_g;
    std::array<double, 3> expect{0.0, 2870.0 - g * b, 2870.0 + g * b};
    std::sort(expect.begin(), expect.end());
    for (int i = 0; i < 3; ++i) CHECK(std::abs(eig.values[i] - expect[i]) < 1e-8);
  }
}

TEST_CASE("transition_spectrum: [111] structure at 30 G") {
  const auto systems = all_orientation_systems(2870.0, 0.0);
  const FieldVector f{30.0 * axis111()};
  const auto spec = transition_spectrum(systems, f);
  REQUIRE(spec.size() == 4);

  // aligned orientation owns the outer pair
  CHECK(spec[0].second.f_minus_mhz == doctest::Approx(2785.925).epsilon(1e-10));
  CHECK(spec[0].second.f_plus_mhz == doctest::Approx(2954.075).epsilon(1e-10));

  // the three off-axis orientations coincide to 1e-6 MHz
  for (int k = 2; k <= 3; ++k) {
    CHECK(std::abs(spec[k].second.f_minus_mhz - spec[1].second.f_minus_mhz) < 1e-6);
    CHECK(std::abs(spec[k].second.f_plus_mhz - spec[1].second.f_plus_mhz) < 1e-6);
  }
}

TEST_CASE("transition_spectrum: degenerate at zero field, empty list rejected") {
  const auto systems = all_orientation_systems(2870.0, 0.0);
  const auto spec = transition_spectrum(systems, FieldVector{});
  for (const auto& [o, t] : spec) {
    CHECK(t.f_minus_mhz == doctest::Approx(2870.0));
    CHECK(t.f_plus_mhz == doctest::Approx(2870.0));
  }
  CHECK_THROWS_AS(transition_spectrum({}, FieldVector{}), std::invalid_argument);
}

TEST_CASE("transition_spectrum: B along [100] makes all orientations equivalent") {
  const auto systems = all_orientation_systems(2870.0, 0.0);
  const FieldVector f{Eigen::Vector3d(50.0, 0.0, 0.0)};
  const auto spec = transition_spectrum(systems, f);
  for (int k = 1; k < 4; ++k) {
    CHECK(std::abs(spec[k].second.f_minus_mhz - spec[0].second.f_minus_mhz) < 1e-6);
    CHECK(std::abs(spec[k].second.f_plus_mhz - spec[0].second.f_plus_mhz) < 1e-6);
  }
  CHECK(spec[0].second.f_minus_mhz == doctest::Approx(2795.96687688).epsilon(1e-9));
  CHECK(spec[0].second.f_plus_mhz == doctest::Approx(2957.70519709).epsilon(1e-9));
}

TEST_CASE("degeneracy_scan finds the P1 and NV-NV crossings along [111]") {
  const SpinSystem prototype = make_system();
  const auto res = degeneracy_scan(axis111(), FieldRange{0.0, 700.0, 1.0},
                                   DegeneracyTargets{}, prototype);

  bool found_p1 = false, found_nvnv = false, found_zero = false;
  for (const auto& r : res) {
    if (r.kind == ResonanceKind::nv_p1 && std::abs(r.b_gauss - 512.0428) < 0.15) {
      found_p1 = true;
      // slope of f_minus(aligned) - gamma_e B is -(gamma_nv + gamma_e)
      CHECK(r.detuning_slope_mhz_per_g == doctest::Approx(-5.605).epsilon(1e-3));
    }
    if (r.kind == ResonanceKind::nv_nv && r.b_gauss > 100.0) {
      found_nvnv = true;
      CHECK(r.b_gauss > 580.0);
      CHECK(r.b_gauss < 610.0);
      CHECK(r.b_gauss == doctest::Approx(591.256).epsilon(5e-4));
    }
    if (r.kind == ResonanceKind::nv_nv && r.b_gauss < 0.5) found_zero = true;
  }
  CHECK(found_p1);
  CHECK(found_nvnv);
  CHECK(found_zero);
}

TEST_CASE("degeneracy certificate: returned fields really are degenerate") {
  const SpinSystem prototype = make_system();
  const auto res = degeneracy_scan(axis111(), FieldRange{0.0, 700.0, 1.0},
                                   DegeneracyTargets{}, prototype);
  REQUIRE(!res.empty());

  const auto systems = all_orientation_systems(2870.0, 0.0);
  for (const auto& r : res) {
    const FieldVector f{r.b_gauss * axis111()};
    const auto spec = transition_spectrum(systems, f);
    std::vector<double> freqs;
    for (const auto& [o, t] : spec) {
      freqs.push_back(t.f_minus_mhz);
      freqs.push_back(t.f_plus_mhz);
    }
    double best = 1e30;
    if (r.kind == ResonanceKind::nv_p1) {
      const double p1 = prototype.constants.gamma_e_mhz_per_g * r.b_gauss;
      for (double fr : freqs) best = std::min(best, std::abs(fr - p1));
    } else {
      // closest pair between aligned (index 0) and off-axis transitions
      for (int i = 0; i < 2; ++i)
        for (std::size_t j = 2; j < freqs.size(); ++j)
          best = std::min(best, std::abs(freqs[i] - freqs[j]));
    }
    CHECK(best < 0.05);
  }
}

TEST_CASE("degeneracy_scan edge cases") {
  const SpinSystem prototype = make_system();
  const auto empty = degeneracy_scan(axis111(), FieldRange{10.0, 20.0, 1.0},
                                     DegeneracyTargets{}, prototype);
  CHECK(empty.empty());
  CHECK_THROWS_AS(degeneracy_scan(axis111(), FieldRange{0.0, 100.0, 0.0},
                                  DegeneracyTargets{}, prototype),
                  std::invalid_argument);
  CHECK_THROWS_AS(degeneracy_scan(axis111(), FieldRange{0.0, 100.0, -1.0},
                                  DegeneracyTargets{}, prototype),
                  std::invalid_argument);
}

TEST_CASE("spin_core is safe to call from multiple threads") {
  const auto systems = all_orientation_systems(2870.0, 2.0);
  auto run = [&](double b0, std::vector<double>& out) {
    for (int i = 0; i < 40; ++i) {
      const FieldVector f{(b0 + i) * axis111()};
      for (const auto& [o, t] : transition_spectrum(systems, f))
        out.push_back(t.f_minus_mhz);
    }
  };
  std::vector<double> serial[4], parallel[4];
  for (int k = 0; k < 4; ++k) run(10.0 + 40.0 * k, serial[k]);
  {
    std::vector<std::thread> threads;
    for (int k = 0; k < 4; ++k)
      threads.emplace_back([&, k] { run(10.0 + 40.0 * k, parallel[k]); });
    for (auto& t : threads) t.join();
  }
  for (int k = 0; k < 4; ++k) CHECK(serial[k] == parallel[k]);
}
