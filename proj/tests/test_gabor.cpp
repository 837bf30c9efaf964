// Tests for the Gabor kernel generator, its analytic Jacobian, and the
// deterministic filter-bank initializer.  The Jacobian is checked against
// central finite differences (an oracle independent of the closed-form
// derivatives), the symmetry contracts are checked bitwise, and the bank
// layout is checked against the documented spacing rules.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ctaudit/common.hpp"
#include "ctaudit/gabor.hpp"

namespace {

using ctaudit::GaborParams;
using ctaudit::Rng;

// Scale-relative error between an analytic gradient and its finite-difference
// estimate: worst absolute deviation divided by the largest FD magnitude.
// Per-element ratios are useless in the Gaussian tail where both sides are
// ~1e-30 and the FD quotient is pure cancellation noise.
double gradient_error(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double scale = 0.0;
  for (double v : fd) scale = std::max(scale, std::fabs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::fabs(analytic[i] - fd[i]));
  }
  return worst / std::max(scale, 1e-12);
}

// Central finite differences of the kernel with respect to one parameter,
// selected by a pointer-to-member so all five share one code path.
std::vector<double> fd_gradient(const GaborParams& p, double GaborParams::*field, int kernel_size,
                                double h) {
  GaborParams lo = p;
  GaborParams hi = p;
  lo.*field -= h;
  hi.*field += h;
  const std::vector<double> klo = ctaudit::gabor_kernel(lo, kernel_size);
  const std::vector<double> khi = ctaudit::gabor_kernel(hi, kernel_size);
  std::vector<double> fd(klo.size());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    fd[i] = (khi[i] - klo[i]) / (2.0 * h);
  }
  return fd;
}

GaborParams random_params(Rng& rng) {
  GaborParams p;
  p.wavelength = rng.uniform(2.0, 16.0);
  p.orientation = rng.uniform(-3.2, 3.2);
  p.phase = rng.uniform(-3.2, 3.2);
  p.sigma = rng.uniform(1.0, 6.0);
  p.aspect = rng.uniform(0.2, 2.0);
  return p;
}

}  // namespace

TEST_CASE("gabor: parameter validation rejects non-positive scales") {
  GaborParams p;
  CHECK_NOTHROW(p.validate());

  GaborParams bad = p;
  bad.wavelength = 0.0;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);
  bad.wavelength = -3.0;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);

  bad = p;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);

  bad = p;
  bad.aspect = -1.0;
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);

  // NaN fails the positivity predicate as well.
  bad = p;
  bad.wavelength = std::nan("");
  CHECK_THROWS_AS(bad.validate(), ctaudit::ContractError);

  // Orientation and phase are unconstrained angles.
  GaborParams angles = p;
  angles.orientation = -17.0;
  angles.phase = 42.0;
  CHECK_NOTHROW(angles.validate());
}

TEST_CASE("gabor: kernel size contract") {
  GaborParams p;
  CHECK_THROWS_AS(ctaudit::gabor_kernel(p, 0), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::gabor_kernel(p, -7), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::gabor_kernel(p, 4), ctaudit::ContractError);
  CHECK(ctaudit::gabor_kernel(p, 1).size() == 1);
  CHECK(ctaudit::gabor_kernel(p, 7).size() == 49);
  CHECK(ctaudit::gabor_kernel(p, 11).size() == 121);
}

TEST_CASE("gabor: centre element equals cos(phase) exactly") {
  // At the midpoint x = y = 0, so the envelope is exp(-0) = 1 and the carrier
  // argument collapses to the phase alone.
  Rng rng(501);
  for (int trial = 0; trial < 50; ++trial) {
    GaborParams p = random_params(rng);
    const std::vector<double> k = ctaudit::gabor_kernel(p, 7);
    CHECK(k[24] == std::cos(p.phase));
  }

  GaborParams zero_phase;
  zero_phase.phase = 0.0;
  CHECK(ctaudit::gabor_kernel(zero_phase, 9)[40] == 1.0);

  // A 1x1 kernel is nothing but the centre element.
  GaborParams p;
  p.phase = 0.3;
  CHECK(ctaudit::gabor_kernel(p, 1)[0] == std::cos(0.3));
}

TEST_CASE("gabor: zero-phase kernel is point-symmetric bitwise") {
  // With psi = 0 the carrier is even and the envelope is even, so the value at
  // (x, y) equals the value at (-x, -y).  Negation is exact in IEEE arithmetic,
  // so the equality is bitwise, not approximate.
  Rng rng(502);
  for (int trial = 0; trial < 50; ++trial) {
    GaborParams p = random_params(rng);
    p.phase = 0.0;
    const int ks = 7;
    const std::vector<double> k = ctaudit::gabor_kernel(p, ks);
    bool symmetric = true;
    for (std::size_t i = 0; i < k.size(); ++i) {
      symmetric = symmetric && (k[i] == k[k.size() - 1 - i]);
    }
    CHECK(symmetric);
  }
}

TEST_CASE("gabor: zero-phase kernel is exactly invariant under a half-turn") {
  // kernel(theta) must equal kernel(theta + pi) element-for-element.  The
  // contract is bitwise whenever theta + pi is itself exact in double
  // precision, which each case below asserts as a precondition.
  const double pi = M_PI;

  const double named[] = {0.0,      0.25 * pi, 0.5 * pi, 0.75 * pi, pi,
                          -0.5 * pi, 1.0,      0.25,     -2.5,      5.0};
  for (double theta : named) {
    CAPTURE(theta);
    const double shifted = theta + pi;
    REQUIRE(shifted - pi == theta);  // the +pi addition introduced no rounding

    GaborParams p;
    p.phase = 0.0;
    p.orientation = theta;
    GaborParams q = p;
    q.orientation = shifted;

    const std::vector<double> a = ctaudit::gabor_kernel(p, 7);
    const std::vector<double> b = ctaudit::gabor_kernel(q, 7);
    bool equal = true;
    for (std::size_t i = 0; i < a.size(); ++i) equal = equal && (a[i] == b[i]);
    CHECK(equal);
  }

  // Random orientations snapped to a dyadic grid so theta + pi stays exact,
  // with the remaining parameters randomized too.
  Rng rng(503);
  for (int trial = 0; trial < 300; ++trial) {
    const double theta =
        (static_cast<double>(rng.uniform_index(1u << 23)) - 4194304.0) * 0x1.0p-20;
    const double shifted = theta + pi;
    REQUIRE(shifted - pi == theta);

    GaborParams p = random_params(rng);
    p.phase = 0.0;
    p.orientation = theta;
    GaborParams q = p;
    q.orientation = shifted;

    const std::vector<double> a = ctaudit::gabor_kernel(p, 7);
    const std::vector<double> b = ctaudit::gabor_kernel(q, 7);
    bool equal = true;
    for (std::size_t i = 0; i < a.size(); ++i) equal = equal && (a[i] == b[i]);
    CHECK(equal);
  }

  // Sanity: with a nonzero phase the half-turn flips the carrier sign, so the
  // kernels must NOT coincide -- the checks above are not vacuous.
  GaborParams p;
  p.phase = 0.3;
  p.orientation = 0.25 * pi;
  GaborParams q = p;
  q.orientation = p.orientation + pi;
  const std::vector<double> a = ctaudit::gabor_kernel(p, 7);
  const std::vector<double> b = ctaudit::gabor_kernel(q, 7);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || (a[i] != b[i]);
  CHECK(any_diff);
}

TEST_CASE("gabor: oriented_trig reduces the angle without losing the parity sign") {
  const ctaudit::TrigPair at_zero = ctaudit::oriented_trig(0.0);
  CHECK(at_zero.c == 1.0);
  CHECK(at_zero.s == 0.0);

  // theta = pi reduces to r = 0 with an odd quotient: both components flip.
  const ctaudit::TrigPair at_pi = ctaudit::oriented_trig(M_PI);
  CHECK(at_pi.c == -1.0);
  CHECK(at_pi.s == 0.0);

  // The half-period boundary: +pi/2 and 1.5*pi must be exact joint negations
  // of each other, not independent roundings.
  const ctaudit::TrigPair up = ctaudit::oriented_trig(0.5 * M_PI);
  const ctaudit::TrigPair down = ctaudit::oriented_trig(1.5 * M_PI);
  CHECK(up.c == std::cos(0.5 * M_PI));
  CHECK(up.s == 1.0);
  CHECK(down.c == -up.c);
  CHECK(down.s == -1.0);

  Rng rng(504);
  for (int trial = 0; trial < 200; ++trial) {
    const double theta = rng.uniform(-50.0, 50.0);
    const ctaudit::TrigPair t = ctaudit::oriented_trig(theta);
    CHECK(t.c * t.c + t.s * t.s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(t.c - std::cos(theta)) < 1e-9);
    CHECK(std::fabs(t.s - std::sin(theta)) < 1e-9);
  }
}

TEST_CASE("gabor: analytic jacobian matches central finite differences") {
  const double h = 1e-5;
  const double tol = 1e-4;

  // The worked reference configuration: 7x7, lambda 4, theta pi/4, phase 0.3,
  // sigma 2, gamma 0.8.  The orientation derivative must agree with the
  // two-sided difference quotient to better than 1e-4 relative error.
  {
    GaborParams p;
    p.wavelength = 4.0;
    p.orientation = M_PI / 4.0;
    p.phase = 0.3;
    p.sigma = 2.0;
    p.aspect = 0.8;
    const ctaudit::GaborKernelJacobian jac = ctaudit::gabor_kernel_jacobian(p, 7);
    const std::vector<double> fd = fd_gradient(p, &GaborParams::orientation, 7, h);
    CHECK(gradient_error(jac.d_orientation, fd) < tol);
  }

  // All five partial derivatives over random parameter draws.
  Rng rng(505);
  double GaborParams::*const fields[] = {&GaborParams::wavelength, &GaborParams::orientation,
                                         &GaborParams::phase, &GaborParams::sigma,
                                         &GaborParams::aspect};
  for (int trial = 0; trial < 100; ++trial) {
    const GaborParams p = random_params(rng);
    const ctaudit::GaborKernelJacobian jac = ctaudit::gabor_kernel_jacobian(p, 7);
    const std::vector<double>* analytic[] = {&jac.d_wavelength, &jac.d_orientation, &jac.d_phase,
                                             &jac.d_sigma, &jac.d_aspect};
    for (int f = 0; f < 5; ++f) {
      CAPTURE(trial);
      CAPTURE(f);
      const std::vector<double> fd = fd_gradient(p, fields[f], 7, h);
      CHECK(gradient_error(*analytic[f], fd) < tol);
    }
  }
}

TEST_CASE("gabor: jacobian kernel matches gabor_kernel and are finite") {
  Rng rng(506);
  for (int trial = 0; trial < 20; ++trial) {
    const GaborParams p = random_params(rng);
    const ctaudit::GaborKernelJacobian jac = ctaudit::gabor_kernel_jacobian(p, 9);
    const std::vector<double> k = ctaudit::gabor_kernel(p, 9);
    REQUIRE(jac.kernel.size() == k.size());
    bool same = true;
    bool finite = true;
    for (std::size_t i = 0; i < k.size(); ++i) {
      same = same && (jac.kernel[i] == k[i]);
      finite = finite && std::isfinite(jac.kernel[i]) && std::isfinite(jac.d_wavelength[i]) &&
               std::isfinite(jac.d_orientation[i]) && std::isfinite(jac.d_phase[i]) &&
               std::isfinite(jac.d_sigma[i]) && std::isfinite(jac.d_aspect[i]);
    }
    CHECK(same);
    CHECK(finite);
  }
}

TEST_CASE("gabor: init_bank spaces orientations evenly over [0, pi)") {
  const ctaudit::GaborBank bank = ctaudit::init_bank(4, 7, 0);
  REQUIRE(bank.filters.size() == 4);
  CHECK(bank.filters[0].orientation == 0.0);
  CHECK(bank.filters[1].orientation == M_PI / 4.0);
  CHECK(bank.filters[2].orientation == 2.0 * M_PI / 4.0);
  CHECK(bank.filters[3].orientation == 3.0 * M_PI / 4.0);

  const ctaudit::GaborBank many = ctaudit::init_bank(16, 7, 0);
  for (std::size_t i = 0; i < many.filters.size(); ++i) {
    CHECK(many.filters[i].orientation ==
          doctest::Approx(static_cast<double>(i) * M_PI / 16.0).epsilon(1e-15));
    CHECK(many.filters[i].orientation < M_PI);  // half-open interval
  }
}

TEST_CASE("gabor: init_bank wavelengths are log-spaced over [2, kernel_size]") {
  const int ks = 7;
  const ctaudit::GaborBank bank = ctaudit::init_bank(6, ks, 0);
  REQUIRE(bank.filters.size() == 6);

  CHECK(bank.filters.front().wavelength == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(bank.filters.back().wavelength == doctest::Approx(7.0).epsilon(1e-14));

  // Constant ratio between consecutive wavelengths (uniform steps in log).
  const double ratio = bank.filters[1].wavelength / bank.filters[0].wavelength;
  for (std::size_t i = 1; i < bank.filters.size(); ++i) {
    CHECK(bank.filters[i].wavelength / bank.filters[i - 1].wavelength ==
          doctest::Approx(ratio).epsilon(1e-12));
    CHECK(bank.filters[i].wavelength > bank.filters[i - 1].wavelength);
  }
}

TEST_CASE("gabor: init_bank fixes phase, aspect, and the sigma/lambda ratio") {
  const ctaudit::GaborBank bank = ctaudit::init_bank(8, 7, 123);
  for (const GaborParams& p : bank.filters) {
    CHECK(p.phase == 0.0);
    CHECK(p.aspect == 0.5);
    CHECK(p.sigma == 0.56 * p.wavelength);
    CHECK_NOTHROW(p.validate());
  }
  CHECK(bank.kernel_size == 7);
  CHECK(bank.stride == 2);
  CHECK(bank.padding == 3);
}

TEST_CASE("gabor: init_bank is deterministic") {
  const ctaudit::GaborBank a = ctaudit::init_bank(8, 7, 42);
  const ctaudit::GaborBank b = ctaudit::init_bank(8, 7, 42);
  // Construction has no random component at all, so differing seeds must
  // produce the same bank too; the seed is part of the interface only.
  const ctaudit::GaborBank c = ctaudit::init_bank(8, 7, 4242);
  REQUIRE(a.filters.size() == b.filters.size());
  REQUIRE(a.filters.size() == c.filters.size());
  for (std::size_t i = 0; i < a.filters.size(); ++i) {
    CHECK(a.filters[i].wavelength == b.filters[i].wavelength);
    CHECK(a.filters[i].orientation == b.filters[i].orientation);
    CHECK(a.filters[i].sigma == b.filters[i].sigma);
    CHECK(a.filters[i].wavelength == c.filters[i].wavelength);
    CHECK(a.filters[i].orientation == c.filters[i].orientation);
  }
}

TEST_CASE("gabor: init_bank edge cases and contract errors") {
  const ctaudit::GaborBank one = ctaudit::init_bank(1, 7, 0);
  REQUIRE(one.filters.size() == 1);
  CHECK(one.filters[0].orientation == 0.0);
  CHECK(one.filters[0].wavelength == doctest::Approx(2.0).epsilon(1e-14));

  CHECK_THROWS_AS(ctaudit::init_bank(0, 7, 0), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::init_bank(-2, 7, 0), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::init_bank(4, 6, 0), ctaudit::ContractError);
  CHECK_THROWS_AS(ctaudit::init_bank(4, 0, 0), ctaudit::ContractError);
}
