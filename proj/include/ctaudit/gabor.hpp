#pragma once

// Gabor wavelet kernels with analytic parameter gradients.
//
// The kernel is the classic Gaussian-windowed cosine
//   g(x,y) = exp(-(x'^2 + g^2 y'^2) / (2 s^2)) * cos(2 pi x' / lambda + psi)
//   x' =  x cos(theta) + y sin(theta)
//   y' = -x sin(theta) + y cos(theta)
// sampled on a grid centred at the kernel midpoint.  All five parameters are
// trainable, so alongside the kernel we also emit d(g)/d(param) for each of
// them (see gabor_kernel_jacobian); the layer wrapper in nn.hpp chains these
// with the convolution gradient.

#include <cstdint>
#include <vector>

namespace ctaudit {

struct GaborParams {
  double wavelength = 4.0;   // lambda, pixels, > 0
  double orientation = 0.0;  // theta, radians
  double phase = 0.0;        // psi, radians
  double sigma = 2.0;        // envelope width, pixels, > 0
  double aspect = 0.5;       // gamma, > 0

  void validate() const;  // throws ContractError on non-positive lambda/sigma/aspect
};

// cos/sin of theta with the angle reduced modulo pi first (exact IEEE
// remainder) and the half-turn parity folded back in as a sign.  Because the
// reduction is exact, theta and theta + pi yield bitwise-identical pairs up to
// a joint sign flip -- which the even kernel (psi = 0) cannot see.  This is
// what makes the kernel's half-turn symmetry exact rather than approximate.
struct TrigPair {
  double c = 1.0;
  double s = 0.0;
};
TrigPair oriented_trig(double theta);

// Sampled kernel, row-major kernel_size x kernel_size.
std::vector<double> gabor_kernel(const GaborParams& p, int kernel_size);

// Kernel plus the five partial derivatives, every field row-major
// kernel_size x kernel_size.
struct GaborKernelJacobian {
  std::vector<double> kernel;
  std::vector<double> d_wavelength;
  std::vector<double> d_orientation;
  std::vector<double> d_phase;
  std::vector<double> d_sigma;
  std::vector<double> d_aspect;
};
GaborKernelJacobian gabor_kernel_jacobian(const GaborParams& p, int kernel_size);

// A bank of filters standing in for a stem convolution.
struct GaborBank {
  std::vector<GaborParams> filters;  // one per output channel
  int kernel_size = 7;
  int stride = 2;
  int padding = 3;
};

// Deterministic spread of initial filters: orientations i*pi/n over [0, pi),
// wavelengths log-spaced over [2, kernel_size], psi = 0, sigma = 0.56*lambda,
// gamma = 0.5.  The construction has no random component; the seed parameter
// is accepted for interface stability.
GaborBank init_bank(int out_channels, int kernel_size, std::uint64_t seed);

}  // namespace ctaudit
