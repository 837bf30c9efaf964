#include "ctaudit/gabor.hpp"

#include <cmath>

#include "ctaudit/common.hpp"

namespace ctaudit {

void GaborParams::validate() const {
  if (!(wavelength > 0.0)) throw ContractError("gabor: wavelength must be positive");
  if (!(sigma > 0.0)) throw ContractError("gabor: sigma must be positive");
  if (!(aspect > 0.0)) throw ContractError("gabor: aspect ratio must be positive");
}

TrigPair oriented_trig(double theta) {
  int quo = 0;
  double r = std::remquo(theta, M_PI, &quo);  // exact: theta = quo*pi + r, |r| <= pi/2
  if (r == -0.5 * M_PI) {
    // Ties at the half-period boundary round to either sign of r depending on
    // quotient parity; fold them onto +pi/2 so the parity flip below is the
    // only thing that carries orientation sign. Without this, theta and
    // theta + pi land on opposite boundary signs and the kernels differ.
    r = 0.5 * M_PI;
    --quo;
  }
  TrigPair t;
  t.c = std::cos(r);
  t.s = std::sin(r);
  if (quo & 1) {  // cos(r + pi) = -cos(r), sin(r + pi) = -sin(r)
    t.c = -t.c;
    t.s = -t.s;
  }
  return t;
}

std::vector<double> gabor_kernel(const GaborParams& p, int kernel_size) {
  return gabor_kernel_jacobian(p, kernel_size).kernel;
}

GaborKernelJacobian gabor_kernel_jacobian(const GaborParams& p, int kernel_size) {
  p.validate();
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ContractError("gabor: kernel size must be odd and positive");
  }

  const int n = kernel_size * kernel_size;
  GaborKernelJacobian jac;
  jac.kernel.resize(n);
  jac.d_wavelength.resize(n);
  jac.d_orientation.resize(n);
  jac.d_phase.resize(n);
  jac.d_sigma.resize(n);
  jac.d_aspect.resize(n);

  const TrigPair t = oriented_trig(p.orientation);
  const double two_pi = 2.0 * M_PI;
  const double inv_lambda = 1.0 / p.wavelength;
  const double inv_sigma2 = 1.0 / (p.sigma * p.sigma);
  const double gamma2 = p.aspect * p.aspect;
  const int half = (kernel_size - 1) / 2;

  for (int row = 0; row < kernel_size; ++row) {
    const double y = row - half;
    for (int col = 0; col < kernel_size; ++col) {
      const double x = col - half;
      const double xr = x * t.c + y * t.s;
      const double yr = -x * t.s + y * t.c;

      const double env = std::exp(-0.5 * (xr * xr + gamma2 * yr * yr) * inv_sigma2);
      const double phi = two_pi * xr * inv_lambda + p.phase;
      const double cphi = std::cos(phi);
      const double sphi = std::sin(phi);

      const int i = row * kernel_size + col;
      jac.kernel[i] = env * cphi;

      // d(phi)/d(lambda) = -2 pi x' / lambda^2; envelope does not see lambda.
      jac.d_wavelength[i] = env * sphi * two_pi * xr * inv_lambda * inv_lambda;

      // d(x')/d(theta) = y', d(y')/d(theta) = -x'.
      const double denv_dtheta = -env * xr * yr * (1.0 - gamma2) * inv_sigma2;
      jac.d_orientation[i] = denv_dtheta * cphi - env * sphi * two_pi * inv_lambda * yr;

      jac.d_phase[i] = -env * sphi;

      jac.d_sigma[i] = env * cphi * (xr * xr + gamma2 * yr * yr) * inv_sigma2 / p.sigma;

      jac.d_aspect[i] = -env * cphi * p.aspect * yr * yr * inv_sigma2;
    }
  }
  return jac;
}

GaborBank init_bank(int out_channels, int kernel_size, std::uint64_t seed) {
  (void)seed;  // fully deterministic construction; seed reserved for future variants
  if (out_channels < 1) throw ContractError("init_bank: out_channels must be at least 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ContractError("init_bank: kernel size must be odd and positive");
  }

  GaborBank bank;
  bank.kernel_size = kernel_size;
  bank.filters.reserve(out_channels);

  const double log_lo = std::log(2.0);
  const double log_hi = std::log(static_cast<double>(std::max(kernel_size, 2)));
  for (int i = 0; i < out_channels; ++i) {
    GaborParams p;
    p.orientation = static_cast<double>(i) * M_PI / out_channels;
    const double frac = out_channels > 1 ? static_cast<double>(i) / (out_channels - 1) : 0.0;
    p.wavelength = std::exp(log_lo + frac * (log_hi - log_lo));
    p.phase = 0.0;
    p.sigma = 0.56 * p.wavelength;
    p.aspect = 0.5;
    bank.filters.push_back(p);
  }
  return bank;
}

}  // namespace ctaudit
