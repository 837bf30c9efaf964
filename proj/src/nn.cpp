#include "ctaudit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "ctaudit/common.hpp"

namespace ctaudit::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tensor Tensor::zeros(int n, int c, int h, int w) {
  Tensor t;
  t.n = n;
  t.c = c;
  t.h = h;
  t.w = w;
  t.v.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
  return t;
}

std::size_t Param::count() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {

int conv_out_extent(int in, int k, int stride, int pad, const char* who) {
  // Guard on the raw extent: a negative numerator would truncate toward zero
  // under integer division and sneak past an `out <= 0` check when stride > 1.
  if (in + 2 * pad < k) {
    throw ContractError(std::string(who) + ": input too small for kernel/stride/padding");
  }
  return (in + 2 * pad - k) / stride + 1;
}

// Unfold one sample (c,h,w) into a (c*k*k) x (oh*ow) row-major matrix.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            double* col) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) *
                                (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row + static_cast<std::size_t>(oy) * ow,
                      row + static_cast<std::size_t>(oy + 1) * ow, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[static_cast<std::size_t>(oy) * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Fold a (c*k*k) x (oh*ow) matrix back onto a sample gradient, accumulating.
void col2im_accumulate(const double* col, int c, int h, int w, int k, int stride, int pad, int oh,
                       int ow, double* x_grad) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) *
                                      (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = x_grad + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

void kaiming_uniform(std::vector<double>& values, int fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / fan_in);
  for (double& v : values) v = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel_size, int stride,
               int padding, bool bias, std::uint64_t rng_seed)
    : Layer(std::move(name)),
      in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel_size),
      stride_(stride),
      pad_(padding),
      has_bias_(bias) {
  if (in_c_ < 1 || out_c_ < 1 || k_ < 1 || stride_ < 1 || pad_ < 0) {
    throw ContractError("Conv2d: bad geometry for layer " + this->name());
  }
  weight_.name = this->name() + ".weight";
  weight_.shape = {out_c_, in_c_, k_, k_};
  weight_.value.resize(weight_.count());
  kaiming_uniform(weight_.value, in_c_ * k_ * k_, rng_seed);
  weight_.zero_grad();
  if (has_bias_) {
    bias_.name = this->name() + ".bias";
    bias_.shape = {out_c_};
    bias_.value.assign(out_c_, 0.0);
    bias_.zero_grad();
  }
}

Tensor Conv2d::forward(const Tensor& x, bool training) {
  if (x.c != in_c_) {
    throw ContractError("Conv2d " + name() + ": expected " + std::to_string(in_c_) +
                        " input channels, got " + std::to_string(x.c));
  }
  const int oh = conv_out_extent(x.h, k_, stride_, pad_, "Conv2d");
  const int ow = conv_out_extent(x.w, k_, stride_, pad_, "Conv2d");
  const int kk = in_c_ * k_ * k_;
  const int pixels = oh * ow;

  Tensor y = Tensor::zeros(x.n, out_c_, oh, ow);
  std::vector<double> col(static_cast<std::size_t>(kk) * pixels);
  ConstMapMat W(weight_.value.data(), out_c_, kk);

  for (int i = 0; i < x.n; ++i) {
    im2col(&x.v[static_cast<std::size_t>(i) * x.c * x.h * x.w], x.c, x.h, x.w, k_, stride_, pad_,
           oh, ow, col.data());
    ConstMapMat C(col.data(), kk, pixels);
    MapMat Y(&y.v[static_cast<std::size_t>(i) * out_c_ * pixels], out_c_, pixels);
    Y.noalias() = W * C;
    if (has_bias_) {
      for (int o = 0; o < out_c_; ++o) Y.row(o).array() += bias_.value[o];
    }
  }

  if (training) {
    cached_input_ = x;
    have_cache_ = true;
  } else {
    have_cache_ = false;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!have_cache_) throw ContractError("Conv2d " + name() + ": backward without training forward");
  const Tensor& x = cached_input_;
  const int oh = grad_out.h, ow = grad_out.w;
  const int kk = in_c_ * k_ * k_;
  const int pixels = oh * ow;

  Tensor dx = Tensor::zeros(x.n, x.c, x.h, x.w);
  std::vector<double> col(static_cast<std::size_t>(kk) * pixels);
  std::vector<double> dcol(static_cast<std::size_t>(kk) * pixels);
  ConstMapMat W(weight_.value.data(), out_c_, kk);
  MapMat dW(weight_.grad.data(), out_c_, kk);

  for (int i = 0; i < x.n; ++i) {
    im2col(&x.v[static_cast<std::size_t>(i) * x.c * x.h * x.w], x.c, x.h, x.w, k_, stride_, pad_,
           oh, ow, col.data());
    ConstMapMat C(col.data(), kk, pixels);
    ConstMapMat dY(&grad_out.v[static_cast<std::size_t>(i) * out_c_ * pixels], out_c_, pixels);

    dW.noalias() += dY * C.transpose();
    MapMat dC(dcol.data(), kk, pixels);
    dC.noalias() = W.transpose() * dY;
    col2im_accumulate(dcol.data(), x.c, x.h, x.w, k_, stride_, pad_, oh, ow,
                      &dx.v[static_cast<std::size_t>(i) * x.c * x.h * x.w]);

    if (has_bias_) {
      for (int o = 0; o < out_c_; ++o) bias_.grad[o] += dY.row(o).sum();
    }
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// GaborConv2d

namespace {
constexpr int kGaborDof = 5;  // log lambda, theta, psi, log sigma, log gamma
}

GaborConv2d::GaborConv2d(std::string name, int in_channels, const GaborBank& bank)
    : Layer(std::move(name)),
      in_c_(in_channels),
      out_c_(static_cast<int>(bank.filters.size())),
      k_(bank.kernel_size),
      stride_(bank.stride),
      pad_(bank.padding) {
  if (out_c_ < 1) throw ContractError("GaborConv2d: bank must contain at least one filter");
  free_.name = this->name() + ".wavelet";
  free_.shape = {out_c_, kGaborDof};
  free_.value.resize(free_.count());
  for (int o = 0; o < out_c_; ++o) {
    const GaborParams& p = bank.filters[o];
    p.validate();
    double* f = &free_.value[static_cast<std::size_t>(o) * kGaborDof];
    f[0] = std::log(p.wavelength);
    f[1] = p.orientation;
    f[2] = p.phase;
    f[3] = std::log(p.sigma);
    f[4] = std::log(p.aspect);
  }
  free_.zero_grad();
}

std::vector<GaborParams> GaborConv2d::filters() const {
  std::vector<GaborParams> out(out_c_);
  for (int o = 0; o < out_c_; ++o) {
    const double* f = &free_.value[static_cast<std::size_t>(o) * kGaborDof];
    out[o].wavelength = std::exp(f[0]);
    out[o].orientation = f[1];
    out[o].phase = f[2];
    out[o].sigma = std::exp(f[3]);
    out[o].aspect = std::exp(f[4]);
  }
  return out;
}

std::vector<double> GaborConv2d::build_weight() const {
  const std::vector<GaborParams> params = filters();
  const int kk = k_ * k_;
  std::vector<double> w(static_cast<std::size_t>(out_c_) * in_c_ * kk);
  for (int o = 0; o < out_c_; ++o) {
    const std::vector<double> kernel = gabor_kernel(params[o], k_);
    for (int c = 0; c < in_c_; ++c) {
      std::copy(kernel.begin(), kernel.end(),
                w.begin() + (static_cast<std::size_t>(o) * in_c_ + c) * kk);
    }
  }
  return w;
}

Tensor GaborConv2d::forward(const Tensor& x, bool training) {
  if (x.c != in_c_) {
    throw ContractError("GaborConv2d " + name() + ": expected " + std::to_string(in_c_) +
                        " input channels, got " + std::to_string(x.c));
  }
  const int oh = conv_out_extent(x.h, k_, stride_, pad_, "GaborConv2d");
  const int ow = conv_out_extent(x.w, k_, stride_, pad_, "GaborConv2d");
  const int kk = in_c_ * k_ * k_;
  const int pixels = oh * ow;

  const std::vector<double> weight = build_weight();
  Tensor y = Tensor::zeros(x.n, out_c_, oh, ow);
  std::vector<double> col(static_cast<std::size_t>(kk) * pixels);
  ConstMapMat W(weight.data(), out_c_, kk);

  for (int i = 0; i < x.n; ++i) {
    im2col(&x.v[static_cast<std::size_t>(i) * x.c * x.h * x.w], x.c, x.h, x.w, k_, stride_, pad_,
           oh, ow, col.data());
    ConstMapMat C(col.data(), kk, pixels);
    MapMat Y(&y.v[static_cast<std::size_t>(i) * out_c_ * pixels], out_c_, pixels);
    Y.noalias() = W * C;
  }

  if (training) {
    cached_input_ = x;
    have_cache_ = true;
  } else {
    have_cache_ = false;
  }
  return y;
}

Tensor GaborConv2d::backward(const Tensor& grad_out) {
  if (!have_cache_) {
    throw ContractError("GaborConv2d " + name() + ": backward without training forward");
  }
  const Tensor& x = cached_input_;
  const int oh = grad_out.h, ow = grad_out.w;
  const int kk = in_c_ * k_ * k_;
  const int pixels = oh * ow;

  const std::vector<double> weight = build_weight();
  std::vector<double> dweight(weight.size(), 0.0);
  Tensor dx = Tensor::zeros(x.n, x.c, x.h, x.w);
  std::vector<double> col(static_cast<std::size_t>(kk) * pixels);
  std::vector<double> dcol(static_cast<std::size_t>(kk) * pixels);
  ConstMapMat W(weight.data(), out_c_, kk);
  MapMat dW(dweight.data(), out_c_, kk);

  for (int i = 0; i < x.n; ++i) {
    im2col(&x.v[static_cast<std::size_t>(i) * x.c * x.h * x.w], x.c, x.h, x.w, k_, stride_, pad_,
           oh, ow, col.data());
    ConstMapMat C(col.data(), kk, pixels);
    ConstMapMat dY(&grad_out.v[static_cast<std::size_t>(i) * out_c_ * pixels], out_c_, pixels);
    dW.noalias() += dY * C.transpose();
    MapMat dC(dcol.data(), kk, pixels);
    dC.noalias() = W.transpose() * dY;
    col2im_accumulate(dcol.data(), x.c, x.h, x.w, k_, stride_, pad_, oh, ow,
                      &dx.v[static_cast<std::size_t>(i) * x.c * x.h * x.w]);
  }

  // Chain the kernel-weight gradient through the wavelet parameterization.
  // The kernel is shared across input channels, so those gradients sum.
  const std::vector<GaborParams> params = filters();
  const int k2 = k_ * k_;
  std::vector<double> dkernel(k2);
  for (int o = 0; o < out_c_; ++o) {
    std::fill(dkernel.begin(), dkernel.end(), 0.0);
    for (int c = 0; c < in_c_; ++c) {
      const double* src = &dweight[(static_cast<std::size_t>(o) * in_c_ + c) * k2];
      for (int p = 0; p < k2; ++p) dkernel[p] += src[p];
    }
    const GaborKernelJacobian jac = gabor_kernel_jacobian(params[o], k_);
    double d_lambda = 0.0, d_theta = 0.0, d_psi = 0.0, d_sigma = 0.0, d_gamma = 0.0;
    for (int p = 0; p < k2; ++p) {
      d_lambda += dkernel[p] * jac.d_wavelength[p];
      d_theta += dkernel[p] * jac.d_orientation[p];
      d_psi += dkernel[p] * jac.d_phase[p];
      d_sigma += dkernel[p] * jac.d_sigma[p];
      d_gamma += dkernel[p] * jac.d_aspect[p];
    }
    double* g = &free_.grad[static_cast<std::size_t>(o) * kGaborDof];
    // d/d(log u) = u * d/du for the exponentially reparameterized entries.
    g[0] += d_lambda * params[o].wavelength;
    g[1] += d_theta;
    g[2] += d_psi;
    g[3] += d_sigma * params[o].sigma;
    g[4] += d_gamma * params[o].aspect;
  }
  return dx;
}

void GaborConv2d::collect_params(std::vector<Param*>& out) { out.push_back(&free_); }

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, double eps, double momentum)
    : Layer(std::move(name)), c_(channels), eps_(eps), momentum_(momentum) {
  gamma_.name = this->name() + ".weight";
  gamma_.shape = {c_};
  gamma_.value.assign(c_, 1.0);
  gamma_.zero_grad();
  beta_.name = this->name() + ".bias";
  beta_.shape = {c_};
  beta_.value.assign(c_, 0.0);
  beta_.zero_grad();
  running_mean_.name = this->name() + ".running_mean";
  running_mean_.shape = {c_};
  running_mean_.value.assign(c_, 0.0);
  running_mean_.trainable = false;
  running_var_.name = this->name() + ".running_var";
  running_var_.shape = {c_};
  running_var_.value.assign(c_, 1.0);
  running_var_.trainable = false;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.c != c_) throw ContractError("BatchNorm2d " + name() + ": channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  const std::size_t per_channel = static_cast<std::size_t>(x.n) * plane;
  Tensor y = Tensor::zeros(x.n, x.c, x.h, x.w);

  if (!training) {
    for (int ch = 0; ch < c_; ++ch) {
      const double inv = 1.0 / std::sqrt(running_var_.value[ch] + eps_);
      const double mean = running_mean_.value[ch];
      const double g = gamma_.value[ch], b = beta_.value[ch];
      for (int i = 0; i < x.n; ++i) {
        const double* src = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        double* dst = &y.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        for (std::size_t p = 0; p < plane; ++p) dst[p] = (src[p] - mean) * inv * g + b;
      }
    }
    have_cache_ = false;
    return y;
  }

  xhat_ = Tensor::zeros(x.n, x.c, x.h, x.w);
  inv_std_.assign(c_, 0.0);
  for (int ch = 0; ch < c_; ++ch) {
    double sum = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const double* src = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) sum += src[p];
    }
    const double mean = sum / per_channel;
    double var_sum = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const double* src = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = src[p] - mean;
        var_sum += d * d;
      }
    }
    const double var = var_sum / per_channel;  // biased, used for normalization
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[ch] = inv;

    const double g = gamma_.value[ch], b = beta_.value[ch];
    for (int i = 0; i < x.n; ++i) {
      const double* src = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      double* xh = &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      double* dst = &y.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) {
        xh[p] = (src[p] - mean) * inv;
        dst[p] = xh[p] * g + b;
      }
    }

    if (refreshing_) {
      // Exact accumulation: sum(x^2) = centred sum of squares + sum(x)^2 / n.
      acc_sum_[ch] += sum;
      acc_sumsq_[ch] += var_sum + sum * sum / static_cast<double>(per_channel);
    } else {
      // Running stats track the unbiased variance, per the usual convention.
      const double unbiased =
          per_channel > 1 ? var_sum / static_cast<double>(per_channel - 1) : var;
      running_mean_.value[ch] = (1.0 - momentum_) * running_mean_.value[ch] + momentum_ * mean;
      running_var_.value[ch] = (1.0 - momentum_) * running_var_.value[ch] + momentum_ * unbiased;
    }
  }
  if (refreshing_) acc_n_ += per_channel;
  have_cache_ = true;
  return y;
}

void BatchNorm2d::stat_refresh(bool active) {
  if (active) {
    refreshing_ = true;
    acc_sum_.assign(c_, 0.0);
    acc_sumsq_.assign(c_, 0.0);
    acc_n_ = 0;
    return;
  }
  if (refreshing_ && acc_n_ > 1) {
    for (int ch = 0; ch < c_; ++ch) {
      const double n = static_cast<double>(acc_n_);
      const double mean = acc_sum_[ch] / n;
      const double centred = acc_sumsq_[ch] - acc_sum_[ch] * acc_sum_[ch] / n;
      running_mean_.value[ch] = mean;
      running_var_.value[ch] = std::max(centred, 0.0) / (n - 1.0);
    }
  }
  refreshing_ = false;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (!have_cache_) {
    throw ContractError("BatchNorm2d " + name() + ": backward without training forward");
  }
  const Tensor& xh = xhat_;
  const std::size_t plane = static_cast<std::size_t>(xh.h) * xh.w;
  const double m = static_cast<double>(xh.n) * plane;
  Tensor dx = Tensor::zeros(xh.n, xh.c, xh.h, xh.w);

  for (int ch = 0; ch < c_; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < xh.n; ++i) {
      const double* gy = &grad_out.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      const double* xp = &xh.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += gy[p];
        sum_dy_xhat += gy[p] * xp[p];
      }
    }
    gamma_.grad[ch] += sum_dy_xhat;
    beta_.grad[ch] += sum_dy;

    const double scale = gamma_.value[ch] * inv_std_[ch] / m;
    for (int i = 0; i < xh.n; ++i) {
      const double* gy = &grad_out.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      const double* xp = &xh.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      double* dst = &dx.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) {
        dst[p] = scale * (m * gy[p] - sum_dy - xp[p] * sum_dy_xhat);
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x, bool training) {
  Tensor y = x;
  if (training) {
    mask_.assign(x.size(), 0);
    in_shape_ = x.shape();
    for (std::size_t i = 0; i < y.v.size(); ++i) {
      if (y.v[i] > 0.0) {
        mask_[i] = 1;
      } else {
        y.v[i] = 0.0;
      }
    }
  } else {
    for (double& v : y.v) v = v > 0.0 ? v : 0.0;
    mask_.clear();
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (mask_.size() != grad_out.size()) {
    throw ContractError("ReLU " + name() + ": backward without training forward");
  }
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.v.size(); ++i) {
    if (!mask_[i]) dx.v[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(std::string name, int kernel_size, int stride, int padding)
    : Layer(std::move(name)), k_(kernel_size), stride_(stride), pad_(padding) {}

Tensor MaxPool2d::forward(const Tensor& x, bool training) {
  const int oh = conv_out_extent(x.h, k_, stride_, pad_, "MaxPool2d");
  const int ow = conv_out_extent(x.w, k_, stride_, pad_, "MaxPool2d");
  Tensor y = Tensor::zeros(x.n, x.c, oh, ow);
  argmax_.assign(y.size(), -1);
  in_shape_ = x.shape();

  std::size_t out_idx = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++out_idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              const std::size_t idx =
                  ((static_cast<std::size_t>(i) * x.c + ch) * x.h + iy) * x.w + ix;
              if (x.v[idx] > best) {
                best = x.v[idx];
                best_idx = static_cast<std::int64_t>(idx);
              }
            }
          }
          y.v[out_idx] = best;
          argmax_[out_idx] = best_idx;
        }
      }
    }
  }
  if (!training) argmax_.clear();
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (argmax_.size() != grad_out.size()) {
    throw ContractError("MaxPool2d " + name() + ": backward without training forward");
  }
  Tensor dx = Tensor::zeros(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    if (argmax_[i] >= 0) dx.v[static_cast<std::size_t>(argmax_[i])] += grad_out.v[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// AvgPool2d

AvgPool2d::AvgPool2d(std::string name, int kernel_size, int stride)
    : Layer(std::move(name)), k_(kernel_size), stride_(stride) {}

Tensor AvgPool2d::forward(const Tensor& x, bool training) {
  const int oh = conv_out_extent(x.h, k_, stride_, 0, "AvgPool2d");
  const int ow = conv_out_extent(x.w, k_, stride_, 0, "AvgPool2d");
  Tensor y = Tensor::zeros(x.n, x.c, oh, ow);
  in_shape_ = x.shape();
  const double inv = 1.0 / (k_ * k_);

  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double sum = 0.0;
          for (int ky = 0; ky < k_; ++ky) {
            for (int kx = 0; kx < k_; ++kx) {
              sum += x.at(i, ch, oy * stride_ + ky, ox * stride_ + kx);
            }
          }
          y.at(i, ch, oy, ox) = sum * inv;
        }
      }
    }
  }
  (void)training;
  return y;
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
  Tensor dx = Tensor::zeros(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  const double inv = 1.0 / (k_ * k_);
  for (int i = 0; i < grad_out.n; ++i) {
    for (int ch = 0; ch < grad_out.c; ++ch) {
      for (int oy = 0; oy < grad_out.h; ++oy) {
        for (int ox = 0; ox < grad_out.w; ++ox) {
          const double g = grad_out.at(i, ch, oy, ox) * inv;
          for (int ky = 0; ky < k_; ++ky) {
            for (int kx = 0; kx < k_; ++kx) {
              dx.at(i, ch, oy * stride_ + ky, ox * stride_ + kx) += g;
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, bool training) {
  Tensor y = Tensor::zeros(x.n, x.c, 1, 1);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  const double inv = 1.0 / plane;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const double* src = &x.v[(static_cast<std::size_t>(i) * x.c + ch) * plane];
      double sum = 0.0;
      for (std::size_t p = 0; p < plane; ++p) sum += src[p];
      y.at(i, ch, 0, 0) = sum * inv;
    }
  }
  in_shape_ = x.shape();
  (void)training;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx = Tensor::zeros(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  const double inv = 1.0 / plane;
  for (int i = 0; i < grad_out.n; ++i) {
    for (int ch = 0; ch < grad_out.c; ++ch) {
      const double g = grad_out.at(i, ch, 0, 0) * inv;
      double* dst = &dx.v[(static_cast<std::size_t>(i) * in_shape_[1] + ch) * plane];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features, std::uint64_t rng_seed)
    : Layer(std::move(name)), in_f_(in_features), out_f_(out_features) {
  weight_.name = this->name() + ".weight";
  weight_.shape = {out_f_, in_f_};
  weight_.value.resize(weight_.count());
  kaiming_uniform(weight_.value, in_f_, rng_seed);
  weight_.zero_grad();
  bias_.name = this->name() + ".bias";
  bias_.shape = {out_f_};
  bias_.value.assign(out_f_, 0.0);
  bias_.zero_grad();
}

Tensor Linear::forward(const Tensor& x, bool training) {
  const int features = x.c * x.h * x.w;
  if (features != in_f_) {
    throw ContractError("Linear " + name() + ": expected " + std::to_string(in_f_) +
                        " features, got " + std::to_string(features));
  }
  Tensor y = Tensor::zeros(x.n, out_f_, 1, 1);
  ConstMapMat X(x.v.data(), x.n, in_f_);
  ConstMapMat W(weight_.value.data(), out_f_, in_f_);
  MapMat Y(y.v.data(), x.n, out_f_);
  Y.noalias() = X * W.transpose();
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < out_f_; ++o) Y(i, o) += bias_.value[o];
  }
  if (training) {
    cached_input_ = x;
    have_cache_ = true;
  } else {
    have_cache_ = false;
  }
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (!have_cache_) throw ContractError("Linear " + name() + ": backward without training forward");
  const Tensor& x = cached_input_;
  Tensor dx = Tensor::zeros(x.n, x.c, x.h, x.w);

  ConstMapMat X(x.v.data(), x.n, in_f_);
  ConstMapMat dY(grad_out.v.data(), x.n, out_f_);
  MapMat dW(weight_.grad.data(), out_f_, in_f_);
  MapMat dX(dx.v.data(), x.n, in_f_);
  ConstMapMat W(weight_.value.data(), out_f_, in_f_);

  dW.noalias() += dY.transpose() * X;
  dX.noalias() = dY * W;
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < out_f_; ++o) bias_.grad[o] += dY(i, o);
  }
  return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor cur = x;
  traced_.clear();
  traced_.reserve(layers_.size());
  for (auto& layer : layers_) {
    cur = layer->forward(cur, training);
    traced_.push_back(cur.shape());
  }
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    cur = (*it)->backward(cur);
  }
  return cur;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& layer : layers_) layer->collect_params(out);
}

void Sequential::stat_refresh(bool active) {
  for (auto& layer : layers_) layer->stat_refresh(active);
}

// ---------------------------------------------------------------------------
// DenseBlock

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: nothing to concatenate");
  const Tensor& first = *parts.front();
  int total_c = 0;
  for (const Tensor* t : parts) {
    if (t->n != first.n || t->h != first.h || t->w != first.w) {
      throw ContractError("concat_channels: mismatched spatial shapes");
    }
    total_c += t->c;
  }
  Tensor out = Tensor::zeros(first.n, total_c, first.h, first.w);
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  for (int i = 0; i < first.n; ++i) {
    std::size_t dst_off = static_cast<std::size_t>(i) * total_c * plane;
    for (const Tensor* t : parts) {
      const std::size_t len = static_cast<std::size_t>(t->c) * plane;
      std::copy_n(&t->v[static_cast<std::size_t>(i) * len], len, &out.v[dst_off]);
      dst_off += len;
    }
  }
  return out;
}

DenseBlock::DenseBlock(std::string name, int num_layers, int in_channels, int growth,
                       int bottleneck_factor, std::uint64_t rng_seed)
    : Layer(std::move(name)) {
  int channels = in_channels;
  feat_channels_.push_back(in_channels);
  for (int l = 0; l < num_layers; ++l) {
    const std::string prefix = this->name() + ".denselayer" + std::to_string(l + 1);
    auto seq = std::make_shared<Sequential>(prefix);
    seq->add(std::make_shared<BatchNorm2d>(prefix + ".norm1", channels));
    seq->add(std::make_shared<ReLU>(prefix + ".relu1"));
    seq->add(std::make_shared<Conv2d>(prefix + ".conv1", channels, bottleneck_factor * growth, 1,
                                      1, 0, false, rng_seed + 2 * l));
    seq->add(std::make_shared<BatchNorm2d>(prefix + ".norm2", bottleneck_factor * growth));
    seq->add(std::make_shared<ReLU>(prefix + ".relu2"));
    seq->add(std::make_shared<Conv2d>(prefix + ".conv2", bottleneck_factor * growth, growth, 3, 1,
                                      1, false, rng_seed + 2 * l + 1));
    inner_.push_back(seq);
    feat_channels_.push_back(growth);
    channels += growth;
  }
  out_c_ = channels;
}

Tensor DenseBlock::forward(const Tensor& x, bool training) {
  std::vector<Tensor> feats;
  feats.reserve(inner_.size() + 1);
  feats.push_back(x);
  for (auto& layer : inner_) {
    std::vector<const Tensor*> parts;
    parts.reserve(feats.size());
    for (const Tensor& f : feats) parts.push_back(&f);
    feats.push_back(layer->forward(concat_channels(parts), training));
  }
  std::vector<const Tensor*> parts;
  parts.reserve(feats.size());
  for (const Tensor& f : feats) parts.push_back(&f);
  Tensor out = concat_channels(parts);

  if (training) {
    cached_n_ = x.n;
    cached_h_ = x.h;
    cached_w_ = x.w;
    have_cache_ = true;
  } else {
    have_cache_ = false;
  }
  return out;
}

Tensor DenseBlock::backward(const Tensor& grad_out) {
  if (!have_cache_) {
    throw ContractError("DenseBlock " + name() + ": backward without training forward");
  }
  const std::size_t plane = static_cast<std::size_t>(cached_h_) * cached_w_;

  // Split the output gradient into per-feature accumulators.
  std::vector<Tensor> grads;
  grads.reserve(feat_channels_.size());
  for (int c : feat_channels_) grads.push_back(Tensor::zeros(cached_n_, c, cached_h_, cached_w_));
  for (int i = 0; i < cached_n_; ++i) {
    std::size_t src_off = static_cast<std::size_t>(i) * grad_out.c * plane;
    for (Tensor& g : grads) {
      const std::size_t len = static_cast<std::size_t>(g.c) * plane;
      std::copy_n(&grad_out.v[src_off], len, &g.v[static_cast<std::size_t>(i) * len]);
      src_off += len;
    }
  }

  // Walk the layers backwards; each backward yields the gradient w.r.t. the
  // concatenation of all earlier features, which we split and accumulate.
  for (std::size_t l = inner_.size(); l-- > 0;) {
    Tensor gin = inner_[l]->backward(grads[l + 1]);
    for (int i = 0; i < cached_n_; ++i) {
      std::size_t src_off = static_cast<std::size_t>(i) * gin.c * plane;
      for (std::size_t f = 0; f <= l; ++f) {
        const std::size_t len = static_cast<std::size_t>(feat_channels_[f]) * plane;
        double* dst = &grads[f].v[static_cast<std::size_t>(i) * len];
        const double* src = &gin.v[src_off];
        for (std::size_t p = 0; p < len; ++p) dst[p] += src[p];
        src_off += len;
      }
    }
  }
  return grads[0];
}

void DenseBlock::collect_params(std::vector<Param*>& out) {
  for (auto& layer : inner_) layer->collect_params(out);
}

void DenseBlock::stat_refresh(bool active) {
  for (auto& layer : inner_) layer->stat_refresh(active);
}

// ---------------------------------------------------------------------------
// Loss

Tensor softmax(const Tensor& logits) {
  Tensor probs = logits;
  const int classes = logits.c;
  for (int i = 0; i < logits.n; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < classes; ++k) zmax = std::max(zmax, logits.at(i, k, 0, 0));
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      const double e = std::exp(logits.at(i, k, 0, 0) - zmax);
      probs.at(i, k, 0, 0) = e;
      sum += e;
    }
    for (int k = 0; k < classes; ++k) probs.at(i, k, 0, 0) /= sum;
  }
  return probs;
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.n) {
    throw ContractError("softmax_cross_entropy: batch/label count mismatch");
  }
  if (logits.h != 1 || logits.w != 1 || logits.c < 2) {
    throw ContractError("softmax_cross_entropy: logits must be (n, classes, 1, 1)");
  }
  const int classes = logits.c;
  LossResult out;
  out.grad = Tensor::zeros(logits.n, classes, 1, 1);
  const double inv_n = 1.0 / logits.n;
  double total = 0.0;

  for (int i = 0; i < logits.n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes) {
      throw ContractError("softmax_cross_entropy: label out of range");
    }
    double zmax = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < classes; ++k) zmax = std::max(zmax, logits.at(i, k, 0, 0));
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += std::exp(logits.at(i, k, 0, 0) - zmax);
    total += std::log(sum) - (logits.at(i, label, 0, 0) - zmax);
    for (int k = 0; k < classes; ++k) {
      const double p = std::exp(logits.at(i, k, 0, 0) - zmax) / sum;
      out.grad.at(i, k, 0, 0) = (p - (k == label ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(std::vector<Param*> params, double learning_rate, double beta1,
                             double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params) {
    if (p->trainable) params_.push_back(p);
  }
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->value.size(), 0.0);
    v_[i].assign(params_[i]->value.size(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace ctaudit::nn
