#pragma once

// A small, deterministic neural-network engine: double precision, CPU only,
// NCHW layout, no hidden threading.  Convolutions are im2col + GEMM (Eigen).
//
// This exists instead of a framework dependency because the Gabor stem needs
// gradients to flow into wavelet parameters that *generate* the kernel each
// forward pass -- an unusual enough parameterization that owning the engine
// end to end costs less than fighting a framework's autograd surface, and it
// keeps every arithmetic step reproducible from a seed.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ctaudit/gabor.hpp"

namespace ctaudit::nn {

// NCHW tensor of doubles.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  static Tensor zeros(int n, int c, int h, int w);

  std::size_t size() const { return v.size(); }
  std::array<int, 4> shape() const { return {n, c, h, w}; }

  double& at(int i, int j, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }
  double at(int i, int j, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }
};

// A named parameter (or non-trainable buffer, e.g. batch-norm running stats).
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  std::size_t count() const;
  void zero_grad() { grad.assign(value.size(), 0.0); }
};

class Layer {
public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  // `training` toggles batch statistics and gradient caching.  backward() may
  // only follow a forward(training=true) on the same layer.
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) { (void)out; }

  // Batch-statistics refresh window.  While active, training-mode forwards
  // accumulate exact per-channel moments instead of applying the momentum
  // update; deactivating folds the accumulated population statistics into the
  // running buffers.  Containers forward the toggle; stateless layers ignore
  // it.
  virtual void stat_refresh(bool active) { (void)active; }

  const std::string& name() const { return name_; }

private:
  std::string name_;
};

using LayerPtr = std::shared_ptr<Layer>;

class Conv2d : public Layer {
public:
  // Weights are Kaiming-uniform initialized from `rng_seed`; bias (when
  // present) starts at zero.
  Conv2d(std::string name, int in_channels, int out_channels, int kernel_size, int stride,
         int padding, bool bias, std::uint64_t rng_seed);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  Param& weight() { return weight_; }

private:
  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Param weight_, bias_;
  Tensor cached_input_;
  bool have_cache_ = false;
};

// Stem convolution whose kernels are regenerated from Gabor wavelet
// parameters on every forward pass.  The trainable vector holds
// (log lambda, theta, psi, log sigma, log gamma) per output channel; the
// exponentials keep lambda/sigma/gamma positive under unconstrained updates.
// Each kernel is replicated across the input channels (no bias).
class GaborConv2d : public Layer {
public:
  GaborConv2d(std::string name, int in_channels, const GaborBank& bank);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  // Current constrained parameters, decoded from the trainable vector.
  std::vector<GaborParams> filters() const;
  int out_channels() const { return out_c_; }

private:
  std::vector<double> build_weight() const;  // (out_c, in_c, k, k) row-major

  int in_c_, out_c_, k_, stride_, pad_;
  Param free_;  // shape (out_c, 5)
  Tensor cached_input_;
  bool have_cache_ = false;
};

class BatchNorm2d : public Layer {
public:
  BatchNorm2d(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void stat_refresh(bool active) override;

private:
  int c_;
  double eps_, momentum_;
  Param gamma_, beta_, running_mean_, running_var_;
  // Saved for backward.
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool have_cache_ = false;
  // Exact-moment accumulators for the refresh window.
  bool refreshing_ = false;
  std::vector<double> acc_sum_, acc_sumsq_;
  std::uint64_t acc_n_ = 0;
};

class ReLU : public Layer {
public:
  explicit ReLU(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  std::vector<char> mask_;
  std::array<int, 4> in_shape_{};
};

class MaxPool2d : public Layer {
public:
  MaxPool2d(std::string name, int kernel_size, int stride, int padding);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  int k_, stride_, pad_;
  std::vector<std::int64_t> argmax_;  // flat input index per output element
  std::array<int, 4> in_shape_{};
};

class AvgPool2d : public Layer {
public:
  AvgPool2d(std::string name, int kernel_size, int stride);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  int k_, stride_;
  std::array<int, 4> in_shape_{};
};

class GlobalAvgPool : public Layer {
public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  std::array<int, 4> in_shape_{};
};

// Fully connected over flattened (c*h*w) features.
class Linear : public Layer {
public:
  Linear(std::string name, int in_features, int out_features, std::uint64_t rng_seed);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

  int in_features() const { return in_f_; }
  int out_features() const { return out_f_; }

private:
  int in_f_, out_f_;
  Param weight_, bias_;
  Tensor cached_input_;
  bool have_cache_ = false;
};

class Sequential : public Layer {
public:
  explicit Sequential(std::string name) : Layer(std::move(name)) {}

  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void stat_refresh(bool active) override;

  std::vector<LayerPtr>& layers() { return layers_; }

  // Output shape of every sub-layer from the most recent forward; used by the
  // stem-swap shape audit.
  const std::vector<std::array<int, 4>>& traced_shapes() const { return traced_; }

private:
  std::vector<LayerPtr> layers_;
  std::vector<std::array<int, 4>> traced_;
};

// Densely connected block: layer l consumes the channel-concatenation of the
// block input and all previous layer outputs; the block emits the full
// concatenation.  Each inner layer is norm-relu-conv1x1-norm-relu-conv3x3
// producing `growth` channels.
class DenseBlock : public Layer {
public:
  DenseBlock(std::string name, int num_layers, int in_channels, int growth, int bottleneck_factor,
             std::uint64_t rng_seed);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void stat_refresh(bool active) override;

  int out_channels() const { return out_c_; }

private:
  std::vector<LayerPtr> inner_;     // one Sequential per dense layer
  std::vector<int> feat_channels_;  // channel widths of [input, layer outputs...]
  int out_c_;
  int cached_n_ = 0, cached_h_ = 0, cached_w_ = 0;
  bool have_cache_ = false;
};

Tensor concat_channels(const std::vector<const Tensor*>& parts);

struct LossResult {
  double value = 0.0;  // mean over the batch
  Tensor grad;         // d(loss)/d(logits)
};

// Numerically stable softmax + cross-entropy over 2+ classes; logits shaped
// (n, classes, 1, 1).
LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Softmax probabilities, same shape as the logits.
Tensor softmax(const Tensor& logits);

class AdamOptimizer {
public:
  AdamOptimizer(std::vector<Param*> params, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

private:
  std::vector<Param*> params_;  // trainable only
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ctaudit::nn
