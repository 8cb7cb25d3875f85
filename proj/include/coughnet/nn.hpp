#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coughnet/util.hpp"

namespace coughnet::nn {

/// Row-major float64 array with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  /// Same data, new shape with the same element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  /// Throws Error(non_finite) naming `where` if any entry is NaN or Inf.
  void require_finite(std::string_view where) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Functional kernels. Each backward takes exactly what its forward consumed.

/// y[N, out] = x[N, in] * W[in, out] + b[out].
Tensor dense_forward(const Tensor& w, const Tensor& b, const Tensor& x);
struct DenseGrads {
  Tensor dx, dw, db;
};
DenseGrads dense_backward(const Tensor& w, const Tensor& x, const Tensor& dy);

/// Valid-padding 3x3-style cross-correlation: K[out, in, k, k], b[out] or
/// empty for no bias, x[N, in, H, W] -> y[N, out, (H-k)/s+1, (W-k)/s+1].
Tensor conv2d_forward(const Tensor& k, const Tensor& b, const Tensor& x, std::size_t stride);
struct ConvGrads {
  Tensor dx, dk, db;
};
ConvGrads conv2d_backward(const Tensor& k, bool has_bias, const Tensor& x, const Tensor& dy,
                          std::size_t stride);

/// Non-overlapping 2x2 mean; an odd trailing row/column is dropped.
Tensor avgpool2_forward(const Tensor& x);
Tensor avgpool2_backward(const std::vector<std::size_t>& x_shape, const Tensor& dy);

enum class Mode {
  eval,   ///< running statistics, no dropout
  train,  ///< batch statistics, dropout, running statistics updated
  /// batch statistics without dropout or running-stat updates (gradient checks)
  train_deterministic,
};

inline bool uses_batch_stats(Mode m) { return m != Mode::eval; }

struct BatchNormStats {
  Tensor mean, var;
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
};

/// Per-channel normalization over N (and H, W for rank-4 input), then
/// gamma * x_hat + beta. With batch statistics (train modes) the biased batch
/// variance is used; Mode::train also moves the running stats to
/// momentum * old + (1 - momentum) * batch. Throws batch_too_small for N < 2
/// with batch statistics.
Tensor batchnorm_forward(const Tensor& gamma, const Tensor& beta, BatchNormStats& running,
                         const Tensor& x, Mode mode, BatchNormCache* cache, double eps = 1e-5,
                         double momentum = 0.9);
/// Eval-mode normalization with the running statistics.
Tensor batchnorm_eval(const Tensor& gamma, const Tensor& beta, const BatchNormStats& running,
                      const Tensor& x, double eps = 1e-5);
struct BatchNormGrads {
  Tensor dx, dgamma, dbeta;
};
BatchNormGrads batchnorm_backward(const Tensor& gamma, const BatchNormCache& cache,
                                  const Tensor& dy);

/// Inverted dropout. In eval mode (or rate 0) returns x and an empty mask.
Tensor dropout_forward(double rate, const Tensor& x, Mode mode, Rng& rng, Tensor* mask);
Tensor dropout_backward(const Tensor& mask, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// Logistic function clamped to the open interval (0, 1).
double sigmoid(double z);
Tensor sigmoid_forward(const Tensor& x);

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean binary cross-entropy computed from logits with the log-sum-exp form;
/// the gradient is (sigmoid(logit) - y) / N.
LossResult bce_with_logits(const Tensor& logits, std::span<const double> labels);

// Layers wrap the kernels, keeping the forward cache for the matching
// backward. `infer` is const and cache-free so a trained network can be
// shared across threads.

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;

  virtual std::vector<Param*> params() { return {}; }
  /// Non-trainable persistent tensors (batch-norm running statistics).
  virtual std::vector<std::pair<std::string, Tensor*>> buffers() { return {}; }
  virtual std::string describe() const = 0;
};

class Dense final : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::string describe() const override;

  Param& weight() { return w_; }
  Param& bias() { return b_; }
  std::size_t in() const { return w_.value.dim(0); }
  std::size_t out() const { return w_.value.dim(1); }

 private:
  Param w_, b_;
  Tensor x_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
         std::size_t stride, bool bias);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Param*> params() override;
  std::string describe() const override;

  Param& kernel() { return k_; }
  std::size_t fan_in() const;

 private:
  Param k_, b_;
  bool has_bias_;
  std::size_t stride_;
  Tensor x_;
};

class AvgPool2 final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override { return avgpool2_forward(x); }
  std::string describe() const override { return "avgpool2"; }

 private:
  std::vector<std::size_t> x_shape_;
};

class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, std::size_t channels, double eps = 1e-5, double momentum = 0.9);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> buffers() override;
  std::string describe() const override;

  BatchNormStats& running() { return running_; }

 private:
  std::string name_;
  Param gamma_, beta_;
  BatchNormStats running_;
  double eps_, momentum_;
  BatchNormCache cache_;
};

class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override { return x; }
  std::string describe() const override;

 private:
  double rate_;
  Tensor mask_;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override { return relu_forward(x); }
  std::string describe() const override { return "relu"; }

 private:
  Tensor x_;
};

/// [N, C, H, W] -> [N, C*H*W].
class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  Tensor infer(const Tensor& x) const override;
  std::string describe() const override { return "flatten"; }

 private:
  std::vector<std::size_t> x_shape_;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode, Rng& rng);
  Tensor backward(const Tensor& dy);
  Tensor infer(const Tensor& x) const;

  std::vector<Param*> params();
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }
  const Layer& at(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Uniform(-limit, limit) with limit = sqrt(6 / fan_in).
void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng);
/// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

void zero_grads(std::span<Param* const> params);

/// Bias-corrected Adam.
class Adam {
 public:
  struct Options {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() : Adam(Options{}) {}
  explicit Adam(Options options) : opt_(options) {}

  /// Applies one update using each parameter's `grad`. Moments are created
  /// on the first call and keyed by position; the parameter list must keep
  /// its order and shapes across calls (shape_mismatch otherwise).
  void step(std::span<Param* const> params);

  std::uint64_t steps() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Central-difference check of analytic gradients.
///
/// `compute_grads` must zero and fill every parameter's grad for the current
/// values; `loss` must evaluate the same objective without touching grads.
/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult grad_check(std::span<Param* const> params,
                           const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double h = 1e-5);

/// Convenience overload: BCE-with-logits on the network's [N, 1] output,
/// evaluated in Mode::train_deterministic.
GradCheckResult grad_check(Sequential& net, const Tensor& x, std::span<const double> labels,
                           double h = 1e-5);

}  // namespace coughnet::nn
