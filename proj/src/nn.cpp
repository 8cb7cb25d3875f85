#include "coughnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "coughnet/error.hpp"

namespace coughnet::nn {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const std::string& what) { throw Error(Errc::shape_mismatch, what); }

void require_rank(const Tensor& t, std::size_t rank, const char* where) {
  if (t.rank() != rank) {
    shape_error(std::string(where) + ": expected rank " + std::to_string(rank) + ", got " +
                shape_string(t.shape()));
  }
}

// Channel count and per-channel element stride for rank-2 [N, C] or rank-4
// [N, C, H, W] batch-norm input.
struct ChannelLayout {
  std::size_t n, c, spatial;
};

ChannelLayout channel_layout(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  shape_error("batchnorm: expected rank 2 or 4, got " + shape_string(x.shape()));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != product(shape_)) {
    shape_error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (product(shape) != data_.size()) {
    shape_error("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void Tensor::require_finite(std::string_view where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw Error(Errc::non_finite, "non-finite value at " + std::string(where));
    }
  }
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor dense_forward(const Tensor& w, const Tensor& b, const Tensor& x) {
  require_rank(w, 2, "dense weight");
  require_rank(x, 2, "dense input");
  const std::size_t n = x.dim(0);
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (x.dim(1) != in || b.size() != out) {
    shape_error("dense: input " + shape_string(x.shape()) + " / weight " +
                shape_string(w.shape()) + " / bias " + shape_string(b.shape()));
  }
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.data() + r * out;
    std::copy(b.data(), b.data() + out, yr);
    const double* xr = x.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wi = w.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wi[j];
    }
  }
  return y;
}

DenseGrads dense_backward(const Tensor& w, const Tensor& x, const Tensor& dy) {
  const std::size_t n = x.dim(0);
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (dy.rank() != 2 || dy.dim(0) != n || dy.dim(1) != out) {
    shape_error("dense backward: upstream gradient " + shape_string(dy.shape()));
  }
  DenseGrads g{Tensor({n, in}), Tensor({in, out}), Tensor({out})};
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy.data() + r * out;
    const double* xr = x.data() + r * in;
    double* dxr = g.dx.data() + r * in;
    for (std::size_t j = 0; j < out; ++j) g.db[j] += dyr[j];
    for (std::size_t i = 0; i < in; ++i) {
      const double* wi = w.data() + i * out;
      double* dwi = g.dw.data() + i * out;
      const double xi = xr[i];
      double acc = 0.0;
      for (std::size_t j = 0; j < out; ++j) {
        acc += dyr[j] * wi[j];
        dwi[j] += xi * dyr[j];
      }
      dxr[i] = acc;
    }
  }
  return g;
}

Tensor conv2d_forward(const Tensor& k, const Tensor& b, const Tensor& x, std::size_t stride) {
  require_rank(k, 4, "conv kernel");
  require_rank(x, 4, "conv input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oc = k.dim(0), ks = k.dim(2);
  if (k.dim(1) != c || k.dim(3) != ks) {
    shape_error("conv: kernel " + shape_string(k.shape()) + " vs input " + shape_string(x.shape()));
  }
  if (!b.empty() && b.size() != oc) shape_error("conv: bias " + shape_string(b.shape()));
  if (stride == 0) shape_error("conv: stride must be positive");
  if (h < ks || wd < ks) {
    throw Error(Errc::input_too_small, "conv: input " + shape_string(x.shape()) +
                                           " smaller than kernel " + std::to_string(ks));
  }
  const std::size_t oh = (h - ks) / stride + 1;
  const std::size_t ow = (wd - ks) / stride + 1;
  Tensor y({n, oc, oh, ow});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < oc; ++o) {
      double* yo = y.data() + ((s * oc + o) * oh) * ow;
      if (!b.empty()) std::fill(yo, yo + oh * ow, b[o]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xc = x.data() + ((s * c + ch) * h) * wd;
        const double* kc = k.data() + ((o * c + ch) * ks) * ks;
        for (std::size_t ky = 0; ky < ks; ++ky) {
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const double kv = kc[ky * ks + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const double* xrow = xc + (oy * stride + ky) * wd + kx;
              double* yrow = yo + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) yrow[ox] += kv * xrow[ox * stride];
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& k, bool has_bias, const Tensor& x, const Tensor& dy,
                          std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t oc = k.dim(0), ks = k.dim(2);
  const std::size_t oh = (h - ks) / stride + 1;
  const std::size_t ow = (wd - ks) / stride + 1;
  if (dy.shape() != std::vector<std::size_t>{n, oc, oh, ow}) {
    shape_error("conv backward: upstream gradient " + shape_string(dy.shape()));
  }
  ConvGrads g{Tensor(x.shape()), Tensor(k.shape()), has_bias ? Tensor({oc}) : Tensor()};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < oc; ++o) {
      const double* dyo = dy.data() + ((s * oc + o) * oh) * ow;
      if (has_bias) {
        double acc = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += dyo[i];
        g.db[o] += acc;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xc = x.data() + ((s * c + ch) * h) * wd;
        double* dxc = g.dx.data() + ((s * c + ch) * h) * wd;
        const double* kc = k.data() + ((o * c + ch) * ks) * ks;
        double* dkc = g.dk.data() + ((o * c + ch) * ks) * ks;
        for (std::size_t ky = 0; ky < ks; ++ky) {
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const double kv = kc[ky * ks + kx];
            double acc = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::size_t row = (oy * stride + ky) * wd + kx;
              const double* xrow = xc + row;
              double* dxrow = dxc + row;
              const double* dyrow = dyo + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                acc += dyrow[ox] * xrow[ox * stride];
                dxrow[ox * stride] += dyrow[ox] * kv;
              }
            }
            dkc[ky * ks + kx] += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor avgpool2_forward(const Tensor& x) {
  require_rank(x, 4, "avgpool input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) {
    throw Error(Errc::input_too_small, "avgpool: input " + shape_string(x.shape()) +
                                           " smaller than 2x2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* xp = x.data() + plane * h * w;
    double* yp = y.data() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double* r0 = xp + (2 * oy) * w;
      const double* r1 = r0 + w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        yp[oy * ow + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
      }
    }
  }
  return y;
}

Tensor avgpool2_backward(const std::vector<std::size_t>& x_shape, const Tensor& dy) {
  const std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  const std::size_t oh = h / 2, ow = w / 2;
  if (dy.shape() != std::vector<std::size_t>{n, c, oh, ow}) {
    shape_error("avgpool backward: upstream gradient " + shape_string(dy.shape()));
  }
  Tensor dx(x_shape);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double* dxp = dx.data() + plane * h * w;
    const double* dyp = dy.data() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = 0.25 * dyp[oy * ow + ox];
        dxp[(2 * oy) * w + 2 * ox] = g;
        dxp[(2 * oy) * w + 2 * ox + 1] = g;
        dxp[(2 * oy + 1) * w + 2 * ox] = g;
        dxp[(2 * oy + 1) * w + 2 * ox + 1] = g;
      }
    }
  }
  return dx;
}

Tensor batchnorm_forward(const Tensor& gamma, const Tensor& beta, BatchNormStats& running,
                         const Tensor& x, Mode mode, BatchNormCache* cache, double eps,
                         double momentum) {
  if (!uses_batch_stats(mode)) return batchnorm_eval(gamma, beta, running, x, eps);

  const auto [n, c, spatial] = channel_layout(x);
  if (gamma.size() != c || beta.size() != c) {
    shape_error("batchnorm: " + std::to_string(c) + " channels but gamma " +
                shape_string(gamma.shape()));
  }
  if (n < 2) {
    throw Error(Errc::batch_too_small, "batchnorm needs a batch of at least 2 in train mode");
  }
  const double m = static_cast<double>(n * spatial);
  Tensor y(x.shape());
  Tensor x_hat(x.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double* p = x.data() + (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double* p = x.data() + (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / m;
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (x[off + i] - mean) * inv_std[ch];
        x_hat[off + i] = xh;
        y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
    if (mode == Mode::train) {
      running.mean[ch] = momentum * running.mean[ch] + (1.0 - momentum) * mean;
      running.var[ch] = momentum * running.var[ch] + (1.0 - momentum) * var;
    }
  }
  if (cache != nullptr) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor batchnorm_eval(const Tensor& gamma, const Tensor& beta, const BatchNormStats& running,
                      const Tensor& x, double eps) {
  const auto [n, c, spatial] = channel_layout(x);
  if (gamma.size() != c || running.mean.size() != c) {
    shape_error("batchnorm: " + std::to_string(c) + " channels but gamma " +
                shape_string(gamma.shape()));
  }
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double scale = gamma[ch] / std::sqrt(running.var[ch] + eps);
    const double mean = running.mean[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) y[off + i] = (x[off + i] - mean) * scale + beta[ch];
    }
  }
  return y;
}

BatchNormGrads batchnorm_backward(const Tensor& gamma, const BatchNormCache& cache,
                                  const Tensor& dy) {
  const auto [n, c, spatial] = channel_layout(dy);
  if (dy.shape() != cache.x_hat.shape()) shape_error("batchnorm backward: shape mismatch");
  const double m = static_cast<double>(n * spatial);
  BatchNormGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += dy[off + i] * cache.x_hat[off + i];
      }
    }
    g.dbeta[ch] = sum_dy;
    g.dgamma[ch] = sum_dy_xh;
    const double k = gamma[ch] * cache.inv_std[ch] / m;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        g.dx[off + i] = k * (m * dy[off + i] - sum_dy - cache.x_hat[off + i] * sum_dy_xh);
      }
    }
  }
  return g;
}

Tensor dropout_forward(double rate, const Tensor& x, Mode mode, Rng& rng, Tensor* mask) {
  if (rate < 0.0 || rate >= 1.0) throw Error(Errc::invalid_argument, "dropout rate must be in [0, 1)");
  if (mode != Mode::train || rate == 0.0) {
    if (mask != nullptr) *mask = Tensor();
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor m(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    y[i] = x[i] * m[i];
  }
  if (mask != nullptr) *mask = std::move(m);
  return y;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& dy) {
  if (mask.empty()) return dy;
  if (mask.shape() != dy.shape()) shape_error("dropout backward: shape mismatch");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (x.shape() != dy.shape()) shape_error("relu backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

double sigmoid(double z) {
  // Held inside the open interval: saturation would otherwise round to 0 or 1.
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  if (z >= 0.0) return std::min(hi, 1.0 / (1.0 + std::exp(-z)));
  const double e = std::exp(z);
  return std::max(lo, e / (1.0 + e));
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

LossResult bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    shape_error("bce: " + std::to_string(logits.size()) + " logits vs " +
                std::to_string(labels.size()) + " labels");
  }
  const double n = static_cast<double>(labels.size());
  LossResult out{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = logits[i];
    const double y = labels[i];
    out.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    out.dlogits[i] = (sigmoid(z) - y) / n;
  }
  out.loss /= n;
  return out;
}

// Layers --------------------------------------------------------------------

Dense::Dense(std::string name, std::size_t in, std::size_t out)
    : w_{name + ".weight", Tensor({in, out}), Tensor({in, out})},
      b_{name + ".bias", Tensor({out}), Tensor({out})} {}

Tensor Dense::forward(const Tensor& x, Mode, Rng&) {
  x_ = x;
  return dense_forward(w_.value, b_.value, x);
}

Tensor Dense::backward(const Tensor& dy) {
  auto g = dense_backward(w_.value, x_, dy);
  for (std::size_t i = 0; i < g.dw.size(); ++i) w_.grad[i] += g.dw[i];
  for (std::size_t i = 0; i < g.db.size(); ++i) b_.grad[i] += g.db[i];
  return std::move(g.dx);
}

Tensor Dense::infer(const Tensor& x) const { return dense_forward(w_.value, b_.value, x); }

std::string Dense::describe() const {
  return "dense(" + std::to_string(in()) + "->" + std::to_string(out()) + ")";
}

Conv2d::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
               std::size_t stride, bool bias)
    : k_{name + ".kernel", Tensor({out_ch, in_ch, kernel, kernel}),
         Tensor({out_ch, in_ch, kernel, kernel})},
      has_bias_(bias),
      stride_(stride) {
  if (bias) b_ = Param{name + ".bias", Tensor({out_ch}), Tensor({out_ch})};
}

Tensor Conv2d::forward(const Tensor& x, Mode, Rng&) {
  x_ = x;
  return conv2d_forward(k_.value, b_.value, x, stride_);
}

Tensor Conv2d::backward(const Tensor& dy) {
  auto g = conv2d_backward(k_.value, has_bias_, x_, dy, stride_);
  for (std::size_t i = 0; i < g.dk.size(); ++i) k_.grad[i] += g.dk[i];
  for (std::size_t i = 0; i < g.db.size(); ++i) b_.grad[i] += g.db[i];
  return std::move(g.dx);
}

Tensor Conv2d::infer(const Tensor& x) const { return conv2d_forward(k_.value, b_.value, x, stride_); }

std::vector<Param*> Conv2d::params() {
  if (has_bias_) return {&k_, &b_};
  return {&k_};
}

std::size_t Conv2d::fan_in() const { return k_.value.dim(1) * k_.value.dim(2) * k_.value.dim(3); }

std::string Conv2d::describe() const {
  return "conv2d(" + std::to_string(k_.value.dim(1)) + "->" + std::to_string(k_.value.dim(0)) +
         ", k" + std::to_string(k_.value.dim(2)) + ", s" + std::to_string(stride_) + ")";
}

Tensor AvgPool2::forward(const Tensor& x, Mode, Rng&) {
  x_shape_ = x.shape();
  return avgpool2_forward(x);
}

Tensor AvgPool2::backward(const Tensor& dy) { return avgpool2_backward(x_shape_, dy); }

BatchNorm::BatchNorm(std::string name, std::size_t channels, double eps, double momentum)
    : name_(name),
      gamma_{name + ".gamma", Tensor({channels}, 1.0), Tensor({channels})},
      beta_{name + ".beta", Tensor({channels}), Tensor({channels})},
      running_{Tensor({channels}, 0.0), Tensor({channels}, 1.0)},
      eps_(eps),
      momentum_(momentum) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode, Rng&) {
  return batchnorm_forward(gamma_.value, beta_.value, running_, x, mode, &cache_, eps_, momentum_);
}

Tensor BatchNorm::backward(const Tensor& dy) {
  auto g = batchnorm_backward(gamma_.value, cache_, dy);
  for (std::size_t i = 0; i < g.dgamma.size(); ++i) gamma_.grad[i] += g.dgamma[i];
  for (std::size_t i = 0; i < g.dbeta.size(); ++i) beta_.grad[i] += g.dbeta[i];
  return std::move(g.dx);
}

Tensor BatchNorm::infer(const Tensor& x) const {
  return batchnorm_eval(gamma_.value, beta_.value, running_, x, eps_);
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm::buffers() {
  return {{name_ + ".running_mean", &running_.mean}, {name_ + ".running_var", &running_.var}};
}

std::string BatchNorm::describe() const {
  return "batchnorm(" + std::to_string(gamma_.value.size()) + ")";
}

Dropout::Dropout(double rate) : rate_(rate) {
  if (rate < 0.0 || rate >= 1.0) throw Error(Errc::invalid_argument, "dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
  return dropout_forward(rate_, x, mode, rng, &mask_);
}

Tensor Dropout::backward(const Tensor& dy) { return dropout_backward(mask_, dy); }

std::string Dropout::describe() const {
  std::ostringstream os;
  os << "dropout(" << rate_ << ")";
  return os.str();
}

Tensor Relu::forward(const Tensor& x, Mode, Rng&) {
  x_ = x;
  return relu_forward(x);
}

Tensor Relu::backward(const Tensor& dy) { return relu_backward(x_, dy); }

Tensor Flatten::forward(const Tensor& x, Mode, Rng&) {
  x_shape_ = x.shape();
  return infer(x);
}

Tensor Flatten::backward(const Tensor& dy) { return dy.reshaped(x_shape_); }

Tensor Flatten::infer(const Tensor& x) const {
  if (x.rank() < 2) shape_error("flatten: rank must be >= 2");
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Sequential::forward(const Tensor& x, Mode mode, Rng& rng) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode, rng);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->infer(h);
  return h;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) {
    for (Param* p : layer->params()) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& layer : layers_) {
    for (auto& b : layer->buffers()) out.push_back(b);
  }
  return out;
}

void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
    p->grad.fill(0.0);
  }
}

void Adam::step(std::span<Param* const> params) {
  if (m_.empty()) {
    for (Param* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) shape_error("adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != m_[i].shape() || params[i]->grad.shape() != m_[i].shape()) {
      shape_error("adam: parameter '" + params[i]->name + "' shape changed");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i]->value;
    const Tensor& g = params[i]->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= opt_.lr * m_hat / (std::sqrt(v_hat) + opt_.eps);
    }
  }
}

GradCheckResult grad_check(std::span<Param* const> params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double h) {
  compute_grads();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi]->value;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double saved = value[j];
      value[j] = saved + h;
      const double up = loss();
      value[j] = saved - h;
      const double down = loss();
      value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][j];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
      ++result.entries_checked;
      if (!(rel <= result.max_rel_error)) {
        result.max_rel_error = rel;
        result.worst_param = params[pi]->name;
        result.worst_index = j;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(Sequential& net, const Tensor& x, std::span<const double> labels,
                           double h) {
  Rng rng(0);
  auto params = net.params();
  auto loss = [&] {
    return bce_with_logits(net.forward(x, Mode::train_deterministic, rng), labels).loss;
  };
  auto grads = [&] {
    zero_grads(params);
    auto out = bce_with_logits(net.forward(x, Mode::train_deterministic, rng), labels);
    net.backward(out.dlogits);
  };
  return grad_check(params, loss, grads, h);
}

}  // namespace coughnet::nn
