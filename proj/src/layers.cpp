#include "tvgan/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

namespace tvgan {

namespace {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Geometry of a convolution that maps a (C, H, W) "large" image to a
// (C*k*k, Ho*Wo) column matrix.
struct Geometry {
  int channels, height, width, kernel, stride, padding, out_h, out_w;
};

void im2col(const Scalar* image, const Geometry& g, Scalar* columns) {
  const int cols = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        Scalar* row = columns + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          Scalar* out = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(out, out + g.out_w, 0.0);
            continue;
          }
          const Scalar* in = plane + iy * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            out[ox] = (ix >= 0 && ix < g.width) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Per-thread buffer for columns that do not outlive the call.
std::vector<Scalar>& scratch(std::size_t n) {
  thread_local std::vector<Scalar> buffer;
  buffer.resize(n);
  return buffer;
}

// Adjoint of im2col: scatters (accumulates) columns back into the image.
void col2im(const Scalar* columns, const Geometry& g, Scalar* image) {
  const int cols = g.out_h * g.out_w;
  std::fill(image, image + static_cast<std::size_t>(g.channels) * g.height * g.width, 0.0);
  for (int c = 0; c < g.channels; ++c) {
    Scalar* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Scalar* row =
            columns + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* in = row + oy * g.out_w;
          Scalar* out = plane + iy * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

void add_bias(Tensor& y, const Parameter* bias) {
  if (bias == nullptr) return;
  for (int c = 0; c < y.channels(); ++c) {
    Scalar* p = y.channel(c);
    const Scalar b = bias->value[c];
    for (int i = 0; i < y.plane(); ++i) p[i] += b;
  }
}

void accumulate_bias_grad(const Tensor& dy, Parameter* bias) {
  if (bias == nullptr) return;
  for (int c = 0; c < dy.channels(); ++c) {
    const Scalar* p = dy.channel(c);
    bias->grad[c] += std::accumulate(p, p + dy.plane(), Scalar{0});
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Parameter* ParameterSet::add(std::string name, std::vector<int> shape) {
  auto p = std::make_unique<Parameter>();
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->value.assign(n, 0.0);
  p->grad.assign(n, 0.0);
  params_.push_back(std::move(p));
  return params_.back().get();
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

bool ParameterSet::finite() const {
  for (const auto& p : params_)
    if (!all_finite(p->value)) return false;
  return true;
}

void init_gaussian(ParameterSet& params, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.tensors(); ++i) {
    Parameter& p = params[i];
    if (ends_with(p.name, ".bias") || ends_with(p.name, ".beta")) {
      std::fill(p.value.begin(), p.value.end(), 0.0);
    } else if (ends_with(p.name, ".gamma")) {
      for (auto& v : p.value) v = rng.normal(1.0, stddev);
    } else {
      for (auto& v : p.value) v = rng.normal(0.0, stddev);
    }
  }
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in_channels,
               int out_channels, int kernel, int stride, int padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  weight_ = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel});
  if (bias) bias_ = params.add(name + ".bias", {out_channels});
}

Tensor Conv2d::forward(const Tensor& x, ConvCache* cache) const {
  if (x.channels() != in_) {
    throw ShapeError("conv: expected " + std::to_string(in_) + " input channels, got " +
                     std::to_string(x.channels()));
  }
  const Geometry g{in_, x.height(), x.width(), kernel_, stride_, padding_,
                   out_size(x.height()), out_size(x.width())};
  if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv: input " + x.shape_string() + " too small");
  const int rows = in_ * kernel_ * kernel_;
  const int cols = g.out_h * g.out_w;
  const auto n = static_cast<std::size_t>(rows) * cols;
  std::vector<Scalar>& columns = cache ? cache->columns : scratch(n);
  columns.resize(n);
  im2col(x.data(), g, columns.data());

  Tensor y(out_, g.out_h, g.out_w);
  ConstMatrixMap w(weight_->value.data(), out_, rows);
  ConstMatrixMap col(columns.data(), rows, cols);
  MatrixMap out(y.data(), out_, cols);
  out.noalias() = w * col;
  add_bias(y, bias_);
  if (cache) {
    cache->in_height = x.height();
    cache->in_width = x.width();
  }
  return y;
}

Tensor Conv2d::backward(const ConvCache& cache, const Tensor& dy) {
  const Geometry g{in_, cache.in_height, cache.in_width, kernel_, stride_, padding_,
                   dy.height(), dy.width()};
  const int rows = in_ * kernel_ * kernel_;
  const int cols = g.out_h * g.out_w;
  ConstMatrixMap d_out(dy.data(), out_, cols);
  ConstMatrixMap col(cache.columns.data(), rows, cols);
  MatrixMap dw(weight_->grad.data(), out_, rows);
  dw.noalias() += d_out * col.transpose();
  accumulate_bias_grad(dy, bias_);

  std::vector<Scalar>& d_columns = scratch(static_cast<std::size_t>(rows) * cols);
  ConstMatrixMap w(weight_->value.data(), out_, rows);
  MatrixMap dcol(d_columns.data(), rows, cols);
  dcol.noalias() = w.transpose() * d_out;
  Tensor dx(in_, g.height, g.width);
  col2im(d_columns.data(), g, dx.data());
  return dx;
}

// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(ParameterSet& params, const std::string& name, int in_channels,
                                 int out_channels, int kernel, int stride, int padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  weight_ = params.add(name + ".weight", {in_channels, out_channels, kernel, kernel});
  if (bias) bias_ = params.add(name + ".bias", {out_channels});
}

Tensor ConvTranspose2d::forward(const Tensor& x, ConvTransposeCache* cache) const {
  if (x.channels() != in_) {
    throw ShapeError("deconv: expected " + std::to_string(in_) + " input channels, got " +
                     std::to_string(x.channels()));
  }
  const int oh = out_size(x.height());
  const int ow = out_size(x.width());
  const Geometry g{out_, oh, ow, kernel_, stride_, padding_, x.height(), x.width()};
  const int rows = out_ * kernel_ * kernel_;
  const int cols = x.plane();
  std::vector<Scalar>& columns = scratch(static_cast<std::size_t>(rows) * cols);
  ConstMatrixMap w(weight_->value.data(), in_, rows);
  ConstMatrixMap in(x.data(), in_, cols);
  MatrixMap col(columns.data(), rows, cols);
  col.noalias() = w.transpose() * in;
  Tensor y(out_, oh, ow);
  col2im(columns.data(), g, y.data());
  add_bias(y, bias_);
  if (cache) cache->input = x;
  return y;
}

Tensor ConvTranspose2d::backward(const ConvTransposeCache& cache, const Tensor& dy) {
  const Tensor& x = cache.input;
  const Geometry g{out_, dy.height(), dy.width(), kernel_, stride_, padding_, x.height(),
                   x.width()};
  const int rows = out_ * kernel_ * kernel_;
  const int cols = x.plane();
  std::vector<Scalar>& d_columns = scratch(static_cast<std::size_t>(rows) * cols);
  im2col(dy.data(), g, d_columns.data());
  ConstMatrixMap dcol(d_columns.data(), rows, cols);
  ConstMatrixMap in(x.data(), in_, cols);
  MatrixMap dw(weight_->grad.data(), in_, rows);
  dw.noalias() += in * dcol.transpose();
  accumulate_bias_grad(dy, bias_);

  Tensor dx(in_, x.height(), x.width());
  ConstMatrixMap w(weight_->value.data(), in_, rows);
  MatrixMap d_in(dx.data(), in_, cols);
  d_in.noalias() = w * dcol;
  return dx;
}

// ---------------------------------------------------------------------------

InstanceNorm::InstanceNorm(ParameterSet& params, const std::string& name, int channels)
    : channels_(channels) {
  gamma_ = params.add(name + ".gamma", {channels});
  beta_ = params.add(name + ".beta", {channels});
}

Tensor InstanceNorm::forward(const Tensor& x, NormCache* cache) const {
  if (x.channels() != channels_) throw ShapeError("norm: channel mismatch");
  const int n = x.plane();
  Tensor y(x.channels(), x.height(), x.width());
  Tensor xhat(x.channels(), x.height(), x.width());
  std::vector<Scalar> inv_stds(channels_);
  for (int c = 0; c < channels_; ++c) {
    const Scalar* in = x.channel(c);
    Scalar mean = 0.0;
    for (int i = 0; i < n; ++i) mean += in[i];
    mean /= n;
    Scalar var = 0.0;
    for (int i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= n;
    const Scalar inv_std = 1.0 / std::sqrt(var + kEps);
    inv_stds[c] = inv_std;
    Scalar* xh = xhat.channel(c);
    Scalar* out = y.channel(c);
    const Scalar g = gamma_->value[c];
    const Scalar b = beta_->value[c];
    for (int i = 0; i < n; ++i) {
      xh[i] = (in[i] - mean) * inv_std;
      out[i] = g * xh[i] + b;
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_stds);
  }
  return y;
}

Tensor InstanceNorm::backward(const NormCache& cache, const Tensor& dy) {
  const Tensor& xhat = cache.normalized;
  const int n = xhat.plane();
  Tensor dx(xhat.channels(), xhat.height(), xhat.width());
  for (int c = 0; c < channels_; ++c) {
    const Scalar* d = dy.channel(c);
    const Scalar* xh = xhat.channel(c);
    Scalar sum_d = 0.0, sum_dxh = 0.0;
    for (int i = 0; i < n; ++i) {
      sum_d += d[i];
      sum_dxh += d[i] * xh[i];
    }
    gamma_->grad[c] += sum_dxh;
    beta_->grad[c] += sum_d;
    const Scalar g = gamma_->value[c];
    // d/dxhat = g * dy, so both sums scale by g.
    const Scalar k = g * cache.inv_std[c] / n;
    Scalar* out = dx.channel(c);
    for (int i = 0; i < n; ++i) out[i] = k * (n * d[i] - sum_d - xh[i] * sum_dxh);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& params, const std::string& name, int in_features, int out_features)
    : in_(in_features), out_(out_features) {
  weight_ = params.add(name + ".weight", {out_features, in_features});
  bias_ = params.add(name + ".bias", {out_features});
}

std::vector<Scalar> Linear::forward(std::span<const Scalar> x) const {
  if (static_cast<int>(x.size()) != in_) throw ShapeError("linear: input size mismatch");
  std::vector<Scalar> y(bias_->value);
  ConstMatrixMap w(weight_->value.data(), out_, in_);
  VectorMap(y.data(), out_).noalias() += w * ConstVectorMap(x.data(), in_);
  return y;
}

std::vector<Scalar> Linear::backward(std::span<const Scalar> x, std::span<const Scalar> dy) {
  ConstVectorMap d(dy.data(), out_);
  ConstVectorMap in(x.data(), in_);
  MatrixMap(weight_->grad.data(), out_, in_).noalias() += d * in.transpose();
  VectorMap(bias_->grad.data(), out_) += d;
  std::vector<Scalar> dx(in_);
  VectorMap(dx.data(), in_).noalias() =
      ConstMatrixMap(weight_->value.data(), out_, in_).transpose() * d;
  return dx;
}

// ---------------------------------------------------------------------------

namespace {
template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor y(x.channels(), x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}
template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  a.require_same_shape(b, "pointwise");
  Tensor y(a.channels(), a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = f(a[i], b[i]);
  return y;
}
}  // namespace

Tensor leaky_relu(const Tensor& x, Scalar slope) {
  return map_unary(x, [slope](Scalar v) { return v > 0 ? v : slope * v; });
}
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, Scalar slope) {
  return map_binary(x, dy, [slope](Scalar v, Scalar d) { return v > 0 ? d : slope * d; });
}
Tensor relu(const Tensor& x) {
  return map_unary(x, [](Scalar v) { return v > 0 ? v : 0.0; });
}
Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  return map_binary(x, dy, [](Scalar v, Scalar d) { return v > 0 ? d : 0.0; });
}
Tensor tanh_forward(const Tensor& x) {
  return map_unary(x, [](Scalar v) { return std::tanh(v); });
}
Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  return map_binary(y, dy, [](Scalar v, Scalar d) { return d * (1.0 - v * v); });
}
Tensor sigmoid_forward(const Tensor& x) {
  return map_unary(x, [](Scalar v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (1.0 + e);
  });
}
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  return map_binary(y, dy, [](Scalar v, Scalar d) { return d * v * (1.0 - v); });
}

Tensor dropout_mask(int channels, int height, int width, Scalar rate, std::uint64_t seed) {
  Tensor mask(channels, height, width);
  Rng rng(seed);
  const Scalar keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(rate) ? 0.0 : keep;
  return mask;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](Scalar u, Scalar v) { return u * v; });
}

std::vector<Scalar> global_average_pool(const Tensor& x) {
  std::vector<Scalar> out(x.channels());
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* p = x.channel(c);
    out[c] = std::accumulate(p, p + x.plane(), Scalar{0}) / x.plane();
  }
  return out;
}

Tensor global_average_pool_backward(int channels, int height, int width,
                                    std::span<const Scalar> dy) {
  Tensor dx(channels, height, width);
  const Scalar inv = 1.0 / (static_cast<Scalar>(height) * width);
  for (int c = 0; c < channels; ++c) {
    Scalar* p = dx.channel(c);
    std::fill(p, p + dx.plane(), dy[c] * inv);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat: spatial mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

void split_channels(const Tensor& ab, int a_channels, Tensor& a, Tensor& b) {
  a = Tensor(a_channels, ab.height(), ab.width());
  b = Tensor(ab.channels() - a_channels, ab.height(), ab.width());
  std::copy(ab.data(), ab.data() + a.size(), a.data());
  std::copy(ab.data() + a.size(), ab.data() + ab.size(), b.data());
}

Tensor to_three_channels(const Tensor& image) {
  if (image.channels() == 3) return image;
  if (image.channels() != 1) {
    throw ShapeError("expected a 1- or 3-channel image, got " + image.shape_string());
  }
  Tensor out(3, image.height(), image.width());
  for (int c = 0; c < 3; ++c) std::copy(image.data(), image.data() + image.size(), out.channel(c));
  return out;
}

bool all_finite(std::span<const Scalar> values) {
  for (Scalar v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tvgan
