#include "capsforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "capsforge/error.hpp"

namespace capsforge {

std::string_view to_string(DType dtype) {
  return dtype == DType::f32 ? "float32" : "float64";
}

std::optional<DType> parse_dtype(std::string_view text) {
  if (text == "float64" || text == "f64") return DType::f64;
  if (text == "float32" || text == "f32") return DType::f32;
  return std::nullopt;
}

std::size_t element_count(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw Error(Errc::shape_mismatch, "zero extent in shape " + to_string(shape));
  }
}

double round_value(double x, DType dtype) {
  return dtype == DType::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::shape_mismatch,
                std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
  if (t.rank() != rank) {
    throw Error(Errc::shape_mismatch, std::string(what) + " expects rank " + std::to_string(rank) +
                                          ", got " + to_string(t.shape()));
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.dtype() != b.dtype()) {
    throw Error(Errc::data_type_mismatch, std::string(what) + ": " +
                                              std::string(to_string(a.dtype())) + " vs " +
                                              std::string(to_string(b.dtype())));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), data_(element_count(shape_), 0.0) {
  check_shape(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw Error(Errc::shape_mismatch, "data length " + std::to_string(data_.size()) +
                                          " does not match shape " + to_string(shape_));
  }
  round_to_dtype();
}

Tensor Tensor::filled(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::fill(t.data_.begin(), t.data_.end(), value);
  t.round_to_dtype();
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw Error(Errc::shape_mismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw Error(Errc::shape_mismatch,
                "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::with_dtype(DType dtype) const {
  Tensor out = *this;
  out.dtype_ = dtype;
  out.round_to_dtype();
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Tensor::round_to_dtype() {
  if (dtype_ == DType::f64) return;
  for (auto& x : data_) x = round_value(x, dtype_);
}

std::string_view to_string(Elementwise fn) {
  switch (fn) {
    case Elementwise::relu: return "relu";
    case Elementwise::sigmoid: return "sigmoid";
    case Elementwise::identity: return "identity";
    case Elementwise::tanh: return "tanh";
  }
  return "identity";
}

std::optional<Elementwise> parse_elementwise(std::string_view text) {
  if (text == "relu") return Elementwise::relu;
  if (text == "sigmoid") return Elementwise::sigmoid;
  if (text == "identity") return Elementwise::identity;
  if (text == "tanh") return Elementwise::tanh;
  return std::nullopt;
}

double apply_scalar(Elementwise fn, double x) {
  switch (fn) {
    case Elementwise::relu: return x > 0.0 ? x : 0.0;
    case Elementwise::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Elementwise::identity: return x;
    case Elementwise::tanh: return std::tanh(x);
  }
  return x;
}

double derivative_scalar(Elementwise fn, double x) {
  switch (fn) {
    case Elementwise::relu: return x > 0.0 ? 1.0 : 0.0;
    case Elementwise::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Elementwise::identity: return 1.0;
    case Elementwise::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

Tensor elementwise_apply(const Tensor& t, Elementwise fn) {
  Tensor out = t;
  if (fn == Elementwise::identity) return out;
  for (auto& x : out.data()) x = apply_scalar(fn, x);
  out.round_to_dtype();
  return out;
}

Tensor softmax(const Tensor& v) {
  require_rank(v, 1, "softmax");
  Tensor out = v;
  auto data = out.data();
  const double peak = *std::max_element(data.begin(), data.end());
  double total = 0.0;
  for (auto& x : data) {
    x = std::exp(x - peak);
    total += x;
  }
  for (auto& x : data) x /= total;
  out.round_to_dtype();
  return out;
}

Tensor squash(const Tensor& s) {
  require_rank(s, 1, "squash");
  double norm_sq = 0.0;
  for (double x : s.data()) norm_sq += x * x;
  Tensor out(s.shape(), s.dtype());
  if (norm_sq == 0.0) return out;
  const double norm = std::sqrt(norm_sq);
  const double scale = norm / (1.0 + norm_sq);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = scale * s[i];
  out.round_to_dtype();
  return out;
}

Tensor matmul(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matmul weight");
  require_rank(x, 1, "matmul input");
  require_same_dtype(w, x, "matmul");
  const std::size_t m = w.shape()[0];
  const std::size_t n = w.shape()[1];
  if (x.shape()[0] != n) {
    throw Error(Errc::shape_mismatch, "matmul inner dimensions: weight " + to_string(w.shape()) +
                                          " vs input " + to_string(x.shape()));
  }
  Tensor out({m}, x.dtype());
  const auto wd = w.data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = wd.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * xd[j];
    out[i] = acc;
  }
  out.round_to_dtype();
  return out;
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::string_view axis) {
  if (stride == 0) throw Error(Errc::stride_mismatch, "stride must be positive");
  if (kernel == 0 || kernel > input) {
    throw Error(Errc::shape_mismatch, "kernel " + std::string(axis) + " " +
                                          std::to_string(kernel) + " exceeds input " +
                                          std::to_string(input));
  }
  if ((input - kernel) % stride != 0) {
    throw Error(Errc::stride_mismatch, "(" + std::to_string(input) + " - " +
                                           std::to_string(kernel) + ") along " +
                                           std::string(axis) + " is not divisible by stride " +
                                           std::to_string(stride));
  }
  return (input - kernel) / stride + 1;
}

namespace {

// out[i][j] += sum_{u,v} k[u][v] * in[i*s+u][j*s+v] over raw row-major planes.
void correlate_accumulate(const double* kernel, std::size_t m, std::size_t n, const double* input,
                          std::size_t in_w, std::size_t stride, double* out, std::size_t out_h,
                          std::size_t out_w) {
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      double acc = 0.0;
      for (std::size_t u = 0; u < m; ++u) {
        const double* in_row = input + (i * stride + u) * in_w + j * stride;
        const double* k_row = kernel + u * n;
        for (std::size_t v = 0; v < n; ++v) acc += k_row[v] * in_row[v];
      }
      out[i * out_w + j] += acc;
    }
  }
}

}  // namespace

Tensor convolve2d(const Tensor& kernel, const Tensor& input, std::size_t stride) {
  require_rank(kernel, 2, "convolve2d kernel");
  require_rank(input, 2, "convolve2d input");
  require_same_dtype(kernel, input, "convolve2d");
  const std::size_t m = kernel.shape()[0], n = kernel.shape()[1];
  const std::size_t rows = input.shape()[0], cols = input.shape()[1];
  const std::size_t out_h = conv_output_extent(rows, m, stride, "height");
  const std::size_t out_w = conv_output_extent(cols, n, stride, "width");
  Tensor out({out_h, out_w}, input.dtype());
  correlate_accumulate(kernel.data().data(), m, n, input.data().data(), cols, stride,
                       out.data().data(), out_h, out_w);
  out.round_to_dtype();
  return out;
}

Tensor conv_connection_apply(const Tensor& kernels, const Tensor& input, std::size_t stride) {
  require_rank(kernels, 4, "convolution kernels");
  require_rank(input, 3, "convolution input");
  require_same_dtype(kernels, input, "convolution");
  const std::size_t k = kernels.shape()[0], d = kernels.shape()[1];
  const std::size_t m = kernels.shape()[2], n = kernels.shape()[3];
  if (input.shape()[0] != d) {
    throw Error(Errc::shape_mismatch, "kernel channels " + std::to_string(d) +
                                          " vs input channels " + std::to_string(input.shape()[0]));
  }
  const std::size_t rows = input.shape()[1], cols = input.shape()[2];
  const std::size_t out_h = conv_output_extent(rows, m, stride, "height");
  const std::size_t out_w = conv_output_extent(cols, n, stride, "width");
  Tensor out({k, out_h, out_w}, input.dtype());
  const double* kd = kernels.data().data();
  const double* xd = input.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      correlate_accumulate(kd + (i * d + j) * m * n, m, n, xd + j * rows * cols, cols, stride,
                           od + i * out_h * out_w, out_h, out_w);
    }
  }
  out.round_to_dtype();
  return out;
}

Downsampled max_downsample(const Tensor& input, std::size_t window_h, std::size_t window_w) {
  require_rank(input, 3, "max_downsample");
  const std::size_t d = input.shape()[0], rows = input.shape()[1], cols = input.shape()[2];
  if (window_h == 0 || window_w == 0 || rows % window_h != 0 || cols % window_w != 0) {
    throw Error(Errc::window_mismatch, "window " + std::to_string(window_h) + "x" +
                                           std::to_string(window_w) + " does not divide " +
                                           std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t out_h = rows / window_h, out_w = cols / window_w;
  Downsampled result{Tensor({d, out_h, out_w}, input.dtype()), {}};
  result.argmax.resize(result.values.size());
  const auto in = input.data();
  std::size_t o = 0;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j, ++o) {
        std::size_t best = (c * rows + i * window_h) * cols + j * window_w;
        for (std::size_t u = 0; u < window_h; ++u) {
          for (std::size_t v = 0; v < window_w; ++v) {
            const std::size_t idx = (c * rows + i * window_h + u) * cols + j * window_w + v;
            if (in[idx] > in[best]) best = idx;
          }
        }
        result.values[o] = in[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

Tensor reshape_flatten(const Tensor& input) {
  if (input.empty()) throw Error(Errc::shape_mismatch, "cannot flatten an empty tensor");
  return input.reshaped({input.size()});
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
  a.round_to_dtype();
}

void subtract_scaled(Tensor& a, double scale, const Tensor& b) {
  require_same_shape(a, b, "subtract_scaled");
  auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] -= scale * bd[i];
  a.round_to_dtype();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace capsforge
