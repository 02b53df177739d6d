#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capsforge {

enum class DType { f32, f64 };

std::string_view to_string(DType dtype);
/// Accepts "f32"/"float32" and "f64"/"float64".
std::optional<DType> parse_dtype(std::string_view text);

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor. Rank-3 tensors are laid out channel-major
/// (channels x height x width). Elements are held as doubles; an f32 tensor
/// rounds every stored value to single precision.
///
/// A default-constructed tensor has no shape and no data and stands for
/// "no tensor" (e.g. the weight of a weight-free connection).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64);

  static Tensor filled(Shape shape, double value, DType dtype = DType::f64);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }
  DType dtype() const noexcept { return dtype_; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;
  Tensor with_dtype(DType dtype) const;

  bool all_finite() const;

  /// Re-rounds stored values after in-place writes (no-op for f64).
  void round_to_dtype();

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  DType dtype_ = DType::f64;
  std::vector<double> data_;
};

/// Scalar activation applied elementwise.
enum class Elementwise { relu, sigmoid, identity, tanh };

std::string_view to_string(Elementwise fn);
std::optional<Elementwise> parse_elementwise(std::string_view text);

double apply_scalar(Elementwise fn, double x);
/// Derivative of the activation at x. ReLU uses 0 at the origin.
double derivative_scalar(Elementwise fn, double x);

Tensor elementwise_apply(const Tensor& t, Elementwise fn);

/// Max-subtracted softmax over a rank-1 tensor.
Tensor softmax(const Tensor& v);

/// v = |s|^2 / (1 + |s|^2) * s / |s|, with squash(0) = 0.
Tensor squash(const Tensor& s);

/// W (M x N) times X (length N).
Tensor matmul(const Tensor& w, const Tensor& x);

/// Strided valid cross-correlation of a 2-D input with a 2-D kernel:
/// c[i][j] = sum_{u,v} a[u][v] * b[i*s + u][j*s + v].
/// Throws ShapeMismatch when the kernel exceeds the input and
/// StrideMismatch when (M - m) or (N - n) is not a multiple of the stride.
Tensor convolve2d(const Tensor& kernel, const Tensor& input, std::size_t stride);

/// Output spatial size for a strided valid convolution, with the same
/// checks as convolve2d.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::string_view axis);

/// Kernels k x d x m x n applied to a d x M x N input. Output channel i is
/// sum_j convolve2d(kernels[i][j], input[j], stride).
Tensor conv_connection_apply(const Tensor& kernels, const Tensor& input, std::size_t stride);

struct Downsampled {
  Tensor values;
  /// Flat input index of each output element's maximum (first in row-major
  /// order on ties).
  std::vector<std::size_t> argmax;
};

/// Non-overlapping max pooling of a d x M x N tensor with a
/// window_h x window_w window. Throws WindowMismatch when the window does
/// not divide the spatial extent.
Downsampled max_downsample(const Tensor& input, std::size_t window_h, std::size_t window_w);

/// Channel-major flatten of a d x M x N tensor into a vector of length dMN.
/// Tensors of any rank are accepted; the memory order is already the
/// flattened order.
Tensor reshape_flatten(const Tensor& input);

/// a += b (shapes must agree).
void add_inplace(Tensor& a, const Tensor& b);
/// a -= scale * b (shapes must agree).
void subtract_scaled(Tensor& a, double scale, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace capsforge
