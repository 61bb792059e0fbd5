#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "attncheck/types.hpp"

namespace attncheck {

/// Dense row-major array of 64-bit reals with a declared numeric-format tag.
/// Non-F64 formats are simulated: values are kept as doubles but snapped to
/// the format's representable grid by quantize().
struct Tensor {
  std::vector<int64_t> shape;
  Dtype dtype = Dtype::F64Sim;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> shape_, std::vector<double> data_,
         Dtype dtype_ = Dtype::F64Sim);

  static Tensor zeros(std::vector<int64_t> shape, Dtype dtype = Dtype::F64Sim);
  static Tensor full(std::vector<int64_t> shape, double value,
                     Dtype dtype = Dtype::F64Sim);
  static Tensor identity(int64_t n, Dtype dtype = Dtype::F64Sim);

  int64_t numel() const;
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  /// Dimension lookup; negative indices count from the end.
  int64_t dim(int64_t i) const;

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

int64_t numel_of(std::span<const int64_t> shape);

bool operator==(const Tensor& a, const Tensor& b);

/// Round a value to the nearest representable value of the target format.
/// Values beyond the format's rounding boundary overflow to +-inf; NaN and
/// inf pass through.
double quantize_value(double x, Dtype dtype);
Tensor quantize(const Tensor& t, Dtype dtype);

/// Batched matrix product over the last two dims; leading dims must agree.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& t);
Tensor reshape(const Tensor& t, std::vector<int64_t> new_shape);

bool broadcast_compatible(std::span<const int64_t> a, std::span<const int64_t> b);

/// Elementwise a + b under numpy-style broadcasting; the result takes the
/// broadcast shape and a's dtype tag. Throws BroadcastError on mismatch.
Tensor add_broadcast(const Tensor& a, const Tensor& b);

}  // namespace attncheck
