#include "attncheck/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace attncheck {

namespace {

json shape_json(std::span<const int64_t> s) { return json(std::vector<int64_t>(s.begin(), s.end())); }

struct FormatSpec {
  int precision_bits;  // significand bits including the implicit leading one
  int min_exp;         // exponent of the smallest normal, 2^min_exp
  int max_exp;         // exponent e of the largest binade [2^e, 2^(e+1))
};

constexpr FormatSpec kF32{24, -126, 127};
constexpr FormatSpec kF16{11, -14, 15};
constexpr FormatSpec kBF16{8, -126, 127};

double quantize_to_spec(double x, const FormatSpec& spec) {
  if (!std::isfinite(x) || x == 0.0) return x;
  double a = std::fabs(x);
  // Overflow boundary: largest finite value plus half its ulp.
  double boundary = std::ldexp(1.0 - std::ldexp(1.0, -(spec.precision_bits + 1)),
                               spec.max_exp + 1);
  if (a >= boundary) return std::copysign(HUGE_VAL, x);
  int e = 0;
  std::frexp(a, &e);  // a = m * 2^e with m in [0.5, 1)
  int quantum_exp;
  if (e - 1 >= spec.min_exp) {
    quantum_exp = e - spec.precision_bits;
  } else {
    quantum_exp = spec.min_exp + 1 - spec.precision_bits;
  }
  double q = std::ldexp(1.0, quantum_exp);
  // nearbyint honors the default round-to-nearest-even mode.
  return std::nearbyint(x / q) * q;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape_, std::vector<double> data_, Dtype dtype_)
    : shape(std::move(shape_)), dtype(dtype_), data(std::move(data_)) {
  if (numel_of(shape) != static_cast<int64_t>(data.size())) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data length does not match shape",
                {{"shape", shape_json(shape)}, {"data_len", data.size()}});
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dtype) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), dtype);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, Dtype dtype) {
  auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), dtype);
}

Tensor Tensor::identity(int64_t n, Dtype dtype) {
  Tensor t = zeros({n, n}, dtype);
  for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i * n + i)] = 1.0;
  return t;
}

int64_t Tensor::numel() const { return numel_of(shape); }

int64_t Tensor::dim(int64_t i) const {
  int64_t r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw Error(ErrorCode::ShapeMismatch, "dimension index out of range",
                {{"index", i}, {"rank", r}});
  }
  return shape[static_cast<size_t>(i)];
}

namespace {

int64_t flat_index(const std::vector<int64_t>& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size()) {
    throw Error(ErrorCode::ShapeMismatch, "index rank mismatch",
                {{"index_rank", idx.size()}, {"rank", shape.size()}});
  }
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    flat = flat * shape[d] + i;
    ++d;
  }
  return flat;
}

}  // namespace

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return data[static_cast<size_t>(flat_index(shape, idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data[static_cast<size_t>(flat_index(shape, idx))];
}

int64_t numel_of(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.dtype == b.dtype && a.data == b.data;
}

double quantize_value(double x, Dtype dtype) {
  switch (dtype) {
    case Dtype::F64Sim:
      return x;
    case Dtype::F32Sim:
      return quantize_to_spec(x, kF32);
    case Dtype::F16Sim:
      return quantize_to_spec(x, kF16);
    case Dtype::BF16Sim:
      return quantize_to_spec(x, kBF16);
  }
  return x;
}

Tensor quantize(const Tensor& t, Dtype dtype) {
  Tensor out = t;
  out.dtype = dtype;
  if (dtype != Dtype::F64Sim) {
    for (double& v : out.data) v = quantize_value(v, dtype);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul requires equal-rank tensors of rank >= 2",
                {{"a", shape_json(a.shape)}, {"b", shape_json(b.shape)}});
  }
  int64_t r = a.rank();
  for (int64_t i = 0; i < r - 2; ++i) {
    if (a.shape[i] != b.shape[i]) {
      throw Error(ErrorCode::ShapeMismatch, "matmul batch dims disagree",
                  {{"a", shape_json(a.shape)}, {"b", shape_json(b.shape)}});
    }
  }
  int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw Error(ErrorCode::ShapeMismatch, "matmul inner dims disagree",
                {{"a", shape_json(a.shape)}, {"b", shape_json(b.shape)}});
  }
  int64_t batch = 1;
  std::vector<int64_t> out_shape;
  for (int64_t i = 0; i < r - 2; ++i) {
    batch *= a.shape[i];
    out_shape.push_back(a.shape[i]);
  }
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape, a.dtype);
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* po = out.data.data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* A = pa + bi * m * k;
    const double* B = pb + bi * k * n;
    double* O = po + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < k; ++t) acc += A[i * k + t] * B[t * n + j];
        O[i * n + j] = acc;
      }
    }
  }
  return out;
}

Tensor transpose_last2(const Tensor& t) {
  if (t.rank() < 2) {
    throw Error(ErrorCode::ShapeMismatch, "transpose requires rank >= 2",
                {{"shape", shape_json(t.shape)}});
  }
  std::vector<int64_t> out_shape = t.shape;
  int64_t m = t.dim(-2), n = t.dim(-1);
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape, t.dtype);
  int64_t batch = t.numel() / (m * n);
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* src = t.data.data() + bi * m * n;
    double* dst = out.data.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return out;
}

Tensor reshape(const Tensor& t, std::vector<int64_t> new_shape) {
  if (numel_of(new_shape) != t.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "reshape changes element count",
                {{"from", shape_json(t.shape)}, {"to", shape_json(new_shape)}});
  }
  Tensor out = t;
  out.shape = std::move(new_shape);
  return out;
}

bool broadcast_compatible(std::span<const int64_t> a, std::span<const int64_t> b) {
  size_t ra = a.size(), rb = b.size();
  size_t r = std::max(ra, rb);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) return false;
  }
  return true;
}

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  if (!broadcast_compatible(a.shape, b.shape)) {
    throw Error(ErrorCode::BroadcastError, "shapes are not broadcast-compatible",
                {{"a", shape_json(a.shape)}, {"b", shape_json(b.shape)}});
  }
  size_t r = std::max(a.shape.size(), b.shape.size());
  std::vector<int64_t> out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.shape.size() ? 1 : a.shape[i - (r - a.shape.size())];
    int64_t db = i < r - b.shape.size() ? 1 : b.shape[i - (r - b.shape.size())];
    out_shape[i] = std::max(da, db);
  }
  Tensor out = Tensor::zeros(out_shape, a.dtype);
  // Strides with zeroed broadcast dims let one index walk drive both inputs.
  auto strides_for = [&](const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(r, 0);
    int64_t acc = 1;
    for (size_t i = shape.size(); i-- > 0;) {
      size_t oi = i + (r - shape.size());
      st[oi] = (shape[i] == 1 && out_shape[oi] != 1) ? 0 : acc;
      acc *= shape[i];
    }
    return st;
  };
  auto sa = strides_for(a.shape);
  auto sb = strides_for(b.shape);
  std::vector<int64_t> idx(r, 0);
  int64_t total = out.numel();
  for (int64_t flat = 0; flat < total; ++flat) {
    int64_t oa = 0, ob = 0;
    for (size_t i = 0; i < r; ++i) {
      oa += idx[i] * sa[i];
      ob += idx[i] * sb[i];
    }
    out.data[static_cast<size_t>(flat)] =
        a.data[static_cast<size_t>(oa)] + b.data[static_cast<size_t>(ob)];
    for (size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

}  // namespace attncheck
