#pragma once

// Dense row-major tensors and the primitive kernels the rest of the library
// is built on. Storage is an Eigen array; matrix views are Eigen maps.
//
// Forward kernels that reduce over a sequence axis use plain sequential
// loops so that a value at a given position is computed by the same
// floating-point operations whatever the extent of the other axes. The
// samplers and causality audits compare such values bit-for-bit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace axial {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Additive constant applied to masked pre-softmax scores.
inline constexpr double kMaskValue = -1e9;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
class Tensor {
  static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, float> ||
                    std::is_same_v<Scalar, std::int32_t>,
                "Tensor supports real64, real32 and int32");

 public:
  using value_type = Scalar;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  /// Rank-0 tensor holding a single zero.
  Tensor() : data_(Storage::Zero(1)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Storage::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Storage::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    validate_shape();
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape_));
    }
    data_ = Eigen::Map<const Storage>(values.data(), static_cast<Index>(values.size()));
  }

  static Tensor scalar(Scalar value) {
    Tensor t;
    t.data_[0] = value;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return data_.size(); }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Storage& array() noexcept { return data_; }
  const Storage& array() const noexcept { return data_; }

  /// View as a row-major matrix whose columns span the last axis.
  MatrixMap<Scalar> matrix() { return {data(), rows(), cols()}; }
  ConstMatrixMap<Scalar> matrix() const { return {data(), rows(), cols()}; }

  Scalar& operator[](Index flat) { return data_[flat]; }
  const Scalar& operator[](Index flat) const { return data_[flat]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[offset({static_cast<Index>(ix)...})];
  }
  template <typename... Ix>
  const Scalar& operator()(Ix... ix) const {
    return data_[offset({static_cast<Index>(ix)...})];
  }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out(*this);
    out.reshape_in_place(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape_in_place(std::move(shape));
    return std::move(*this);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

  void set_zero() { data_.setZero(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Index rows() const { return shape_.empty() ? 1 : size() / shape_.back(); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  void validate_shape() const {
    for (Index e : shape_) {
      if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_string(shape_));
    }
  }

  void reshape_in_place(Shape shape) {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    validate_shape();
  }

  Index offset(std::initializer_list<Index> ix) const {
    if (ix.size() != shape_.size()) {
      throw DimensionError("index rank " + std::to_string(ix.size()) + " for tensor of shape " +
                           shape_string(shape_));
    }
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : ix) {
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  Storage data_;
};

using DataTensor = Tensor<std::int32_t>;

/// Throws NumericError if any entry is NaN or infinite.
template <typename Scalar>
void require_finite(const Tensor<Scalar>& x, const char* what) {
  if constexpr (std::is_floating_point_v<Scalar>) {
    if (!x.array().isFinite().all()) {
      throw NumericError(std::string(what) + ": non-finite value in tensor of shape " +
                         shape_string(x.shape()));
    }
  }
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shapes " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

namespace detail {

inline Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

inline AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace detail

/// Materialized axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x, std::span<const Index> perm) {
  const Index rank = x.rank();
  if (static_cast<Index>(perm.size()) != rank) {
    throw DimensionError("transpose permutation rank mismatch for shape " + shape_string(x.shape()));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) {
    const Index p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)]) {
      throw DimensionError("invalid transpose permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(p)];
  }
  // Input strides, then walk the output in row-major order.
  std::vector<Index> in_stride(static_cast<std::size_t>(rank), 1);
  for (Index i = rank - 2; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] =
        in_stride[static_cast<std::size_t>(i + 1)] * x.shape()[static_cast<std::size_t>(i + 1)];
  }
  Tensor<Scalar> out(out_shape);
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  for (Index flat = 0; flat < out.size(); ++flat) {
    Index src = 0;
    for (Index i = 0; i < rank; ++i) {
      src += counter[static_cast<std::size_t>(i)] *
             in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    out[flat] = x[src];
    for (Index i = rank - 1; i >= 0; --i) {
      auto& c = counter[static_cast<std::size_t>(i)];
      if (++c < out_shape[static_cast<std::size_t>(i)]) break;
      c = 0;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x, std::initializer_list<Index> perm) {
  return transpose(x, std::span<const Index>(perm.begin(), perm.size()));
}

/// Swaps the two leading axes of a rank-3 tensor: [A, B, D] -> [B, A, D].
template <typename Scalar>
Tensor<Scalar> swap_leading_axes(const Tensor<Scalar>& x) {
  if (x.rank() != 3) throw DimensionError("swap_leading_axes expects rank 3, got " + shape_string(x.shape()));
  const Index a = x.extent(0), b = x.extent(1), d = x.extent(2);
  Tensor<Scalar> out({b, a, d});
  for (Index i = 0; i < a; ++i) {
    for (Index j = 0; j < b; ++j) {
      std::copy_n(x.data() + (i * b + j) * d, d, out.data() + (j * a + i) * d);
    }
  }
  return out;
}

/// Batched matrix product over the last two axes. Leading batch axes
/// broadcast numpy-style (equal extents or 1; missing axes count as 1).
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  auto fail = [&] {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const Index m = a.extent(a.rank() - 2), k = a.extent(a.rank() - 1);
  const Index kb = b.extent(b.rank() - 2), p = b.extent(b.rank() - 1);
  if (k != kb) fail();

  const Index batch_rank = std::max(a.rank(), b.rank()) - 2;
  Shape batch(static_cast<std::size_t>(batch_rank));
  std::vector<Index> a_batch(static_cast<std::size_t>(batch_rank), 1);
  std::vector<Index> b_batch(static_cast<std::size_t>(batch_rank), 1);
  for (Index i = 0; i < batch_rank; ++i) {
    const Index ai = i - (batch_rank - (a.rank() - 2));
    const Index bi = i - (batch_rank - (b.rank() - 2));
    if (ai >= 0) a_batch[static_cast<std::size_t>(i)] = a.extent(ai);
    if (bi >= 0) b_batch[static_cast<std::size_t>(i)] = b.extent(bi);
    const Index ea = a_batch[static_cast<std::size_t>(i)], eb = b_batch[static_cast<std::size_t>(i)];
    if (ea != eb && ea != 1 && eb != 1) fail();
    batch[static_cast<std::size_t>(i)] = std::max(ea, eb);
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(p);
  Tensor<Scalar> out(out_shape);

  const Index n_batch = shape_size(batch);
  std::vector<Index> counter(static_cast<std::size_t>(batch_rank), 0);
  for (Index bidx = 0; bidx < n_batch; ++bidx) {
    Index a_off = 0, b_off = 0;
    for (Index i = 0; i < batch_rank; ++i) {
      const auto u = static_cast<std::size_t>(i);
      a_off = a_off * a_batch[u] + (a_batch[u] == 1 ? 0 : counter[u]);
      b_off = b_off * b_batch[u] + (b_batch[u] == 1 ? 0 : counter[u]);
    }
    ConstMatrixMap<Scalar> am(a.data() + a_off * m * k, m, k);
    ConstMatrixMap<Scalar> bm(b.data() + b_off * k * p, k, p);
    MatrixMap<Scalar> om(out.data() + bidx * m * p, m, p);
    // Row-wise axpy keeps each output entry a fixed left-to-right sum over k.
    for (Index r = 0; r < m; ++r) {
      for (Index kk = 0; kk < k; ++kk) om.row(r) += am(r, kk) * bm.row(kk);
    }
    for (Index i = batch_rank - 1; i >= 0; --i) {
      auto& c = counter[static_cast<std::size_t>(i)];
      if (++c < batch[static_cast<std::size_t>(i)]) break;
      c = 0;
    }
  }
  if constexpr (std::is_floating_point_v<Scalar>) require_finite(out, "matmul");
  return out;
}

/// Numerically stable softmax along `axis` (max-subtracted).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  static_assert(std::is_floating_point_v<Scalar>);
  axis = detail::normalize_axis(axis, x.rank());
  if (x.array().isNaN().any()) throw NumericError("softmax: NaN input");
  const auto s = detail::split_at(x.shape(), axis);
  Tensor<Scalar> out(x.shape());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index r = 0; r < s.inner; ++r) {
      const Index base = o * s.extent * s.inner + r;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      if (!std::isfinite(mx)) throw NumericError("softmax: no finite entry along axis");
      Scalar total = 0;
      for (Index k = 0; k < s.extent; ++k) {
        const Scalar e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (Index k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return out;
}

/// Moves every slice along `axis` forward by `offset`; vacated leading
/// slices are zero. offset >= extent yields all zeros.
template <typename Scalar>
Tensor<Scalar> shift(const Tensor<Scalar>& x, Index axis, Index offset = 1) {
  axis = detail::normalize_axis(axis, x.rank());
  if (offset < 0) throw DimensionError("shift offset must be non-negative");
  const auto s = detail::split_at(x.shape(), axis);
  Tensor<Scalar> out(x.shape());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index k = offset; k < s.extent; ++k) {
      std::copy_n(x.data() + (o * s.extent + k - offset) * s.inner, s.inner,
                  out.data() + (o * s.extent + k) * s.inner);
    }
  }
  return out;
}

/// Per-position layer normalization over the last axis.
template <typename Scalar>
Tensor<Scalar> normalize_lastaxis(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                  const Tensor<Scalar>& beta, Scalar eps) {
  static_assert(std::is_floating_point_v<Scalar>);
  if (x.rank() < 1) throw DimensionError("normalize_lastaxis needs rank >= 1");
  const Index d = x.extent(x.rank() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("normalize_lastaxis: last extent " + std::to_string(d) +
                         " vs gamma/beta " + shape_string(gamma.shape()));
  }
  Tensor<Scalar> out(x.shape());
  const Index rows = x.size() / d;
  for (Index r = 0; r < rows; ++r) {
    const Scalar* in = x.data() + r * d;
    Scalar* o = out.data() + r * d;
    Scalar mean = 0;
    for (Index k = 0; k < d; ++k) mean += in[k];
    mean /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (Index k = 0; k < d; ++k) var += (in[k] - mean) * (in[k] - mean);
    var /= static_cast<Scalar>(d);
    const Scalar rstd = Scalar(1) / std::sqrt(var + eps);
    for (Index k = 0; k < d; ++k) o[k] = (in[k] - mean) * rstd * gamma[k] + beta[k];
  }
  return out;
}

}  // namespace axial
