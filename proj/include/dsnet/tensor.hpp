#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse (non-scalar loss, label out of range, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values detected while verify mode is active.
class NumericError : public Error {
 public:
  using Error::Error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Cache-line aligned allocator. Eigen's vectorized reductions peel according
/// to the runtime address, so a fixed base alignment keeps results
/// independent of where the heap placed a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* to_string(DType dtype);

/// Dense row-major array of rank <= 4. Value semantics; copies are deep.
template <typename Scalar>
class Tensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Array>;
  using ConstArrayMap = Eigen::Map<const Array>;

  static constexpr int kMaxRank = 4;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}
  using Storage = std::vector<Scalar, AlignedAllocator<Scalar>>;

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape), Storage(values)) {}
  Tensor(Shape shape, const std::vector<Scalar>& values) : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}
  Tensor(Shape shape, Storage values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != static_cast<Index>(data_.size())) {
      throw DimensionError("tensor: shape " + to_string(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Extent of axis `axis`; negative values count from the back.
  Index dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
    return shape_[static_cast<std::size_t>(a)];
  }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }
  bool defined() const { return !shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Is>
  Scalar& at(Is... idx) { return data_[static_cast<std::size_t>(offset(idx...))]; }
  template <typename... Is>
  const Scalar& at(Is... idx) const { return data_[static_cast<std::size_t>(offset(idx...))]; }

  ArrayMap flat() { return ArrayMap(data_.data(), size()); }
  ConstArrayMap flat() const { return ConstArrayMap(data_.data(), size()); }

  /// Views the storage as a rows x cols row-major matrix.
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// Rank-2 tensors only.
  MatrixMap matrix() { return matrix(dim(0), dim(1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), dim(1)); }

  Tensor reshaped(Shape shape) const {
    if (checked_numel(shape) != size()) {
      throw DimensionError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

 private:
  static Index checked_numel(const Shape& shape) {
    if (shape.size() > static_cast<std::size_t>(kMaxRank)) {
      throw DimensionError("tensor: rank " + std::to_string(shape.size()) + " exceeds " + std::to_string(kMaxRank));
    }
    for (Index d : shape) {
      if (d < 0) throw DimensionError("tensor: negative extent in " + to_string(shape));
    }
    return numel(shape);
  }

  void check_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw DimensionError("tensor: cannot view " + to_string(shape_) + " as " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " matrix");
    }
  }

  template <typename... Is>
  Index offset(Is... idx) const {
    const Index ids[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t i = 0; i < sizeof...(Is); ++i) off = off * shape_[i] + ids[i];
    return off;
  }

  Shape shape_;
  Storage data_;
};

/// True when shapes match and every value has the same bit pattern.
template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t);

}  // namespace dsnet
