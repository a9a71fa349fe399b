#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcell {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline constexpr std::size_t kMaxRank = 5;

/// Thrown when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an API is used outside its contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown on malformed or truncated files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline Index element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major tensor of rank <= 5. Rank 0 holds a single scalar.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Array>;
  using ConstArrayMap = Eigen::Map<const Array>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(element_count(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (static_cast<Index>(data_.size()) != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  template <typename Rng>
  static Tensor normal(Shape shape, Rng& rng, Scalar stddev = Scalar(1), Scalar mean = Scalar(0)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    for (auto& v : t.data_) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data_) v = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return data_; }
  std::span<const Scalar> span() const { return data_; }
  const std::vector<Scalar>& values() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element access for rank-4 (n, c, h, w) tensors.
  Scalar& at(Index n, Index c, Index h, Index w) { return data_[offset4(n, c, h, w)]; }
  Scalar at(Index n, Index c, Index h, Index w) const { return data_[offset4(n, c, h, w)]; }

  Scalar item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  ArrayMap array() { return ArrayMap(data_.data(), size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), size()); }

  void fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(Scalar(0)); }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<To>(v); });
    return Tensor<To>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    array() += other.array();
    return *this;
  }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(what) + ": shape " + to_string(shape_) + " vs " + to_string(other.shape_));
    }
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.size() > kMaxRank) throw ShapeError("tensor rank exceeds 5: " + to_string(shape));
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive: " + to_string(shape));
    }
  }

  std::size_t offset4(Index n, Index c, Index h, Index w) const {
    return static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace wcell
