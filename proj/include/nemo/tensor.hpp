#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace nemo {

// Dense row-major tensor of up to 5 dims. Owns its storage; no aliasing
// between independently constructed tensors.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }

  Tensor(std::initializer_list<std::int64_t> shape)
      : Tensor(std::vector<std::int64_t>(shape)) {}

  static Tensor zeros(std::vector<std::int64_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::int64_t> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(data_.size());
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<size_t>(i)];
  }

  T& at(std::int64_t i0, std::int64_t i1) {
    return data_[static_cast<size_t>(i0 * shape_[1] + i1)];
  }
  const T& at(std::int64_t i0, std::int64_t i1) const {
    return data_[static_cast<size_t>(i0 * shape_[1] + i1)];
  }
  T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2) {
    return data_[static_cast<size_t>((i0 * shape_[1] + i1) * shape_[2] + i2)];
  }
  const T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2) const {
    return data_[static_cast<size_t>((i0 * shape_[1] + i1) * shape_[2] + i2)];
  }
  T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3) {
    return data_[static_cast<size_t>(
        ((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3)];
  }
  const T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2,
              std::int64_t i3) const {
    return data_[static_cast<size_t>(
        ((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3)];
  }
  T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3,
        std::int64_t i4) {
    return data_[static_cast<size_t>(
        (((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3) *
            shape_[4] +
        i4)];
  }
  const T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2,
              std::int64_t i3, std::int64_t i4) const {
    return data_[static_cast<size_t>(
        (((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3) *
            shape_[4] +
        i4)];
  }

  // Reshapes in place; element count must be unchanged.
  void reshape(std::vector<std::int64_t> shape) {
    if (numel_of(shape) != numel())
      throw std::invalid_argument("reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i)
      out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dim");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < t.rank(); ++i) os << (i ? "x" : "") << t.dim(i);
  os << "]";
  return os.str();
}

template <typename T>
void fill_normal(Tensor<T>& t, double mean, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(mean, stddev);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
}

}  // namespace nemo
