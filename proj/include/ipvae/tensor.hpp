#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace ipvae {

/// Allocator returning 64-byte aligned blocks. Every tensor buffer starts on a
/// SIMD boundary, so vectorized kernels split work identically on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

/// Dense row-major array of doubles with rank 0, 1 or 2.
///
/// A default-constructed tensor is the scalar 0. The element count is
/// always the product of the extents (1 for rank 0).
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;
  using Storage = std::vector<double, AlignedAllocator<double>>;

  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> data);
  Tensor(Shape shape, Storage data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Leading extent; 1 for scalars.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  // Trailing extent of a matrix; 1 for vectors and scalars.
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  // Value of a single-element tensor.
  double item() const;

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  // Copy of a contiguous range of rows [begin, end).
  Tensor rows_slice(std::size_t begin, std::size_t end) const;
  // Copy of the rows named by `idx`, in order.
  Tensor gather_rows(std::span<const std::size_t> idx) const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  Storage data_;
};

std::size_t shape_numel(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

/// Named tensors in a deterministic (sorted) order.
using ParamMap = std::map<std::string, Tensor, std::less<>>;

}  // namespace ipvae
