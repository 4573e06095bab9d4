#include "ipvae/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace ipvae {

std::size_t shape_numel(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 unsupported");
}

Tensor::Tensor(Shape shape, std::span<const double> data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 unsupported");
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, Storage{v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor({n}, v);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, data);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Storage data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::logic_error("Tensor::item on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::rows_slice(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin > end || end > rows()) {
    throw std::out_of_range("Tensor::rows_slice out of range");
  }
  Shape s = shape_;
  s[0] = end - begin;
  const auto c = cols();
  return Tensor(s, Storage(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> idx) const {
  if (rank() == 0) throw std::logic_error("Tensor::gather_rows on scalar");
  Shape s = shape_;
  s[0] = idx.size();
  const auto c = cols();
  Storage out;
  out.reserve(idx.size() * c);
  for (auto i : idx) {
    if (i >= rows()) throw std::out_of_range("Tensor::gather_rows index out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(s, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ipvae
