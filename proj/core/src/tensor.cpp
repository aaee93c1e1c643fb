#include "o2na/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "o2na/errors.hpp"

namespace o2na {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  check_shape(shape);
  storage_->data.assign(shape_size(shape), fill);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (shape_size(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> data, bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<double>> rows,
    bool requires_grad) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged rows in from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return matrix(rows.size(), cols, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::size() const { return storage_ ? storage_->data.size() : 0; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() != 2) {
    throw DimensionError("expected a matrix, got " + shape_string(s));
  }
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() != 2) {
    throw DimensionError("expected a matrix, got " + shape_string(s));
  }
  return s[1];
}

std::span<double> Tensor::data() {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

std::span<const double> Tensor::data() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

double& Tensor::at(std::size_t r, std::size_t c) { return data()[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const {
  return data()[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  }
  return storage_->data[0];
}

bool Tensor::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
  if (!storage_) throw ContractError("use of undefined tensor");
  storage_->requires_grad = flag;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_ && !storage_->grad.empty()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  }
}

Tensor Tensor::clone() const {
  if (!storage_) return {};
  return Tensor(storage_->shape, storage_->data, false);
}

}  // namespace o2na
