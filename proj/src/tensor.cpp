#include "nodebench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace nodebench {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  storage_->data.assign(nodebench::numel(shape), fill);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  if (nodebench::numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->data.assign(values.begin(), values.end());
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, value); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

const Shape& Tensor::shape() const {
  if (!storage_) throw UsageError("access to an undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::span<const double> Tensor::data() const {
  if (!storage_) throw UsageError("access to an undefined tensor");
  return storage_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!storage_) throw UsageError("access to an undefined tensor");
  return storage_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() needs a one-element tensor, got " + to_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!storage_) throw UsageError("access to an undefined tensor");
  storage_->requires_grad = on;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!storage_) throw UsageError("access to an undefined tensor");
  if (storage_->grad.empty()) return std::vector<double>(storage_->data.size(), 0.0);
  return std::vector<double>(storage_->grad.begin(), storage_->grad.end());
}

std::span<double> Tensor::grad_buffer() const {
  if (!storage_) throw UsageError("access to an undefined tensor");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_ && !storage_->grad.empty()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  }
}

void Tensor::release_grad() {
  if (storage_) {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  return Tensor(shape(), std::vector<double>(data().begin(), data().end()));
}

void ensure_finite(std::span<const double> values, const std::string& where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value at flat index " + std::to_string(i) + " in " + where);
    }
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace nodebench
