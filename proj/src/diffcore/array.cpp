#include "pipno/diffcore/array.hpp"

#include <sstream>

#include "pipno/errors.hpp"

namespace pipno::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

DiffArray::DiffArray() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

DiffArray::DiffArray(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), size_(numel(shape_)), dtype_(DType::Real) {
  if (values.size() != size_) {
    throw ShapeError("DiffArray: " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape_));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

DiffArray::DiffArray(Shape shape, std::vector<cplx> values)
    : shape_(std::move(shape)), size_(numel(shape_)), dtype_(DType::Complex) {
  if (values.size() != size_) {
    throw ShapeError("DiffArray: " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape_));
  }
  std::vector<double> raw(2 * size_);
  for (std::size_t i = 0; i < size_; ++i) {
    raw[2 * i] = values[i].real();
    raw[2 * i + 1] = values[i].imag();
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(raw));
}

DiffArray DiffArray::zeros(Shape shape, DType dtype) {
  const std::size_t n = numel(shape) * (dtype == DType::Complex ? 2 : 1);
  return from_raw(std::move(shape), dtype, std::vector<double>(n, 0.0));
}

DiffArray DiffArray::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return DiffArray(std::move(shape), std::vector<double>(n, value));
}

DiffArray DiffArray::scalar(double value) { return DiffArray(Shape{}, std::vector<double>{value}); }

DiffArray DiffArray::from_raw(Shape shape, DType dtype, std::vector<double> raw) {
  DiffArray a;
  a.shape_ = std::move(shape);
  a.size_ = numel(a.shape_);
  a.dtype_ = dtype;
  const std::size_t expect = a.size_ * (dtype == DType::Complex ? 2 : 1);
  if (raw.size() != expect) {
    throw ShapeError("DiffArray::from_raw: buffer of " + std::to_string(raw.size()) +
                     " doubles for shape " + to_string(a.shape_));
  }
  a.data_ = std::make_shared<const std::vector<double>>(std::move(raw));
  return a;
}

std::size_t DiffArray::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

std::span<const double> DiffArray::values() const {
  if (dtype_ != DType::Real) throw DtypeError("expected a real array");
  return {data_->data(), data_->size()};
}

std::span<const cplx> DiffArray::cvalues() const {
  if (dtype_ != DType::Complex) throw DtypeError("expected a complex array");
  return {reinterpret_cast<const cplx*>(data_->data()), size_};
}

double DiffArray::item() const {
  if (dtype_ != DType::Real) throw DtypeError("item() of a complex array");
  if (size_ != 1) throw ShapeError("item() of an array with shape " + to_string(shape_));
  return (*data_)[0];
}

std::optional<std::size_t> DiffArray::node_id() const {
  if (tape_ == nullptr) return std::nullopt;
  return node_;
}

DiffArray DiffArray::detach() const {
  DiffArray a = *this;
  a.tape_ = nullptr;
  a.node_ = 0;
  return a;
}

DiffArray DiffArray::attached(Tape* tape, std::size_t node) const {
  DiffArray a = *this;
  a.tape_ = tape;
  a.node_ = node;
  return a;
}

}  // namespace pipno::ad
