#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pipno::ad {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { Real, Complex };

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Dense row-major array of f64 or complex f64 values.
///
/// Values are immutable and shared between copies. An array that was produced
/// by a recorded primitive (or registered with Tape::watch) carries the tape and
/// its node id; everything else is a constant that never receives a gradient.
/// Complex values are stored interleaved (re, im) so that gradients of complex
/// arrays are plain real vectors of twice the element count.
class DiffArray {
 public:
  DiffArray();
  DiffArray(Shape shape, std::vector<double> values);
  DiffArray(Shape shape, std::vector<cplx> values);

  static DiffArray zeros(Shape shape, DType dtype = DType::Real);
  static DiffArray full(Shape shape, double value);
  static DiffArray scalar(double value);
  /// Wraps an interleaved buffer (2 doubles per element when complex).
  static DiffArray from_raw(Shape shape, DType dtype, std::vector<double> raw);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return size_; }
  std::size_t extent(std::size_t axis) const;
  DType dtype() const noexcept { return dtype_; }
  bool is_complex() const noexcept { return dtype_ == DType::Complex; }

  /// Real view; throws DtypeError for complex arrays.
  std::span<const double> values() const;
  /// Complex view; throws DtypeError for real arrays.
  std::span<const cplx> cvalues() const;
  /// Interleaved storage, size() or 2*size() doubles.
  std::span<const double> raw() const noexcept { return {data_->data(), data_->size()}; }
  /// Single real value of a one-element array.
  double item() const;

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::optional<std::size_t> node_id() const;

  /// Same values, detached from any tape.
  DiffArray detach() const;
  DiffArray attached(Tape* tape, std::size_t node) const;

  std::shared_ptr<const std::vector<double>> storage() const noexcept { return data_; }

 private:
  Shape shape_;
  std::size_t size_ = 1;
  DType dtype_ = DType::Real;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Row-major strides (in elements) for a shape.
std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace pipno::ad
