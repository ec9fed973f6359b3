#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wv/errors.hpp"

namespace wv {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kUInt8 = 2 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

/// Global NaN/Inf trapping switch. Defaults to the WV_CHECKED_DEFAULT build option.
bool checked_mode();
void set_checked_mode(bool on);

/// Throws NumericError naming `what` if any value is non-finite (checked mode only).
void check_finite(std::span<const double> values, const char* what);

/// Dense row-major array with a runtime element type. Immutable in spirit:
/// pipeline stages produce new tensors rather than editing shared ones.
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, Shape shape);

  static Tensor f64(Shape shape, std::vector<double> data);
  static Tensor f32(Shape shape, std::vector<float> data);
  static Tensor u8(Shape shape, std::vector<std::uint8_t> data);

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return wv::numel(shape_); }
  std::size_t byte_size() const { return static_cast<std::size_t>(numel()) * dtype_size(dtype_); }

  template <class T>
  std::span<T> data() {
    return std::span<T>(vec<T>());
  }
  template <class T>
  std::span<const T> data() const {
    return std::span<const T>(const_cast<Tensor*>(this)->vec<T>());
  }

  const std::byte* raw() const;
  std::byte* raw();

  /// Element-wise conversion to float64 (uint8 values are not rescaled).
  std::vector<double> to_f64() const;
  Tensor as(DType dtype) const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  template <class T>
  std::vector<T>& vec() {
    auto* v = std::get_if<std::vector<T>>(&storage_);
    if (v == nullptr) throw ContractError(std::string("tensor dtype mismatch: stored ") + dtype_name(dtype_));
    return *v;
  }

  DType dtype_ = DType::kFloat64;
  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>> storage_;
};

}  // namespace wv
