#include "wv/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace wv {

namespace {
#ifdef WV_CHECKED_DEFAULT_ON
bool g_checked = true;
#else
bool g_checked = false;
#endif
}  // namespace

bool checked_mode() { return g_checked; }
void set_checked_mode(bool on) { g_checked = on; }

void check_finite(std::span<const double> values, const char* what) {
  if (!g_checked) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " at element " << i << " of '" << what << "'";
      throw NumericError(os.str());
    }
  }
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kUInt8: return 1;
  }
  return 0;
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return "float32";
    case DType::kFloat64: return "float64";
    case DType::kUInt8: return "uint8";
  }
  return "?";
}

Tensor::Tensor(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  for (auto e : shape_) require(e > 0, "tensor extents must be positive, got " + shape_str(shape_));
  const auto n = static_cast<std::size_t>(wv::numel(shape_));
  switch (dtype_) {
    case DType::kFloat32: storage_ = std::vector<float>(n, 0.0f); break;
    case DType::kFloat64: storage_ = std::vector<double>(n, 0.0); break;
    case DType::kUInt8: storage_ = std::vector<std::uint8_t>(n, 0); break;
  }
}

Tensor Tensor::f64(Shape shape, std::vector<double> data) {
  Tensor t(DType::kFloat64, std::move(shape));
  require(static_cast<std::int64_t>(data.size()) == t.numel(), "f64: data size does not match shape");
  check_finite(data, "Tensor::f64");
  t.storage_ = std::move(data);
  return t;
}

Tensor Tensor::f32(Shape shape, std::vector<float> data) {
  Tensor t(DType::kFloat32, std::move(shape));
  require(static_cast<std::int64_t>(data.size()) == t.numel(), "f32: data size does not match shape");
  t.storage_ = std::move(data);
  return t;
}

Tensor Tensor::u8(Shape shape, std::vector<std::uint8_t> data) {
  Tensor t(DType::kUInt8, std::move(shape));
  require(static_cast<std::int64_t>(data.size()) == t.numel(), "u8: data size does not match shape");
  t.storage_ = std::move(data);
  return t;
}

const std::byte* Tensor::raw() const {
  return std::visit([](const auto& v) { return reinterpret_cast<const std::byte*>(v.data()); }, storage_);
}

std::byte* Tensor::raw() {
  return std::visit([](auto& v) { return reinterpret_cast<std::byte*>(v.data()); }, storage_);
}

std::vector<double> Tensor::to_f64() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, storage_);
}

Tensor Tensor::as(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor out(dtype, shape_);
  const auto src = to_f64();
  switch (dtype) {
    case DType::kFloat64: out.storage_ = src; break;
    case DType::kFloat32: out.storage_ = std::vector<float>(src.begin(), src.end()); break;
    case DType::kUInt8: {
      std::vector<std::uint8_t> u(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        const double c = std::round(src[i]);
        u[i] = static_cast<std::uint8_t>(c < 0 ? 0 : (c > 255 ? 255 : c));
      }
      out.storage_ = std::move(u);
      break;
    }
  }
  return out;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return dtype_ == other.dtype_ && shape_ == other.shape_ && std::memcmp(raw(), other.raw(), byte_size()) == 0;
}

}  // namespace wv
