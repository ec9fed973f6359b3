#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wv/tensor.hpp"

namespace wv {

enum class TensorIoFailure { kOpen, kBadMagic, kTruncated, kBadDType, kBadHeader };

/// Raised by the WVT1 reader/writer; `failure()` distinguishes the cases.
class TensorIoError : public IoError {
 public:
  TensorIoError(TensorIoFailure failure, const std::string& what) : IoError(what), failure_(failure) {}
  TensorIoFailure failure() const noexcept { return failure_; }

 private:
  TensorIoFailure failure_;
};

// WVT1 layout: "WVT1", u8 dtype, u8 ndim, 2 zero bytes, ndim x u32 LE extents,
// raw row-major LE payload.
std::vector<std::byte> encode_wvt(const Tensor& t);
Tensor decode_wvt(const std::vector<std::byte>& bytes, const std::string& origin = "<memory>");

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::byte>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace wv
