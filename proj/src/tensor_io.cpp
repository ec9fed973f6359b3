#include "wv/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wv {

static_assert(std::endian::native == std::endian::little, "WVT1 payloads are written in host order");

namespace {
constexpr char kMagic[4] = {'W', 'V', 'T', '1'};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

std::vector<std::byte> encode_wvt(const Tensor& t) {
  require(t.shape().size() <= 255, "WVT1 supports at most 255 dimensions");
  std::vector<std::byte> out;
  out.reserve(8 + 4 * t.shape().size() + t.byte_size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(t.dtype()));
  out.push_back(static_cast<std::byte>(t.shape().size()));
  out.push_back(std::byte{0});
  out.push_back(std::byte{0});
  for (auto e : t.shape()) {
    require(e > 0 && e <= 0xFFFFFFFFll, "WVT1 extent out of range");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  const auto* p = t.raw();
  out.insert(out.end(), p, p + t.byte_size());
  return out;
}

Tensor decode_wvt(const std::vector<std::byte>& bytes, const std::string& origin) {
  if (bytes.size() < 8) throw TensorIoError(TensorIoFailure::kTruncated, origin + ": truncated WVT1 header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw TensorIoError(TensorIoFailure::kBadMagic, origin + ": bad magic (expected WVT1)");
  const auto code = static_cast<unsigned>(bytes[4]);
  if (code > 2) throw TensorIoError(TensorIoFailure::kBadDType, origin + ": unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const auto ndim = static_cast<std::size_t>(bytes[5]);
  if (bytes[6] != std::byte{0} || bytes[7] != std::byte{0})
    throw TensorIoError(TensorIoFailure::kBadHeader, origin + ": nonzero header padding");
  if (bytes.size() < 8 + 4 * ndim) throw TensorIoError(TensorIoFailure::kTruncated, origin + ": truncated extents");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = get_u32(bytes.data() + 8 + 4 * i);
    if (shape[i] == 0) throw TensorIoError(TensorIoFailure::kBadHeader, origin + ": zero extent");
  }
  Tensor t(dtype, shape);
  const std::size_t offset = 8 + 4 * ndim;
  if (bytes.size() != offset + t.byte_size()) {
    const auto kind = bytes.size() < offset + t.byte_size() ? TensorIoFailure::kTruncated : TensorIoFailure::kBadHeader;
    throw TensorIoError(kind, origin + ": payload is " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                                  std::to_string(t.byte_size()));
  }
  std::memcpy(t.raw(), bytes.data() + offset, t.byte_size());
  return t;
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) { write_file(path, encode_wvt(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_wvt(read_file(path), path.string()); }

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError(TensorIoFailure::kOpen, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::byte>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace wv
