#include "cloudseg/tensor.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "cloudseg/error.hpp"

namespace cloudseg {

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'S', 'E', 'G'};
constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

template <class T>
void put_values(std::vector<std::uint8_t>& out, const std::vector<T>& values) {
  for (T v : values) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    out.insert(out.end(), raw.begin(), raw.end());
  }
}

template <class T>
std::vector<T> get_values(const std::uint8_t* p, std::size_t count) {
  std::vector<T> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), p + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    std::memcpy(&values[i], raw.data(), sizeof(T));
  }
  return values;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::size_t dtype_size(DType dt) {
  switch (dt) {
    case DType::U8: return 1;
    case DType::U16: return 2;
    case DType::F32: return 4;
  }
  fail(ErrorKind::Version, "unknown dtype code");
}

Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  validate();
}
Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<std::uint16_t> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  validate();
}
Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  validate();
}

void Tensor::validate() const {
  require(!dims_.empty() && dims_.size() <= 4, ErrorKind::Argument, "tensor must have 1..4 axes");
  for (auto d : dims_) require(d > 0, ErrorKind::Argument, "tensor dims must be positive");
  std::size_t n = std::visit([](const auto& v) { return v.size(); }, data_);
  require(n == product(dims_), ErrorKind::Argument, "tensor value count does not match dims");
}

std::size_t Tensor::size() const { return dims_.empty() ? 0 : product(dims_); }

std::vector<float> Tensor::as_float() const {
  return std::visit([](const auto& v) { return std::vector<float>(v.begin(), v.end()); }, data_);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  require(!t.dims().empty(), ErrorKind::Argument, "cannot encode an empty tensor");
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.dims().size()));
  for (auto d : t.dims()) put_u32(out, d);
  switch (t.dtype()) {
    case DType::U8: put_values(out, t.values<std::uint8_t>()); break;
    case DType::U16: put_values(out, t.values<std::uint16_t>()); break;
    case DType::F32: put_values(out, t.values<float>()); break;
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 7 && std::equal(kMagic.begin(), kMagic.end(), bytes.begin()), ErrorKind::Format,
          "not a CSEG tensor (bad magic)");
  require(bytes[4] == kVersion, ErrorKind::Version, "unsupported CSEG version " + std::to_string(bytes[4]));
  std::uint8_t code = bytes[5];
  require(code <= 2, ErrorKind::Version, "unknown CSEG dtype code " + std::to_string(code));
  auto dtype = static_cast<DType>(code);
  std::size_t ndim = bytes[6];
  require(ndim >= 1 && ndim <= 4, ErrorKind::Format, "CSEG ndim out of range");
  std::size_t header = 7 + 4 * ndim;
  require(bytes.size() >= header, ErrorKind::Corruption, "CSEG header truncated");
  std::vector<std::uint32_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = get_u32(bytes.data() + 7 + 4 * i);
    require(dims[i] > 0, ErrorKind::Format, "CSEG dims must be positive");
  }
  std::size_t count = product(dims);
  std::size_t expected = count * dtype_size(dtype);
  require(bytes.size() - header == expected, ErrorKind::Corruption,
          "CSEG payload is " + std::to_string(bytes.size() - header) + " bytes, expected " +
              std::to_string(expected));
  const std::uint8_t* p = bytes.data() + header;
  switch (dtype) {
    case DType::U8: return Tensor(std::move(dims), get_values<std::uint8_t>(p, count));
    case DType::U16: return Tensor(std::move(dims), get_values<std::uint16_t>(p, count));
    case DType::F32: return Tensor(std::move(dims), get_values<float>(p, count));
  }
  fail(ErrorKind::Version, "unknown dtype");
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  require(fd >= 0, ErrorKind::Io, "cannot create " + tmp.string() + ": " + std::strerror(errno));
  std::size_t off = 0;
  bool ok = true;
  while (off < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ok = false;
      break;
    }
    off += static_cast<std::size_t>(n);
  }
  ok = ok && ::fsync(fd) == 0;
  ok = (::close(fd) == 0) && ok;
  if (!ok) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "cannot rename into " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) { write_file_atomic(path, encode_tensor(t)); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace cloudseg
