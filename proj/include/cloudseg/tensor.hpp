#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace cloudseg {

enum class DType : std::uint8_t { U8 = 0, U16 = 1, F32 = 2 };

std::size_t dtype_size(DType dt);

// N-dimensional (1..4 axes) row-major array, the unit of on-disk storage.
class Tensor {
 public:
  using Storage = std::variant<std::vector<std::uint8_t>, std::vector<std::uint16_t>, std::vector<float>>;

  Tensor() = default;
  Tensor(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> data);
  Tensor(std::vector<std::uint32_t> dims, std::vector<std::uint16_t> data);
  Tensor(std::vector<std::uint32_t> dims, std::vector<float> data);

  DType dtype() const { return static_cast<DType>(data_.index()); }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::size_t size() const;

  template <class T>
  const std::vector<T>& values() const { return std::get<std::vector<T>>(data_); }

  // Every element converted to float (u8/u16 are exact in f32).
  std::vector<float> as_float() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate() const;

  std::vector<std::uint32_t> dims_;
  Storage data_;
};

// CSEG v1: "CSEG", version, dtype, ndim, ndim x u32 dims, payload; all little-endian.
Tensor load_tensor(const std::filesystem::path& path);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);

// Writes via a temporary sibling + fsync + rename; no partial file on failure.
void save_tensor(const Tensor& t, const std::filesystem::path& path);

// Atomic text write shared by all JSON/CSV outputs.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cloudseg
