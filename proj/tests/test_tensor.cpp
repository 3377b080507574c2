#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cloudseg/error.hpp"
#include "cloudseg/tensor.hpp"
#include "oracles.hpp"

using namespace cloudseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "cloudseg_test_tensor";
  fs::create_directories(dir);
  return dir / name;
}

ErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_tensor(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::Contract;
}

}  // namespace

TEST(Cseg, SingleU8ElementIsTwelveBytes) {
  Tensor t({1}, std::vector<std::uint8_t>{7});
  const std::vector<std::uint8_t> expect = {'C', 'S', 'E', 'G', 1, 0, 1, 1, 0, 0, 0, 7};
  EXPECT_EQ(encode_tensor(t), expect);
  Tensor t2({1, 1}, std::vector<std::uint8_t>{7});
  EXPECT_EQ(encode_tensor(t2).size(), 16u);
}

TEST(Cseg, LittleEndianDimsAndPayload) {
  Tensor t({2, 1}, std::vector<std::uint16_t>{0x0102, 0xA0B0});
  auto b = encode_tensor(t);
  ASSERT_EQ(b.size(), 4u + 3 + 8 + 4);
  EXPECT_EQ(b[5], 1);  // u16
  EXPECT_EQ(b[6], 2);
  EXPECT_EQ(b[7], 2);
  EXPECT_EQ(b[11], 1);
  EXPECT_EQ(b[15], 0x02);
  EXPECT_EQ(b[16], 0x01);
  EXPECT_EQ(b[17], 0xB0);
  EXPECT_EQ(b[18], 0xA0);
}

TEST(Cseg, RoundTripPropertyAllDtypes) {
  oracle::Gen g(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int nd = g.uniform_int(1, 4);
    std::vector<std::uint32_t> dims;
    std::size_t n = 1;
    for (int i = 0; i < nd; ++i) {
      dims.push_back(static_cast<std::uint32_t>(g.uniform_int(1, 5)));
      n *= dims.back();
    }
    Tensor t;
    switch (trial % 3) {
      case 0: {
        std::vector<std::uint8_t> v(n);
        for (auto& x : v) x = static_cast<std::uint8_t>(g.uniform_int(0, 255));
        t = Tensor(dims, v);
        break;
      }
      case 1: {
        std::vector<std::uint16_t> v(n);
        for (auto& x : v) x = static_cast<std::uint16_t>(g.uniform_int(0, 65535));
        t = Tensor(dims, v);
        break;
      }
      default: {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(g.uniform(-1e6, 1e6));
        t = Tensor(dims, v);
      }
    }
    EXPECT_EQ(decode_tensor(encode_tensor(t)), t);
  }
  Tensor f({3}, std::vector<float>{-0.0f, 1e-38f, std::numeric_limits<float>::infinity()});
  auto p = scratch("f.cseg");
  save_tensor(f, p);
  auto back = load_tensor(p);
  EXPECT_EQ(encode_tensor(back), encode_tensor(f));
}

TEST(Cseg, Errors) {
  auto good = encode_tensor(Tensor({2, 3}, std::vector<float>(6, 1.0f)));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), ErrorKind::Format);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(kind_of(bad_version), ErrorKind::Version);

  auto bad_dtype = good;
  bad_dtype[5] = 9;
  EXPECT_EQ(kind_of(bad_dtype), ErrorKind::Version);

  auto short_payload = good;
  short_payload.resize(good.size() - 4);  // 20 payload bytes instead of 24
  try {
    decode_tensor(short_payload);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Corruption);
    EXPECT_NE(std::string(e.what()).find("24"), std::string::npos);
  }
  EXPECT_EQ(kind_of({'C', 'S'}), ErrorKind::Format);

  EXPECT_THROW(Tensor({2, 0}, std::vector<float>{}), Error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), Error);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}, std::vector<float>(1)), Error);
}

TEST(Cseg, SaveReplacesExistingFile) {
  auto p = scratch("replace.cseg");
  save_tensor(Tensor({100}, std::vector<float>(100, 3.0f)), p);
  Tensor small({1}, std::vector<std::uint8_t>{1});
  save_tensor(small, p);
  EXPECT_EQ(fs::file_size(p), 12u);
  EXPECT_EQ(load_tensor(p), small);
  for (const auto& e : fs::directory_iterator(p.parent_path()))
    EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos) << e.path();
}

TEST(Cseg, MissingFileIsIoError) {
  try {
    load_tensor(scratch("does_not_exist.cseg"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}
