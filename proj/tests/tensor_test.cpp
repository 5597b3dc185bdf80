#include <gtest/gtest.h>

#include <filesystem>

#include "uplvp/geometry.hpp"
#include "uplvp/pgm.hpp"
#include "uplvp/tensor.hpp"
#include "uplvp/tensor_io.hpp"

using namespace uplvp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "uplvp-tests" / name;
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Tensor, ConstructionAndAccess) {
  const Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(t.reshaped({3, 2}).at(2, 0), 5.0f);
  EXPECT_TRUE(Tensor::scalar(2.5f).is_scalar());
  EXPECT_FLOAT_EQ(Tensor::scalar(2.5f).item(), 2.5f);
}

TEST(Tensor, LengthMismatchThrows) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}).reshaped({3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2}).item(), ContractError);
}

TEST(Tensor, ZeroSizeDimensionsAreAllowed) {
  const Tensor t(Shape{3, 0});
  EXPECT_EQ(t.size(), 0u);
  EXPECT_EQ(t.dim(0), 3u);
}

TEST(Tensor, CastPreservesValues) {
  const Tensor t = Tensor::matrix(1, 2, {0.5f, -1.25f});
  const auto d = t.cast<double>();
  EXPECT_DOUBLE_EQ(d.at(0, 1), -1.25);
}

TEST(Geometry, BoxMeasures) {
  const BBox b{2, 3, 4, 7};
  EXPECT_EQ(b.height(), 3u);
  EXPECT_EQ(b.width(), 5u);
  EXPECT_EQ(b.area(), 15u);
  EXPECT_EQ(b.translated(1, 2), (BBox{3, 5, 5, 9}));
  EXPECT_THROW(require_box_in(b, 4, 8), BoundsError);
  EXPECT_NO_THROW(require_box_in(b, 5, 8));
}

TEST(TensorIo, RoundTripIsBitExact) {
  const Tensor t(Shape{2, 1, 3}, {1.5f, -0.0f, 3e-38f, 7.0f, -2.25f, 1e30f});
  const auto bytes = io::encode_tensor(t);
  EXPECT_EQ(bytes.size(), 4 + 3 + 3 * 4 + 6 * 4u);
  std::size_t offset = 0;
  const Tensor back = io::decode_tensor(bytes, offset);
  EXPECT_EQ(offset, bytes.size());
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(io::encode_tensor(back), bytes);
}

TEST(TensorIo, HeaderLayout) {
  const auto bytes = io::encode_tensor(Tensor(Shape{258}));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UPLT");
  EXPECT_EQ(bytes[4], 0x01);
  EXPECT_EQ(bytes[5], 0x00);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[7], 0x02);  // 258 little-endian
  EXPECT_EQ(bytes[8], 0x01);
}

TEST(TensorIo, RejectsCorruptInput) {
  auto bytes = io::encode_tensor(Tensor(Shape{2, 2}, 1.0f));
  std::size_t off = 0;
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_tensor(bad_magic, off), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  off = 0;
  EXPECT_THROW(io::decode_tensor(bad_version, off), FormatError);
  auto bad_dtype = bytes;
  bad_dtype[5] = 1;
  off = 0;
  EXPECT_THROW(io::decode_tensor(bad_dtype, off), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  off = 0;
  EXPECT_THROW(io::decode_tensor(truncated, off), FormatError);

  const auto dir = scratch("io");
  auto trailing = bytes;
  trailing.push_back(0);
  io::write_bytes(dir / "t.ten", trailing);
  EXPECT_THROW(io::read_tensor(dir / "t.ten"), FormatError);
}

TEST(Pgm, MaskRoundTrip) {
  Tensor mask(Shape{3, 4});
  mask.at(1, 2) = 1.0f;
  mask.at(2, 0) = 1.0f;
  const auto dir = scratch("pgm");
  pgm::write(dir / "m.pgm", pgm::from_mask(mask));
  EXPECT_EQ(pgm::to_mask(pgm::read(dir / "m.pgm")), mask);
}

TEST(Pgm, HeatmapScalesAndRounds) {
  const Tensor map = Tensor::matrix(1, 4, {0.0f, 0.5f, 1.0f, 1.7f});
  const auto img = pgm::from_heatmap(map);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 128, 255, 255}));
}

TEST(Pgm, ReadsCommentsAndRejectsTruncation) {
  const auto dir = scratch("pgm2");
  {
    std::ofstream out(dir / "c.pgm", std::ios::binary);
    out << "P5\n# comment\n2 1\n255\n";
    out.put(static_cast<char>(255));
    out.put(0);
  }
  const auto img = pgm::read(dir / "c.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels[0], 255);
  {
    std::ofstream out(dir / "t.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n";
    out.put(1);
  }
  EXPECT_THROW(pgm::read(dir / "t.pgm"), FormatError);
  {
    std::ofstream out(dir / "m.pgm", std::ios::binary);
    out << "P5\n1 1\n65535\n";
  }
  EXPECT_THROW(pgm::read(dir / "m.pgm"), FormatError);
}
