#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "gpderain/image.hpp"
#include "test_util.hpp"

using namespace gpderain;
using namespace gpderain::image;

namespace {

std::vector<unsigned char> bytes_of(const std::string& header, std::vector<unsigned char> raster) {
  std::vector<unsigned char> b(header.begin(), header.end());
  b.insert(b.end(), raster.begin(), raster.end());
  return b;
}

}  // namespace

TEST(Pgm, SaveLoadRoundTripWithinQuantization) {
  Rng rng(1);
  const auto dir = testutil::temp_dir("image_io");
  for (int t = 0; t < 10; ++t) {
    const int h = 1 + uniform_int(rng, 0, 20), w = 1 + uniform_int(rng, 0, 20);
    ImagePatch p(Shape{1, h, w}, testutil::random_vector(rng, static_cast<std::size_t>(h * w), 0.0, 1.0));
    const auto path = dir / ("p" + std::to_string(t) + ".pgm");
    save_image(p, path);
    const auto back = load_image(path);
    ASSERT_EQ(back.shape, p.shape);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LE(std::abs(back.values[i] - p.values[i]), 1.0 / 255.0);
  }
}

TEST(Pgm, HeaderWithComments) {
  const auto img = decode_pnm(bytes_of("P5 # comment\n2 # w\n1\n255\n", {0, 255}));
  ASSERT_EQ(img.shape, (Shape{1, 1, 2}));
  EXPECT_EQ(img.values[0], 0.0);
  EXPECT_EQ(img.values[1], 1.0);
}

TEST(Pgm, SmallerMaxvalScales) {
  const auto img = decode_pnm(bytes_of("P5\n1 1\n15\n", {15}));
  EXPECT_EQ(img.values[0], 1.0);
}

TEST(Pgm, TruncatedFileIsParseErrorWithOffset) {
  const auto b = bytes_of("P5\n4 4\n255\n", std::vector<unsigned char>(10, 128));
  try {
    decode_pnm(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_EQ(e.offset(), b.size());
  }
  const auto dir = testutil::temp_dir("image_trunc");
  {
    std::ofstream out(dir / "t.pgm", std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }
  EXPECT_THROW(load_image(dir / "t.pgm"), ParseError);
}

TEST(Pgm, MalformedHeaderReportsOffset) {
  try {
    decode_pnm(bytes_of("P5\n4 x\n255\n", {}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
  EXPECT_THROW(decode_pnm(bytes_of("Q5\n", {})), ParseError);
}

TEST(Pgm, SixteenBitIsFormatError) {
  try {
    decode_pnm(bytes_of("P5\n1 1\n65535\n", {0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  try {
    decode_pnm(bytes_of("P2\n1 1\n255\n", {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
}

TEST(Ppm, WhiteIsOneAndLumaWeights) {
  const auto white = decode_pnm(bytes_of("P6\n1 1\n255\n", {255, 255, 255}));
  EXPECT_NEAR(white.values[0], 1.0, 1e-15);
  const auto red = decode_pnm(bytes_of("P6\n3 1\n255\n", {255, 0, 0, 0, 255, 0, 0, 0, 255}));
  EXPECT_NEAR(red.values[0], 0.299, 1e-15);
  EXPECT_NEAR(red.values[1], 0.587, 1e-15);
  EXPECT_NEAR(red.values[2], 0.114, 1e-15);
}

TEST(Pgm, MissingFileIsIoError) {
  try {
    load_image("/nonexistent/none.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}
