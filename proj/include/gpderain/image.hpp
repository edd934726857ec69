#pragma once

// Grayscale image patches and binary PGM/PPM I/O.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "gpderain/error.hpp"
#include "gpderain/tensor.hpp"

namespace gpderain::image {

/// Planar image with values in [0, 1]; shape (channels, H, W).
using ImagePatch = Tensor;

inline ImagePatch make_patch(int h, int w, double fill = 0.0) { return ImagePatch(Shape{1, h, w}, fill); }

namespace detail {

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
      throw ParseError(std::string("expected ") + what + " in image header", pos_);
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw ParseError(std::string("implausible ") + what, pos_);
      ++pos_;
    }
    return v;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw ParseError("expected whitespace before raster data", pos_);
    ++pos_;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_;
};

}  // namespace detail

/// Parses binary P5 (grayscale) or P6 (colour, converted with luma weights
/// 0.299/0.587/0.114). Only 8-bit rasters are supported.
inline ImagePatch decode_pnm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("missing PNM magic", 0);
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '5' && kind != '6') fail(ErrorKind::Format, std::string("unsupported PNM variant P") + kind);
  detail::HeaderReader rd(bytes, 2);
  const auto width = rd.number("width");
  const auto height = rd.number("height");
  const auto maxval = rd.number("maxval");
  if (width == 0 || height == 0) throw ParseError("zero image dimension", rd.offset());
  if (maxval == 0) throw ParseError("zero maxval", rd.offset());
  if (maxval > 255) fail(ErrorKind::Format, "unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  rd.single_space();
  const std::size_t channels = kind == '5' ? 1 : 3;
  const std::size_t need = width * height * channels;
  const std::size_t start = rd.offset();
  if (bytes.size() - start < need) throw ParseError("truncated raster data", bytes.size());
  ImagePatch out = make_patch(static_cast<int>(height), static_cast<int>(width));
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t p = 0; p < width * height; ++p) {
    const unsigned char* px = bytes.data() + start + p * channels;
    double v;
    if (channels == 1) {
      v = px[0] * scale;
    } else {
      v = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) * scale;
    }
    out.values[p] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

inline std::vector<unsigned char> encode_pgm(const ImagePatch& patch) {
  if (patch.shape.c != 1) fail(ErrorKind::Format, "PGM output needs a single-channel patch, got " + patch.shape.str());
  const std::string header =
      "P5\n" + std::to_string(patch.shape.w) + " " + std::to_string(patch.shape.h) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + patch.size());
  for (double v : patch.values) bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return bytes;
}

inline ImagePatch load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail().substr(0, e.detail().rfind(" at byte")), e.offset());
  }
}

inline void save_image(const ImagePatch& patch, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(patch);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace gpderain::image
