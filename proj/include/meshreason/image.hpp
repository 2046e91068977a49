#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <png.h>

namespace meshreason {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major planar buffer with `Channels` interleaved 8-bit channels.
template <int Channels>
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * Channels, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * Channels;
  }
  std::uint8_t* at(int x, int y) { return data.data() + offset(x, y); }
  const std::uint8_t* at(int x, int y) const { return data.data() + offset(x, y); }

  bool operator==(const Image8&) const = default;
};

using RgbImage = Image8<3>;
using GrayImage = Image8<1>;

namespace detail {

struct PngReadBuffer {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warn_fn(png_structp, png_const_charp) {}

template <int Channels>
std::vector<std::uint8_t> encode_png_impl(const Image8<Channels>& img) {
  static_assert(Channels == 1 || Channels == 3);
  if (img.empty()) throw ImageError("encode_png: empty image");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warn_fn);
  if (!png) throw ImageError("encode_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("encode_png: " + err);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep bytes, png_size_t n) {
        auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        dst->insert(dst->end(), bytes, bytes + n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               Channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.at(0, y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// Decodes any PNG into 8-bit gray or RGB (alpha stripped, palettes expanded).
template <int Channels>
Image8<Channels> decode_png_impl(const std::uint8_t* bytes, std::size_t size) {
  static_assert(Channels == 1 || Channels == 3);
  if (size < 8 || png_sig_cmp(bytes, 0, 8) != 0) throw ImageError("decode_png: not a PNG stream");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warn_fn);
  if (!png) throw ImageError("decode_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  PngReadBuffer src{bytes, size, 0};
  Image8<Channels> img;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("decode_png: " + err);
  }
  png_set_read_fn(png, &src, [](png_structp p, png_bytep dst, png_size_t n) {
    auto* s = static_cast<PngReadBuffer*>(png_get_io_ptr(p));
    if (s->pos + n > s->size) png_error(p, "truncated stream");
    std::memcpy(dst, s->data + s->pos, n);
    s->pos += n;
  });
  png_read_info(png, info);
  const auto colorType = png_get_color_type(png, info);
  const auto bitDepth = png_get_bit_depth(png, info);
  if (bitDepth == 16) png_set_strip_16(png);
  if (colorType == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (colorType == PNG_COLOR_TYPE_GRAY && bitDepth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool srcGray = (colorType & PNG_COLOR_MASK_COLOR) == 0;
  if constexpr (Channels == 3) {
    if (srcGray) png_set_gray_to_rgb(png);
  } else {
    if (!srcGray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  img = Image8<Channels>(static_cast<int>(png_get_image_width(png, info)),
                         static_cast<int>(png_get_image_height(png, info)));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * Channels) {
    png_error(png, "unexpected row layout");
  }
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.at(0, y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) { return detail::encode_png_impl(img); }
inline std::vector<std::uint8_t> encode_png(const GrayImage& img) { return detail::encode_png_impl(img); }

inline RgbImage decode_png_rgb(std::string_view bytes) {
  return detail::decode_png_impl<3>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
}
inline GrayImage decode_png_gray(std::string_view bytes) {
  return detail::decode_png_impl<1>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <int Channels>
void write_png(const std::filesystem::path& path, const Image8<Channels>& img) {
  const auto bytes = encode_png(img);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline RgbImage read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }
inline GrayImage read_png_gray(const std::filesystem::path& path) { return decode_png_gray(read_file(path)); }

inline std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  return base64_encode(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline std::string base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ' && c != '\t') clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw ImageError("base64: length is not a multiple of 4");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ImageError("base64: invalid input");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace meshreason
