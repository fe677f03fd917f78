#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "lcnn/error.hpp"

namespace lcnn {

/// Single-channel image, row-major, pixels in [0, 1].
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, float value = 0.0f) : height(h), width(w), pixels(h * w, value) {}

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }

  double mean() const {
    double s = 0.0;
    for (float p : pixels) s += p;
    return pixels.empty() ? 0.0 : s / static_cast<double>(pixels.size());
  }

  void clamp() {
    for (auto& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

class DecodeError : public InputError {
 public:
  using InputError::InputError;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Colour sources collapse to the plain average of R, G and B.
inline ImageBuffer from_interleaved(const unsigned char* data, std::size_t h, std::size_t w, std::size_t channels) {
  ImageBuffer img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (channels == 1) {
      img.pixels[i] = static_cast<float>(data[i]) / 255.0f;
    } else {
      const unsigned sum = data[i * channels] + data[i * channels + 1] + data[i * channels + 2];
      img.pixels[i] = static_cast<float>(sum) / (3.0f * 255.0f);
    }
  }
  return img;
}

inline ImageBuffer decode_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw DecodeError("cannot decode PNG " + path.string() + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_interleaved(buf.data(), image.height, image.width, color ? 3 : 1);
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void lcnn_jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline ImageBuffer decode_jpeg(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DecodeError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = lcnn_jpeg_error_exit;
  // Nothing with a destructor may be created between setjmp and the last libjpeg call.
  std::vector<unsigned char> buf;
  std::size_t h = 0, w = 0, channels = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  channels = static_cast<std::size_t>(cinfo.output_components);
  buf.resize(h * w * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved(buf.data(), h, w, channels);
}

}  // namespace detail

/// Decodes a PNG or JPEG (detected by signature) to a grayscale buffer in [0, 1].
inline ImageBuffer decode_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), sizeof sig);
  const auto got = in.gcount();
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return detail::decode_png(path);
  if (got >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return detail::decode_jpeg(path);
  throw DecodeError("unrecognized image format: " + path.string());
}

/// Writes an 8-bit grayscale PNG; pixels are rounded from [0, 1] to [0, 255].
inline void write_png(const ImageBuffer& img, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw InputError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace lcnn
