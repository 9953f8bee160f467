#pragma once

// RGB rasters and image file I/O. PNG goes through libpng's simplified API,
// PPM (P6, maxval 255) is handled here, and JPEG is read-only via libjpeg so
// distributed patch sets can be ingested as-is.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "sslgrade/error.hpp"

namespace sslgrade {

// Interleaved (y, x, channel) raster of floats. Values loaded from files are
// in [0, 255].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  float& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

inline Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > src.width || y0 + h > src.height) throw ShapeError("crop window outside image");
  Image out(w, h, src.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const float* row = src.pixels.data() + ((y0 + y) * src.width + x0) * src.channels;
    std::copy(row, row + w * src.channels, out.pixels.data() + y * w * src.channels);
  }
  return out;
}

inline std::vector<std::uint8_t> quantize(const Image& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.pixels[i]), 0L, 255L));
  return bytes;
}

inline Image from_bytes(std::size_t w, std::size_t h, const std::uint8_t* data) {
  Image img(w, h, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(data[i]);
  return img;
}

enum class ImageFormat { png, ppm, jpeg, unknown };

inline ImageFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".ppm") return ImageFormat::ppm;
  if (ext == ".jpg" || ext == ".jpeg") return ImageFormat::jpeg;
  return ImageFormat::unknown;
}

inline bool is_image_file(const std::filesystem::path& path) {
  return format_from_extension(path) != ImageFormat::unknown;
}

namespace detail {

struct PpmHeader {
  std::size_t width = 0, height = 0;
  std::streamoff data_offset = 0;
};

inline PpmHeader read_ppm_header(std::istream& in, const std::string& name) {
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P6") throw DataError(name + ": not a binary PPM (P6)");
  PpmHeader h;
  try {
    h.width = std::stoul(token());
    h.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw DataError(name + ": only maxval 255 PPM is supported");
  } catch (const std::logic_error&) {
    throw DataError(name + ": malformed PPM header");
  }
  if (h.width == 0 || h.height == 0) throw DataError(name + ": empty PPM");
  h.data_offset = in.tellg();
  return h;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Reads a JPEG; when header_only is set, stops after validating the header.
inline Image read_jpeg(const std::filesystem::path& path, bool header_only) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw DataError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buffer;
  std::size_t width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  width = cinfo.image_width;
  height = cinfo.image_height;
  if (!header_only) {
    jpeg_start_decompress(&cinfo);
    buffer.resize(width * height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  }
  jpeg_destroy_decompress(&cinfo);
  if (header_only) return Image(width, height, 3);
  return from_bytes(width, height, buffer.data());
}

}  // namespace detail

inline Image read_image(const std::filesystem::path& path) {
  switch (format_from_extension(path)) {
    case ImageFormat::ppm: {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw DataError("cannot open " + path.string());
      const auto h = detail::read_ppm_header(in, path.string());
      std::vector<std::uint8_t> bytes(h.width * h.height * 3);
      in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw DataError(path.string() + ": truncated PPM");
      return from_bytes(h.width, h.height, bytes.data());
    }
    case ImageFormat::png: {
      png_image png{};
      png.version = PNG_IMAGE_VERSION;
      if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw DataError(path.string() + ": " + png.message);
      png.format = PNG_FORMAT_RGB;
      std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
      if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw DataError(path.string() + ": " + msg);
      }
      return from_bytes(png.width, png.height, bytes.data());
    }
    case ImageFormat::jpeg: return detail::read_jpeg(path, false);
    case ImageFormat::unknown: break;
  }
  throw DataError("unsupported image format: " + path.string());
}

// Validates the header and returns (width, height) without decoding pixels.
inline std::pair<std::size_t, std::size_t> probe_image(const std::filesystem::path& path) {
  switch (format_from_extension(path)) {
    case ImageFormat::ppm: {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw DataError("cannot open " + path.string());
      const auto h = detail::read_ppm_header(in, path.string());
      const auto size = std::filesystem::file_size(path);
      if (size < static_cast<std::uintmax_t>(h.data_offset) + h.width * h.height * 3)
        throw DataError(path.string() + ": truncated PPM");
      return {h.width, h.height};
    }
    case ImageFormat::png: {
      png_image png{};
      png.version = PNG_IMAGE_VERSION;
      if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw DataError(path.string() + ": " + png.message);
      const std::pair<std::size_t, std::size_t> dims{png.width, png.height};
      png_image_free(&png);
      return dims;
    }
    case ImageFormat::jpeg: {
      const auto img = detail::read_jpeg(path, true);
      return {img.width, img.height};
    }
    case ImageFormat::unknown: break;
  }
  throw DataError("unsupported image format: " + path.string());
}

// Writes an 8-bit RGB PNG or PPM (chosen by extension), rounding and
// clamping values to [0, 255].
inline void write_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw DataError("only RGB images can be written");
  const auto bytes = quantize(img);
  switch (format_from_extension(path)) {
    case ImageFormat::ppm: {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + path.string());
      out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw DataError("write failed for " + path.string());
      return;
    }
    case ImageFormat::png: {
      png_image png{};
      png.version = PNG_IMAGE_VERSION;
      png.width = static_cast<png_uint_32>(img.width);
      png.height = static_cast<png_uint_32>(img.height);
      png.format = PNG_FORMAT_RGB;
      if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw DataError("cannot write " + path.string() + ": " + png.message);
      return;
    }
    default: break;
  }
  throw DataError("unsupported output image format: " + path.string());
}

}  // namespace sslgrade
