#include "latref/image_io.hpp"

#include <png.h>

#include <cstring>
#include <memory>

#include "latref/checkpoint.hpp"

namespace latref {

namespace {

struct PngImage {
  png_image img{};
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
};

std::vector<uint8_t> decode_pixels(const std::string& bytes, uint32_t format, int& w, int& h) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size()))
    throw FormatError(std::string("png decode: ") + p.img.message);
  p.img.format = format;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
    throw FormatError(std::string("png decode: ") + p.img.message);
  w = static_cast<int>(p.img.width);
  h = static_cast<int>(p.img.height);
  return buf;
}

std::string encode_pixels(const uint8_t* data, int w, int h, uint32_t format) {
  PngImage p;
  p.img.width = static_cast<png_uint_32>(w);
  p.img.height = static_cast<png_uint_32>(h);
  p.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(p.img, size, 0, data, 0, nullptr))
    throw FormatError(std::string("png encode: ") + p.img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, data, 0, nullptr))
    throw FormatError(std::string("png encode: ") + p.img.message);
  out.resize(size);
  return out;
}

}  // namespace

Tensor to_unit_range(const Tensor& u8_hwc) {
  return u8_hwc.to(torch::kFloat32).permute({2, 0, 1}).contiguous().div(127.5).sub(1.0);
}

Tensor to_u8_hwc(const Tensor& chw) {
  if (chw.dim() != 3) throw ShapeError("image must be (C, H, W), got " + shape_string(chw));
  return chw.detach().to(torch::kFloat32).clamp(-1, 1).add(1).mul(127.5).round().to(torch::kUInt8)
      .permute({1, 2, 0}).contiguous();
}

Tensor decode_png(const std::string& bytes) {
  int w = 0, h = 0;
  auto px = decode_pixels(bytes, PNG_FORMAT_RGB, w, h);
  Tensor t = torch::from_blob(px.data(), {h, w, 3}, torch::kUInt8).clone();
  return to_unit_range(t);
}

Tensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Tensor read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto px = decode_pixels(read_file(path), PNG_FORMAT_GRAY, w, h);
  Tensor t = torch::from_blob(px.data(), {h, w}, torch::kUInt8).clone();
  return (t > 0).to(torch::kFloat32);
}

std::string encode_png(const Tensor& chw) {
  const Tensor u8 = to_u8_hwc(chw);
  if (u8.size(2) != 3) throw ShapeError("write_png expects 3 channels");
  return encode_pixels(u8.data_ptr<uint8_t>(), static_cast<int>(u8.size(1)), static_cast<int>(u8.size(0)),
                       PNG_FORMAT_RGB);
}

void write_png(const std::filesystem::path& path, const Tensor& chw) { write_file(path, encode_png(chw)); }

void write_mask_png(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.dim() != 2) throw ShapeError("mask must be (H, W)");
  const Tensor u8 = (mask > 0.5).to(torch::kUInt8).mul(255).contiguous();
  write_file(path, encode_pixels(u8.data_ptr<uint8_t>(), static_cast<int>(u8.size(1)),
                                 static_cast<int>(u8.size(0)), PNG_FORMAT_GRAY));
}

}  // namespace latref
