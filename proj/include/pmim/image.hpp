#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pmim {

// Float image in [0,1], row-major, channels interleaved (RGB for c=3).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<float> pixels;

  float at(int y, int x, int c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  float& at(int y, int x, int c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  size_t size() const { return pixels.size(); }
};

Image make_image(int height, int width, int channels, float fill = 0.f);

// Rec.601 luma; identity for grayscale input.
std::vector<float> to_grayscale(const Image& img);

// Binary PPM (P6, channels=3) and PGM (P5, channels=1), maxval 255.
// Values are quantized with round(v*255) on write and divided by 255 on
// read. Readers reject trailing garbage.
void write_pnm(const Image& img, const std::string& path);
Image read_pnm(const std::string& path);

std::uint8_t quantize_byte(float v);

Image crop(const Image& img, int y0, int x0, int height, int width);
Image hflip(const Image& img);

// Half-pixel-center bilinear resampling; exact copy when sizes match.
Image resize_bilinear(const Image& img, int height, int width);

}  // namespace pmim
