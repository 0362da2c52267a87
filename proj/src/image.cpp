#include "pmim/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pmim/errors.hpp"

namespace pmim {

Image make_image(int height, int width, int channels, float fill) {
  PMIM_CHECK(height > 0 && width > 0, "image dims must be positive");
  PMIM_CHECK(channels == 1 || channels == 3, "channels must be 1 or 3");
  Image img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(height) * width * channels, fill);
  return img;
}

std::vector<float> to_grayscale(const Image& img) {
  std::vector<float> g(static_cast<size_t>(img.height) * img.width);
  if (img.channels == 1) {
    g = img.pixels;
    return g;
  }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g[static_cast<size_t>(y) * img.width + x] = 0.299f * img.at(y, x, 0) +
                                                  0.587f * img.at(y, x, 1) +
                                                  0.114f * img.at(y, x, 2);
  return g;
}

std::uint8_t quantize_byte(float v) {
  const float c = std::clamp(v, 0.f, 1.f);
  return static_cast<std::uint8_t>(std::lround(c * 255.f));
}

void write_pnm(const Image& img, const std::string& path) {
  PMIM_CHECK(img.channels == 1 || img.channels == 3, "channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  PMIM_CHECK_DATA(out.good(), "cannot open '", path, "' for writing");
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) bytes[i] = quantize_byte(img.pixels[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  PMIM_CHECK_DATA(out.good(), "short write to '", path, "'");
}

namespace {

// PNM token reader: skips whitespace and '#' comments in the header.
int read_pnm_int(std::istream& in, const std::string& path, const char* field) {
  int ch = in.peek();
  while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == '#') {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    ch = in.peek();
  }
  int value = 0;
  in >> value;
  PMIM_CHECK_DATA(!in.fail(), "'", path, "': malformed PNM header field ", field);
  return value;
}

}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  PMIM_CHECK_DATA(in.good(), "cannot open '", path, "'");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  PMIM_CHECK_DATA(m0 == 'P' && (m1 == '5' || m1 == '6'),
                  "'", path, "': not a binary PGM/PPM (bad magic)");
  const int channels = (m1 == '6') ? 3 : 1;
  const int width = read_pnm_int(in, path, "width");
  const int height = read_pnm_int(in, path, "height");
  const int maxval = read_pnm_int(in, path, "maxval");
  PMIM_CHECK_DATA(width > 0 && height > 0, "'", path, "': bad dimensions");
  PMIM_CHECK_DATA(maxval == 255, "'", path, "': unsupported maxval ", maxval);
  in.get();  // single whitespace after maxval

  const size_t n = static_cast<size_t>(width) * height * channels;
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  PMIM_CHECK_DATA(static_cast<size_t>(in.gcount()) == n,
                  "'", path, "': truncated payload, expected ", n, " bytes, got ",
                  in.gcount());
  in.peek();
  PMIM_CHECK_DATA(in.eof(), "'", path, "': trailing garbage after pixel data");

  Image img = make_image(height, width, channels);
  for (size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.f;
  return img;
}

Image crop(const Image& img, int y0, int x0, int height, int width) {
  PMIM_CHECK(y0 >= 0 && x0 >= 0 && height > 0 && width > 0 &&
                 y0 + height <= img.height && x0 + width <= img.width,
             "crop window out of bounds");
  Image out = make_image(height, width, img.channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

Image hflip(const Image& img) {
  Image out = make_image(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  PMIM_CHECK(height > 0 && width > 0, "resize dims must be positive");
  if (height == img.height && width == img.width) return img;
  Image out = make_image(height, width, img.channels);
  const float sy = static_cast<float>(img.height) / height;
  const float sx = static_cast<float>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.f,
                                static_cast<float>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.f,
                                  static_cast<float>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const float top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const float bot = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace pmim
