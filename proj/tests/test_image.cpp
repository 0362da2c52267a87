#include <fstream>

#include <doctest.h>

#include "pmim/errors.hpp"
#include "pmim/image.hpp"
#include "pmim/rng.hpp"

#include "helpers.hpp"

using namespace pmim;

TEST_CASE("quantize_byte rounds and clamps") {
  CHECK(quantize_byte(0.0f) == 0);
  CHECK(quantize_byte(1.0f) == 255);
  CHECK(quantize_byte(-0.5f) == 0);
  CHECK(quantize_byte(2.0f) == 255);
  CHECK(quantize_byte(0.5f) == 128);  // round(127.5) away from zero
  CHECK(quantize_byte(127.0f / 255.0f) == 127);
}

TEST_CASE("ppm round-trip is exact for byte-representable values") {
  testutil::TempDir tmp("ppm");
  Rng rng(4);
  Image img = make_image(6, 5, 3);
  for (auto& v : img.pixels)
    v = static_cast<float>(rng.below(256)) / 255.f;
  write_pnm(img, tmp.file("a.ppm"));
  const Image back = read_pnm(tmp.file("a.ppm"));
  REQUIRE(back.height == 6);
  REQUIRE(back.width == 5);
  REQUIRE(back.channels == 3);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-7));
}

TEST_CASE("pgm round-trip preserves bytes") {
  testutil::TempDir tmp("pgm");
  Image img = make_image(3, 4, 1);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<float>(i) / 255.f;
  write_pnm(img, tmp.file("g.pgm"));
  const Image back = read_pnm(tmp.file("g.pgm"));
  REQUIRE(back.channels == 1);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(quantize_byte(back.pixels[i]) == quantize_byte(img.pixels[i]));
}

TEST_CASE("read_pnm rejects trailing garbage and truncation") {
  testutil::TempDir tmp("pnmneg");
  Image img = make_image(2, 2, 3);
  write_pnm(img, tmp.file("x.ppm"));
  {
    std::ofstream app(tmp.file("x.ppm"), std::ios::binary | std::ios::app);
    app << "extra";
  }
  CHECK_THROWS_AS(read_pnm(tmp.file("x.ppm")), data_error);

  write_pnm(img, tmp.file("y.ppm"));
  std::filesystem::resize_file(tmp.file("y.ppm"),
                               std::filesystem::file_size(tmp.file("y.ppm")) - 3);
  CHECK_THROWS_AS(read_pnm(tmp.file("y.ppm")), data_error);

  std::ofstream bad(tmp.file("z.ppm"), std::ios::binary);
  bad << "Q7\n2 2\n255\n";
  bad.close();
  CHECK_THROWS_AS(read_pnm(tmp.file("z.ppm")), data_error);
  CHECK_THROWS_AS(read_pnm(tmp.file("missing.ppm")), data_error);
}

TEST_CASE("read_pnm handles header comments") {
  testutil::TempDir tmp("pnmc");
  std::ofstream out(tmp.file("c.pgm"), std::ios::binary);
  out << "P5\n# a comment\n2 1\n255\n";
  out.put(static_cast<char>(0));
  out.put(static_cast<char>(255));
  out.close();
  const Image img = read_pnm(tmp.file("c.pgm"));
  CHECK(img.at(0, 0, 0) == 0.0f);
  CHECK(img.at(0, 1, 0) == 1.0f);
}

TEST_CASE("grayscale uses the 0.299/0.587/0.114 weights") {
  Image img = make_image(1, 1, 3);
  img.at(0, 0, 0) = 1.0f;
  img.at(0, 0, 1) = 0.5f;
  img.at(0, 0, 2) = 0.25f;
  const auto g = to_grayscale(img);
  CHECK(g[0] == doctest::Approx(0.299f + 0.587f * 0.5f + 0.114f * 0.25f));
}

TEST_CASE("crop extracts the exact window") {
  Image img = make_image(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(y, x, 0) = static_cast<float>(y * 4 + x);
  const Image c = crop(img, 1, 2, 2, 2);
  CHECK(c.at(0, 0, 0) == 6.0f);
  CHECK(c.at(0, 1, 0) == 7.0f);
  CHECK(c.at(1, 0, 0) == 10.0f);
  CHECK(c.at(1, 1, 0) == 11.0f);
}

TEST_CASE("hflip mirrors columns and is an involution") {
  Rng rng(8);
  Image img = make_image(5, 7, 3);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  const Image f = hflip(img);
  CHECK(f.at(2, 0, 1) == img.at(2, 6, 1));
  const Image ff = hflip(f);
  CHECK(ff.pixels == img.pixels);
}

TEST_CASE("resize to the same shape is an exact copy") {
  Rng rng(8);
  Image img = make_image(9, 6, 3);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  const Image same = resize_bilinear(img, 9, 6);
  CHECK(same.pixels == img.pixels);
}

TEST_CASE("2x upscale of a constant image stays constant") {
  Image img = make_image(3, 3, 1, 0.25f);
  const Image up = resize_bilinear(img, 6, 6);
  for (float v : up.pixels) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("downscale by 2 averages 2x2 blocks") {
  // half-pixel centers: target pixel (0,0) samples source at (0.5, 0.5),
  // the exact midpoint of the 2x2 block
  Image img = make_image(2, 2, 1);
  img.at(0, 0, 0) = 0.0f;
  img.at(0, 1, 0) = 1.0f;
  img.at(1, 0, 0) = 1.0f;
  img.at(1, 1, 0) = 0.0f;
  const Image down = resize_bilinear(img, 1, 1);
  CHECK(down.at(0, 0, 0) == doctest::Approx(0.5f));
}
