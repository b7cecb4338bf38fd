#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "smk/error.hpp"
#include "smk/raster.hpp"
#include "test_util.hpp"

using namespace smk;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("log transform of known values") {
  auto zero = log_transform(test::constant_image(4, 4, 0.0F));
  for (double v : zero.data()) {
    CHECK(v == 0.0);
  }
  RasterImage one(1, 1, {static_cast<float>(std::exp(1.0) - 1.0)});
  CHECK(log_transform(one).at(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  RasterImage pair(2, 1, {1.0F, 3.0F});
  auto x = log_transform(pair);
  CHECK(x.at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(x.at(0, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("raster construction rejects bad pixels") {
  CHECK(kind_of([] { RasterImage(2, 1, {1.0F, -1.0F}); }) == ErrorKind::InvalidInput);
  CHECK(kind_of([] { RasterImage(2, 1, {std::numeric_limits<float>::quiet_NaN(), 1.0F}); }) ==
        ErrorKind::InvalidInput);
  CHECK(kind_of([] { RasterImage(2, 2, {1.0F}); }) == ErrorKind::InvalidInput);
  try {
    RasterImage(3, 2, {0, 0, 0, 0, -2.0F, 0});
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("pixel 4") != std::string::npos);
  }
}

TEST_CASE("speckle generation") {
  SUBCASE("same spec and seed is bit-identical") {
    SpeckleSpec spec{4.0, BasePattern::TwoRegion, 99};
    CHECK(generate_speckle(spec, 32, 32) == generate_speckle(spec, 32, 32));
    SpeckleSpec other{4.0, BasePattern::TwoRegion, 100};
    CHECK_FALSE(generate_speckle(spec, 32, 32) == generate_speckle(other, 32, 32));
  }
  SUBCASE("huge looks reproduce the pattern") {
    SpeckleSpec spec{1e6, BasePattern::Stripes, 5};
    auto img = generate_speckle(spec, 64, 64);
    auto scene = render_pattern(spec, 64, 64);
    for (std::size_t i = 0; i < img.size(); ++i) {
      CHECK(std::abs(img.data()[i] / scene.pattern.data()[i] - 1.0) < 0.01);
    }
  }
  SUBCASE("gamma factor moments at L=4") {
    SpeckleSpec spec{4.0, BasePattern::Constant, 7};
    auto img = generate_speckle(spec, 256, 256);
    double sum = 0.0, sq = 0.0;
    for (float v : img.data()) {
      double f = v / kConstantLevel;
      sum += f;
      sq += f * f;
    }
    const double n = static_cast<double>(img.size());
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 1.0) < 0.05);
    CHECK(std::abs(var - 0.25) < 0.05 * 0.25);
  }
  SUBCASE("labels follow the bright region") {
    SpeckleSpec spec{1e6, BasePattern::TwoRegion, 11};
    auto scene = render_pattern(spec, 64, 64);
    CHECK(scene.labels.num_classes() == 2);
    for (std::size_t i = 0; i < scene.labels.size(); ++i) {
      CHECK((scene.labels.labels()[i] == 1) == (scene.pattern.data()[i] == kBrightLevel));
    }
  }
  SUBCASE("invalid looks") {
    CHECK(kind_of([] { generate_speckle({0.0, BasePattern::Constant, 1}, 16, 16); }) == ErrorKind::InvalidSpec);
    CHECK(kind_of([] { generate_speckle({-2.0, BasePattern::Constant, 1}, 16, 16); }) == ErrorKind::InvalidSpec);
  }
}

TEST_CASE("raster and label files") {
  test::TempDir dir("raster");
  SUBCASE("SRF1 round trip is bit-identical") {
    auto img = test::noise_image(32, 32, 3);
    write_raster(img, dir / "a.srf");
    CHECK(read_raster(dir / "a.srf") == img);
  }
  SUBCASE("truncated raster is a malformed header") {
    auto img = test::noise_image(8, 8, 4);
    write_raster(img, dir / "t.srf");
    std::filesystem::resize_file(dir / "t.srf", std::filesystem::file_size(dir / "t.srf") - 5);
    CHECK(kind_of([&] { read_raster(dir / "t.srf"); }) == ErrorKind::MalformedHeader);
    std::ofstream(dir / "h.srf") << "SRF1 8";
    CHECK(kind_of([&] { read_raster(dir / "h.srf"); }) == ErrorKind::MalformedHeader);
  }
  SUBCASE("trailing bytes are a dimension mismatch") {
    write_raster(test::noise_image(8, 8, 4), dir / "x.srf");
    std::ofstream(dir / "x.srf", std::ios::app | std::ios::binary) << "abcd";
    CHECK(kind_of([&] { read_raster(dir / "x.srf"); }) == ErrorKind::DimensionMismatch);
  }
  SUBCASE("missing file is an I/O error") {
    CHECK(kind_of([&] { read_raster(dir / "nope.srf"); }) == ErrorKind::Io);
  }
  SUBCASE("8-bit PNG keeps intensities") {
    std::vector<float> v(16, 0.0F);
    v[5] = 255.0F;
    v[6] = 17.0F;
    RasterImage img(4, 4, v);
    write_grayscale_png(img, dir / "g.png", 8);
    auto back = read_raster(dir / "g.png");
    CHECK(back.width() == 4);
    CHECK(back.at(1, 1) == 255.0F);
    CHECK(back.at(1, 2) == 17.0F);
    CHECK(back.at(0, 0) == 0.0F);
  }
  SUBCASE("16-bit PNG keeps intensities") {
    std::vector<float> v(16, 3.0F);
    v[0] = 65535.0F;
    v[15] = 1000.0F;
    RasterImage img(4, 4, v);
    write_grayscale_png(img, dir / "g16.png", 16);
    CHECK(read_raster(dir / "g16.png") == img);
  }
  SUBCASE("truncated PNG fails cleanly") {
    write_grayscale_png(test::noise_image(16, 16, 2), dir / "c.png", 8);
    std::filesystem::resize_file(dir / "c.png", 40);
    CHECK_THROWS_AS(read_raster(dir / "c.png"), Error);
  }
  SUBCASE("label round trip and ignore value") {
    LabelMap labels(3, 2, {0, 1, 1, 255, 0, 1}, 2, 255);
    write_labels(labels, dir / "l.slm");
    auto back = read_labels(dir / "l.slm", 255);
    CHECK(back == labels);
    CHECK(back.ignored(3));
    CHECK_FALSE(back.ignored(0));
  }
  SUBCASE("labels out of range are rejected") {
    CHECK(kind_of([] { LabelMap(2, 1, {0, 2}, 2); }) == ErrorKind::InvalidInput);
  }
}
