#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "smk/descriptors.hpp"
#include "smk/error.hpp"
#include "smk/raster.hpp"
#include "test_util.hpp"

using namespace smk;

namespace {

LogRaster log_grid(std::size_t w, std::size_t h, std::vector<double> v) { return LogRaster(w, h, std::move(v)); }

}  // namespace

TEST_CASE("directional entropy") {
  SUBCASE("constant raster is degenerate") {
    auto r = directional_entropy(log_transform(test::constant_image(16, 16, 7.0F)));
    CHECK(r.value == 0.0);
    CHECK(r.degenerate);
  }
  SUBCASE("two equally filled bins give ln 2") {
    // Every row is [0, 1, 1, 0]: half the pixels point along +x, half along -x.
    std::vector<double> v;
    for (int r = 0; r < 4; ++r) {
      v.insert(v.end(), {0.0, 1.0, 1.0, 0.0});
    }
    auto res = directional_entropy(log_grid(4, 4, v));
    CHECK_FALSE(res.degenerate);
    CHECK(res.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("a pure ramp fills one bin") {
    std::vector<double> v;
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        v.push_back(c);
      }
    }
    CHECK(directional_entropy(log_grid(8, 8, v)).value == 0.0);
  }
  SUBCASE("isotropic noise is near ln N") {
    auto res = directional_entropy(log_transform(test::noise_image(256, 256, 21)));
    CHECK(std::abs(res.value - std::log(36.0)) < 0.05);
  }
  SUBCASE("bounds over random rasters") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
      std::size_t w = 3 + rng() % 20, h = 3 + rng() % 20;
      auto res = directional_entropy(log_transform(test::noise_image(w, h, rng())));
      CHECK(res.value >= 0.0);
      CHECK(res.value <= std::log(36.0) + 1e-12);
    }
  }
  SUBCASE("orientation mode folds opposite directions together") {
    std::vector<double> v;
    for (int r = 0; r < 4; ++r) {
      v.insert(v.end(), {0.0, 1.0, 1.0, 0.0});
    }
    DescriptorConfig cfg;
    cfg.signed_angles = false;
    CHECK(directional_entropy(log_grid(4, 4, v), cfg).value == 0.0);
  }
}

TEST_CASE("equivalent number of looks") {
  SUBCASE("hand case is exactly 9") {
    const double l2 = std::log(2.0);
    auto res = equivalent_number_of_looks(log_grid(2, 2, {l2, l2, 2 * l2, 2 * l2}));
    CHECK(std::abs(res.value - 9.0) < 1e-9);
    CHECK_FALSE(res.homogeneous);
  }
  SUBCASE("constant raster saturates") {
    auto res = equivalent_number_of_looks(log_transform(test::constant_image(8, 8, 3.0F)));
    CHECK(res.value == kEnlMax);
    CHECK(res.homogeneous);
  }
  SUBCASE("stronger speckle has lower ENL") {
    int ordered = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto l1 = log_transform(generate_speckle({1.0, BasePattern::Constant, seed}, 256, 256));
      auto l16 = log_transform(generate_speckle({16.0, BasePattern::Constant, seed + 1000}, 256, 256));
      ordered += equivalent_number_of_looks(l16).value > equivalent_number_of_looks(l1).value;
    }
    CHECK(ordered >= 19);
  }
}

TEST_CASE("local roughness") {
  SUBCASE("constant raster is 0") {
    CHECK(local_roughness(log_transform(test::constant_image(16, 16, 9.0F))) == 0.0);
  }
  SUBCASE("block means 0 0 2 2 give 1") {
    DescriptorConfig cfg;
    cfg.roughness_rows = 2;
    cfg.roughness_cols = 2;
    std::vector<double> v = {0, 0, 0, 0,  //
                             0, 0, 0, 0,  //
                             2, 2, 2, 2,  //
                             2, 2, 2, 2};
    CHECK(local_roughness(log_grid(4, 4, v), cfg) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("remainder pixels join the last block") {
    DescriptorConfig cfg;
    cfg.roughness_rows = 2;
    cfg.roughness_cols = 2;
    // 2x5 raster: block rows {0,1} and {2,3,4}.
    auto value = local_roughness(log_grid(2, 5, {0, 0, 0, 0, 3, 3, 3, 3, 3, 3}), cfg);
    CHECK(value == doctest::Approx(2.25).epsilon(1e-15));
  }
  SUBCASE("raster smaller than the grid") {
    CHECK_THROWS_AS(local_roughness(log_grid(4, 4, std::vector<double>(16, 1.0))), Error);
  }
  SUBCASE("structure raises roughness at equal speckle") {
    int larger = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto flat = log_transform(generate_speckle({4.0, BasePattern::Constant, seed}, 128, 128));
      auto split = log_transform(generate_speckle({4.0, BasePattern::TwoRegion, seed}, 128, 128));
      larger += local_roughness(split) > local_roughness(flat);
    }
    CHECK(larger == 20);
  }
}

TEST_CASE("descriptor vector") {
  SUBCASE("constant image") {
    auto d = compute_descriptors(test::constant_image(16, 16, 4.0F));
    CHECK(d.values() == std::array<double, 3>{0.0, kEnlMax, 0.0});
    CHECK(d.degenerate_histogram);
    CHECK(d.homogeneous_image);
    CHECK(d.flags() == "degenerate_histogram|homogeneous_image");
  }
  SUBCASE("composition of the three operations") {
    auto img = generate_speckle({2.0, BasePattern::Stripes, 8}, 64, 48);
    auto x = log_transform(img);
    auto d = compute_descriptors(img);
    CHECK(d.h_de == directional_entropy(x).value);
    CHECK(d.enl == equivalent_number_of_looks(x).value);
    CHECK(d.r_lr == local_roughness(x));
    CHECK(d.values()[0] == d.h_de);
    CHECK(d.flags().empty());
  }
  SUBCASE("normalization endpoints and range") {
    DescriptorVector s{0.0, kEnlMax, 0.0};
    CHECK(normalize_descriptors(s) == std::array<double, 3>{0.0, 1.0, 0.0});
    DescriptorVector top{std::log(36.0), 1.0, 0.5};
    CHECK(normalize_descriptors(top)[0] == doctest::Approx(1.0).epsilon(1e-15));
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      DescriptorVector r{u(rng) * 5.0, std::pow(10.0, u(rng) * 13.0), std::pow(10.0, u(rng) * 6.0 - 3.0)};
      for (double v : normalize_descriptors(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
  SUBCASE("invalid configuration") {
    DescriptorConfig cfg;
    cfg.num_direction_bins = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }
}
