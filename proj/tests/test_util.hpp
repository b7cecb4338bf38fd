#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "smk/raster.hpp"

namespace smk::test {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("smk_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline RasterImage constant_image(std::size_t w, std::size_t h, float value) {
  return RasterImage(w, h, std::vector<float>(w * h, value));
}

inline RasterImage noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0F, 1000.0F);
  std::vector<float> v(w * h);
  for (auto& x : v) {
    x = dist(rng);
  }
  return RasterImage(w, h, std::move(v));
}

}  // namespace smk::test
