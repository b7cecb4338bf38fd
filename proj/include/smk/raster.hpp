#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace smk {

/// Linear-domain intensity grid. Values are finite and non-negative; the
/// constructor rejects anything else with an InvalidInput error naming the
/// offending pixel index.
class RasterImage {
public:
  RasterImage() = default;
  RasterImage(std::size_t width, std::size_t height, std::vector<float> data);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const float> data() const noexcept { return data_; }
  float at(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> data_;
};

/// Log-intensity raster X' = ln(1 + |X|).
class LogRaster {
public:
  LogRaster() = default;
  LogRaster(std::size_t width, std::size_t height, std::vector<double> data);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  double at(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

class LabelMap {
public:
  LabelMap() = default;
  LabelMap(std::size_t width, std::size_t height, std::vector<std::uint8_t> labels,
           std::size_t num_classes, std::optional<std::uint8_t> ignore_value = std::nullopt);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::optional<std::uint8_t> ignore_value() const noexcept { return ignore_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  std::uint8_t at(std::size_t row, std::size_t col) const { return labels_[row * width_ + col]; }
  bool ignored(std::size_t index) const noexcept {
    return ignore_ && labels_[index] == *ignore_;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> labels_;
  std::size_t num_classes_ = 0;
  std::optional<std::uint8_t> ignore_;
};

enum class BasePattern { Constant, TwoRegion, Stripes };

struct SpeckleSpec {
  double looks = 1.0;
  BasePattern base_pattern = BasePattern::Constant;
  std::uint64_t seed = 0;
};

/// Noise-free scene: the pattern intensities and the class of every pixel
/// (0 = dark background, 1 = bright region).
struct Scene {
  RasterImage pattern;
  LabelMap labels;
};

inline constexpr float kDarkLevel = 25.0F;
inline constexpr float kBrightLevel = 100.0F;
inline constexpr float kConstantLevel = 50.0F;

LogRaster log_transform(const RasterImage& img);

/// Deterministic pattern layout for (spec.base_pattern, spec.seed).
Scene render_pattern(const SpeckleSpec& spec, std::size_t width, std::size_t height);

/// Pattern multiplied by unit-mean Gamma(L) speckle, the usual L-look
/// intensity model.
RasterImage generate_speckle(const SpeckleSpec& spec, std::size_t width, std::size_t height);

/// Reads SRF1 natively, or imports an 8/16-bit grayscale PNG as linear
/// intensity.
RasterImage read_raster(const std::filesystem::path& path);
void write_raster(const RasterImage& img, const std::filesystem::path& path);

LabelMap read_labels(const std::filesystem::path& path,
                     std::optional<std::uint8_t> ignore_value = std::nullopt);
void write_labels(const LabelMap& labels, const std::filesystem::path& path);

/// Grayscale PNG writer at the given bit depth (8 or 16); values are rounded
/// and clamped to the depth's range.
void write_grayscale_png(const RasterImage& img, const std::filesystem::path& path,
                         int bit_depth = 8);

}  // namespace smk
