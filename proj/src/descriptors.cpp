#include "smk/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "smk/error.hpp"

namespace smk {

void DescriptorConfig::validate() const {
  require(num_direction_bins >= 2, ErrorKind::InvalidInput, "num_direction_bins must be >= 2");
  require(roughness_rows >= 2 && roughness_cols >= 2, ErrorKind::InvalidInput,
          "roughness grid dims must be >= 2");
  require(gradient_magnitude_floor >= 0.0 && enl_sigma_floor >= 0.0, ErrorKind::InvalidInput,
          "descriptor floors must be non-negative");
}

std::string DescriptorVector::flags() const {
  std::string out;
  if (degenerate_histogram) {
    out = "degenerate_histogram";
  }
  if (homogeneous_image) {
    out += out.empty() ? "homogeneous_image" : "|homogeneous_image";
  }
  return out;
}

EntropyResult directional_entropy(const LogRaster& x, const DescriptorConfig& cfg) {
  cfg.validate();
  const std::size_t w = x.width();
  const std::size_t h = x.height();
  require(w >= 3 && h >= 3, ErrorKind::InvalidInput, "directional entropy needs at least 3x3");

  // Replicate border: clamp sample coordinates into the raster.
  auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(h) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return x.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };

  const std::size_t bins = cfg.num_direction_bins;
  const double span = cfg.signed_angles ? 2.0 * std::numbers::pi : std::numbers::pi;
  const double origin = cfg.signed_angles ? -std::numbers::pi : 0.0;
  std::vector<std::size_t> histogram(bins, 0);
  std::size_t included = 0;

  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(h); ++r) {
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(w); ++c) {
      double gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1)) -
                  (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
      double gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1)) -
                  (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
      if (std::hypot(gx, gy) < cfg.gradient_magnitude_floor || (gx == 0.0 && gy == 0.0)) {
        continue;
      }
      double theta = std::atan2(gy, gx);
      if (!cfg.signed_angles) {
        theta = std::fmod(theta + std::numbers::pi, std::numbers::pi);
      }
      auto bin = static_cast<std::size_t>(std::floor((theta - origin) / span * static_cast<double>(bins)));
      // theta == +pi is the same direction as -pi (and pi ~ 0 for orientations).
      if (bin >= bins) {
        bin = 0;
      }
      ++histogram[bin];
      ++included;
    }
  }

  if (included == 0) {
    return {0.0, true};
  }
  double entropy = 0.0;
  for (std::size_t count : histogram) {
    if (count == 0) {
      continue;
    }
    double p = static_cast<double>(count) / static_cast<double>(included);
    entropy -= p * std::log(p);
  }
  // Rounding can push a single-bin histogram a hair below zero.
  return {std::clamp(entropy, 0.0, std::log(static_cast<double>(bins))), false};
}

EnlResult equivalent_number_of_looks(const LogRaster& x, const DescriptorConfig& cfg) {
  cfg.validate();
  auto values = x.data();
  require(!values.empty(), ErrorKind::InvalidInput, "ENL of an empty raster");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= n;
  double var = 0.0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
  }
  var /= n;
  double sigma = std::sqrt(var);
  if (sigma < cfg.enl_sigma_floor || sigma == 0.0) {
    return {kEnlMax, true};
  }
  double ratio = mean / sigma;
  return {std::min(ratio * ratio, kEnlMax), false};
}

double local_roughness(const LogRaster& x, const DescriptorConfig& cfg) {
  cfg.validate();
  const std::size_t rows = cfg.roughness_rows;
  const std::size_t cols = cfg.roughness_cols;
  require(x.height() >= rows && x.width() >= cols, ErrorKind::InvalidInput,
          "raster " + std::to_string(x.width()) + "x" + std::to_string(x.height()) +
              " is smaller than the " + std::to_string(cols) + "x" + std::to_string(rows) +
              " roughness grid");
  const std::size_t block_h = x.height() / rows;
  const std::size_t block_w = x.width() / cols;

  std::vector<double> means;
  means.reserve(rows * cols);
  for (std::size_t br = 0; br < rows; ++br) {
    std::size_t r0 = br * block_h;
    std::size_t r1 = br + 1 == rows ? x.height() : r0 + block_h;
    for (std::size_t bc = 0; bc < cols; ++bc) {
      std::size_t c0 = bc * block_w;
      std::size_t c1 = bc + 1 == cols ? x.width() : c0 + block_w;
      double sum = 0.0;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          sum += x.at(r, c);
        }
      }
      means.push_back(sum / static_cast<double>((r1 - r0) * (c1 - c0)));
    }
  }

  // Shift by the first mean so identical block means give exactly zero.
  double shift = means.front();
  double grand = 0.0;
  for (double m : means) {
    grand += m - shift;
  }
  grand /= static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) {
    var += (m - shift - grand) * (m - shift - grand);
  }
  return var / static_cast<double>(means.size());
}

DescriptorVector compute_descriptors(const RasterImage& img, const DescriptorConfig& cfg) {
  LogRaster x = log_transform(img);
  EntropyResult entropy = directional_entropy(x, cfg);
  EnlResult enl = equivalent_number_of_looks(x, cfg);
  DescriptorVector s;
  s.h_de = entropy.value;
  s.enl = enl.value;
  s.r_lr = local_roughness(x, cfg);
  s.degenerate_histogram = entropy.degenerate;
  s.homogeneous_image = enl.homogeneous;
  return s;
}

std::array<double, 3> normalize_descriptors(const DescriptorVector& s, const DescriptorConfig& cfg) {
  double bins = static_cast<double>(std::max<std::size_t>(cfg.num_direction_bins, 2));
  double h = std::clamp(s.h_de / std::log(bins), 0.0, 1.0);
  double e = std::clamp(std::log1p(std::max(s.enl, 0.0)) / std::log1p(kEnlMax), 0.0, 1.0);
  double r = std::clamp(std::log1p(std::max(s.r_lr, 0.0)), 0.0, 10.0) / 10.0;
  return {h, e, r};
}

}  // namespace smk
