#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "smk/raster.hpp"

namespace smk {

/// Saturation value reported for ENL when the log raster has (numerically)
/// zero spread.
inline constexpr double kEnlMax = 1e12;

struct DescriptorConfig {
  std::size_t num_direction_bins = 36;
  double gradient_magnitude_floor = 1e-6;
  std::size_t roughness_rows = 8;
  std::size_t roughness_cols = 8;
  double enl_sigma_floor = 1e-12;
  /// true: bin signed directions over [-pi, pi); false: orientations over [0, pi).
  bool signed_angles = true;

  void validate() const;
  friend bool operator==(const DescriptorConfig&, const DescriptorConfig&) = default;
};

struct EntropyResult {
  double value = 0.0;
  bool degenerate = false;  // no pixel cleared the gradient floor
};

struct EnlResult {
  double value = 0.0;
  bool homogeneous = false;  // sigma below the floor, value saturated
};

/// s = [H_DE, ENL, R_LR] in that order, plus the degeneracy flags.
struct DescriptorVector {
  double h_de = 0.0;
  double enl = 0.0;
  double r_lr = 0.0;
  bool degenerate_histogram = false;
  bool homogeneous_image = false;

  std::array<double, 3> values() const { return {h_de, enl, r_lr}; }
  /// "degenerate_histogram|homogeneous_image", or empty.
  std::string flags() const;

  friend bool operator==(const DescriptorVector&, const DescriptorVector&) = default;
};

/// Shannon entropy (nats) of the Sobel gradient-direction histogram.
EntropyResult directional_entropy(const LogRaster& x, const DescriptorConfig& cfg = {});

/// (mu / sigma)^2 over all log-intensity values, population statistics.
EnlResult equivalent_number_of_looks(const LogRaster& x, const DescriptorConfig& cfg = {});

/// Population variance of the block means over a rows x cols pooling grid;
/// remainder pixels belong to the last block row / column.
double local_roughness(const LogRaster& x, const DescriptorConfig& cfg = {});

DescriptorVector compute_descriptors(const RasterImage& img, const DescriptorConfig& cfg = {});

/// Fixed map of each descriptor onto [0, 1] so it can sit next to token
/// embeddings in the router input.
std::array<double, 3> normalize_descriptors(const DescriptorVector& s,
                                            const DescriptorConfig& cfg = {});

}  // namespace smk
