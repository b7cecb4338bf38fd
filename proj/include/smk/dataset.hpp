#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smk/raster.hpp"

namespace smk {

struct Sample {
  std::string stem;
  std::string domain;
  RasterImage image;
  LabelMap labels;
};

struct SynthConfig {
  std::vector<double> looks{1.0, 16.0};
  std::size_t count_per_domain = 20;
  std::size_t width = 64;
  std::size_t height = 64;
  BasePattern pattern = BasePattern::TwoRegion;
  std::uint64_t seed = 0;
};

/// Domain tag used for a looks level, e.g. "L1", "L16", "L2.5".
std::string domain_tag(double looks);

/// count_per_domain speckled scenes per looks level, drawn from the "data"
/// stream of the seed. Stems are "<tag>_<index>".
std::vector<Sample> synthesize(const SynthConfig& cfg);

/// Writes <stem>.srf + <stem>.slm per sample and an index.csv (stem,domain).
void write_samples(const std::vector<Sample>& samples, const std::filesystem::path& dir);

/// Loads every <stem>.srf / <stem>.png image with its <stem>.slm label map,
/// sorted by stem. Domain tags come from index.csv when present ("default"
/// otherwise). Images without labels, or labels without images, are reported
/// together in one MissingPair error.
std::vector<Sample> load_samples(const std::filesystem::path& dir,
                                 std::optional<std::uint8_t> ignore_value = std::nullopt);

/// Label maps only (prediction directories for agreement), keyed by stem.
std::vector<std::pair<std::string, LabelMap>> load_label_dir(const std::filesystem::path& dir);

BasePattern parse_pattern(const std::string& name);
std::string pattern_name(BasePattern pattern);

}  // namespace smk
