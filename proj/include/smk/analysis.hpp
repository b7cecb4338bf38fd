#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smk/dataset.hpp"
#include "smk/evaluation.hpp"
#include "smk/moe.hpp"
#include "smk/toy_model.hpp"

#include <json.hpp>

namespace smk {

/// counts[l][e] = tokens that selected expert e at layer l. Each selected
/// expert counts once, whatever its gate. Merging adds counts, so partial
/// tallies can be built in parallel and combined in any order.
struct ActivationTally {
  std::string domain;
  std::size_t top_k = 1;
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<std::uint64_t> tokens;  // per layer

  std::size_t layers() const noexcept { return counts.size(); }
  std::size_t experts() const noexcept { return counts.empty() ? 0 : counts.front().size(); }
  /// count / (tokens * k); sums to 1 over experts.
  double ratio(std::size_t layer, std::size_t expert) const;

  ActivationTally& merge(const ActivationTally& other);
  std::string to_csv() const;  // layer,expert,count,ratio
  nlohmann::json to_json() const;
};

/// records[i][l] is image i's routing record at layer l.
template <typename Real>
ActivationTally tally_activations(const std::vector<std::vector<RoutingRecord<Real>>>& records,
                                  const std::string& domain);

struct Dominance {
  std::string domain;
  std::size_t layer = 0;
  std::size_t expert = 0;  // argmax, ties to the lower index
  double ratio = 0.0;
};

struct DominanceReport {
  std::vector<Dominance> entries;  // domain-major, then layer

  /// Mean over layers of the dominant expert's ratio for one domain.
  double purity(const std::string& domain) const;
  std::vector<std::string> domains() const;
  nlohmann::json to_json() const;
};

DominanceReport dominance(const std::vector<ActivationTally>& tallies);

struct SensitivityResult {
  DescriptorMask mask{};
  BenchmarkResult benchmark;
  std::vector<ActivationTally> tallies;  // one per domain, sorted by tag
  DominanceReport dominance;
};

/// Evaluates the model with the masked descriptors zeroed before
/// normalization and tallies routing per domain. The model is not modified.
SensitivityResult descriptor_sensitivity(const ToyModel<double>& model, const std::vector<Sample>& dataset,
                                         const DescriptorMask& mask, const DescriptorConfig& descriptors = {},
                                         std::size_t threads = 1);

/// Per-domain tallies of an unmasked inference pass.
std::vector<ActivationTally> tally_dataset(const ToyModel<double>& model, const std::vector<Sample>& dataset,
                                           const DescriptorConfig& descriptors = {},
                                           const DescriptorMask& mask = kAllDescriptors,
                                           std::size_t threads = 1);

std::string mask_name(const DescriptorMask& mask);

}  // namespace smk
