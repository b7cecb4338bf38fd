#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smk/dataset.hpp"
#include "smk/raster.hpp"
#include "smk/toy_model.hpp"

#include <json.hpp>

namespace smk {

/// counts[t][p] = pixels with truth t predicted p. Forms a monoid under
/// merge with the all-zero matrix as identity.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t num_classes = 0);

  std::size_t num_classes() const noexcept { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  std::uint64_t total() const;

  ConfusionMatrix& merge(const ConfusionMatrix& other);
  friend ConfusionMatrix merge(ConfusionMatrix a, const ConfusionMatrix& b) { return a.merge(b); }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// Pixels where truth is the ignore value are skipped.
ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& truth, const LabelMap& pred);

struct IoUReport {
  std::vector<double> per_class;
  std::vector<bool> defined;  // false when the class never occurs in truth or prediction
  double miou = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// IoU_c = tp / (row + col - tp); undefined classes are left out of the mean.
IoUReport iou_report(const ConfusionMatrix& cm);

struct AgreementReport {
  std::vector<double> per_image;
  double mean_agreement = 0.0;

  nlohmann::json to_json() const;
};

/// model_sets[m][i] is model m's prediction for image i. A pixel agrees when
/// every model predicts the same class; images are weighted equally.
AgreementReport mean_agreement(const std::vector<std::vector<LabelMap>>& model_sets);

struct BenchmarkManifest {
  std::string name;
  std::string abbreviation;
  std::filesystem::path source_dir;
  std::filesystem::path target_dir;
  std::size_t num_classes = 2;
  std::vector<std::string> class_names;
  std::optional<std::uint8_t> ignore_value;

  static BenchmarkManifest load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

struct ImageScore {
  std::string stem;
  std::string domain;
  std::uint64_t pixels = 0;
  std::uint64_t correct = 0;
  double miou = 0.0;  // of this image alone; 0 when undefined
};

struct BenchmarkResult {
  ConfusionMatrix confusion;
  IoUReport report;
  std::vector<ImageScore> per_image;
  std::vector<LabelMap> predictions;  // same order as per_image

  std::string per_image_csv() const;
};

/// Runs the model over every target pair of the manifest and pools one
/// confusion matrix. Missing pairs abort with every missing stem listed.
BenchmarkResult run_benchmark(const BenchmarkManifest& manifest, const ToyModel<double>& model,
                              const DescriptorConfig& descriptors = {},
                              std::size_t threads = 1);

/// Same evaluation over in-memory samples.
BenchmarkResult evaluate_samples(const std::vector<Sample>& samples,
                                 const ToyModel<double>& model, const DescriptorConfig& descriptors,
                                 const DescriptorMask& mask = kAllDescriptors,
                                 std::size_t threads = 1);

/// Pools per-image confusion matrices of precomputed predictions.
BenchmarkResult score_predictions(const std::vector<Sample>& samples, std::vector<LabelMap> predictions,
                                  std::size_t num_classes);

std::vector<Prediction<double>> predict_samples(const std::vector<Sample>& samples,
                                                const ToyModel<double>& model,
                                                const DescriptorConfig& descriptors,
                                                const DescriptorMask& mask = kAllDescriptors,
                                                std::size_t threads = 1);

/// mIoU of always predicting the most frequent truth class (ties: lowest id).
double majority_baseline_miou(const std::vector<LabelMap>& truth);

}  // namespace smk
