#pragma once

#include <cstdint>
#include <vector>

#include "smk/dataset.hpp"
#include "smk/descriptors.hpp"
#include "smk/toy_model.hpp"

#include <json.hpp>

namespace smk {

struct OptimizerConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
  ModelShape model;
  InitConfig init;
  OptimizerConfig optim;
  DescriptorConfig descriptors;
  DescriptorMask descriptor_mask = kAllDescriptors;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Decoupled-weight-decay Adam over every parameter block of a ToyModel.
template <typename Real>
class AdamW {
public:
  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(ToyModel<Real>& model, const ToyModel<Real>& grads);
  std::size_t steps_taken() const noexcept { return t_; }

private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double seg_loss = 0.0;
  double bc_loss = 0.0;  // summed over blocks
  double total = 0.0;
  std::vector<std::vector<double>> fractions;  // per block f_k
};

struct TrainingReport {
  std::vector<StepRecord> steps;
  double initial_seg_loss = 0.0;  // full dataset, before the first update
  double final_seg_loss = 0.0;    // full dataset, after the last update
  /// Per block, per expert selections during the final epoch.
  std::vector<std::vector<std::uint64_t>> activation_counts;
  /// Per block, f_k averaged over the final epoch's steps.
  std::vector<std::vector<double>> final_epoch_fractions;

  /// Mean over blocks of max_k of the final-epoch averaged f.
  double final_epoch_max_fraction() const;
  nlohmann::json to_json() const;
};

template <typename Real>
std::vector<PreparedImage<Real>> prepare_dataset(const std::vector<Sample>& data, std::size_t patch,
                                                 const DescriptorConfig& cfg,
                                                 const DescriptorMask& mask = kAllDescriptors,
                                                 std::size_t threads = 1);

/// Mean token cross-entropy over the whole dataset, no balance terms.
template <typename Real>
double dataset_seg_loss(const ToyModel<Real>& model, const std::vector<PreparedImage<Real>>& data);

/// Shuffled mini-batch AdamW on L_seg + sum of per-block L_bc. Fully
/// deterministic for a given config.seed regardless of config.threads.
template <typename Real>
TrainingReport train_toy(ToyModel<Real>& model, const std::vector<Sample>& dataset,
                         const TrainConfig& config);

}  // namespace smk
