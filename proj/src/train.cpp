#include "smk/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "smk/error.hpp"
#include "smk/parallel.hpp"

namespace smk {

template <typename Real>
void AdamW<Real>::step(ToyModel<Real>& model, const ToyModel<Real>& grads) {
  std::vector<const std::vector<Real>*> g;
  for_each_parameter(grads, [&](const std::vector<Real>& block) { g.push_back(&block); });
  if (m_.empty()) {
    for (const auto* block : g) {
      m_.emplace_back(block->size(), Real(0));
      v_.emplace_back(block->size(), Real(0));
    }
  }
  ++t_;
  const Real b1 = static_cast<Real>(cfg_.beta1);
  const Real b2 = static_cast<Real>(cfg_.beta2);
  const Real lr = static_cast<Real>(cfg_.lr);
  const Real eps = static_cast<Real>(cfg_.eps);
  const Real decay = static_cast<Real>(cfg_.weight_decay);
  const Real bias1 = static_cast<Real>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const Real bias2 = static_cast<Real>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));

  std::size_t idx = 0;
  for_each_parameter(model, [&](std::vector<Real>& params) {
    const auto& grad = *g[idx];
    auto& m = m_[idx];
    auto& v = v_[idx];
    require(grad.size() == params.size(), ErrorKind::ContractViolation,
            "gradient block does not match parameter block");
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * grad[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * grad[i] * grad[i];
      const Real m_hat = m[i] / bias1;
      const Real v_hat = v[i] / bias2;
      params[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + decay * params[i]);
    }
    ++idx;
  });
}

double TrainingReport::final_epoch_max_fraction() const {
  if (final_epoch_fractions.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& f : final_epoch_fractions) {
    sum += *std::max_element(f.begin(), f.end());
  }
  return sum / static_cast<double>(final_epoch_fractions.size());
}

nlohmann::json TrainingReport::to_json() const {
  nlohmann::json j;
  j["initial_seg_loss"] = initial_seg_loss;
  j["final_seg_loss"] = final_seg_loss;
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"step", s.step},
                          {"epoch", s.epoch},
                          {"seg_loss", s.seg_loss},
                          {"bc_loss", s.bc_loss},
                          {"total", s.total}});
  }
  j["steps"] = std::move(steps_json);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < activation_counts.size(); ++l) {
    layers.push_back({{"layer", l},
                      {"activation_counts", activation_counts[l]},
                      {"final_epoch_fractions", final_epoch_fractions[l]}});
  }
  j["layers"] = std::move(layers);
  j["final_epoch_max_fraction"] = final_epoch_max_fraction();
  return j;
}

template <typename Real>
std::vector<PreparedImage<Real>> prepare_dataset(const std::vector<Sample>& data, std::size_t patch,
                                                 const DescriptorConfig& cfg,
                                                 const DescriptorMask& mask, std::size_t threads) {
  std::vector<PreparedImage<Real>> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    out[i] = prepare_image<Real>(data[i].image, &data[i].labels, patch, cfg, mask);
  });
  return out;
}

template <typename Real>
double dataset_seg_loss(const ToyModel<Real>& model, const std::vector<PreparedImage<Real>>& data) {
  double weighted = 0.0;
  std::size_t labelled = 0;
  for (const auto& img : data) {
    std::vector<const PreparedImage<Real>*> batch{&img};
    auto trace = model_forward(model, batch);
    auto loss = model_loss(model, trace, batch);
    weighted += loss.seg_loss * static_cast<double>(loss.labelled_tokens);
    labelled += loss.labelled_tokens;
  }
  return labelled > 0 ? weighted / static_cast<double>(labelled) : 0.0;
}

template <typename Real>
TrainingReport train_toy(ToyModel<Real>& model, const std::vector<Sample>& dataset,
                         const TrainConfig& config) {
  require(!dataset.empty(), ErrorKind::ContractViolation, "training dataset is empty");
  require(config.optim.batch_size >= 1, ErrorKind::ContractViolation, "batch size must be >= 1");
  require(config.optim.epochs >= 1, ErrorKind::ContractViolation, "epochs must be >= 1");
  model.shape.validate();
  for (const auto& s : dataset) {
    require(s.image.width() == dataset.front().image.width() &&
                s.image.height() == dataset.front().image.height(),
            ErrorKind::ContractViolation, "training rasters must share dimensions");
    require(s.labels.num_classes() <= model.shape.classes, ErrorKind::ContractViolation,
            s.stem + ": label map has more classes than the model");
  }

  const std::size_t threads = std::max<std::size_t>(1, config.threads);
  auto prepared = prepare_dataset<Real>(dataset, model.shape.patch, config.descriptors,
                                        config.descriptor_mask, threads);
  const std::size_t layers = model.blocks.size();
  const std::size_t experts = model.shape.experts;

  TrainingReport report;
  report.initial_seg_loss = dataset_seg_loss(model, prepared);
  report.activation_counts.assign(layers, std::vector<std::uint64_t>(experts, 0));
  report.final_epoch_fractions.assign(layers, std::vector<double>(experts, 0.0));

  AdamW<Real> optimizer(config.optim);
  std::vector<std::size_t> order(prepared.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.optim.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = named_stream(config.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    const bool last_epoch = epoch + 1 == config.optim.epochs;
    std::size_t epoch_steps = 0;

    for (std::size_t start = 0; start < order.size(); start += config.optim.batch_size) {
      std::vector<const PreparedImage<Real>*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.optim.batch_size); ++i) {
        batch.push_back(&prepared[order[i]]);
      }
      ForwardTrace<Real> trace = model_forward(model, batch);
      LossBreakdown loss = model_loss(model, trace, batch);
      if (!std::isfinite(loss.total)) {
        fail(ErrorKind::NumericalFailure, "training diverged at step " + std::to_string(step));
      }
      ToyModel<Real> grads = model_backward(model, trace, batch, threads);
      optimizer.step(model, grads);

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.seg_loss = loss.seg_loss;
      rec.bc_loss = std::accumulate(loss.balance_losses.begin(), loss.balance_losses.end(), 0.0);
      rec.total = loss.total;
      for (const auto& r : trace.records) {
        rec.fractions.push_back(r.fractions);
      }
      if (last_epoch) {
        for (std::size_t l = 0; l < layers; ++l) {
          for (std::uint32_t e : trace.records[l].selected) {
            ++report.activation_counts[l][e];
          }
          for (std::size_t e = 0; e < experts; ++e) {
            report.final_epoch_fractions[l][e] += trace.records[l].fractions[e];
          }
        }
        ++epoch_steps;
      }
      report.steps.push_back(std::move(rec));
      ++step;
    }
    if (last_epoch && epoch_steps > 0) {
      for (auto& f : report.final_epoch_fractions) {
        for (auto& v : f) {
          v /= static_cast<double>(epoch_steps);
        }
      }
    }
  }
  report.final_seg_loss = dataset_seg_loss(model, prepared);
  if (!std::isfinite(report.final_seg_loss)) {
    fail(ErrorKind::NumericalFailure, "training diverged at step " + std::to_string(step));
  }
  return report;
}

template class AdamW<float>;
template class AdamW<double>;

#define SMK_INSTANTIATE_TRAIN(Real)                                                                \
  template std::vector<PreparedImage<Real>> prepare_dataset<Real>(                                 \
      const std::vector<Sample>&, std::size_t, const DescriptorConfig&, const DescriptorMask&,     \
      std::size_t);                                                                                \
  template double dataset_seg_loss<Real>(const ToyModel<Real>&,                                    \
                                         const std::vector<PreparedImage<Real>>&);                 \
  template TrainingReport train_toy<Real>(ToyModel<Real>&, const std::vector<Sample>&,             \
                                          const TrainConfig&);

SMK_INSTANTIATE_TRAIN(float)
SMK_INSTANTIATE_TRAIN(double)

#undef SMK_INSTANTIATE_TRAIN

}  // namespace smk
