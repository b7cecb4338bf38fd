#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "smk/descriptors.hpp"
#include "smk/moe.hpp"
#include "smk/raster.hpp"

namespace smk {

struct ModelShape {
  std::size_t experts = 6;
  std::size_t top_k = 1;
  std::size_t channels = 32;
  std::size_t hidden = 64;
  std::size_t patch = 8;
  std::size_t classes = 2;
  std::size_t layers = 2;
  double lambda_bc = 0.005;

  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Initialization scales. The router gets a small Gaussian, like most sparse
/// MoE codebases; the experts start as near-identical clones.
struct InitConfig {
  double router_std = 0.02;
  double descriptor_router_std = 0.02;  // router columns fed by the descriptor triple
  double clone_noise = 1e-2;

  friend bool operator==(const InitConfig&, const InitConfig&) = default;
};

/// Patch embedding -> [identity residual + MoE] x layers -> per-token linear
/// head. Stands in for a ViT backbone with a segmentation decoder.
template <typename Real>
struct ToyModel {
  ModelShape shape;
  std::vector<Real> embed_weight;  // C x P*P
  std::vector<Real> embed_bias;    // C
  std::vector<MoeLayer<Real>> blocks;
  std::vector<Real> head_weight;   // K x C
  std::vector<Real> head_bias;     // K
};

/// Visits parameter blocks in declaration order (the checkpoint order).
template <typename Model, typename Fn>
void for_each_parameter(Model& model, Fn&& fn)
  requires requires { model.embed_weight; }
{
  fn(model.embed_weight);
  fn(model.embed_bias);
  for (auto& block : model.blocks) {
    for_each_parameter(block, fn);
  }
  fn(model.head_weight);
  fn(model.head_bias);
}

template <typename Real>
ToyModel<Real> init_toy_model(const ModelShape& shape, std::uint64_t seed,
                              const InitConfig& init = {});

template <typename Real>
ToyModel<Real> zeros_like(const ToyModel<Real>& model);

template <typename To, typename From>
ToyModel<To> convert_model(const ToyModel<From>& model);

/// Which descriptors reach the router; a disabled descriptor is zeroed before
/// normalization.
using DescriptorMask = std::array<bool, 3>;
inline constexpr DescriptorMask kAllDescriptors{true, true, true};

/// An image reduced to what the model consumes: log-intensity patches, the
/// normalized descriptor triple and per-token majority labels.
template <typename Real>
struct PreparedImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t patch = 0;
  std::size_t tokens = 0;
  std::vector<Real> patches;                // tokens x P*P, row-major patch pixels
  std::array<Real, 3> descriptor{};         // normalized, masked
  DescriptorVector raw_descriptor;
  std::vector<std::int32_t> token_labels;   // majority class, -1 when fully ignored
};

template <typename Real>
PreparedImage<Real> prepare_image(const RasterImage& image, const LabelMap* labels,
                                  std::size_t patch, const DescriptorConfig& cfg,
                                  const DescriptorMask& mask = kAllDescriptors);

/// Activations of one forward pass over a batch, kept for the backward pass.
template <typename Real>
struct ForwardTrace {
  std::vector<TokenBatch<Real>> inputs;     // input of each block (inputs[0] = embeddings)
  std::vector<RoutingRecord<Real>> records;  // one per block
  std::vector<Real> final_embeddings;        // tokens x C
  std::vector<Real> logits;                  // tokens x K
};

template <typename Real>
ForwardTrace<Real> model_forward(const ToyModel<Real>& model,
                                 const std::vector<const PreparedImage<Real>*>& batch);

struct LossBreakdown {
  double seg_loss = 0.0;
  std::vector<double> balance_losses;  // one per block
  double total = 0.0;
  std::size_t labelled_tokens = 0;
};

/// Mean token cross-entropy against majority labels plus one balance term per
/// block.
template <typename Real>
LossBreakdown model_loss(const ToyModel<Real>& model, const ForwardTrace<Real>& trace,
                         const std::vector<const PreparedImage<Real>*>& batch);

template <typename Real>
ToyModel<Real> model_backward(const ToyModel<Real>& model, const ForwardTrace<Real>& trace,
                              const std::vector<const PreparedImage<Real>*>& batch,
                              std::size_t threads = 1);

/// Per-pixel prediction plus the routing record of every block.
template <typename Real>
struct Prediction {
  LabelMap labels;
  std::vector<RoutingRecord<Real>> records;
};

template <typename Real>
Prediction<Real> predict(const ToyModel<Real>& model, const PreparedImage<Real>& image);

}  // namespace smk
