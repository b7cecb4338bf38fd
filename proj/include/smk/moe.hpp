#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "smk/rng.hpp"

namespace smk {

inline constexpr std::size_t kDescriptorDims = 3;

/// Z in R^{B x N x C} plus one normalized descriptor triple per item; the
/// triple is tiled across that item's tokens when routing.
template <typename Real>
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t tokens_per_item = 0;
  std::size_t channels = 0;
  std::vector<Real> embeddings;   // B * N * C
  std::vector<Real> descriptors;  // B * 3

  std::size_t token_count() const noexcept { return batch * tokens_per_item; }
  std::span<const Real> token(std::size_t t) const {
    return std::span<const Real>(embeddings).subspan(t * channels, channels);
  }
  std::span<const Real> descriptor_of_token(std::size_t t) const {
    return std::span<const Real>(descriptors).subspan((t / tokens_per_item) * kDescriptorDims,
                                                      kDescriptorDims);
  }
  void validate() const;
};

template <typename Real>
struct RouterParams {
  std::size_t experts = 0;
  std::size_t inputs = 0;   // C + 3
  std::vector<Real> weight;  // experts x inputs, row-major
  std::vector<Real> bias;    // experts
};

/// Two-layer GELU feed-forward network: w2 * gelu(w1 z + b1) + b2.
template <typename Real>
struct ExpertFfn {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::vector<Real> w1;  // hidden x channels
  std::vector<Real> b1;  // hidden
  std::vector<Real> w2;  // channels x hidden
  std::vector<Real> b2;  // channels
};

template <typename Real>
struct MoeLayer {
  RouterParams<Real> router;
  std::vector<ExpertFfn<Real>> experts;
  std::size_t top_k = 1;
  double lambda_bc = 0.005;

  std::size_t expert_count() const noexcept { return experts.size(); }
  std::size_t channels() const noexcept { return router.inputs - kDescriptorDims; }
  std::size_t hidden() const noexcept { return experts.empty() ? 0 : experts.front().hidden; }
  void validate() const;
};

template <typename Real>
struct RoutingRecord {
  std::size_t tokens = 0;
  std::size_t experts = 0;
  std::size_t top_k = 0;
  std::vector<Real> scores;                // tokens x experts, softmax output
  std::vector<std::uint32_t> selected;     // tokens x top_k, descending score
  std::vector<Real> gates;                 // tokens x top_k, matches `selected`
  std::vector<double> fractions;           // f_k, sums to 1
  std::vector<double> mean_probs;          // p_k, sums to 1

  std::span<const Real> scores_of(std::size_t t) const {
    return std::span<const Real>(scores).subspan(t * experts, experts);
  }
  std::span<const std::uint32_t> selected_of(std::size_t t) const {
    return std::span<const std::uint32_t>(selected).subspan(t * top_k, top_k);
  }
  std::span<const Real> gates_of(std::size_t t) const {
    return std::span<const Real>(gates).subspan(t * top_k, top_k);
  }
};

/// Gradients of a layer; same shapes as the parameters they mirror.
template <typename Real>
struct MoeGradients {
  MoeLayer<Real> params;
  std::vector<Real> inputs;  // d/dZ, B * N * C
};

struct MoeShape {
  std::size_t experts = 6;
  std::size_t top_k = 1;
  std::size_t channels = 32;
  std::size_t hidden = 64;
  double lambda_bc = 0.005;
};

/// Random layer: router ~ N(0, router_std^2); experts are clones of one
/// random FFN perturbed by N(0, clone_noise^2).
template <typename Real>
MoeLayer<Real> init_moe_layer(const MoeShape& shape, Rng& rng, double router_std,
                              double clone_noise = 1e-2);

template <typename Real>
MoeLayer<Real> zeros_like(const MoeLayer<Real>& layer);

template <typename Real>
Real gelu(Real x);
template <typename Real>
Real gelu_derivative(Real x);

/// Dense expert evaluation E(z) into out.
template <typename Real>
void expert_forward(const ExpertFfn<Real>& expert, std::span<const Real> z, std::span<Real> out);

template <typename Real>
RoutingRecord<Real> route(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch);

template <typename Real>
struct MoeOutput {
  TokenBatch<Real> batch;
  RoutingRecord<Real> record;
};

/// z~ = sum over selected k of g_k E_k(z); descriptors pass through.
template <typename Real>
MoeOutput<Real> moe_forward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch);

/// lambda_bc * n * sum_k f_k p_k.
template <typename Real>
double load_balance_loss(const RoutingRecord<Real>& rec, const MoeLayer<Real>& layer);

double total_loss(double seg_loss, std::span<const double> balance_losses);

/// Gradients of <upstream, moe_forward(layer, batch)> + load_balance_loss with
/// the selected sets and f held fixed. `record` must come from the forward
/// pass on the same (layer, batch). Per-item partial sums are reduced in item
/// order, so any `threads` value yields bit-identical results.
template <typename Real>
MoeGradients<Real> moe_backward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch,
                                const RoutingRecord<Real>& record, std::span<const Real> upstream,
                                std::size_t threads = 1);

template <typename Real>
MoeGradients<Real> moe_backward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch,
                                std::span<const Real> upstream, std::size_t threads = 1);

/// Visits every parameter block in declaration order: router weight, router
/// bias, then per expert w1, b1, w2, b2.
template <typename Layer, typename Fn>
void for_each_parameter(Layer& layer, Fn&& fn) {
  fn(layer.router.weight);
  fn(layer.router.bias);
  for (auto& expert : layer.experts) {
    fn(expert.w1);
    fn(expert.b1);
    fn(expert.w2);
    fn(expert.b2);
  }
}

}  // namespace smk
