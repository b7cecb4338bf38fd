#include "smk/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "smk/error.hpp"
#include "smk/parallel.hpp"

namespace smk {

template <typename Real>
void TokenBatch<Real>::validate() const {
  require(embeddings.size() == batch * tokens_per_item * channels, ErrorKind::ContractViolation,
          "token batch embeddings do not match B x N x C");
  require(descriptors.size() == batch * kDescriptorDims, ErrorKind::ContractViolation,
          "token batch needs one descriptor triple per item");
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (!std::isfinite(embeddings[i])) {
      fail(ErrorKind::NumericalFailure, "non-finite embedding in token " + std::to_string(i / channels));
    }
  }
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    require(std::isfinite(descriptors[i]), ErrorKind::NumericalFailure,
            "non-finite descriptor for item " + std::to_string(i / kDescriptorDims));
  }
}

template <typename Real>
void MoeLayer<Real>::validate() const {
  const std::size_t n = experts.size();
  require(n >= 1, ErrorKind::ContractViolation, "MoE layer needs at least one expert");
  require(top_k >= 1 && top_k <= n, ErrorKind::ContractViolation, "top_k must be in [1, n]");
  require(lambda_bc >= 0.0, ErrorKind::ContractViolation, "lambda_bc must be >= 0");
  require(router.experts == n && router.inputs > kDescriptorDims &&
              router.weight.size() == n * router.inputs && router.bias.size() == n,
          ErrorKind::ContractViolation, "router shape does not match expert count");
  const std::size_t c = channels();
  for (const auto& e : experts) {
    require(e.channels == c && e.hidden >= 1 && e.w1.size() == e.hidden * c &&
                e.b1.size() == e.hidden && e.w2.size() == c * e.hidden && e.b2.size() == c,
            ErrorKind::ContractViolation, "expert shape does not match router input arity");
  }
}

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
Real gelu_derivative(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
  const Real pdf = std::exp(Real(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Real> /
                   std::numbers::sqrt2_v<Real>;
  return cdf + x * pdf;
}

namespace {

template <typename Real>
void fill_normal(std::vector<Real>& v, std::size_t count, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  v.resize(count);
  for (auto& x : v) {
    x = static_cast<Real>(dist(rng));
  }
}

template <typename Real>
void perturb(std::vector<Real>& v, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) {
    x = static_cast<Real>(static_cast<double>(x) + dist(rng));
  }
}

template <typename Real>
ExpertFfn<Real> zero_expert(std::size_t channels, std::size_t hidden) {
  ExpertFfn<Real> e;
  e.channels = channels;
  e.hidden = hidden;
  e.w1.assign(hidden * channels, Real(0));
  e.b1.assign(hidden, Real(0));
  e.w2.assign(channels * hidden, Real(0));
  e.b2.assign(channels, Real(0));
  return e;
}

// Hidden pre-activations and activations of one expert for one token.
template <typename Real>
struct ExpertTrace {
  std::vector<Real> pre;
  std::vector<Real> act;
  std::vector<Real> out;
};

template <typename Real>
void expert_trace(const ExpertFfn<Real>& e, std::span<const Real> z, ExpertTrace<Real>& tr) {
  tr.pre.resize(e.hidden);
  tr.act.resize(e.hidden);
  tr.out.resize(e.channels);
  for (std::size_t h = 0; h < e.hidden; ++h) {
    Real acc = e.b1[h];
    const Real* row = &e.w1[h * e.channels];
    for (std::size_t c = 0; c < e.channels; ++c) {
      acc += row[c] * z[c];
    }
    tr.pre[h] = acc;
    tr.act[h] = gelu(acc);
  }
  for (std::size_t c = 0; c < e.channels; ++c) {
    Real acc = e.b2[c];
    const Real* row = &e.w2[c * e.hidden];
    for (std::size_t h = 0; h < e.hidden; ++h) {
      acc += row[h] * tr.act[h];
    }
    tr.out[c] = acc;
  }
}

template <typename Real>
void add_into(MoeLayer<Real>& dst, const MoeLayer<Real>& src) {
  std::vector<const std::vector<Real>*> sources;
  for_each_parameter(src, [&](const std::vector<Real>& block) { sources.push_back(&block); });
  std::size_t idx = 0;
  for_each_parameter(dst, [&](std::vector<Real>& block) {
    const auto& from = *sources[idx++];
    for (std::size_t i = 0; i < block.size(); ++i) {
      block[i] += from[i];
    }
  });
}

template <typename Real>
void check_shapes(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch) {
  layer.validate();
  batch.validate();
  require(batch.channels == layer.channels(), ErrorKind::ContractViolation,
          "batch has " + std::to_string(batch.channels) + " channels, router expects " +
              std::to_string(layer.channels()));
}

}  // namespace

template <typename Real>
MoeLayer<Real> init_moe_layer(const MoeShape& shape, Rng& rng, double router_std,
                              double clone_noise) {
  require(shape.experts >= 1 && shape.top_k >= 1 && shape.top_k <= shape.experts,
          ErrorKind::ContractViolation, "top_k must be in [1, n]");
  require(shape.channels >= 1 && shape.hidden >= 1, ErrorKind::ContractViolation,
          "channels and hidden dims must be positive");
  MoeLayer<Real> layer;
  layer.top_k = shape.top_k;
  layer.lambda_bc = shape.lambda_bc;
  layer.router.experts = shape.experts;
  layer.router.inputs = shape.channels + kDescriptorDims;
  fill_normal(layer.router.weight, shape.experts * layer.router.inputs, router_std, rng);
  layer.router.bias.assign(shape.experts, Real(0));

  ExpertFfn<Real> base = zero_expert<Real>(shape.channels, shape.hidden);
  fill_normal(base.w1, shape.hidden * shape.channels, 1.0 / std::sqrt(double(shape.channels)), rng);
  fill_normal(base.w2, shape.channels * shape.hidden, 1.0 / std::sqrt(double(shape.hidden)), rng);
  for (std::size_t k = 0; k < shape.experts; ++k) {
    ExpertFfn<Real> clone = base;
    perturb(clone.w1, clone_noise, rng);
    perturb(clone.b1, clone_noise, rng);
    perturb(clone.w2, clone_noise, rng);
    perturb(clone.b2, clone_noise, rng);
    layer.experts.push_back(std::move(clone));
  }
  return layer;
}

template <typename Real>
MoeLayer<Real> zeros_like(const MoeLayer<Real>& layer) {
  MoeLayer<Real> z = layer;
  for_each_parameter(z, [](std::vector<Real>& block) { std::fill(block.begin(), block.end(), Real(0)); });
  return z;
}

template <typename Real>
void expert_forward(const ExpertFfn<Real>& expert, std::span<const Real> z, std::span<Real> out) {
  ExpertTrace<Real> tr;
  expert_trace(expert, z, tr);
  std::copy(tr.out.begin(), tr.out.end(), out.begin());
}

template <typename Real>
RoutingRecord<Real> route(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch) {
  check_shapes(layer, batch);
  const std::size_t n = layer.expert_count();
  const std::size_t k = layer.top_k;
  const std::size_t c = batch.channels;
  const std::size_t tokens = batch.token_count();

  RoutingRecord<Real> rec;
  rec.tokens = tokens;
  rec.experts = n;
  rec.top_k = k;
  rec.scores.resize(tokens * n);
  rec.selected.resize(tokens * k);
  rec.gates.resize(tokens * k);
  rec.fractions.assign(n, 0.0);
  rec.mean_probs.assign(n, 0.0);

  std::vector<Real> logits(n);
  std::vector<bool> taken(n);
  for (std::size_t t = 0; t < tokens; ++t) {
    auto z = batch.token(t);
    auto s = batch.descriptor_of_token(t);
    for (std::size_t j = 0; j < n; ++j) {
      const Real* w = &layer.router.weight[j * layer.router.inputs];
      Real acc = layer.router.bias[j];
      for (std::size_t i = 0; i < c; ++i) {
        acc += w[i] * z[i];
      }
      for (std::size_t i = 0; i < kDescriptorDims; ++i) {
        acc += w[c + i] * s[i];
      }
      if (!std::isfinite(acc)) {
        fail(ErrorKind::NumericalFailure, "non-finite router logit for token " + std::to_string(t));
      }
      logits[j] = acc;
    }
    Real peak = *std::max_element(logits.begin(), logits.end());
    Real sum = 0;
    Real* pi = &rec.scores[t * n];
    for (std::size_t j = 0; j < n; ++j) {
      pi[j] = std::exp(logits[j] - peak);
      sum += pi[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      pi[j] /= sum;
    }

    // Top-k by repeated scan; strict '>' keeps the lowest index on ties.
    std::fill(taken.begin(), taken.end(), false);
    Real selected_mass = 0;
    for (std::size_t slot = 0; slot < k; ++slot) {
      std::size_t best = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (!taken[j] && (best == n || pi[j] > pi[best])) {
          best = j;
        }
      }
      taken[best] = true;
      rec.selected[t * k + slot] = static_cast<std::uint32_t>(best);
      selected_mass += pi[best];
    }
    for (std::size_t slot = 0; slot < k; ++slot) {
      rec.gates[t * k + slot] = pi[rec.selected[t * k + slot]] / selected_mass;
      rec.fractions[rec.selected[t * k + slot]] += 1.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
      rec.mean_probs[j] += static_cast<double>(pi[j]);
    }
  }
  if (tokens > 0) {
    for (std::size_t j = 0; j < n; ++j) {
      rec.fractions[j] /= static_cast<double>(tokens * k);
      rec.mean_probs[j] /= static_cast<double>(tokens);
    }
  }
  return rec;
}

template <typename Real>
MoeOutput<Real> moe_forward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch) {
  MoeOutput<Real> out{batch, route(layer, batch)};
  const std::size_t c = batch.channels;
  const std::size_t k = layer.top_k;
  ExpertTrace<Real> tr;
  for (std::size_t t = 0; t < batch.token_count(); ++t) {
    auto z = batch.token(t);
    Real* dst = &out.batch.embeddings[t * c];
    std::fill(dst, dst + c, Real(0));
    for (std::size_t slot = 0; slot < k; ++slot) {
      const auto& expert = layer.experts[out.record.selected[t * k + slot]];
      const Real g = out.record.gates[t * k + slot];
      expert_trace(expert, z, tr);
      for (std::size_t i = 0; i < c; ++i) {
        dst[i] += g * tr.out[i];
      }
    }
  }
  return out;
}

template <typename Real>
double load_balance_loss(const RoutingRecord<Real>& rec, const MoeLayer<Real>& layer) {
  double dot = 0.0;
  for (std::size_t j = 0; j < rec.experts; ++j) {
    dot += rec.fractions[j] * rec.mean_probs[j];
  }
  return layer.lambda_bc * static_cast<double>(rec.experts) * dot;
}

double total_loss(double seg_loss, std::span<const double> balance_losses) {
  double total = seg_loss;
  for (double l : balance_losses) {
    total += l;
  }
  return total;
}

template <typename Real>
MoeGradients<Real> moe_backward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch,
                                const RoutingRecord<Real>& record, std::span<const Real> upstream,
                                std::size_t threads) {
  check_shapes(layer, batch);
  const std::size_t n = layer.expert_count();
  const std::size_t k = layer.top_k;
  const std::size_t c = batch.channels;
  const std::size_t inputs = layer.router.inputs;
  const std::size_t tokens = batch.token_count();
  require(upstream.size() == tokens * c, ErrorKind::ContractViolation,
          "upstream gradient does not match B x N x C");
  require(record.tokens == tokens && record.experts == n && record.top_k == k,
          ErrorKind::ContractViolation, "routing record does not match layer and batch");

  // d L_bc / d pi_tk = lambda * n * f_k / T with f held fixed.
  std::vector<Real> balance_grad(n, Real(0));
  if (tokens > 0) {
    for (std::size_t j = 0; j < n; ++j) {
      balance_grad[j] = static_cast<Real>(layer.lambda_bc * static_cast<double>(n) *
                                          record.fractions[j] / static_cast<double>(tokens));
    }
  }

  MoeGradients<Real> grads;
  grads.params = zeros_like(layer);
  grads.inputs.assign(tokens * c, Real(0));

  std::vector<MoeLayer<Real>> partial(batch.batch, grads.params);
  parallel_for(batch.batch, threads, [&](std::size_t item) {
    MoeLayer<Real>& g = partial[item];
    ExpertTrace<Real> tr;
    std::vector<Real> d_gate(k);
    std::vector<Real> d_pi(n);
    std::vector<Real> d_logit(n);
    std::vector<Real> d_expert(c);
    std::vector<Real> d_hidden;
    std::vector<Real> x(inputs);

    for (std::size_t t = item * batch.tokens_per_item; t < (item + 1) * batch.tokens_per_item; ++t) {
      auto z = batch.token(t);
      auto s = batch.descriptor_of_token(t);
      std::copy(z.begin(), z.end(), x.begin());
      std::copy(s.begin(), s.end(), x.begin() + static_cast<std::ptrdiff_t>(c));
      const Real* dy = &upstream[t * c];
      const Real* pi = &record.scores[t * n];
      Real* dz = &grads.inputs[t * c];
      auto selected = record.selected_of(t);
      auto gates = record.gates_of(t);

      Real selected_mass = 0;
      Real weighted = 0;
      for (std::size_t slot = 0; slot < k; ++slot) {
        const auto& expert = layer.experts[selected[slot]];
        auto& ge = g.experts[selected[slot]];
        expert_trace(expert, z, tr);
        Real dg = 0;
        for (std::size_t i = 0; i < c; ++i) {
          dg += dy[i] * tr.out[i];
        }
        d_gate[slot] = dg;
        selected_mass += pi[selected[slot]];
        weighted += gates[slot] * dg;

        // Expert path, dE = g * dy.
        const Real gate = gates[slot];
        d_hidden.assign(expert.hidden, Real(0));
        for (std::size_t i = 0; i < c; ++i) {
          d_expert[i] = gate * dy[i];
          ge.b2[i] += d_expert[i];
          Real* gw2 = &ge.w2[i * expert.hidden];
          const Real* w2 = &expert.w2[i * expert.hidden];
          for (std::size_t h = 0; h < expert.hidden; ++h) {
            gw2[h] += d_expert[i] * tr.act[h];
            d_hidden[h] += w2[h] * d_expert[i];
          }
        }
        for (std::size_t h = 0; h < expert.hidden; ++h) {
          const Real dh = d_hidden[h] * gelu_derivative(tr.pre[h]);
          ge.b1[h] += dh;
          Real* gw1 = &ge.w1[h * c];
          const Real* w1 = &expert.w1[h * c];
          for (std::size_t i = 0; i < c; ++i) {
            gw1[i] += dh * z[i];
            dz[i] += w1[i] * dh;
          }
        }
      }

      // Gate normalization g_m = pi_m / sum_I pi, then the balance term.
      for (std::size_t j = 0; j < n; ++j) {
        d_pi[j] = balance_grad[j];
      }
      for (std::size_t slot = 0; slot < k; ++slot) {
        d_pi[selected[slot]] += (d_gate[slot] - weighted) / selected_mass;
      }
      Real inner = 0;
      for (std::size_t j = 0; j < n; ++j) {
        inner += pi[j] * d_pi[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        d_logit[j] = pi[j] * (d_pi[j] - inner);
      }

      for (std::size_t j = 0; j < n; ++j) {
        const Real dl = d_logit[j];
        g.router.bias[j] += dl;
        Real* gw = &g.router.weight[j * inputs];
        const Real* w = &layer.router.weight[j * inputs];
        for (std::size_t i = 0; i < inputs; ++i) {
          gw[i] += dl * x[i];
        }
        for (std::size_t i = 0; i < c; ++i) {
          dz[i] += w[i] * dl;
        }
      }
    }
  });

  for (const auto& part : partial) {
    add_into(grads.params, part);
  }
  return grads;
}

template <typename Real>
MoeGradients<Real> moe_backward(const MoeLayer<Real>& layer, const TokenBatch<Real>& batch,
                                std::span<const Real> upstream, std::size_t threads) {
  RoutingRecord<Real> record = route(layer, batch);
  return moe_backward(layer, batch, record, upstream, threads);
}

#define SMK_INSTANTIATE_MOE(Real)                                                                  \
  template struct TokenBatch<Real>;                                                                \
  template struct MoeLayer<Real>;                                                                  \
  template Real gelu<Real>(Real);                                                                  \
  template Real gelu_derivative<Real>(Real);                                                       \
  template MoeLayer<Real> init_moe_layer<Real>(const MoeShape&, Rng&, double, double);             \
  template MoeLayer<Real> zeros_like<Real>(const MoeLayer<Real>&);                                 \
  template void expert_forward<Real>(const ExpertFfn<Real>&, std::span<const Real>, std::span<Real>); \
  template RoutingRecord<Real> route<Real>(const MoeLayer<Real>&, const TokenBatch<Real>&);        \
  template MoeOutput<Real> moe_forward<Real>(const MoeLayer<Real>&, const TokenBatch<Real>&);      \
  template double load_balance_loss<Real>(const RoutingRecord<Real>&, const MoeLayer<Real>&);      \
  template MoeGradients<Real> moe_backward<Real>(const MoeLayer<Real>&, const TokenBatch<Real>&,   \
                                                 const RoutingRecord<Real>&, std::span<const Real>, \
                                                 std::size_t);                                     \
  template MoeGradients<Real> moe_backward<Real>(const MoeLayer<Real>&, const TokenBatch<Real>&,   \
                                                 std::span<const Real>, std::size_t);

SMK_INSTANTIATE_MOE(float)
SMK_INSTANTIATE_MOE(double)

#undef SMK_INSTANTIATE_MOE

}  // namespace smk
