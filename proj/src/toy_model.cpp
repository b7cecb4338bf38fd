#include "smk/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "smk/error.hpp"
#include "smk/parallel.hpp"

namespace smk {

void ModelShape::validate() const {
  require(experts >= 1, ErrorKind::ContractViolation, "expert count must be >= 1");
  require(top_k >= 1 && top_k <= experts, ErrorKind::ContractViolation, "top_k must be in [1, n]");
  require(channels >= 1 && hidden >= 1 && patch >= 1 && layers >= 1, ErrorKind::ContractViolation,
          "channels, hidden, patch and layers must be positive");
  require(classes >= 1 && classes <= 255, ErrorKind::ContractViolation, "classes must be in [1, 255]");
  require(lambda_bc >= 0.0 && std::isfinite(lambda_bc), ErrorKind::ContractViolation,
          "lambda_bc must be finite and >= 0");
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
void add_into(ToyModel<Real>& dst, const ToyModel<Real>& src) {
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
void check_batch(const ToyModel<Real>& model, const std::vector<const PreparedImage<Real>*>& batch) {
  require(!batch.empty(), ErrorKind::ContractViolation, "empty batch");
  const auto* first = batch.front();
  for (const auto* img : batch) {
    require(img->patch == model.shape.patch, ErrorKind::ContractViolation,
            "prepared image patch size does not match the model");
    require(img->tokens == first->tokens, ErrorKind::ContractViolation,
            "all images in a batch must share dimensions");
  }
}

}  // namespace

template <typename Real>
ToyModel<Real> init_toy_model(const ModelShape& shape, std::uint64_t seed, const InitConfig& init) {
  shape.validate();
  Rng rng = named_stream(seed, "init");
  ToyModel<Real> model;
  model.shape = shape;
  const std::size_t pixels = shape.patch * shape.patch;
  fill_normal(model.embed_weight, shape.channels * pixels, 1.0 / std::sqrt(double(pixels)), rng);
  model.embed_bias.assign(shape.channels, Real(0));
  MoeShape block_shape{shape.experts, shape.top_k, shape.channels, shape.hidden, shape.lambda_bc};
  for (std::size_t l = 0; l < shape.layers; ++l) {
    MoeLayer<Real> block = init_moe_layer<Real>(block_shape, rng, init.router_std, init.clone_noise);
    std::normal_distribution<double> descriptor_dist(0.0, init.descriptor_router_std);
    for (std::size_t j = 0; j < shape.experts; ++j) {
      for (std::size_t i = 0; i < kDescriptorDims; ++i) {
        block.router.weight[j * block.router.inputs + shape.channels + i] =
            static_cast<Real>(descriptor_dist(rng));
      }
    }
    model.blocks.push_back(std::move(block));
  }
  fill_normal(model.head_weight, shape.classes * shape.channels,
              1.0 / std::sqrt(double(shape.channels)), rng);
  model.head_bias.assign(shape.classes, Real(0));
  return model;
}

template <typename Real>
ToyModel<Real> zeros_like(const ToyModel<Real>& model) {
  ToyModel<Real> z = model;
  for_each_parameter(z, [](std::vector<Real>& block) { std::fill(block.begin(), block.end(), Real(0)); });
  return z;
}

template <typename To, typename From>
ToyModel<To> convert_model(const ToyModel<From>& model) {
  auto cast = [](const std::vector<From>& v) { return std::vector<To>(v.begin(), v.end()); };
  ToyModel<To> out;
  out.shape = model.shape;
  out.embed_weight = cast(model.embed_weight);
  out.embed_bias = cast(model.embed_bias);
  for (const auto& block : model.blocks) {
    MoeLayer<To> b;
    b.top_k = block.top_k;
    b.lambda_bc = block.lambda_bc;
    b.router.experts = block.router.experts;
    b.router.inputs = block.router.inputs;
    b.router.weight = cast(block.router.weight);
    b.router.bias = cast(block.router.bias);
    for (const auto& e : block.experts) {
      b.experts.push_back(ExpertFfn<To>{e.channels, e.hidden, cast(e.w1), cast(e.b1), cast(e.w2), cast(e.b2)});
    }
    out.blocks.push_back(std::move(b));
  }
  out.head_weight = cast(model.head_weight);
  out.head_bias = cast(model.head_bias);
  return out;
}

template <typename Real>
PreparedImage<Real> prepare_image(const RasterImage& image, const LabelMap* labels,
                                  std::size_t patch, const DescriptorConfig& cfg,
                                  const DescriptorMask& mask) {
  require(patch >= 1 && image.width() % patch == 0 && image.height() % patch == 0,
          ErrorKind::ContractViolation,
          "image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
              " is not divisible by patch size " + std::to_string(patch));
  if (labels != nullptr) {
    require(labels->width() == image.width() && labels->height() == image.height(),
            ErrorKind::DimensionMismatch, "label map dimensions differ from the image");
  }
  PreparedImage<Real> out;
  out.width = image.width();
  out.height = image.height();
  out.patch = patch;
  const std::size_t grid_w = image.width() / patch;
  const std::size_t grid_h = image.height() / patch;
  out.tokens = grid_w * grid_h;

  LogRaster x = log_transform(image);
  out.patches.resize(out.tokens * patch * patch);
  for (std::size_t pr = 0; pr < grid_h; ++pr) {
    for (std::size_t pc = 0; pc < grid_w; ++pc) {
      Real* dst = &out.patches[(pr * grid_w + pc) * patch * patch];
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
          dst[r * patch + c] = static_cast<Real>(x.at(pr * patch + r, pc * patch + c));
        }
      }
    }
  }

  DescriptorVector s = compute_descriptors(image, cfg);
  out.raw_descriptor = s;
  if (!mask[0]) {
    s.h_de = 0.0;
  }
  if (!mask[1]) {
    s.enl = 0.0;
  }
  if (!mask[2]) {
    s.r_lr = 0.0;
  }
  auto normalized = normalize_descriptors(s, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    out.descriptor[i] = static_cast<Real>(normalized[i]);
  }

  out.token_labels.assign(out.tokens, -1);
  if (labels != nullptr) {
    std::vector<std::size_t> votes(labels->num_classes());
    for (std::size_t pr = 0; pr < grid_h; ++pr) {
      for (std::size_t pc = 0; pc < grid_w; ++pc) {
        std::fill(votes.begin(), votes.end(), 0);
        bool any = false;
        for (std::size_t r = pr * patch; r < (pr + 1) * patch; ++r) {
          for (std::size_t c = pc * patch; c < (pc + 1) * patch; ++c) {
            std::size_t idx = r * labels->width() + c;
            if (!labels->ignored(idx)) {
              ++votes[labels->labels()[idx]];
              any = true;
            }
          }
        }
        if (any) {
          // max_element returns the first maximum: ties go to the lower class.
          out.token_labels[pr * grid_w + pc] = static_cast<std::int32_t>(
              std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
      }
    }
  }
  return out;
}

template <typename Real>
ForwardTrace<Real> model_forward(const ToyModel<Real>& model,
                                 const std::vector<const PreparedImage<Real>*>& batch) {
  check_batch(model, batch);
  const std::size_t c = model.shape.channels;
  const std::size_t pixels = model.shape.patch * model.shape.patch;
  const std::size_t per_item = batch.front()->tokens;
  const std::size_t tokens = per_item * batch.size();

  TokenBatch<Real> input;
  input.batch = batch.size();
  input.tokens_per_item = per_item;
  input.channels = c;
  input.embeddings.resize(tokens * c);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    input.descriptors.insert(input.descriptors.end(), batch[b]->descriptor.begin(),
                             batch[b]->descriptor.end());
    for (std::size_t t = 0; t < per_item; ++t) {
      const Real* patch = &batch[b]->patches[t * pixels];
      Real* z = &input.embeddings[(b * per_item + t) * c];
      for (std::size_t i = 0; i < c; ++i) {
        Real acc = model.embed_bias[i];
        const Real* w = &model.embed_weight[i * pixels];
        for (std::size_t p = 0; p < pixels; ++p) {
          acc += w[p] * patch[p];
        }
        z[i] = acc;
      }
    }
  }

  ForwardTrace<Real> trace;
  trace.inputs.push_back(std::move(input));
  for (const auto& block : model.blocks) {
    MoeOutput<Real> out = moe_forward(block, trace.inputs.back());
    TokenBatch<Real> next = trace.inputs.back();
    for (std::size_t i = 0; i < next.embeddings.size(); ++i) {
      next.embeddings[i] += out.batch.embeddings[i];
    }
    trace.records.push_back(std::move(out.record));
    trace.inputs.push_back(std::move(next));
  }
  trace.final_embeddings = std::move(trace.inputs.back().embeddings);
  trace.inputs.pop_back();

  const std::size_t k = model.shape.classes;
  trace.logits.resize(tokens * k);
  for (std::size_t t = 0; t < tokens; ++t) {
    const Real* z = &trace.final_embeddings[t * c];
    for (std::size_t j = 0; j < k; ++j) {
      Real acc = model.head_bias[j];
      const Real* w = &model.head_weight[j * c];
      for (std::size_t i = 0; i < c; ++i) {
        acc += w[i] * z[i];
      }
      trace.logits[t * k + j] = acc;
    }
  }
  return trace;
}

namespace {

// Softmax of one logit row (stable).
template <typename Real>
void softmax_row(const Real* logits, std::size_t k, std::vector<Real>& probs) {
  probs.resize(k);
  Real peak = *std::max_element(logits, logits + k);
  Real sum = 0;
  for (std::size_t j = 0; j < k; ++j) {
    probs[j] = std::exp(logits[j] - peak);
    sum += probs[j];
  }
  for (auto& p : probs) {
    p /= sum;
  }
}

template <typename Real>
std::size_t count_labelled(const std::vector<const PreparedImage<Real>*>& batch) {
  std::size_t n = 0;
  for (const auto* img : batch) {
    n += static_cast<std::size_t>(
        std::count_if(img->token_labels.begin(), img->token_labels.end(), [](auto l) { return l >= 0; }));
  }
  return n;
}

}  // namespace

template <typename Real>
LossBreakdown model_loss(const ToyModel<Real>& model, const ForwardTrace<Real>& trace,
                         const std::vector<const PreparedImage<Real>*>& batch) {
  LossBreakdown loss;
  const std::size_t k = model.shape.classes;
  const std::size_t per_item = batch.front()->tokens;
  double sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t < per_item; ++t) {
      std::int32_t label = batch[b]->token_labels[t];
      if (label < 0) {
        continue;
      }
      require(static_cast<std::size_t>(label) < k, ErrorKind::ContractViolation,
              "token label exceeds the model class count");
      const Real* row = &trace.logits[(b * per_item + t) * k];
      double peak = *std::max_element(row, row + k);
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        z += std::exp(static_cast<double>(row[j]) - peak);
      }
      sum += peak + std::log(z) - static_cast<double>(row[label]);
      ++loss.labelled_tokens;
    }
  }
  loss.seg_loss = loss.labelled_tokens > 0 ? sum / static_cast<double>(loss.labelled_tokens) : 0.0;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    loss.balance_losses.push_back(load_balance_loss(trace.records[l], model.blocks[l]));
  }
  loss.total = total_loss(loss.seg_loss, loss.balance_losses);
  return loss;
}

template <typename Real>
ToyModel<Real> model_backward(const ToyModel<Real>& model, const ForwardTrace<Real>& trace,
                              const std::vector<const PreparedImage<Real>*>& batch,
                              std::size_t threads) {
  check_batch(model, batch);
  const std::size_t c = model.shape.channels;
  const std::size_t k = model.shape.classes;
  const std::size_t pixels = model.shape.patch * model.shape.patch;
  const std::size_t per_item = batch.front()->tokens;
  const std::size_t tokens = per_item * batch.size();
  const std::size_t labelled = count_labelled(batch);
  const Real scale = labelled > 0 ? Real(1) / static_cast<Real>(labelled) : Real(0);

  ToyModel<Real> grads = zeros_like(model);
  std::vector<Real> dz(tokens * c, Real(0));

  // Head and cross-entropy, reduced per item in item order.
  std::vector<ToyModel<Real>> partial(batch.size());
  auto head_only = [&](std::size_t b) {
    ToyModel<Real>& g = partial[b];
    g.head_weight.assign(model.head_weight.size(), Real(0));
    g.head_bias.assign(model.head_bias.size(), Real(0));
    std::vector<Real> probs;
    for (std::size_t t = b * per_item; t < (b + 1) * per_item; ++t) {
      std::int32_t label = batch[b]->token_labels[t - b * per_item];
      if (label < 0) {
        continue;
      }
      softmax_row(&trace.logits[t * k], k, probs);
      const Real* z = &trace.final_embeddings[t * c];
      for (std::size_t j = 0; j < k; ++j) {
        Real d = (probs[j] - (static_cast<std::int32_t>(j) == label ? Real(1) : Real(0))) * scale;
        g.head_bias[j] += d;
        const Real* w = &model.head_weight[j * c];
        Real* gw = &g.head_weight[j * c];
        for (std::size_t i = 0; i < c; ++i) {
          gw[i] += d * z[i];
          dz[t * c + i] += w[i] * d;
        }
      }
    }
  };
  parallel_for(batch.size(), threads, head_only);
  for (const auto& part : partial) {
    for (std::size_t i = 0; i < part.head_weight.size(); ++i) {
      grads.head_weight[i] += part.head_weight[i];
    }
    for (std::size_t i = 0; i < part.head_bias.size(); ++i) {
      grads.head_bias[i] += part.head_bias[i];
    }
  }

  // Residual blocks in reverse: z_{l+1} = z_l + MoE_l(z_l).
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    MoeGradients<Real> g = moe_backward(model.blocks[l], trace.inputs[l], trace.records[l],
                                        std::span<const Real>(dz), threads);
    grads.blocks[l] = std::move(g.params);
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dz[i] += g.inputs[i];
    }
  }

  auto embed_part = [&](std::size_t b) {
    ToyModel<Real>& g = partial[b];
    g.embed_weight.assign(model.embed_weight.size(), Real(0));
    g.embed_bias.assign(model.embed_bias.size(), Real(0));
    for (std::size_t t = 0; t < per_item; ++t) {
      const Real* patch = &batch[b]->patches[t * pixels];
      const Real* d = &dz[(b * per_item + t) * c];
      for (std::size_t i = 0; i < c; ++i) {
        g.embed_bias[i] += d[i];
        Real* gw = &g.embed_weight[i * pixels];
        for (std::size_t p = 0; p < pixels; ++p) {
          gw[p] += d[i] * patch[p];
        }
      }
    }
  };
  parallel_for(batch.size(), threads, embed_part);
  for (const auto& part : partial) {
    for (std::size_t i = 0; i < part.embed_weight.size(); ++i) {
      grads.embed_weight[i] += part.embed_weight[i];
    }
    for (std::size_t i = 0; i < part.embed_bias.size(); ++i) {
      grads.embed_bias[i] += part.embed_bias[i];
    }
  }
  return grads;
}

template <typename Real>
Prediction<Real> predict(const ToyModel<Real>& model, const PreparedImage<Real>& image) {
  std::vector<const PreparedImage<Real>*> batch{&image};
  ForwardTrace<Real> trace = model_forward(model, batch);
  const std::size_t k = model.shape.classes;
  const std::size_t p = model.shape.patch;
  const std::size_t grid_w = image.width / p;
  std::vector<std::uint8_t> labels(image.width * image.height);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      std::size_t t = (r / p) * grid_w + c / p;
      const Real* row = &trace.logits[t * k];
      labels[r * image.width + c] = static_cast<std::uint8_t>(std::max_element(row, row + k) - row);
    }
  }
  return Prediction<Real>{LabelMap(image.width, image.height, std::move(labels), k),
                          std::move(trace.records)};
}

#define SMK_INSTANTIATE_TOY(Real)                                                                  \
  template ToyModel<Real> init_toy_model<Real>(const ModelShape&, std::uint64_t, const InitConfig&); \
  template ToyModel<Real> zeros_like<Real>(const ToyModel<Real>&);                                 \
  template PreparedImage<Real> prepare_image<Real>(const RasterImage&, const LabelMap*, std::size_t, \
                                                   const DescriptorConfig&, const DescriptorMask&); \
  template ForwardTrace<Real> model_forward<Real>(const ToyModel<Real>&,                           \
                                                  const std::vector<const PreparedImage<Real>*>&); \
  template LossBreakdown model_loss<Real>(const ToyModel<Real>&, const ForwardTrace<Real>&,        \
                                          const std::vector<const PreparedImage<Real>*>&);         \
  template ToyModel<Real> model_backward<Real>(const ToyModel<Real>&, const ForwardTrace<Real>&,   \
                                               const std::vector<const PreparedImage<Real>*>&,     \
                                               std::size_t);                                       \
  template Prediction<Real> predict<Real>(const ToyModel<Real>&, const PreparedImage<Real>&);

SMK_INSTANTIATE_TOY(float)
SMK_INSTANTIATE_TOY(double)

template ToyModel<float> convert_model<float, double>(const ToyModel<double>&);
template ToyModel<double> convert_model<double, float>(const ToyModel<float>&);
template ToyModel<double> convert_model<double, double>(const ToyModel<double>&);

#undef SMK_INSTANTIATE_TOY

}  // namespace smk
