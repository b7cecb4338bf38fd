#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "smk/moe.hpp"
#include "smk/raster.hpp"

namespace smk::oracle {

inline MoeLayer<double> make_layer(std::size_t n, std::size_t k, std::size_t c, std::size_t h,
                                   std::uint64_t seed, double router_std = 1.0, double clone_noise = 0.5) {
  Rng rng(seed);
  return init_moe_layer<double>(MoeShape{n, k, c, h, 0.005}, rng, router_std, clone_noise);
}

inline TokenBatch<double> make_batch(std::size_t items, std::size_t tokens, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TokenBatch<double> b{items, tokens, c, {}, {}};
  for (std::size_t i = 0; i < items * tokens * c; ++i) {
    b.embeddings.push_back(z(rng));
  }
  for (std::size_t i = 0; i < items * 3; ++i) {
    b.descriptors.push_back(u(rng));
  }
  return b;
}

// Smallest gap between any two routing scores of the same token.
inline double min_score_gap(const RoutingRecord<double>& rec) {
  double gap = 1.0;
  for (std::size_t t = 0; t < rec.tokens; ++t) {
    auto s = rec.scores_of(t);
    for (std::size_t a = 0; a < s.size(); ++a) {
      for (std::size_t b = a + 1; b < s.size(); ++b) {
        gap = std::min(gap, std::abs(s[a] - s[b]));
      }
    }
  }
  return gap;
}

// <upstream, forward output> + balance loss.
inline double probe_loss(const MoeLayer<double>& layer, const TokenBatch<double>& batch,
                         const std::vector<double>& upstream) {
  auto out = moe_forward(layer, batch);
  double l = 0.0;
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    l += upstream[i] * out.batch.embeddings[i];
  }
  return l + load_balance_loss(out.record, layer);
}

struct GradCheck {
  double worst_relative_error = 0.0;
  std::size_t checked = 0;
  bool routing_changed = false;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central differences over every parameter and every input coordinate.
inline GradCheck finite_difference_check(const MoeLayer<double>& layer, const TokenBatch<double>& batch,
                                         const std::vector<double>& upstream, double step = 1e-5) {
  GradCheck res;
  const auto base = route(layer, batch);
  auto grads = moe_backward(layer, batch, std::span<const double>(upstream));

  auto same_routing = [&](const MoeLayer<double>& l, const TokenBatch<double>& b) {
    return route(l, b).selected == base.selected;
  };

  std::vector<std::vector<double>*> params;
  std::vector<const std::vector<double>*> analytic;
  MoeLayer<double> work = layer;
  for_each_parameter(work, [&](std::vector<double>& block) { params.push_back(&block); });
  for_each_parameter(grads.params, [&](const std::vector<double>& block) { analytic.push_back(&block); });

  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->size(); ++i) {
      double keep = (*params[p])[i];
      (*params[p])[i] = keep + step;
      double up = probe_loss(work, batch, upstream);
      res.routing_changed |= !same_routing(work, batch);
      (*params[p])[i] = keep - step;
      double down = probe_loss(work, batch, upstream);
      res.routing_changed |= !same_routing(work, batch);
      (*params[p])[i] = keep;
      double numeric = (up - down) / (2.0 * step);
      res.worst_relative_error = std::max(res.worst_relative_error, relative_error((*analytic[p])[i], numeric));
      ++res.checked;
    }
  }
  TokenBatch<double> moved = batch;
  for (std::size_t i = 0; i < moved.embeddings.size(); ++i) {
    double keep = moved.embeddings[i];
    moved.embeddings[i] = keep + step;
    double up = probe_loss(layer, moved, upstream);
    res.routing_changed |= !same_routing(layer, moved);
    moved.embeddings[i] = keep - step;
    double down = probe_loss(layer, moved, upstream);
    res.routing_changed |= !same_routing(layer, moved);
    moved.embeddings[i] = keep;
    double numeric = (up - down) / (2.0 * step);
    res.worst_relative_error = std::max(res.worst_relative_error, relative_error(grads.inputs[i], numeric));
    ++res.checked;
  }
  return res;
}

// Dense mixture sum_k pi_k E_k(z), written without the layer's routing code.
inline std::vector<double> dense_mixture(const MoeLayer<double>& layer, const TokenBatch<double>& batch) {
  const std::size_t n = layer.expert_count();
  const std::size_t c = batch.channels;
  std::vector<double> out(batch.embeddings.size(), 0.0);
  std::vector<double> e(c);
  for (std::size_t t = 0; t < batch.token_count(); ++t) {
    auto z = batch.token(t);
    auto s = batch.descriptor_of_token(t);
    std::vector<double> logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = layer.router.bias[j];
      for (std::size_t i = 0; i < c; ++i) {
        acc += layer.router.weight[j * (c + 3) + i] * z[i];
      }
      for (std::size_t i = 0; i < 3; ++i) {
        acc += layer.router.weight[j * (c + 3) + c + i] * s[i];
      }
      logits[j] = acc;
    }
    double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - peak);
      sum += l;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto& ex = layer.experts[j];
      for (std::size_t o = 0; o < c; ++o) {
        double acc = ex.b2[o];
        for (std::size_t hh = 0; hh < ex.hidden; ++hh) {
          double pre = ex.b1[hh];
          for (std::size_t i = 0; i < c; ++i) {
            pre += ex.w1[hh * c + i] * z[i];
          }
          acc += ex.w2[o * ex.hidden + hh] * 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0)));
        }
        out[t * c + o] += logits[j] / sum * acc;
      }
    }
  }
  return out;
}

struct BruteIoU {
  std::vector<double> iou;
  std::vector<bool> defined;
  double miou = 0.0;
};

inline BruteIoU brute_force_iou(const std::vector<LabelMap>& truth, const std::vector<LabelMap>& pred,
                                std::size_t k) {
  BruteIoU r;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t m = 0; m < truth.size(); ++m) {
      for (std::size_t y = 0; y < truth[m].height(); ++y) {
        for (std::size_t x = 0; x < truth[m].width(); ++x) {
          if (truth[m].ignored(y * truth[m].width() + x)) {
            continue;
          }
          bool t = truth[m].at(y, x) == c;
          bool p = pred[m].at(y, x) == c;
          inter += (t && p) ? 1 : 0;
          uni += (t || p) ? 1 : 0;
        }
      }
    }
    r.defined.push_back(uni > 0);
    r.iou.push_back(uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0);
    if (uni > 0) {
      sum += r.iou.back();
      ++defined;
    }
  }
  r.miou = defined > 0 ? sum / static_cast<double>(defined) : 0.0;
  return r;
}

// sets[m][i]: model m, image i.
inline double brute_force_agreement(const std::vector<std::vector<LabelMap>>& sets) {
  double total = 0.0;
  const std::size_t images = sets.front().size();
  for (std::size_t i = 0; i < images; ++i) {
    const LabelMap& ref = sets[0][i];
    std::size_t agree = 0;
    for (std::size_t y = 0; y < ref.height(); ++y) {
      for (std::size_t x = 0; x < ref.width(); ++x) {
        bool all = true;
        for (std::size_t m = 1; m < sets.size(); ++m) {
          all = all && sets[m][i].at(y, x) == ref.at(y, x);
        }
        agree += all ? 1 : 0;
      }
    }
    total += static_cast<double>(agree) / static_cast<double>(ref.width() * ref.height());
  }
  return total / static_cast<double>(images);
}

inline LabelMap random_labels(std::size_t w, std::size_t h, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::uint8_t> v(w * h);
  for (auto& x : v) {
    x = static_cast<std::uint8_t>(rng() % k);
  }
  return LabelMap(w, h, std::move(v), k);
}

}  // namespace smk::oracle
