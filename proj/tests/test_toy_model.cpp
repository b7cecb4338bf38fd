#include <doctest.h>

#include <cmath>
#include <random>

#include "smk/dataset.hpp"
#include "smk/error.hpp"
#include "smk/toy_model.hpp"
#include "smk/train.hpp"
#include "test_util.hpp"

using namespace smk;

namespace {

ModelShape tiny_shape() {
  ModelShape s;
  s.experts = 3;
  s.top_k = 2;
  s.channels = 4;
  s.hidden = 5;
  s.patch = 8;
  s.classes = 2;
  s.layers = 2;
  s.lambda_bc = 0.1;
  return s;
}

std::vector<Sample> tiny_data(std::size_t per_domain, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.count_per_domain = per_domain;
  cfg.width = 32;
  cfg.height = 32;
  cfg.seed = seed;
  return synthesize(cfg);
}

double batch_total(const ToyModel<double>& m, const std::vector<const PreparedImage<double>*>& batch) {
  auto trace = model_forward(m, batch);
  return model_loss(m, trace, batch).total;
}

}  // namespace

TEST_CASE("image preparation") {
  SUBCASE("token count and majority labels") {
    std::vector<std::uint8_t> lab(16 * 8, 0);
    // Left patch: 33 pixels of class 1, right patch: an exact 32/32 tie.
    for (std::size_t i = 0; i < 33; ++i) {
      lab[(i / 8) * 16 + i % 8] = 1;
    }
    for (std::size_t i = 0; i < 32; ++i) {
      lab[(i / 8) * 16 + 8 + i % 8] = 1;
    }
    LabelMap labels(16, 8, lab, 2);
    auto img = test::noise_image(16, 8, 1);
    auto p = prepare_image<double>(img, &labels, 8, {});
    CHECK(p.tokens == 2);
    CHECK(p.token_labels == std::vector<std::int32_t>{1, 0});
    CHECK(p.patches[0] == doctest::Approx(std::log1p(img.at(0, 0))).epsilon(1e-6));
    CHECK(p.patches[64 + 9] == doctest::Approx(std::log1p(img.at(1, 9))).epsilon(1e-6));
  }
  SUBCASE("fully ignored patches carry no label") {
    LabelMap labels(8, 8, std::vector<std::uint8_t>(64, 255), 2, 255);
    auto p = prepare_image<double>(test::noise_image(8, 8, 2), &labels, 8, {});
    CHECK(p.token_labels == std::vector<std::int32_t>{-1});
  }
  SUBCASE("indivisible size is a contract violation") {
    try {
      prepare_image<double>(test::noise_image(12, 8, 2), nullptr, 8, {});
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ContractViolation);
    }
  }
  SUBCASE("masked descriptors are zeroed before normalization") {
    auto img = generate_speckle({4.0, BasePattern::TwoRegion, 3}, 32, 32);
    auto all = prepare_image<double>(img, nullptr, 8, {});
    auto enl_only = prepare_image<double>(img, nullptr, 8, {}, DescriptorMask{false, true, false});
    CHECK(enl_only.descriptor[0] == 0.0);
    CHECK(enl_only.descriptor[1] == all.descriptor[1]);
    CHECK(enl_only.descriptor[2] == 0.0);
    CHECK(enl_only.raw_descriptor == all.raw_descriptor);
  }
}

TEST_CASE("toy model") {
  SUBCASE("initialization is seeded") {
    auto a = init_toy_model<double>(tiny_shape(), 4);
    auto b = init_toy_model<double>(tiny_shape(), 4);
    auto c = init_toy_model<double>(tiny_shape(), 5);
    CHECK(a.embed_weight == b.embed_weight);
    CHECK(a.blocks[1].router.weight == b.blocks[1].router.weight);
    CHECK(a.embed_weight != c.embed_weight);
  }
  SUBCASE("precision conversion round trip") {
    auto a = init_toy_model<double>(tiny_shape(), 4);
    auto f = convert_model<float>(a);
    auto back = convert_model<double>(f);
    CHECK(back.head_weight.size() == a.head_weight.size());
    CHECK(back.blocks[0].experts[2].w1[3] == doctest::Approx(a.blocks[0].experts[2].w1[3]).epsilon(1e-6));
  }
  SUBCASE("backward matches finite differences of the total loss") {
    auto data = tiny_data(1, 9);
    auto prepared = prepare_dataset<double>(data, 8, {});
    std::vector<const PreparedImage<double>*> batch{&prepared[0], &prepared[1]};
    InitConfig init;
    init.router_std = 0.5;
    init.descriptor_router_std = 0.5;
    init.clone_noise = 0.3;
    auto model = init_toy_model<double>(tiny_shape(), 2, init);
    auto trace = model_forward(model, batch);
    auto grads = model_backward(model, trace, batch);

    std::vector<std::vector<double>*> params;
    std::vector<const std::vector<double>*> analytic;
    for_each_parameter(model, [&](std::vector<double>& b) { params.push_back(&b); });
    for_each_parameter(grads, [&](const std::vector<double>& b) { analytic.push_back(&b); });
    std::mt19937_64 rng(3);
    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (int trial = 0; trial < 6; ++trial) {
        std::size_t i = rng() % params[p]->size();
        double keep = (*params[p])[i];
        (*params[p])[i] = keep + h;
        auto up_trace = model_forward(model, batch);
        bool same = true;
        for (std::size_t l = 0; l < trace.records.size(); ++l) {
          same = same && up_trace.records[l].selected == trace.records[l].selected;
        }
        double up = batch_total(model, batch);
        (*params[p])[i] = keep - h;
        double down = batch_total(model, batch);
        (*params[p])[i] = keep;
        if (!same) {
          continue;
        }
        double numeric = (up - down) / (2 * h);
        double a = (*analytic[p])[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        ++checked;
      }
    }
    CHECK(checked > 50);
    CHECK(worst < 1e-4);
  }
  SUBCASE("prediction covers every pixel") {
    auto model = init_toy_model<double>(tiny_shape(), 1);
    auto img = generate_speckle({4.0, BasePattern::TwoRegion, 3}, 32, 16);
    auto pred = predict(model, prepare_image<double>(img, nullptr, 8, {}));
    CHECK(pred.labels.width() == 32);
    CHECK(pred.labels.height() == 16);
    CHECK(pred.records.size() == 2);
    CHECK(pred.records[0].tokens == 8);
  }
}

TEST_CASE("optimizer and training") {
  auto data = tiny_data(3, 1);
  TrainConfig cfg;
  cfg.model = tiny_shape();
  cfg.model.top_k = 1;
  cfg.optim.epochs = 3;
  cfg.optim.batch_size = 2;
  cfg.seed = 6;

  SUBCASE("zero learning rate leaves parameters bit-identical") {
    auto model = init_toy_model<double>(cfg.model, 6);
    auto before = model;
    cfg.optim.lr = 0.0;
    train_toy(model, data, cfg);
    CHECK(model.embed_weight == before.embed_weight);
    CHECK(model.blocks[0].router.weight == before.blocks[0].router.weight);
    CHECK(model.head_bias == before.head_bias);
  }
  SUBCASE("first AdamW step by hand") {
    OptimizerConfig oc;
    oc.lr = 0.1;
    auto model = init_toy_model<double>(cfg.model, 6);
    auto grads = zeros_like(model);
    grads.head_bias[0] = 2.0;
    grads.head_bias[1] = -0.5;
    model.head_bias = {1.0, 0.0};
    double w0 = model.embed_weight[0];
    AdamW<double> opt(oc);
    opt.step(model, grads);
    // Bias-corrected first step moves by lr * g / (|g| + eps), decay scales by lr * wd.
    CHECK(model.head_bias[0] == doctest::Approx(1.0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.01)).epsilon(1e-14));
    CHECK(model.head_bias[1] == doctest::Approx(0.1 * (0.5 / (0.5 + 1e-8))).epsilon(1e-14));
    CHECK(model.embed_weight[0] == doctest::Approx(w0 * (1.0 - 0.1 * 0.01)).epsilon(1e-14));
    CHECK(opt.steps_taken() == 1);
  }
  SUBCASE("same seed gives the same run, whatever the thread count") {
    auto m1 = init_toy_model<double>(cfg.model, 6);
    auto m2 = init_toy_model<double>(cfg.model, 6);
    auto r1 = train_toy(m1, data, cfg);
    cfg.threads = 3;
    auto r2 = train_toy(m2, data, cfg);
    CHECK(r1.to_json().dump() == r2.to_json().dump());
    CHECK(m1.head_weight == m2.head_weight);
    CHECK(m1.blocks[1].experts[0].w2 == m2.blocks[1].experts[0].w2);
  }
  SUBCASE("report shape") {
    auto model = init_toy_model<double>(cfg.model, 6);
    auto r = train_toy(model, data, cfg);
    CHECK(r.steps.size() == 9);
    CHECK(r.activation_counts.size() == 2);
    std::uint64_t total = 0;
    for (auto c : r.activation_counts[0]) {
      total += c;
    }
    CHECK(total == 6 * 16);  // final epoch: 6 images of 16 tokens, k=1
    CHECK(r.final_epoch_max_fraction() >= 1.0 / 3.0);
    CHECK(r.final_epoch_max_fraction() <= 1.0);
  }
  SUBCASE("a larger learning rate fits the training set") {
    cfg.optim.lr = 3e-3;
    cfg.optim.epochs = 10;
    auto model = init_toy_model<double>(cfg.model, 6);
    auto r = train_toy(model, data, cfg);
    CHECK(r.final_seg_loss < r.initial_seg_loss);
  }
  SUBCASE("single precision trains too") {
    auto model = init_toy_model<float>(cfg.model, 6);
    auto r = train_toy(model, data, cfg);
    CHECK(std::isfinite(r.final_seg_loss));
  }
  SUBCASE("empty dataset") {
    auto model = init_toy_model<double>(cfg.model, 6);
    CHECK_THROWS_AS(train_toy(model, {}, cfg), Error);
  }
}
