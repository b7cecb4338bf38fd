#include <doctest.h>

#include <fstream>

#include "smk/checkpoint.hpp"
#include "smk/config.hpp"
#include "smk/error.hpp"
#include "test_util.hpp"

using namespace smk;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

ModelShape shape() {
  ModelShape s;
  s.experts = 3;
  s.top_k = 2;
  s.channels = 5;
  s.hidden = 7;
  s.patch = 4;
  s.classes = 3;
  s.layers = 2;
  return s;
}

}  // namespace

TEST_CASE("checkpoint") {
  auto model = init_toy_model<double>(shape(), 11);
  std::string bytes = encode_checkpoint(model);

  SUBCASE("header layout") {
    CHECK(bytes.substr(0, 4) == "SMK1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);  // n
    CHECK(static_cast<unsigned char>(bytes[12]) == 2);  // k
    CHECK(static_cast<unsigned char>(bytes[32]) == 2);  // layers
    std::size_t params = 0;
    for_each_parameter(model, [&](const std::vector<double>& b) { params += b.size(); });
    CHECK(bytes.size() == 36 + 8 * params);
  }
  SUBCASE("round trip is exact") {
    auto back = decode_checkpoint(bytes);
    CHECK(back.shape == model.shape);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.blocks[1].experts[2].w2 == model.blocks[1].experts[2].w2);
    test::TempDir dir("ckpt");
    save_checkpoint(model, dir / "m.smk");
    CHECK(encode_checkpoint(load_checkpoint(dir / "m.smk")) == bytes);
  }
  SUBCASE("damaged files") {
    CHECK(kind_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == ErrorKind::MalformedHeader);
    CHECK(kind_of([&] { decode_checkpoint(bytes + "xx"); }) == ErrorKind::DimensionMismatch);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(kind_of([&] { decode_checkpoint(bad); }) == ErrorKind::MalformedHeader);
    bad = bytes;
    bad[4] = 2;
    CHECK(kind_of([&] { decode_checkpoint(bad); }) == ErrorKind::MalformedHeader);
    bad = bytes;
    bad[12] = 9;  // k > n
    CHECK(kind_of([&] { decode_checkpoint(bad); }) == ErrorKind::MalformedHeader);
    CHECK(kind_of([&] { load_checkpoint("/nonexistent/m.smk"); }) == ErrorKind::Io);
  }
}

TEST_CASE("experiment config") {
  SUBCASE("defaults") {
    ExperimentConfig c;
    CHECK(c.model.experts == 6);
    CHECK(c.model.top_k == 1);
    CHECK(c.model.lambda_bc == 0.005);
    CHECK(c.optim.lr == 3e-5);
    CHECK(c.optim.weight_decay == 0.01);
  }
  SUBCASE("JSON round trip") {
    ExperimentConfig c;
    c.seed = 42;
    c.model.experts = 4;
    c.optim.lr = 1.0 / 3.0;
    c.descriptor_mask = {true, false, true};
    c.synth.looks = {1.0, 4.0, 16.0};
    c.single_precision = true;
    c.paths.train_dir = "/data/train";
    auto back = ExperimentConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
    CHECK(back == c);
  }
  SUBCASE("load resolves relative paths next to the file") {
    test::TempDir dir("cfg");
    std::ofstream(dir / "c.json") << R"({"seed": 3, "paths": {"train_dir": "train"}})";
    auto c = ExperimentConfig::load(dir / "c.json");
    CHECK(c.seed == 3);
    CHECK(c.paths.train_dir == dir.path() / "train");
  }
  SUBCASE("unknown keys and bad values are rejected") {
    CHECK(kind_of([] { ExperimentConfig::from_json(nlohmann::json::parse(R"({"sede": 1})")); }) ==
          ErrorKind::ContractViolation);
    CHECK(kind_of([] { ExperimentConfig::from_json(nlohmann::json::parse(R"({"model": {"top_k": 9}})")); }) ==
          ErrorKind::ContractViolation);
    CHECK(kind_of([] { ExperimentConfig::from_json(nlohmann::json::parse(R"({"optimizer": {"lr": "x"}})")); }) ==
          ErrorKind::ContractViolation);
    CHECK(kind_of([] { ExperimentConfig::from_json(nlohmann::json::parse(R"({"synth": {"looks": [0]}})")); }) ==
          ErrorKind::InvalidSpec);
  }
}
