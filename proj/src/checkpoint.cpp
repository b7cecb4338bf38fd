#include "smk/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "smk/error.hpp"

namespace smk {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'M', 'K', '1'};
constexpr std::size_t kHeaderFields = 7;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 * kHeaderFields;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(v & 0xffU));
    v >>= 8;
  }
}

void put_f64(std::string& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(p[i]);
  }
  return v;
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  }
  return std::bit_cast<double>(bits);
}

std::uint32_t narrow(std::size_t v, const char* what) {
  require(v <= 0xffffffffULL, ErrorKind::ContractViolation, std::string(what) + " does not fit the checkpoint header");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string encode_checkpoint(const ToyModel<double>& model) {
  const ModelShape& s = model.shape;
  s.validate();
  require(model.blocks.size() == s.layers, ErrorKind::ContractViolation, "model block count differs from its shape");
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u32(out, narrow(s.experts, "n"));
  put_u32(out, narrow(s.top_k, "k"));
  put_u32(out, narrow(s.channels, "C"));
  put_u32(out, narrow(s.hidden, "H"));
  put_u32(out, narrow(s.patch, "P"));
  put_u32(out, narrow(s.classes, "K"));
  put_u32(out, narrow(s.layers, "layer count"));
  for_each_parameter(model, [&](const std::vector<double>& block) {
    for (double x : block) {
      put_f64(out, x);
    }
  });
  return out;
}

ToyModel<double> decode_checkpoint(const std::string& bytes, double lambda_bc, const std::string& origin) {
  require(bytes.size() >= kHeaderBytes && std::memcmp(bytes.data(), kMagic.data(), 4) == 0,
          ErrorKind::MalformedHeader, origin + ": not an SMK1 checkpoint");
  const char* p = bytes.data() + 4;
  std::uint32_t version = get_u32(p);
  require(version == kCheckpointVersion, ErrorKind::MalformedHeader,
          origin + ": unsupported checkpoint version " + std::to_string(version));
  std::array<std::uint32_t, kHeaderFields> f{};
  for (std::size_t i = 0; i < kHeaderFields; ++i) {
    f[i] = get_u32(p + 4 + 4 * i);
  }
  ModelShape shape{f[0], f[1], f[2], f[3], f[4], f[5], f[6], lambda_bc};
  try {
    shape.validate();
  } catch (const Error& e) {
    fail(ErrorKind::MalformedHeader, origin + ": " + e.what());
  }

  // Zero-initialized model of the declared shape gives the block sizes.
  ToyModel<double> model = zeros_like(init_toy_model<double>(shape, 0));
  std::size_t count = 0;
  for_each_parameter(model, [&](const std::vector<double>& block) { count += block.size(); });
  const std::size_t expected = kHeaderBytes + 8 * count;
  require(bytes.size() >= expected, ErrorKind::MalformedHeader,
          origin + ": header declares " + std::to_string(count) + " parameters, payload is short");
  require(bytes.size() == expected, ErrorKind::DimensionMismatch,
          origin + ": " + std::to_string(bytes.size() - expected) + " bytes beyond declared parameters");

  const char* cursor = bytes.data() + kHeaderBytes;
  std::size_t index = 0;
  for_each_parameter(model, [&](std::vector<double>& block) {
    for (double& x : block) {
      x = get_f64(cursor);
      cursor += 8;
      require(std::isfinite(x), ErrorKind::NumericalFailure,
              origin + ": parameter " + std::to_string(index) + " is not finite");
      ++index;
    }
  });
  return model;
}

void save_checkpoint(const ToyModel<double>& model, const std::filesystem::path& path) {
  std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write failure on " + path.string());
}

ToyModel<double> load_checkpoint(const std::filesystem::path& path, double lambda_bc) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, lambda_bc, path.string());
}

}  // namespace smk
