#include "smk/raster.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "smk/error.hpp"
#include "smk/rng.hpp"

namespace smk {

namespace {

std::string pixel_name(std::size_t index, std::size_t width) {
  std::ostringstream os;
  os << "pixel " << index << " (row " << index / width << ", col " << index % width << ")";
  return os.str();
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::Io, "cannot open " + path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) {
    fail(ErrorKind::Io, "read failure on " + path.string());
  }
  return bytes;
}

void spill(const std::filesystem::path& path, const std::string& header,
           std::span<const char> payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  }
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.flush();
  if (!out) {
    fail(ErrorKind::Io, "write failure on " + path.string());
  }
}

struct Header {
  std::vector<std::size_t> fields;
  std::size_t payload_offset = 0;
};

// Parses "<magic> <n1> <n2> ...\n" with exactly `count` unsigned fields.
Header parse_header(const std::vector<char>& bytes, std::string_view magic, std::size_t count,
                    const std::filesystem::path& path) {
  constexpr std::size_t kMaxHeader = 128;
  auto limit = std::min(bytes.size(), kMaxHeader);
  auto newline = std::find(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(limit), '\n');
  if (newline == bytes.begin() + static_cast<std::ptrdiff_t>(limit)) {
    fail(ErrorKind::MalformedHeader, path.string() + ": missing header line");
  }
  std::string line(bytes.begin(), newline);
  std::istringstream is(line);
  std::string tag;
  is >> tag;
  if (tag != magic) {
    fail(ErrorKind::MalformedHeader, path.string() + ": expected magic " + std::string(magic));
  }
  Header header;
  for (std::size_t i = 0; i < count; ++i) {
    long long value = -1;
    if (!(is >> value) || value <= 0) {
      fail(ErrorKind::MalformedHeader, path.string() + ": bad header field " + std::to_string(i));
    }
    header.fields.push_back(static_cast<std::size_t>(value));
  }
  std::string trailing;
  if (is >> trailing) {
    fail(ErrorKind::MalformedHeader, path.string() + ": trailing header content");
  }
  header.payload_offset = static_cast<std::size_t>(newline - bytes.begin()) + 1;
  return header;
}

void check_payload(std::size_t available, std::size_t expected, const std::filesystem::path& path) {
  if (available < expected) {
    fail(ErrorKind::MalformedHeader, path.string() + ": header declares " +
                                         std::to_string(expected) + " payload bytes, file holds " +
                                         std::to_string(available));
  }
  if (available > expected) {
    fail(ErrorKind::DimensionMismatch, path.string() + ": " +
                                           std::to_string(available - expected) +
                                           " bytes beyond declared dimensions");
  }
}

std::uint32_t load_le32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(p[i]);
  }
  return v;
}

void store_le32(std::uint32_t v, char* p) {
  for (int i = 0; i < 4; ++i) {
    p[i] = static_cast<char>(v & 0xffU);
    v >>= 8;
  }
}

bool has_png_signature(const std::vector<char>& bytes) {
  return bytes.size() >= 8 &&
         png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0;
}

struct PngBuffer {
  const std::vector<char>* bytes;
  std::size_t offset;
};

void png_read_from_buffer(png_structp png, png_bytep out, png_size_t length) {
  auto* buffer = static_cast<PngBuffer*>(png_get_io_ptr(png));
  if (buffer->offset + length > buffer->bytes->size()) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, buffer->bytes->data() + buffer->offset, length);
  buffer->offset += length;
}

// libpng reports errors through longjmp; this routine keeps every object with
// a destructor outside the setjmp frame and returns a status code instead.
int decode_png_gray(const std::vector<char>& bytes, std::vector<unsigned char>& pixels,
                    png_uint_32& width, png_uint_32& height, int& bit_depth, char* message,
                    std::size_t message_size) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    std::snprintf(message, message_size, "png_create_read_struct failed");
    return 1;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(message, message_size, "png_create_info_struct failed");
    return 1;
  }
  PngBuffer source{&bytes, 0};
  png_bytepp rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(message, message_size, "corrupt PNG stream");
    return 1;
  }
  png_set_read_fn(png, &source, png_read_from_buffer);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY || (bit_depth != 8 && bit_depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(message, message_size, "only 8/16-bit grayscale PNG is supported");
    return 2;
  }
  std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows = static_cast<png_bytepp>(std::malloc(sizeof(png_bytep) * height));
  for (png_uint_32 r = 0; r < height; ++r) {
    rows[r] = pixels.data() + r * row_bytes;
  }
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  std::free(rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return 0;
}

RasterImage import_png(const std::vector<char>& bytes, const std::filesystem::path& path) {
  std::vector<unsigned char> pixels;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  std::array<char, 160> message{};
  int status = decode_png_gray(bytes, pixels, width, height, bit_depth, message.data(),
                               message.size());
  if (status != 0) {
    fail(ErrorKind::MalformedHeader, path.string() + ": " + message.data());
  }
  std::vector<float> data(static_cast<std::size_t>(width) * height);
  if (bit_depth == 8) {
    std::transform(pixels.begin(), pixels.end(), data.begin(),
                   [](unsigned char v) { return static_cast<float>(v); });
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      // PNG stores 16-bit samples big-endian.
      data[i] = static_cast<float>((pixels[2 * i] << 8) | pixels[2 * i + 1]);
    }
  }
  return RasterImage(width, height, std::move(data));
}

}  // namespace

RasterImage::RasterImage(std::size_t width, std::size_t height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "raster dimensions must be positive");
  require(data_.size() == width * height, ErrorKind::InvalidInput,
          "raster data length " + std::to_string(data_.size()) + " != " +
              std::to_string(width) + "x" + std::to_string(height));
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      fail(ErrorKind::InvalidInput, "non-finite intensity at " + pixel_name(i, width));
    }
    if (data_[i] < 0.0F) {
      fail(ErrorKind::InvalidInput, "negative intensity at " + pixel_name(i, width));
    }
  }
}

LogRaster::LogRaster(std::size_t width, std::size_t height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "raster dimensions must be positive");
  require(data_.size() == width * height, ErrorKind::InvalidInput,
          "log raster data length does not match dimensions");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]) || data_[i] < 0.0) {
      fail(ErrorKind::InvalidInput, "log raster value out of range at " + pixel_name(i, width));
    }
  }
}

LabelMap::LabelMap(std::size_t width, std::size_t height, std::vector<std::uint8_t> labels,
                   std::size_t num_classes, std::optional<std::uint8_t> ignore_value)
    : width_(width),
      height_(height),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      ignore_(ignore_value) {
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "label map dimensions must be positive");
  require(labels_.size() == width * height, ErrorKind::InvalidInput,
          "label data length does not match dimensions");
  require(num_classes >= 1 && num_classes <= 256, ErrorKind::InvalidInput,
          "class count must be in [1, 256]");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!ignored(i) && labels_[i] >= num_classes_) {
      fail(ErrorKind::InvalidInput, "label " + std::to_string(labels_[i]) + " >= K at " +
                                        pixel_name(i, width));
    }
  }
}

LogRaster log_transform(const RasterImage& img) {
  auto in = img.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    double x = in[i];
    if (!std::isfinite(x)) {
      fail(ErrorKind::InvalidInput, "non-finite intensity at " + pixel_name(i, img.width()));
    }
    out[i] = std::log1p(std::abs(x));
  }
  return LogRaster(img.width(), img.height(), std::move(out));
}

Scene render_pattern(const SpeckleSpec& spec, std::size_t width, std::size_t height) {
  require(width >= 8 && height >= 8, ErrorKind::InvalidInput, "pattern needs at least 8x8 pixels");
  Rng rng = named_stream(spec.seed, "pattern");
  std::vector<float> values(width * height, kConstantLevel);
  std::vector<std::uint8_t> labels(width * height, 0);

  auto paint = [&](auto&& is_bright) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        bool bright = is_bright(r, c);
        values[r * width + c] = bright ? kBrightLevel : kDarkLevel;
        labels[r * width + c] = bright ? 1 : 0;
      }
    }
  };

  switch (spec.base_pattern) {
    case BasePattern::Constant:
      break;
    case BasePattern::TwoRegion: {
      bool vertical_split = std::bernoulli_distribution(0.5)(rng);
      bool bright_first = std::bernoulli_distribution(0.5)(rng);
      std::size_t extent = vertical_split ? width : height;
      std::uniform_int_distribution<std::size_t> cut_dist(extent / 4, 3 * extent / 4);
      std::size_t cut = cut_dist(rng);
      paint([&](std::size_t r, std::size_t c) {
        std::size_t pos = vertical_split ? c : r;
        return (pos < cut) == bright_first;
      });
      break;
    }
    case BasePattern::Stripes: {
      std::uniform_int_distribution<std::size_t> period_dist(4, 16);
      std::size_t band = period_dist(rng);
      bool vertical = std::bernoulli_distribution(0.5)(rng);
      paint([&](std::size_t r, std::size_t c) {
        std::size_t pos = vertical ? c : r;
        return (pos / band) % 2 == 1;
      });
      break;
    }
  }
  return Scene{RasterImage(width, height, std::move(values)),
               LabelMap(width, height, std::move(labels), 2)};
}

RasterImage generate_speckle(const SpeckleSpec& spec, std::size_t width, std::size_t height) {
  require(std::isfinite(spec.looks) && spec.looks > 0.0, ErrorKind::InvalidSpec,
          "speckle looks must be positive");
  require(width >= 8 && height >= 8, ErrorKind::InvalidInput, "speckle raster needs at least 8x8");
  Scene scene = render_pattern(spec, width, height);
  Rng rng = named_stream(spec.seed, "speckle");
  std::gamma_distribution<double> speckle(spec.looks, 1.0 / spec.looks);
  auto pattern = scene.pattern.data();
  std::vector<float> out(pattern.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(pattern[i] * speckle(rng));
  }
  return RasterImage(width, height, std::move(out));
}

RasterImage read_raster(const std::filesystem::path& path) {
  std::vector<char> bytes = slurp(path);
  if (has_png_signature(bytes)) {
    return import_png(bytes, path);
  }
  Header header = parse_header(bytes, "SRF1", 2, path);
  std::size_t width = header.fields[0];
  std::size_t height = header.fields[1];
  check_payload(bytes.size() - header.payload_offset, width * height * 4, path);
  std::vector<float> data(width * height);
  const char* p = bytes.data() + header.payload_offset;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(load_le32(p + 4 * i));
  }
  return RasterImage(width, height, std::move(data));
}

void write_raster(const RasterImage& img, const std::filesystem::path& path) {
  std::string header =
      "SRF1 " + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n";
  std::vector<char> payload(img.size() * 4);
  auto data = img.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    store_le32(std::bit_cast<std::uint32_t>(data[i]), payload.data() + 4 * i);
  }
  spill(path, header, payload);
}

LabelMap read_labels(const std::filesystem::path& path, std::optional<std::uint8_t> ignore_value) {
  std::vector<char> bytes = slurp(path);
  Header header = parse_header(bytes, "SLM1", 3, path);
  std::size_t width = header.fields[0];
  std::size_t height = header.fields[1];
  std::size_t classes = header.fields[2];
  check_payload(bytes.size() - header.payload_offset, width * height, path);
  std::vector<std::uint8_t> labels(bytes.begin() + static_cast<std::ptrdiff_t>(header.payload_offset),
                                   bytes.end());
  return LabelMap(width, height, std::move(labels), classes, ignore_value);
}

void write_labels(const LabelMap& labels, const std::filesystem::path& path) {
  std::string header = "SLM1 " + std::to_string(labels.width()) + " " +
                       std::to_string(labels.height()) + " " +
                       std::to_string(labels.num_classes()) + "\n";
  auto ids = labels.labels();
  std::vector<char> payload(ids.begin(), ids.end());
  spill(path, header, payload);
}

void write_grayscale_png(const RasterImage& img, const std::filesystem::path& path, int bit_depth) {
  require(bit_depth == 8 || bit_depth == 16, ErrorKind::InvalidInput, "PNG bit depth must be 8 or 16");
  std::size_t bytes_per_sample = bit_depth / 8;
  double max_value = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<png_byte> pixels(img.size() * bytes_per_sample);
  auto data = img.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto v = static_cast<unsigned>(std::clamp(std::round(static_cast<double>(data[i])), 0.0, max_value));
    if (bit_depth == 8) {
      pixels[i] = static_cast<png_byte>(v);
    } else {
      pixels[2 * i] = static_cast<png_byte>(v >> 8);
      pixels[2 * i + 1] = static_cast<png_byte>(v & 0xffU);
    }
  }
  std::vector<png_bytep> rows(img.height());
  for (std::size_t r = 0; r < img.height(); ++r) {
    rows[r] = pixels.data() + r * img.width() * bytes_per_sample;
  }

  std::FILE* file = std::fopen(path.string().c_str(), "wb");
  if (file == nullptr) {
    fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  volatile bool ok = png != nullptr && info != nullptr;
  if (ok && setjmp(png_jmpbuf(png)) != 0) {
    ok = false;
  } else if (ok) {
    png_init_io(png, file);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(file);
  if (!ok) {
    fail(ErrorKind::Io, "PNG encoding failed for " + path.string());
  }
}

}  // namespace smk
