#include "smk/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "smk/error.hpp"
#include "smk/rng.hpp"

namespace smk {

namespace fs = std::filesystem;

std::string domain_tag(double looks) {
  std::ostringstream os;
  os << "L" << looks;
  return os.str();
}

BasePattern parse_pattern(const std::string& name) {
  if (name == "constant") {
    return BasePattern::Constant;
  }
  if (name == "two-region") {
    return BasePattern::TwoRegion;
  }
  if (name == "stripes") {
    return BasePattern::Stripes;
  }
  fail(ErrorKind::InvalidSpec, "unknown pattern '" + name + "' (constant, two-region, stripes)");
}

std::string pattern_name(BasePattern pattern) {
  switch (pattern) {
    case BasePattern::Constant: return "constant";
    case BasePattern::TwoRegion: return "two-region";
    case BasePattern::Stripes: return "stripes";
  }
  return "constant";
}

std::vector<Sample> synthesize(const SynthConfig& cfg) {
  std::vector<Sample> out;
  for (std::size_t d = 0; d < cfg.looks.size(); ++d) {
    std::string tag = domain_tag(cfg.looks[d]);
    Rng rng = named_stream(cfg.seed, "data", d);
    for (std::size_t i = 0; i < cfg.count_per_domain; ++i) {
      SpeckleSpec spec{cfg.looks[d], cfg.pattern, rng()};
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%s_%04zu", tag.c_str(), i);
      Scene scene = render_pattern(spec, cfg.width, cfg.height);
      out.push_back(Sample{stem, tag, generate_speckle(spec, cfg.width, cfg.height),
                           std::move(scene.labels)});
    }
  }
  return out;
}

void write_samples(const std::vector<Sample>& samples, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  }
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) {
    fail(ErrorKind::Io, "cannot write " + (dir / "index.csv").string());
  }
  index << "stem,domain\n";
  for (const auto& s : samples) {
    write_raster(s.image, dir / (s.stem + ".srf"));
    write_labels(s.labels, dir / (s.stem + ".slm"));
    index << s.stem << ',' << s.domain << '\n';
  }
  if (!index) {
    fail(ErrorKind::Io, "write failure on " + (dir / "index.csv").string());
  }
}

namespace {

std::map<std::string, std::string> read_index(const fs::path& dir) {
  std::map<std::string, std::string> domains;
  std::ifstream in(dir / "index.csv");
  if (!in) {
    return domains;
  }
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    auto comma = line.find(',');
    if (comma != std::string::npos) {
      domains[line.substr(0, comma)] = line.substr(comma + 1);
    }
  }
  return domains;
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    fail(ErrorKind::Io, dir.string() + " is not a directory");
  }
}

}  // namespace

std::vector<Sample> load_samples(const fs::path& dir, std::optional<std::uint8_t> ignore_value) {
  require_dir(dir);
  std::map<std::string, fs::path> images;
  std::set<std::string> labels;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) {
      continue;
    }
    auto ext = entry.path().extension().string();
    auto stem = entry.path().stem().string();
    if (ext == ".srf" || ext == ".png") {
      images[stem] = entry.path();
    } else if (ext == ".slm") {
      labels.insert(stem);
    }
  }

  std::vector<std::string> missing;
  for (const auto& [stem, path] : images) {
    if (!labels.contains(stem)) {
      missing.push_back(stem + " (no labels)");
    }
  }
  for (const auto& stem : labels) {
    if (!images.contains(stem)) {
      missing.push_back(stem + " (no image)");
    }
  }
  if (images.empty() && labels.empty()) {
    fail(ErrorKind::MissingPair, dir.string() + ": no image/label pairs found");
  }
  if (!missing.empty()) {
    std::string msg = dir.string() + ": missing pairs:";
    for (const auto& m : missing) {
      msg += " " + m;
    }
    fail(ErrorKind::MissingPair, msg);
  }

  auto domains = read_index(dir);
  std::vector<Sample> out;
  for (const auto& [stem, path] : images) {
    Sample s;
    s.stem = stem;
    auto it = domains.find(stem);
    s.domain = it != domains.end() ? it->second : "default";
    s.image = read_raster(path);
    s.labels = read_labels(dir / (stem + ".slm"), ignore_value);
    if (s.labels.width() != s.image.width() || s.labels.height() != s.image.height()) {
      fail(ErrorKind::DimensionMismatch, stem + ": label map and image dimensions differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::pair<std::string, LabelMap>> load_label_dir(const fs::path& dir) {
  require_dir(dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".slm") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<std::pair<std::string, LabelMap>> out;
  for (const auto& p : paths) {
    out.emplace_back(p.stem().string(), read_labels(p));
  }
  return out;
}

}  // namespace smk
