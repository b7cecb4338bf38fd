#include "smk/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "smk/error.hpp"
#include "smk/format.hpp"
#include "smk/parallel.hpp"

namespace smk {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) {
    s += at(c, p);
  }
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) {
    s += at(t, c);
  }
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  require(other.k_ == k_, ErrorKind::ContractViolation, "cannot merge confusion matrices of different K");
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    counts_[i] += other.counts_[i];
  }
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMap& truth, const LabelMap& pred) {
  require(truth.width() == pred.width() && truth.height() == pred.height(),
          ErrorKind::ContractViolation, "truth and prediction dimensions differ");
  require(truth.num_classes() == cm.num_classes() && pred.num_classes() == cm.num_classes(),
          ErrorKind::ContractViolation, "class count differs from the confusion matrix");
  auto t = truth.labels();
  auto p = pred.labels();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (truth.ignored(i) || pred.ignored(i)) {
      continue;
    }
    ++cm.at(t[i], p[i]);
  }
  return cm;
}

IoUReport iou_report(const ConfusionMatrix& cm) {
  IoUReport report;
  const std::size_t k = cm.num_classes();
  report.per_class.assign(k, 0.0);
  report.defined.assign(k, false);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = cm.at(c, c);
    std::uint64_t denom = cm.row_sum(c) + cm.col_sum(c) - tp;
    if (denom == 0) {
      continue;
    }
    report.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    report.defined[c] = true;
    sum += report.per_class[c];
    ++defined;
  }
  require(defined > 0, ErrorKind::EmptyReport, "every class is undefined (no counted pixels)");
  report.miou = sum / static_cast<double>(defined);
  return report;
}

nlohmann::json IoUReport::to_json() const {
  nlohmann::json undefined = nlohmann::json::array();
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (defined[c]) {
      per.push_back(per_class[c]);
    } else {
      per.push_back(nullptr);
      undefined.push_back(c);
    }
  }
  return {{"miou", miou}, {"per_class", per}, {"undefined", undefined}};
}

std::string IoUReport::to_csv() const {
  std::ostringstream os;
  os << "class,iou\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    os << c << ',';
    if (defined[c]) {
      os << shortest(per_class[c]);
    } else {
      os << "undefined";
    }
    os << '\n';
  }
  return os.str();
}

AgreementReport mean_agreement(const std::vector<std::vector<LabelMap>>& model_sets) {
  require(model_sets.size() >= 2, ErrorKind::ContractViolation, "agreement needs at least two model sets");
  const std::size_t images = model_sets.front().size();
  require(images > 0, ErrorKind::ContractViolation, "agreement over an empty image set");
  for (const auto& set : model_sets) {
    require(set.size() == images, ErrorKind::ContractViolation, "model sets cover different image counts");
  }
  AgreementReport report;
  for (std::size_t i = 0; i < images; ++i) {
    const LabelMap& ref = model_sets.front()[i];
    for (const auto& set : model_sets) {
      require(set[i].width() == ref.width() && set[i].height() == ref.height(),
              ErrorKind::ContractViolation, "image " + std::to_string(i) + " dimensions differ across sets");
    }
    std::size_t agree = 0;
    for (std::size_t p = 0; p < ref.size(); ++p) {
      const std::uint8_t label = ref.labels()[p];
      bool all = std::all_of(model_sets.begin() + 1, model_sets.end(),
                             [&](const auto& set) { return set[i].labels()[p] == label; });
      agree += all ? 1 : 0;
    }
    report.per_image.push_back(static_cast<double>(agree) / static_cast<double>(ref.size()));
  }
  report.mean_agreement =
      std::accumulate(report.per_image.begin(), report.per_image.end(), 0.0) /
      static_cast<double>(report.per_image.size());
  return report;
}

nlohmann::json AgreementReport::to_json() const {
  return {{"mean_agreement", mean_agreement}, {"per_image", per_image}};
}

BenchmarkManifest BenchmarkManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::Io, "cannot open manifest " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ContractViolation, "manifest " + path.string() + ": " + e.what());
  }
  BenchmarkManifest m;
  auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path dir(p);
    return dir.is_absolute() ? dir : base / dir;
  };
  try {
    m.name = j.at("name").get<std::string>();
    m.abbreviation = j.value("abbreviation", std::string{});
    m.source_dir = resolve(j.value("source_dir", std::string{}));
    m.target_dir = resolve(j.at("target_dir").get<std::string>());
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    if (j.contains("ignore_value") && !j["ignore_value"].is_null()) {
      m.ignore_value = j["ignore_value"].get<std::uint8_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ContractViolation, "manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

nlohmann::json BenchmarkManifest::to_json() const {
  nlohmann::json j{{"name", name},
                   {"abbreviation", abbreviation},
                   {"source_dir", source_dir.string()},
                   {"target_dir", target_dir.string()},
                   {"num_classes", num_classes},
                   {"class_names", class_names}};
  j["ignore_value"] = ignore_value ? nlohmann::json(*ignore_value) : nlohmann::json(nullptr);
  return j;
}

void BenchmarkManifest::validate() const {
  require(num_classes >= 1 && num_classes <= 255, ErrorKind::ContractViolation,
          "manifest num_classes must be in [1, 255]");
  require(class_names.empty() || class_names.size() == num_classes, ErrorKind::ContractViolation,
          "manifest class_names must list num_classes names");
}

std::string BenchmarkResult::per_image_csv() const {
  std::ostringstream os;
  os << "stem,domain,pixels,correct,accuracy,miou\n";
  for (const auto& s : per_image) {
    double acc = s.pixels > 0 ? static_cast<double>(s.correct) / static_cast<double>(s.pixels) : 0.0;
    os << s.stem << ',' << s.domain << ',' << s.pixels << ',' << s.correct << ',' << shortest(acc) << ','
       << shortest(s.miou) << '\n';
  }
  return os.str();
}

BenchmarkResult score_predictions(const std::vector<Sample>& samples, std::vector<LabelMap> predictions,
                                  std::size_t num_classes) {
  require(!samples.empty(), ErrorKind::MissingPair, "no samples to evaluate");
  require(predictions.size() == samples.size(), ErrorKind::ContractViolation,
          "prediction count differs from sample count");
  const std::size_t k = num_classes;
  BenchmarkResult result{ConfusionMatrix(k), {}, {}, std::move(predictions)};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    require(s.labels.num_classes() == k, ErrorKind::ContractViolation,
            s.stem + ": label class count differs from the model");
    ConfusionMatrix part = accumulate(ConfusionMatrix(k), s.labels, result.predictions[i]);
    result.confusion.merge(part);
    ImageScore score;
    score.stem = s.stem;
    score.domain = s.domain;
    score.pixels = part.total();
    for (std::size_t c = 0; c < k; ++c) {
      score.correct += part.at(c, c);
    }
    if (score.pixels > 0) {
      score.miou = iou_report(part).miou;
    }
    result.per_image.push_back(std::move(score));
  }
  result.report = iou_report(result.confusion);
  return result;
}

std::vector<Prediction<double>> predict_samples(const std::vector<Sample>& samples,
                                                const ToyModel<double>& model,
                                                const DescriptorConfig& descriptors,
                                                const DescriptorMask& mask, std::size_t threads) {
  std::vector<Prediction<double>> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    auto prepared = prepare_image<double>(samples[i].image, nullptr, model.shape.patch, descriptors, mask);
    out[i] = predict(model, prepared);
  });
  return out;
}

BenchmarkResult evaluate_samples(const std::vector<Sample>& samples, const ToyModel<double>& model,
                                 const DescriptorConfig& descriptors, const DescriptorMask& mask,
                                 std::size_t threads) {
  require(!samples.empty(), ErrorKind::MissingPair, "no samples to evaluate");
  std::vector<LabelMap> labels;
  for (auto& p : predict_samples(samples, model, descriptors, mask, threads)) {
    labels.push_back(std::move(p.labels));
  }
  return score_predictions(samples, std::move(labels), model.shape.classes);
}

BenchmarkResult run_benchmark(const BenchmarkManifest& manifest, const ToyModel<double>& model,
                              const DescriptorConfig& descriptors, std::size_t threads) {
  manifest.validate();
  require(manifest.num_classes == model.shape.classes, ErrorKind::ContractViolation,
          "manifest class count differs from the checkpoint");
  std::vector<Sample> samples = load_samples(manifest.target_dir, manifest.ignore_value);
  return evaluate_samples(samples, model, descriptors, kAllDescriptors, threads);
}

double majority_baseline_miou(const std::vector<LabelMap>& truth) {
  require(!truth.empty(), ErrorKind::ContractViolation, "baseline over no labels");
  const std::size_t k = truth.front().num_classes();
  std::vector<std::uint64_t> freq(k, 0);
  for (const auto& t : truth) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!t.ignored(i)) {
        ++freq[t.labels()[i]];
      }
    }
  }
  auto majority = static_cast<std::uint8_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  ConfusionMatrix cm(k);
  for (const auto& t : truth) {
    LabelMap constant(t.width(), t.height(), std::vector<std::uint8_t>(t.size(), majority), k);
    cm = accumulate(std::move(cm), t, constant);
  }
  return iou_report(cm).miou;
}

}  // namespace smk
