#include "smk/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "smk/error.hpp"
#include "smk/format.hpp"

namespace smk {

double ActivationTally::ratio(std::size_t layer, std::size_t expert) const {
  const double denom = static_cast<double>(tokens.at(layer)) * static_cast<double>(top_k);
  return denom > 0.0 ? static_cast<double>(counts.at(layer).at(expert)) / denom : 0.0;
}

ActivationTally& ActivationTally::merge(const ActivationTally& other) {
  if (other.counts.empty()) {
    return *this;
  }
  if (counts.empty()) {
    counts = other.counts;
    tokens = other.tokens;
    top_k = other.top_k;
    if (domain.empty()) {
      domain = other.domain;
    }
    return *this;
  }
  require(other.layers() == layers() && other.experts() == experts() && other.top_k == top_k,
          ErrorKind::ContractViolation, "cannot merge tallies of different shape");
  for (std::size_t l = 0; l < layers(); ++l) {
    tokens[l] += other.tokens[l];
    for (std::size_t e = 0; e < experts(); ++e) {
      counts[l][e] += other.counts[l][e];
    }
  }
  return *this;
}

std::string ActivationTally::to_csv() const {
  std::ostringstream os;
  os << "layer,expert,count,ratio\n";
  for (std::size_t l = 0; l < layers(); ++l) {
    for (std::size_t e = 0; e < experts(); ++e) {
      os << l << ',' << e << ',' << counts[l][e] << ',' << shortest(ratio(l, e)) << '\n';
    }
  }
  return os.str();
}

nlohmann::json ActivationTally::to_json() const {
  nlohmann::json ratios = nlohmann::json::array();
  for (std::size_t l = 0; l < layers(); ++l) {
    std::vector<double> row;
    for (std::size_t e = 0; e < experts(); ++e) {
      row.push_back(ratio(l, e));
    }
    ratios.push_back(row);
  }
  return {{"domain", domain}, {"top_k", top_k}, {"tokens", tokens}, {"counts", counts}, {"ratios", ratios}};
}

template <typename Real>
ActivationTally tally_activations(const std::vector<std::vector<RoutingRecord<Real>>>& records,
                                  const std::string& domain) {
  ActivationTally tally;
  tally.domain = domain;
  if (records.empty()) {
    return tally;
  }
  const std::size_t layers = records.front().size();
  require(layers > 0, ErrorKind::ContractViolation, "routing records hold no layers");
  const std::size_t experts = records.front().front().experts;
  tally.top_k = records.front().front().top_k;
  tally.counts.assign(layers, std::vector<std::uint64_t>(experts, 0));
  tally.tokens.assign(layers, 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(records[i].size() == layers, ErrorKind::ContractViolation,
            "image " + std::to_string(i) + " has " + std::to_string(records[i].size()) +
                " layers of routing records, expected " + std::to_string(layers));
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& rec = records[i][l];
      require(rec.experts == experts && rec.top_k == tally.top_k, ErrorKind::ContractViolation,
              "routing records disagree on n or k");
      tally.tokens[l] += rec.tokens;
      for (auto e : rec.selected) {
        ++tally.counts[l][e];
      }
    }
  }
  return tally;
}

double DominanceReport::purity(const std::string& domain) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : entries) {
    if (d.domain == domain) {
      sum += d.ratio;
      ++n;
    }
  }
  require(n > 0, ErrorKind::ContractViolation, "no dominance entries for domain '" + domain + "'");
  return sum / static_cast<double>(n);
}

std::vector<std::string> DominanceReport::domains() const {
  std::vector<std::string> out;
  for (const auto& d : entries) {
    if (std::find(out.begin(), out.end(), d.domain) == out.end()) {
      out.push_back(d.domain);
    }
  }
  return out;
}

nlohmann::json DominanceReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : entries) {
    rows.push_back({{"domain", d.domain}, {"layer", d.layer}, {"expert", d.expert}, {"ratio", d.ratio}});
  }
  nlohmann::json purity_by_domain = nlohmann::json::object();
  for (const auto& name : domains()) {
    purity_by_domain[name] = purity(name);
  }
  return {{"dominance", rows}, {"purity", purity_by_domain}};
}

DominanceReport dominance(const std::vector<ActivationTally>& tallies) {
  DominanceReport report;
  for (const auto& t : tallies) {
    for (std::size_t l = 0; l < t.layers(); ++l) {
      const auto& row = t.counts[l];
      auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      report.entries.push_back(Dominance{t.domain, l, best, t.ratio(l, best)});
    }
  }
  return report;
}

namespace {

std::vector<ActivationTally> tally_by_domain(const std::vector<Sample>& dataset,
                                             const std::vector<Prediction<double>>& predictions) {
  std::set<std::string> tags;
  for (const auto& s : dataset) {
    tags.insert(s.domain);
  }
  std::vector<ActivationTally> out;
  for (const auto& tag : tags) {
    std::vector<std::vector<RoutingRecord<double>>> records;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].domain == tag) {
        records.push_back(predictions[i].records);
      }
    }
    out.push_back(tally_activations(records, tag));
  }
  return out;
}

}  // namespace

std::vector<ActivationTally> tally_dataset(const ToyModel<double>& model, const std::vector<Sample>& dataset,
                                           const DescriptorConfig& descriptors, const DescriptorMask& mask,
                                           std::size_t threads) {
  return tally_by_domain(dataset, predict_samples(dataset, model, descriptors, mask, threads));
}

SensitivityResult descriptor_sensitivity(const ToyModel<double>& model, const std::vector<Sample>& dataset,
                                         const DescriptorMask& mask, const DescriptorConfig& descriptors,
                                         std::size_t threads) {
  require(!dataset.empty(), ErrorKind::MissingPair, "sensitivity run over an empty dataset");
  auto predictions = predict_samples(dataset, model, descriptors, mask, threads);
  SensitivityResult result;
  result.mask = mask;
  result.tallies = tally_by_domain(dataset, predictions);
  result.dominance = dominance(result.tallies);
  std::vector<LabelMap> labels;
  for (auto& p : predictions) {
    labels.push_back(std::move(p.labels));
  }
  result.benchmark = score_predictions(dataset, std::move(labels), model.shape.classes);
  return result;
}

std::string mask_name(const DescriptorMask& mask) {
  static const char* names[3] = {"h_de", "enl", "r_lr"};
  std::string out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (mask[i]) {
      out += out.empty() ? "" : "+";
      out += names[i];
    }
  }
  return out.empty() ? "none" : out;
}

template ActivationTally tally_activations<float>(const std::vector<std::vector<RoutingRecord<float>>>&,
                                                  const std::string&);
template ActivationTally tally_activations<double>(const std::vector<std::vector<RoutingRecord<double>>>&,
                                                   const std::string&);

}  // namespace smk
