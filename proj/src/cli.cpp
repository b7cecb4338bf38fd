#include "smk/cli.hpp"

#include <fnmatch.h>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "smk/analysis.hpp"
#include "smk/checkpoint.hpp"
#include "smk/config.hpp"
#include "smk/dataset.hpp"
#include "smk/descriptors.hpp"
#include "smk/error.hpp"
#include "smk/format.hpp"
#include "smk/evaluation.hpp"
#include "smk/parallel.hpp"
#include "smk/train.hpp"

#include <CLI11.hpp>

namespace smk {

namespace {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return 1;
    case ErrorKind::NumericalFailure: return 3;
    default: return 2;
  }
}


void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write failure on " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create output directory " + dir.string());
  return dir;
}

DescriptorMask parse_mask(const std::string& text) {
  if (text == "all") {
    return kAllDescriptors;
  }
  DescriptorMask mask{false, false, false};
  if (text == "none") {
    return mask;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (item == "h_de") {
      mask[0] = true;
    } else if (item == "enl") {
      mask[1] = true;
    } else if (item == "r_lr") {
      mask[2] = true;
    } else {
      fail(ErrorKind::ContractViolation, "unknown descriptor '" + item + "' in mask (h_de, enl, r_lr, all, none)");
    }
    if (end == std::string::npos) {
      break;
    }
    start = end + 1;
  }
  return mask;
}

bool is_raster(const fs::path& p) { return p.extension() == ".srf" || p.extension() == ".png"; }

// A directory expands to its rasters; a wildcard in the final component is
// matched against the parent directory.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    fs::path p(in);
    std::string name = p.filename().string();
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && is_raster(e.path())) {
          found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (name.find_first_of("*?[") != std::string::npos) {
      fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
      std::vector<fs::path> found;
      if (fs::is_directory(parent)) {
        for (const auto& e : fs::directory_iterator(parent)) {
          if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0) {
            found.push_back(e.path());
          }
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dump_config = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config_path);
  if (g.seed) {
    cfg.seed = *g.seed;
  }
  cfg.synth.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

fs::path pick(const std::string& flag, const fs::path& from_config, const char* what) {
  fs::path p = flag.empty() ? from_config : fs::path(flag);
  require(!p.empty(), ErrorKind::ContractViolation, std::string("no ") + what + " given (flag or config)");
  return p;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physics-guided sparse mixture-of-experts toolkit for SAR segmentation experiments", "smk"};
  app.fallthrough();
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON experiment config");
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--dump-config", g.dump_config, "Print the resolved config as JSON and exit");

  auto* synth = app.add_subcommand("synth", "Write seeded speckled scenes with labels");
  std::vector<double> looks;
  std::optional<std::size_t> count, width, height;
  std::string pattern;
  synth->add_option("--looks", looks, "Looks level of one domain (repeatable)");
  synth->add_option("--count", count, "Images per domain");
  synth->add_option("--width", width, "Raster width");
  synth->add_option("--height", height, "Raster height");
  synth->add_option("--pattern", pattern, "constant, two-region or stripes");

  auto* desc = app.add_subcommand("descriptors", "Compute the descriptor triple of rasters");
  std::vector<std::string> desc_inputs;
  desc->add_option("inputs", desc_inputs, "Files, directories or wildcard patterns")->required();

  auto* train = app.add_subcommand("train", "Train the toy model on a synthetic directory");
  std::string train_data;
  train->add_option("--data", train_data, "Directory of image/label pairs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a directory or manifest");
  std::string eval_data, eval_manifest, eval_ckpt, eval_mask = "all";
  eval->add_option("--data", eval_data, "Directory of image/label pairs");
  eval->add_option("--manifest", eval_manifest, "Benchmark manifest JSON");
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint");
  eval->add_option("--mask", eval_mask, "Descriptors reaching the router: all, none or a list like enl,r_lr");

  auto* agree = app.add_subcommand("agreement", "Mean agreement of several prediction directories");
  std::vector<std::string> agree_dirs;
  agree->add_option("dirs", agree_dirs, "Prediction directories of .slm files")->required()->expected(2, -1);

  auto* act = app.add_subcommand("activations", "Per-layer expert activation ratios per domain");
  std::string act_data, act_ckpt, act_mask = "all";
  act->add_option("--data", act_data, "Directory of image/label pairs");
  act->add_option("--checkpoint", act_ckpt, "Model checkpoint");
  act->add_option("--mask", act_mask, "Descriptors reaching the router");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig cfg = resolve_config(g);
    if (synth->parsed()) {
      if (!looks.empty()) cfg.synth.looks = looks;
      if (count) cfg.synth.count_per_domain = *count;
      if (width) cfg.synth.width = *width;
      if (height) cfg.synth.height = *height;
      if (!pattern.empty()) cfg.synth.pattern = parse_pattern(pattern);
      cfg.validate();
    }
    if (g.dump_config) {
      out << cfg.to_json().dump(2) << "\n";
      return 0;
    }
    if (app.get_subcommands().empty()) {
      err << "error: a subcommand is required\n" << app.help();
      return 1;
    }
    const std::size_t threads = worker_count();

    if (synth->parsed()) {
      fs::path dir = prepare_out(g.out);
      auto samples = synthesize(cfg.synth);
      write_samples(samples, dir);
      out << "wrote " << samples.size() << " pairs to " << dir.string() << "\n";
      return 0;
    }

    if (desc->parsed()) {
      auto files = expand_inputs(desc_inputs);
      require(!files.empty(), ErrorKind::Io, "no input files matched");
      std::vector<std::string> rows(files.size());
      std::vector<std::optional<Error>> errors(files.size());
      parallel_for(files.size(), threads, [&](std::size_t i) {
        try {
          DescriptorVector d = compute_descriptors(read_raster(files[i]), cfg.descriptors);
          rows[i] = files[i].string() + "," + shortest(d.h_de) + "," + shortest(d.enl) + "," + shortest(d.r_lr) + "," + d.flags();
        } catch (const Error& e) {
          errors[i] = e;
        }
      });
      std::string csv = "path,h_de,enl,r_lr,flags\n";
      int code = 0;
      for (std::size_t i = 0; i < files.size(); ++i) {
        if (errors[i]) {
          err << files[i].string() << ": " << errors[i]->what() << "\n";
          code = code == 0 ? exit_code(errors[i]->kind()) : code;
        } else {
          csv += rows[i] + "\n";
        }
      }
      if (g.out.empty()) {
        out << csv;
      } else {
        write_text(prepare_out(g.out) / "descriptors.csv", csv);
      }
      return code;
    }

    if (train->parsed()) {
      fs::path data = pick(train_data, cfg.paths.train_dir, "training directory");
      auto samples = load_samples(data, std::nullopt);
      fs::path dir = prepare_out(g.out);
      TrainConfig tc = cfg.train_config(threads);
      TrainingReport report;
      ToyModel<double> model;
      if (cfg.single_precision) {
        auto m32 = init_toy_model<float>(cfg.model, cfg.seed, cfg.init);
        report = train_toy(m32, samples, tc);
        model = convert_model<double>(m32);
      } else {
        model = init_toy_model<double>(cfg.model, cfg.seed, cfg.init);
        report = train_toy(model, samples, tc);
      }
      save_checkpoint(model, dir / "model.smk");
      write_json(dir / "report.json", report.to_json());
      write_json(dir / "config.json", cfg.to_json());
      out << "seg loss " << report.initial_seg_loss << " -> " << report.final_seg_loss << "\n";
      return 0;
    }

    if (eval->parsed() || act->parsed()) {
      const bool is_eval = eval->parsed();
      fs::path ckpt = pick(is_eval ? eval_ckpt : act_ckpt, cfg.paths.checkpoint, "checkpoint");
      ToyModel<double> model = load_checkpoint(ckpt, cfg.model.lambda_bc);
      DescriptorMask mask = parse_mask(is_eval ? eval_mask : act_mask);
      std::vector<Sample> samples;
      nlohmann::json summary;
      std::string manifest_path = is_eval ? eval_manifest : std::string{};
      if (manifest_path.empty() && is_eval && (eval_data.empty() && cfg.paths.eval_dir.empty())) {
        manifest_path = cfg.paths.manifest.string();
      }
      if (!manifest_path.empty()) {
        BenchmarkManifest manifest = BenchmarkManifest::load(manifest_path);
        require(manifest.num_classes == model.shape.classes, ErrorKind::ContractViolation,
                "manifest class count differs from the checkpoint");
        samples = load_samples(manifest.target_dir, manifest.ignore_value);
        summary["manifest"] = manifest.to_json();
      } else {
        fs::path data = pick(is_eval ? eval_data : act_data, cfg.paths.eval_dir, "data directory");
        samples = load_samples(data, std::nullopt);
      }
      fs::path dir = prepare_out(g.out);
      SensitivityResult res = descriptor_sensitivity(model, samples, mask, cfg.descriptors, threads);

      if (is_eval) {
        std::vector<LabelMap> truth;
        for (const auto& s : samples) {
          truth.push_back(s.labels);
        }
        summary["iou"] = res.benchmark.report.to_json();
        summary["miou"] = res.benchmark.report.miou;
        summary["baseline_miou"] = majority_baseline_miou(truth);
        summary["mask"] = mask_name(mask);
        summary["images"] = samples.size();
        write_text(dir / "iou.csv", res.benchmark.report.to_csv());
        write_text(dir / "per_image.csv", res.benchmark.per_image_csv());
        write_json(dir / "summary.json", summary);
        fs::create_directories(dir / "pred");
        for (std::size_t i = 0; i < samples.size(); ++i) {
          write_labels(res.benchmark.predictions[i], dir / "pred" / (samples[i].stem + ".slm"));
        }
        out << "miou " << res.benchmark.report.miou << "\n";
      } else {
        ActivationTally all;
        for (const auto& t : res.tallies) {
          write_text(dir / ("activations_" + t.domain + ".csv"), t.to_csv());
          all.merge(t);
        }
        all.domain = "all";
        write_text(dir / "activations.csv", all.to_csv());
        nlohmann::json j = res.dominance.to_json();
        j["mask"] = mask_name(mask);
        write_json(dir / "dominance.json", j);
        for (const auto& name : res.dominance.domains()) {
          out << name << " purity " << res.dominance.purity(name) << "\n";
        }
      }
      return 0;
    }

    if (agree->parsed()) {
      std::vector<std::vector<std::pair<std::string, LabelMap>>> sets;
      for (const auto& d : agree_dirs) {
        sets.push_back(load_label_dir(d));
      }
      std::set<std::string> stems;
      for (const auto& [stem, map] : sets.front()) {
        stems.insert(stem);
      }
      std::vector<std::string> mismatched;
      for (std::size_t m = 1; m < sets.size(); ++m) {
        std::set<std::string> other;
        for (const auto& [stem, map] : sets[m]) {
          other.insert(stem);
        }
        if (other != stems) {
          mismatched.push_back(agree_dirs[m]);
        }
      }
      if (!mismatched.empty()) {
        std::string msg = "prediction directories cover different stems than " + agree_dirs.front() + ":";
        for (const auto& d : mismatched) {
          msg += " " + d;
        }
        fail(ErrorKind::MissingPair, msg);
      }
      std::vector<std::vector<LabelMap>> model_sets;
      for (auto& set : sets) {
        std::vector<LabelMap> maps;
        for (auto& [stem, map] : set) {
          maps.push_back(std::move(map));
        }
        model_sets.push_back(std::move(maps));
      }
      AgreementReport report = mean_agreement(model_sets);
      nlohmann::json j = report.to_json();
      j["stems"] = std::vector<std::string>(stems.begin(), stems.end());
      if (g.out.empty()) {
        out << j.dump(2) << "\n";
      } else {
        write_json(prepare_out(g.out) / "agreement.json", j);
      }
      out << "mean agreement " << report.mean_agreement << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace smk
