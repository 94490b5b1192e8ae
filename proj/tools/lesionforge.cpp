// lesionforge command-line entry point.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>

#include "lesionforge/augment.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/manifest.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/segmenter.hpp"
#include "lesionforge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lf;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open config " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("invalid JSON in " + p.string() + ": " + e.what());
  }
}

template <typename T>
T parse_config(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid ") + what + ": " + e.what());
  }
}

ImageFormat parse_format(const std::string& s) {
  if (s == "png16") return ImageFormat::kPng16;
  if (s == "raw") return ImageFormat::kRawFloat;
  throw InputError("unknown format '" + s + "' (expected png16 or raw)");
}

bool parse_on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw InputError("expected on|off, got '" + s + "'");
}

std::vector<std::string> g_argv;

RunManifest make_manifest(const std::string& command) {
  RunManifest m(command);
  m.set_argv(g_argv);
  return m;
}

// ---- phantom-gen ----

struct PhantomArgs {
  std::string spec, out, format = "png16";
  int healthy = 0, pathological = 0;
  std::optional<std::uint64_t> seed;
};

int run_phantom_gen(const PhantomArgs& a) {
  phantom::PhantomSpec spec;
  RunManifest man = make_manifest("phantom-gen");
  if (!a.spec.empty()) {
    spec = parse_config<phantom::PhantomSpec>(read_json(a.spec), "phantom spec");
    man.add_input(a.spec);
  }
  if (a.seed) spec.seed = *a.seed;
  if (a.healthy < 0 || a.pathological < 0) throw InputError("subject counts must be >= 0");
  const auto ds = phantom::gen_dataset(spec, a.healthy, a.pathological, a.out, parse_format(a.format));
  man.set_config(json{{"spec", spec}, {"healthy", a.healthy}, {"pathological", a.pathological},
                      {"format", a.format}});
  man.add_seed("phantom", spec.seed);
  man.add_artifact(fs::path(a.out) / "healthy");
  man.add_artifact(fs::path(a.out) / "pathological");
  man.write(a.out);
  spdlog::info("wrote {} healthy and {} pathological phantoms to {}", ds.healthy_ids.size(),
               ds.pathological_ids.size(), a.out);
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out, resume;
  std::optional<int> epochs, decay_start, batch_size, pool_size, checkpoint_every, base_channels,
      res_blocks, image_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
};

int run_train(const TrainArgs& a) {
  RunManifest man = make_manifest("train");
  TrainConfig cfg;
  if (!a.config.empty()) {
    cfg = parse_config<TrainConfig>(read_json(a.config), "train config");
    man.add_input(a.config);
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.decay_start) cfg.decay_start_epoch = *a.decay_start;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.pool_size) cfg.pool_size = *a.pool_size;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.base_channels) cfg.generator_base_channels = *a.base_channels;
  if (a.res_blocks) cfg.res_blocks = *a.res_blocks;
  if (a.image_size) cfg.image_size = *a.image_size;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  cfg = cfg.resolved();
  validate(cfg);

  const UnpairedDataset data = load_dataset(a.data);
  if (data.healthy.empty() || data.pathological.empty())
    throw InputError("empty dataset: " + a.data + " needs healthy and pathological images");
  man.add_input(a.data);
  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) {
    opts.resume_from = fs::path(a.resume);
    man.add_input(a.resume);
  }
  const TrainResult res = train(cfg, data, opts);
  man.set_config(cfg);
  man.add_seed("train", cfg.seed);
  man.add_artifact(fs::path(a.out) / "log.jsonl");
  man.add_artifact(fs::path(a.out) / "config.resolved.json");
  man.add_artifact(res.final_checkpoint);
  man.write(a.out);
  return 0;
}

// ---- synthesize ----

struct SynthArgs {
  std::string gen, in, out, dropout = "on";
  int samples = 1;
  std::uint64_t seed = 0;
  int size = 0;
};

Image2D load_input_image(const fs::path& p, int size) {
  Image2D img = load_image(p);
  const auto [mn, mx] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  if (*mn < -1.0f || *mx > 1.0f) img = normalize(img);
  if (size > 0 && (img.height() != size || img.width() != size)) img = resize_bilinear(img, size, size);
  return img;
}

int run_synthesize(const SynthArgs& a) {
  RunManifest man = make_manifest("synthesize");
  const bool dropout = parse_on_off(a.dropout);
  const GeneratorBundle<float> g = load_generator<float>(a.gen);
  const Image2D x = load_input_image(a.in, a.size);
  man.add_input(a.gen);
  man.add_input(a.in);
  const auto samples = synthesize(g, x, a.samples, dropout, a.seed);
  fs::create_directories(a.out);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%02zu", s);
    man.add_artifact(save_image(samples[s].image, fs::path(a.out) / stem, ImageFormat::kPng16));
    save_image(samples[s].products.fore, fs::path(a.out) / (std::string(stem) + "_fore"),
               ImageFormat::kRawFloat);
    save_image(samples[s].products.attention_back,
               fs::path(a.out) / (std::string(stem) + "_attention_back"), ImageFormat::kRawFloat);
  }
  man.set_config(json{{"samples", a.samples}, {"dropout", dropout}, {"size", a.size}});
  man.add_seed("synthesize", a.seed);
  man.write(a.out);
  return 0;
}

// ---- augment ----

struct AugmentArgs {
  std::string gen, data, out, config, dropout;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
};

int run_augment(const AugmentArgs& a) {
  RunManifest man = make_manifest("augment");
  AugmentConfig cfg;
  if (!a.config.empty()) {
    cfg = parse_config<AugmentConfig>(read_json(a.config), "augment config");
    man.add_input(a.config);
  }
  if (a.k) cfg.k_per_subject = *a.k;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.dropout.empty()) cfg.dropout = parse_on_off(a.dropout);
  const GeneratorBundle<float> g = load_generator<float>(a.gen);
  const UnpairedDataset data = load_dataset(a.data);
  if (data.healthy.empty()) throw InputError("empty dataset: no healthy images in " + a.data);
  man.add_input(a.gen);
  man.add_input(a.data);
  const json provenance = build_augmented_dataset(g, data, cfg, a.out);
  man.set_config(cfg);
  man.add_seed("augment", cfg.seed);
  man.add_artifact(fs::path(a.out) / "manifest.json");
  man.write(a.out);
  spdlog::info("wrote {} synthetic items ({} with empty masks) to {}",
               provenance.at("synthetic_count").get<int>(),
               provenance.at("empty_mask_count").get<int>(), a.out);
  return 0;
}

// ---- evaluate ----

struct EvalArgs {
  std::string pred, ref, out, brain, region, config;
  double percentile = 95.0;
  double csf_threshold = -0.3;
};

// Files of `dir` keyed by stem.
std::map<std::string, fs::path> by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::map<std::string, fs::path> m;
  for (const auto& p : list_images(dir)) m[p.stem().string()] = p;
  if (m.empty()) throw InputError("no images in " + dir.string());
  return m;
}

std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> matched(const fs::path& pred,
                                                                           const fs::path& ref) {
  const auto p = by_stem(pred), r = by_stem(ref);
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> out;
  for (const auto& [stem, path] : r) {
    const auto it = p.find(stem);
    if (it == p.end()) throw InputError("prediction missing for " + stem);
    out.push_back({stem, {it->second, path}});
  }
  return out;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_report(const fs::path& out, const json& report, RunManifest& man) {
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  std::ofstream(out) << report.dump(2) << "\n";
  man.add_artifact(out);
  man.write(dir);
}

int run_eval_overlap(const EvalArgs& a, bool hausdorff_mode) {
  RunManifest man = make_manifest(hausdorff_mode ? "evaluate hausdorff" : "evaluate dice");
  man.add_input(a.pred);
  man.add_input(a.ref);
  json items = json::array();
  std::vector<std::optional<double>> d, h, h100;
  std::size_t both_empty = 0;
  for (const auto& [stem, paths] : matched(a.pred, a.ref)) {
    const BinaryMask2D pm = load_mask(paths.first), rm = load_mask(paths.second);
    json it{{"id", stem}};
    if (hausdorff_mode) {
      const auto hp = hausdorff(pm, rm, a.percentile);
      const auto hm = hausdorff(pm, rm, 100.0);
      it["hd_percentile"] = hp ? json(*hp) : json(nullptr);
      it["hd100"] = hm ? json(*hm) : json(nullptr);
      h.push_back(hp);
      h100.push_back(hm);
    } else {
      bool be = false;
      const double v = dice(pm, rm, &be);
      both_empty += be;
      it["dice"] = v;
      it["both_empty"] = be;
      d.emplace_back(v);
    }
    items.push_back(it);
  }
  json report{{"items", items}};
  auto sj = [](const Summary& s) {
    return json{{"mean", num(s.mean)}, {"std", num(s.std)}, {"n", s.n}, {"missing", s.missing}};
  };
  if (hausdorff_mode) {
    report["percentile"] = a.percentile;
    report["hd_percentile"] = sj(summarize(h));
    report["hd100"] = sj(summarize(h100));
    report["units"] = "pixels";
  } else {
    report["dice"] = sj(summarize(d));
    report["both_empty_count"] = both_empty;
  }
  man.set_config(json{{"percentile", a.percentile}});
  write_report(a.out, report, man);
  return 0;
}

int run_eval_heatmap(const EvalArgs& a) {
  RunManifest man = make_manifest("evaluate heatmap");
  man.add_input(a.pred);
  man.add_input(a.ref);
  std::vector<BinaryMask2D> pm, rm;
  for (const auto& [stem, p] : by_stem(a.pred)) pm.push_back(load_mask(p));
  for (const auto& [stem, p] : by_stem(a.ref)) rm.push_back(load_mask(p));
  const HeatmapGrid hp = accumulate_heatmap(pm), hr = accumulate_heatmap(rm);
  std::optional<BinaryMask2D> region;
  if (!a.region.empty()) {
    region = load_mask(a.region);
    man.add_input(a.region);
  }
  const double r = heatmap_correlation(hp.frequency, hr.frequency, region ? &*region : nullptr);
  const fs::path dir = fs::path(a.out).has_parent_path() ? fs::path(a.out).parent_path() : ".";
  fs::create_directories(dir);
  auto as_image = [](const Grid<double>& g) {
    Image2D img(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) img[i] = static_cast<float>(g[i]);
    return img;
  };
  man.add_artifact(save_image(as_image(hp.frequency), dir / "heatmap_pred", ImageFormat::kRawFloat));
  man.add_artifact(save_image(as_image(hr.frequency), dir / "heatmap_ref", ImageFormat::kRawFloat));
  write_report(a.out, json{{"pearson_r", r}, {"pred_count", hp.count}, {"ref_count", hr.count},
                           {"region", a.region}},
               man);
  return 0;
}

int run_eval_ventricle(const EvalArgs& a) {
  RunManifest man = make_manifest("evaluate ventricle");
  man.add_input(a.pred);
  man.add_input(a.ref);
  std::map<std::string, fs::path> brains;
  if (!a.brain.empty()) {
    brains = by_stem(a.brain);
    man.add_input(a.brain);
  }
  json items = json::array();
  std::vector<std::optional<double>> deltas;
  std::size_t positive = 0;
  for (const auto& [stem, paths] : matched(a.pred, a.ref)) {
    const Image2D after = load_image(paths.first), before = load_image(paths.second);
    BinaryMask2D brain(before.height(), before.width(), 1);
    if (!brains.empty()) {
      const auto it = brains.find(stem);
      if (it == brains.end()) throw InputError("brain mask missing for " + stem);
      brain = load_mask(it->second);
    }
    const long d = ventricle_area_delta(before, after, brain, a.csf_threshold);
    positive += d > 0;
    deltas.emplace_back(static_cast<double>(d));
    items.push_back({{"id", stem}, {"delta", d}});
  }
  const Summary s = summarize(deltas);
  man.set_config(json{{"csf_threshold", a.csf_threshold}});
  write_report(a.out,
               json{{"items", items},
                    {"mean_delta", num(s.mean)},
                    {"std_delta", num(s.std)},
                    {"positive_fraction", static_cast<double>(positive) / static_cast<double>(s.n)},
                    {"csf_threshold", a.csf_threshold}},
               man);
  return 0;
}

std::vector<PathologicalItem> load_pathological(const fs::path& root) {
  return load_dataset(root).pathological;
}

int run_seg_experiment_cmd(const EvalArgs& a) {
  RunManifest man = make_manifest("evaluate seg-experiment");
  const json j = read_json(a.config);
  man.add_input(a.config);
  const auto cfg = parse_config<SegExperimentConfig>(j, "seg-experiment config");
  if (!j.contains("real_data") || !j.contains("test_data"))
    throw InputError("seg-experiment config needs real_data and test_data directories");
  const fs::path real_dir = j.at("real_data").get<std::string>();
  const fs::path test_dir = j.at("test_data").get<std::string>();
  const auto real = load_pathological(real_dir);
  const auto test = load_pathological(test_dir);
  man.add_input(real_dir);
  man.add_input(test_dir);
  std::vector<PathologicalItem> synthetic;
  if (j.contains("synthetic_data")) {
    const fs::path syn_dir = j.at("synthetic_data").get<std::string>();
    // Only items marked synthetic in the augment manifest, when one exists.
    std::set<std::string> keep;
    if (fs::exists(syn_dir / "manifest.json"))
      for (const auto& it : read_json(syn_dir / "manifest.json").at("items"))
        if (it.value("synthetic", false)) keep.insert(it.at("id").get<std::string>());
    for (auto& item : load_pathological(syn_dir))
      if (keep.empty() || keep.count(item.id)) synthetic.push_back(std::move(item));
    man.add_input(syn_dir);
  }
  const SegExperimentResult res = run_seg_experiment(cfg, real, synthetic, test);
  const fs::path out = a.out;
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  std::ofstream(out) << res.to_csv();
  fs::path json_path = out;
  json_path.replace_extension(".json");
  std::ofstream(json_path) << res.to_json().dump(2) << "\n";
  man.set_config(j);
  man.add_seed("seg_experiment", cfg.seed);
  man.add_artifact(out);
  man.add_artifact(json_path);
  man.write(dir);
  std::cout << res.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  auto logger = spdlog::stderr_color_mt("lesionforge");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");

  CLI::App app{"lesionforge: lesion synthesis, pseudo-healthy synthesis and augmentation", "lesionforge"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  PhantomArgs pa;
  auto* phantom_cmd = app.add_subcommand("phantom-gen", "Generate a synthetic phantom dataset");
  phantom_cmd->add_option("--spec", pa.spec, "PhantomSpec JSON (defaults if omitted)")->check(CLI::ExistingFile);
  phantom_cmd->add_option("--healthy", pa.healthy, "Number of healthy subjects")->required();
  phantom_cmd->add_option("--pathological", pa.pathological, "Number of pathological subjects")->required();
  phantom_cmd->add_option("--out", pa.out, "Output dataset directory")->required();
  phantom_cmd->add_option("--format", pa.format, "png16 or raw")->capture_default_str();
  phantom_cmd->add_option("--seed", pa.seed, "Override spec.seed");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the generators and discriminators");
  train_cmd->add_option("--config", ta.config, "TrainConfig JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", ta.data, "Dataset root")->required();
  train_cmd->add_option("--out", ta.out, "Run directory")->required();
  train_cmd->add_option("--resume", ta.resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--decay-start", ta.decay_start);
  train_cmd->add_option("--batch-size", ta.batch_size);
  train_cmd->add_option("--pool-size", ta.pool_size);
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every);
  train_cmd->add_option("--base-channels", ta.base_channels, "Generator base width");
  train_cmd->add_option("--res-blocks", ta.res_blocks);
  train_cmd->add_option("--image-size", ta.image_size);
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--lr", ta.lr);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synthesize", "Run a generator on one image");
  synth_cmd->add_option("--gen", sa.gen, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--in", sa.in, "Input image (.png or .raw)")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--samples", sa.samples, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--dropout", sa.dropout, "on|off")->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed)->capture_default_str();
  synth_cmd->add_option("--size", sa.size, "Resize input to size x size first");

  AugmentArgs aa;
  auto* aug_cmd = app.add_subcommand("augment", "Build an augmented dataset from healthy subjects");
  aug_cmd->add_option("--gen", aa.gen, "G_P checkpoint")->required()->check(CLI::ExistingFile);
  aug_cmd->add_option("--data", aa.data, "Dataset root")->required();
  aug_cmd->add_option("--out", aa.out, "Output dataset root")->required();
  aug_cmd->add_option("--config", aa.config, "AugmentConfig JSON")->check(CLI::ExistingFile);
  aug_cmd->add_option("--k", aa.k, "Synthetic samples per healthy subject");
  aug_cmd->add_option("--seed", aa.seed);
  aug_cmd->add_option("--dropout", aa.dropout, "on|off");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics and experiments");
  eval_cmd->require_subcommand(1);
  auto add_pred_ref = [&](CLI::App* c) {
    c->add_option("--pred", ea.pred, "Prediction directory")->required();
    c->add_option("--ref", ea.ref, "Reference directory")->required();
    c->add_option("--out", ea.out, "Report JSON path")->required();
  };
  auto* e_dice = eval_cmd->add_subcommand("dice", "Dice between matching masks");
  add_pred_ref(e_dice);
  auto* e_hd = eval_cmd->add_subcommand("hausdorff", "Hausdorff distances between matching masks");
  add_pred_ref(e_hd);
  e_hd->add_option("--percentile", ea.percentile)->capture_default_str();
  auto* e_heat = eval_cmd->add_subcommand("heatmap", "Lesion-frequency heatmaps and their correlation");
  add_pred_ref(e_heat);
  e_heat->add_option("--region", ea.region, "Mask restricting the correlation")->check(CLI::ExistingFile);
  auto* e_vent = eval_cmd->add_subcommand("ventricle", "Ventricle area change, pred (after) vs ref (before)");
  add_pred_ref(e_vent);
  e_vent->add_option("--brain", ea.brain, "Directory of brain masks");
  e_vent->add_option("--csf-threshold", ea.csf_threshold)->capture_default_str();
  auto* e_seg = eval_cmd->add_subcommand("seg-experiment", "Segmenter training with and without synthetic data");
  e_seg->add_option("--config", ea.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  e_seg->add_option("--out", ea.out, "CSV table path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*phantom_cmd) return run_phantom_gen(pa);
    if (*train_cmd) return run_train(ta);
    if (*synth_cmd) return run_synthesize(sa);
    if (*aug_cmd) return run_augment(aa);
    if (*e_dice) return run_eval_overlap(ea, false);
    if (*e_hd) return run_eval_overlap(ea, true);
    if (*e_heat) return run_eval_heatmap(ea);
    if (*e_vent) return run_eval_ventricle(ea);
    if (*e_seg) return run_seg_experiment_cmd(ea);
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
