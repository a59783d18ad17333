// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <list>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "fixtures.hpp"
#include "wetseg/error.hpp"
#include "wetseg/tensor/ops.hpp"

namespace {

using namespace wetseg;
using namespace wetseg::cli;

const char* const kSections[] = {"preprocess", "pretrain", "train", "eval", "transfer"};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<std::string> sections;
  json defaults = json::object();
  std::unique_ptr<FlagSet> flags;
  std::string config_file;
  bool print_config = false;
  int threads = 0;
  bool deterministic = false;
  bool quiet = false;
  // experiments
  bool synthetic = false;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(Command& c, bool deterministic_flag) {
  c.app->add_option("--config", c.config_file,
                    "JSON config file with sections " + std::string("preprocess, pretrain, train, eval, transfer"))
      ->check(CLI::ExistingFile);
  c.app->add_flag("--print-config", c.print_config, "Print the resolved config and exit");
  c.app->add_option("--threads", c.threads, "Worker threads, 0 for every core")->capture_default_str();
  if (deterministic_flag)
    c.app->add_flag("--deterministic", c.deterministic, "Single-threaded, reproducible run");
  c.app->add_flag("--quiet", c.quiet, "No per-epoch progress on stderr");
}

void add_train_flags(FlagSet& f, const std::string& s, bool unet) {
  f.bind("--manifest", s + ".manifest", "Dataset manifest");
  f.bind("--train-split", s + ".train_split", "Split to train on");
  f.bind("--val-split", s + ".val_split", "Split for validation and checkpoint selection, or none");
  f.bind("--epochs", s + ".epochs", "Training epochs");
  f.bind("--batch-size", s + ".batch_size", "Patches per optimizer step");
  f.bind("--schedule", s + ".schedule.kind", "Learning rate schedule: fixed or cosine");
  f.bind("--lr", s + ".schedule.lr", "Learning rate (cosine: maximum)");
  f.bind("--lr-min", s + ".schedule.lr_min", "Cosine minimum learning rate");
  f.bind("--seed", s + ".seed", "Seed for initialization, shuffling and dropout");
  f.bind("--in-channels", s + ".model.in_channels", "Input bands; taken from the data unless set");
  f.bind("--base-channels", s + ".model.base_channels", "Channels of the first encoder block");
  f.bind("--depth", s + ".model.depth", "Encoder blocks");
  f.bind("--bridge-channels", s + ".model.bridge_channels", "Bridge channels");
  f.bind("--dropout", s + ".model.dropout_p", "Dropout probability");
  f.bind("--upsample", s + ".model.upsample", "Decoder upsampling: nearest");
  if (unet) f.bind("--num-classes", s + ".model.num_classes", "Output classes; taken from the class scheme unless set");
  f.bind("--alpha", s + ".loss_weights.alpha", "Huber weight of the mixed loss");
  f.bind("--beta", s + ".loss_weights.beta", "1 - SSIM weight of the mixed loss");
  f.bind("--gamma", s + ".loss_weights.gamma", "Edge weight of the mixed loss");
  f.bind("--ssim-window", s + ".ssim_window", "SSIM window size");
  f.bind("--seg-loss", s + ".seg_loss", "Segmentation loss: dice or dice+ce");
  f.bind("--init", s + ".init.checkpoint", "Checkpoint to start from");
  f.bind("--freeze", s + ".init.freeze", "Freeze the transferred encoder");
  f.bind("--patience", s + ".patience", "Epochs without improvement before stopping, 0 disables");
  f.bind("--min-delta", s + ".min_delta", "Improvement that resets patience");
  f.bind("--max-steps", s + ".max_steps", "Optimizer step cap, 0 for none");
  f.bind("--deterministic", s + ".deterministic", "Single-threaded, reproducible run");
  f.bind("--output-dir", s + ".output_dir", "Run directory");
}

void add_eval_flags(FlagSet& f) {
  f.bind("--checkpoint", "eval.checkpoint", "Model checkpoint");
  f.bind("--manifest", "eval.manifest", "Dataset manifest");
  f.bind("--split", "eval.split", "Split to evaluate");
  f.bind("--tolerance", "eval.tolerance", "Reconstruction accuracy tolerance");
  f.bind("--batch-size", "eval.batch_size", "Patches per forward pass");
  f.bind("--renders", "eval.max_renders", "PNG renders to write");
  f.bind("--alpha", "eval.loss_weights.alpha", "Huber weight of the mixed loss");
  f.bind("--beta", "eval.loss_weights.beta", "1 - SSIM weight of the mixed loss");
  f.bind("--gamma", "eval.loss_weights.gamma", "Edge weight of the mixed loss");
  f.bind("--ssim-window", "eval.ssim_window", "SSIM window size");
  f.bind("--output-dir", "eval.output_dir", "Report directory");
}

void add_preprocess_flags(FlagSet& f) {
  f.bind("--preset", "preprocess.preset", "Defaults to start from: medium (Sentinel-2) or high (Pleiades Neo)");
  f.bind("--scene", "preprocess.scenes", "Input scene, repeatable", "IMAGE[:LABEL]",
         [](const std::vector<std::string>& values) {
           json out = json::array();
           for (const auto& v : values) {
             const auto colon = v.find(':');
             json s = {{"image", v.substr(0, colon)}};
             if (colon != std::string::npos) s["label"] = v.substr(colon + 1);
             out.push_back(s);
           }
           return out;
         });
  f.bind("--bands", "preprocess.selected_bands", "Bands to keep, in order; none keeps all");
  f.bind("--patch-size", "preprocess.patch_size", "Patch edge in pixels");
  f.bind("--max-invalid", "preprocess.max_invalid_fraction", "Largest allowed fraction of black pixels");
  f.bind("--equalize", "preprocess.equalize", "Histogram-equalize each band");
  f.bind("--normalize", "preprocess.normalize", "Band scaling: minmax or none");
  f.bind("--split-policy", "preprocess.split_policy.kind", "by_region or random");
  f.bind("--region", "preprocess.split_policy.regions", "Region split, repeatable; replaces the whole map");
  // The by-region preset has no random-split keys; show the random policy's own defaults.
  const json random = json(pipeline::PreprocessConfig::high_resolution())["split_policy"];
  f.bind("--train-fraction", "preprocess.split_policy.train", "Random split: train fraction", random["train"]);
  f.bind("--val-fraction", "preprocess.split_policy.val", "Random split: val fraction", random["val"]);
  f.bind("--test-fraction", "preprocess.split_policy.test", "Random split: test fraction", random["test"]);
  f.bind("--split-seed", "preprocess.split_policy.seed", "Random split: seed", random["seed"]);
  f.bind("--class-scheme", "preprocess.class_scheme", "Label class scheme");
  f.bind("--output-dir", "preprocess.output_dir", "Patch directory");
}

void add_transfer_flags(FlagSet& f) {
  f.bind("--scenes", "transfer.scenes", "Scene list JSON with hires and lores entries");
  f.bind("--max-gap", "transfer.max_gap_days", "Largest acquisition gap for a pair, in days");
  f.bind("--hires-patch", "transfer.hires_patch", "High-resolution patch edge");
  f.bind("--lores-patch", "transfer.lores_patch", "Medium-resolution patch edge");
  f.bind("--hires-bands", "transfer.hires_bands", "High-resolution bands");
  f.bind("--lores-bands", "transfer.lores_bands", "Medium-resolution bands");
  f.bind("--hires-max-invalid", "transfer.hires_max_invalid", "High-resolution black-pixel limit");
  f.bind("--lores-max-invalid", "transfer.lores_max_invalid", "Medium-resolution black-pixel limit");
  f.bind("--equalize", "transfer.equalize", "Histogram-equalize each band");
  f.bind("--class-scheme", "transfer.class_scheme", "Label class scheme");
  f.bind("--scene-split", "transfer.scene_splits", "Scene split, repeatable; replaces the whole map");
  f.bind("--val-fraction", "transfer.val_fraction", "Fraction of scenes for val");
  f.bind("--test-fraction", "transfer.test_fraction", "Fraction of scenes for test");
  f.bind("--seed", "transfer.seed", "Scene shuffle seed");
  f.bind("--output-dir", "transfer.output_dir", "Output directory");
}

/// Desk-scale settings that go with the synthetic fixtures.
void apply_synthetic_defaults(json& d) {
  const json model = {{"base_channels", 8}, {"depth", 2}, {"bridge_channels", 32}};
  if (d.contains("pretrain")) {
    merge_into(d["pretrain"]["model"], model, {});
    d["pretrain"]["epochs"] = 5;
    d["pretrain"]["ssim_window"] = 7;
  }
  if (d.contains("train")) {
    merge_into(d["train"]["model"], model, {});
    d["train"]["epochs"] = 10;
    d["train"]["batch_size"] = 4;
  }
  if (d.contains("eval")) {
    d["eval"]["ssim_window"] = 7;
    d["eval"]["max_renders"] = 2;
  }
  if (d.contains("transfer")) {
    d["transfer"]["hires_patch"] = 32;
    d["transfer"]["lores_patch"] = 16;
    json splits = json::object();
    for (int s = 0; s < 8; ++s) splits["scene_" + std::to_string(s)] = s < 6 ? "train" : s == 6 ? "val" : "test";
    d["transfer"]["scene_splits"] = splits;
  }
}

json defaults_for(const std::string& section) {
  if (section == "preprocess") return preprocess_defaults("medium");
  if (section == "pretrain") return train_defaults(nn::ModelKind::Autoencoder);
  if (section == "train") return train_defaults(nn::ModelKind::UNet);
  if (section == "eval") return eval_defaults();
  return transfer_defaults();
}

/// Defaults, then the config file, then flags.
json resolve(Command& c, std::vector<std::string>& errors) {
  json file = c.config_file.empty() ? json::object() : load_config_file(c.config_file);
  for (const auto& [k, v] : file.items())
    if (std::find(std::begin(kSections), std::end(kSections), k) == std::end(kSections))
      errors.push_back(k + ": unknown config section");

  json merged = c.defaults;
  if (c.name == "preprocess") {
    json probe = json::object();
    if (file.contains("preprocess")) probe["preprocess"] = file["preprocess"];
    c.flags->apply(probe, errors);
    const json* preset = find_path(probe, "preprocess.preset");
    try {
      merged["preprocess"] = preprocess_defaults(preset && preset->is_string() ? preset->get<std::string>() : "medium");
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  }
  if (c.synthetic) apply_synthetic_defaults(merged);
  for (const auto& s : c.sections) {
    if (!file.contains(s)) continue;
    if (!file[s].is_object()) {
      errors.push_back(s + ": must be an object");
      continue;
    }
    merge_into(merged[s], check_keys(file[s], section_schema(s), whole_paths(), s, errors), whole_paths(), s);
  }
  c.flags->apply(merged, errors);
  if (c.seed)
    for (const char* s : {"pretrain", "train", "transfer"})
      if (merged.contains(s)) merged[s]["seed"] = *c.seed;
  if (c.deterministic)
    for (const char* s : {"pretrain", "train"})
      if (merged.contains(s)) merged[s]["deterministic"] = true;
  return merged;
}

bool explicitly_set(const Command& c, const std::string& path) {
  if (c.flags->given(path)) return true;
  if (c.config_file.empty()) return false;
  return find_path(load_config_file(c.config_file), path) != nullptr;
}

TrainJob train_job(const Command& c, const json& merged, const std::string& s, nn::ModelKind kind,
                   std::vector<std::string>& errors, bool require_inputs) {
  auto job = parse_train(merged[s], kind, errors, require_inputs);
  job.auto_in_channels = !explicitly_set(c, s + ".model.in_channels");
  job.auto_num_classes = !explicitly_set(c, s + ".model.num_classes");
  return job;
}

int run(Command& c) {
  std::vector<std::string> errors;
  json merged = resolve(c, errors);
  if (c.print_config) {
    raise_if_any(errors);
    std::cout << merged.dump(2) << "\n";
    return 0;
  }

  bool deterministic = c.deterministic;
  for (const char* s : {"pretrain", "train"})
    if (merged.contains(s) && merged[s].value("deterministic", false)) deterministic = true;
  nn::set_num_threads(deterministic ? 1 : c.threads);
  RunContext ctx;
  if (!c.quiet) ctx.log = &std::cerr;

  json summary;
  if (c.name == "preprocess") {
    const auto job = parse_preprocess(merged["preprocess"], errors);
    raise_if_any(errors);
    summary = cmd_preprocess(job);
  } else if (c.name == "pretrain" || c.name == "train") {
    const auto kind = c.name == "pretrain" ? nn::ModelKind::Autoencoder : nn::ModelKind::UNet;
    auto job = train_job(c, merged, c.name, kind, errors, true);
    raise_if_any(errors);
    summary = cmd_train(std::move(job), ctx);
  } else if (c.name == "eval") {
    const auto job = parse_eval(merged["eval"], errors);
    raise_if_any(errors);
    summary = cmd_eval(job);
  } else if (c.name == "transfer") {
    const auto job = parse_transfer(merged["transfer"], errors);
    raise_if_any(errors);
    summary = cmd_transfer(job);
  } else {
    const std::filesystem::path out = c.output_dir;
    const auto fixtures = cache_dir(out / "fixtures");
    const std::uint64_t fixture_seed = c.seed.value_or(0);
    if (c.name == "reconstruction" || c.name == "pretraining") {
      if (c.synthetic) {
        ShapesFixture f;
        f.seed = fixture_seed;
        merged["pretrain"]["manifest"] =
            write_shapes_fixture(fixtures / ("shapes-" + std::to_string(fixture_seed)), f).string();
      }
      auto pretrain = train_job(c, merged, "pretrain", nn::ModelKind::Autoencoder, errors, true);
      const auto eval = parse_eval(merged["eval"], errors, false);
      if (c.name == "reconstruction") {
        raise_if_any(errors);
        summary = experiment_reconstruction(std::move(pretrain), eval, c.output_dir, ctx);
      } else {
        auto train = train_job(c, merged, "train", nn::ModelKind::UNet, errors, false);
        raise_if_any(errors);
        summary = experiment_pretraining(std::move(pretrain), std::move(train), eval, c.output_dir, ctx);
      }
    } else {
      if (c.synthetic) {
        ResolutionFixture f;
        f.seed = fixture_seed;
        merged["transfer"]["scenes"] =
            write_resolution_fixture(fixtures / ("resolution-" + std::to_string(fixture_seed)), f).string();
      }
      const auto transfer = parse_transfer(merged["transfer"], errors);
      auto train = train_job(c, merged, "train", nn::ModelKind::UNet, errors, false);
      const auto eval = parse_eval(merged["eval"], errors, false);
      raise_if_any(errors);
      summary = experiment_resolution(transfer, std::move(train), eval, c.output_dir, ctx);
    }
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

const char* kind_label(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Numeric: return "numeric error";
  }
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wetland land-cover segmentation: preprocessing, autoencoder pretraining, "
               "U-Net training, evaluation and resolution transfer.\n"
               "Config values come from defaults, then --config, then flags. Each flag names "
               "its config key in parentheses."};
  app.get_formatter()->column_width(44);
  app.require_subcommand(1);
  app.set_version_flag("--version", "wetseg 0.1.0");

  std::list<Command> commands;
  auto make = [&](CLI::App* parent, const std::string& name, const std::string& desc,
                  std::vector<std::string> sections, bool experiment) -> Command& {
    auto& c = commands.emplace_back();
    c.name = name;
    c.app = parent->add_subcommand(name, desc);
    c.sections = std::move(sections);
    for (const auto& s : c.sections) c.defaults[s] = defaults_for(s);
    c.flags = std::make_unique<FlagSet>(c.app, c.defaults);
    const bool has_train = std::count(c.sections.begin(), c.sections.end(), "train") ||
                           std::count(c.sections.begin(), c.sections.end(), "pretrain");
    add_common(c, experiment || !has_train);
    if (experiment) {
      c.output_dir = "runs/experiment-" + name;
      c.app->add_option("--output-dir", c.output_dir, "Experiment directory")->capture_default_str();
      c.app->add_flag("--synthetic", c.synthetic,
                      "Generate the synthetic fixture set and use desk-scale model settings");
      c.app->add_option("--seed", c.seed, "Seed for every stage and the synthetic fixtures");
    }
    return c;
  };

  auto& pre = make(&app, "preprocess", "Tile, filter and split scenes into patches", {"preprocess"}, false);
  add_preprocess_flags(*pre.flags);
  auto& ae = make(&app, "pretrain", "Train the autoencoder on patches", {"pretrain"}, false);
  add_train_flags(*ae.flags, "pretrain", false);
  auto& unet = make(&app, "train", "Train the U-Net on labeled patches", {"train"}, false);
  add_train_flags(*unet.flags, "train", true);
  auto& ev = make(&app, "eval", "Evaluate a checkpoint on one split", {"eval"}, false);
  add_eval_flags(*ev.flags);
  auto& tr = make(&app, "transfer", "Pair scenes and build coupled high/medium resolution datasets",
                  {"transfer"}, false);
  add_transfer_flags(*tr.flags);

  auto* exp = app.add_subcommand("experiment", "Run a full experiment and print a JSON summary");
  exp->require_subcommand(1);
  auto& rec = make(exp, "reconstruction", "Autoencoder reconstruction metrics", {"pretrain", "eval"}, true);
  rec.flags->bind("--manifest", "pretrain.manifest", "Dataset manifest");
  auto& ssl = make(exp, "pretraining", "U-Net from scratch versus from the pretrained encoder",
                   {"pretrain", "train", "eval"}, true);
  ssl.flags->bind("--manifest", "pretrain.manifest", "Dataset manifest, shared by every stage");
  auto& res = make(exp, "resolution", "U-Net on medium versus high resolution", {"transfer", "train", "eval"},
                   true);
  res.flags->bind("--scenes", "transfer.scenes", "Scene list JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      return run(c);
    } catch (const Error& e) {
      std::cerr << "wetseg " << c.name << ": " << kind_label(e.kind()) << ": " << e.what() << "\n";
      return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "wetseg " << c.name << ": data error: " << e.what() << "\n";
      return static_cast<int>(ErrorKind::Data);
    }
  }
  return 2;
}
