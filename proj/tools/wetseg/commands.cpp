// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdlib>
#include <fstream>

#include "config.hpp"
#include "wetseg/data/dataset.hpp"
#include "wetseg/error.hpp"
#include "wetseg/eval/evaluate.hpp"
#include "wetseg/hash.hpp"
#include "wetseg/rascore/labels.hpp"

namespace wetseg::cli {

namespace fs = std::filesystem;

namespace {

const char* section_of(nn::ModelKind kind) {
  return kind == nn::ModelKind::Autoencoder ? "pretrain" : "train";
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

template <class T>
void read_field(const json& section, const char* key, T& dst, const std::string& prefix,
                std::vector<std::string>& errors) {
  if (!section.contains(key)) return;
  try {
    section.at(key).get_to(dst);
  } catch (const std::exception& e) {
    errors.push_back(prefix + "." + key + ": " + e.what());
  }
}

void prefixed(const std::vector<std::string>& items, const std::string& prefix,
              std::vector<std::string>& errors) {
  for (const auto& v : items) errors.push_back(prefix + ": " + v);
}

std::string manifest_hash(const DatasetManifest& m) { return hex64(fnv1a(dump_manifest(m))); }

data::LabelMode label_mode(nn::ModelKind kind) {
  return kind == nn::ModelKind::Autoencoder ? data::LabelMode::Ignore : data::LabelMode::LabeledOnly;
}

json split_counts(const DatasetManifest& m) {
  return {{"train", m.count(Split::Train)}, {"val", m.count(Split::Val)}, {"test", m.count(Split::Test)}};
}

struct Trained {
  train::TrainResult result;
  json summary;
};

Trained train_from_manifest(TrainJob job, const RunContext& ctx) {
  const fs::path manifest_path = job.manifest;
  const auto m = load_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  auto& cfg = job.config;
  const auto mode = label_mode(cfg.model.kind);
  const auto train = data::PatchDataset::from_manifest(m, root, parse_split(job.train_split), mode);
  std::optional<data::PatchDataset> val;
  if (job.val_split != "none")
    val = data::PatchDataset::from_manifest(m, root, parse_split(job.val_split), mode);
  if (job.auto_in_channels) cfg.model.in_channels = train.channels();
  if (cfg.model.kind == nn::ModelKind::UNet && job.auto_num_classes)
    cfg.model.num_classes = static_cast<int>(m.class_scheme.size());
  cfg.progress = ctx.log;
  if (cfg.output_dir) fs::create_directories(*cfg.output_dir);

  Trained t{train::run_training(train, val ? &*val : nullptr, cfg), {}};
  const auto& rec = t.result.record;
  t.summary = {{"task", rec.task},
               {"checkpoint", rec.checkpoint_path},
               {"checkpoint_id", eval::checkpoint_id(t.result.checkpoint)},
               {"config_hash", rec.config_hash},
               {"dataset", manifest_hash(m)},
               {"epochs_run", rec.epochs.size()},
               {"best_epoch", rec.best_epoch},
               {"best_loss", rec.best_loss ? json(*rec.best_loss) : json()},
               {"stopped_early", rec.stopped_early}};
  if (cfg.output_dir) {
    job.config.progress = nullptr;
    write_json({{section_of(cfg.model.kind), to_json(job)}}, *cfg.output_dir / "resolved_config.json");
  }
  return t;
}

eval::MetricsReport evaluate_job(const EvalJob& job) {
  const auto ckpt = nn::load_checkpoint(job.checkpoint);
  const fs::path manifest_path = job.manifest;
  const auto m = load_manifest(manifest_path);
  const auto split = parse_split(job.split);
  const auto data = data::PatchDataset::from_manifest(m, manifest_path.parent_path(), split,
                                                      label_mode(ckpt.spec.kind));
  eval::EvalOptions opts;
  opts.tolerance = job.tolerance;
  opts.weights = job.weights;
  opts.ssim.window = job.ssim_window;
  opts.batch_size = job.batch_size;
  opts.scheme = m.class_scheme;
  opts.dataset_id = manifest_hash(m) + ":" + job.split;
  opts.max_renders = static_cast<std::size_t>(job.max_renders);
  const fs::path out = job.output_dir;
  if (job.max_renders > 0) opts.render_dir = out / "renders";
  fs::create_directories(out);
  auto report = eval::evaluate(ckpt, data, opts);
  eval::write_report(report, out / "report.json");
  write_json({{"eval", to_json(job)}}, out / "resolved_config.json");
  return report;
}

json segmentation_row(const eval::SegmentationMetrics& s) {
  return {{"accuracy", s.overall_accuracy},
          {"weighted_accuracy", s.weighted_accuracy},
          {"dice", s.macro_dice},
          {"iou", s.macro_iou},
          {"precision", s.macro_precision},
          {"recall", s.macro_recall},
          {"dice_loss", s.dice_loss ? json(*s.dice_loss) : json()}};
}

std::vector<transfer::SceneRef> scene_list(const json& j, const char* key, const std::string& file) {
  if (!j.contains(key) || !j[key].is_array())
    throw DataError(file + ": '" + key + "' must be a list of scenes");
  try {
    return j[key].get<std::vector<transfer::SceneRef>>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(file + ": " + key + ": " + e.what());
  }
}

}  // namespace

fs::path cache_dir(const fs::path& fallback) {
  const char* env = std::getenv("WETSEG_CACHE");
  return env && *env ? fs::path(env) : fallback;
}

json preprocess_defaults(const std::string& preset) {
  pipeline::PreprocessConfig c;
  if (preset == "medium") c = pipeline::PreprocessConfig::medium_resolution();
  else if (preset == "high") c = pipeline::PreprocessConfig::high_resolution();
  else throw ConfigError("preprocess.preset: expected 'medium' or 'high', got '" + preset + "'");
  json j = c;
  j["preset"] = preset;
  j["scenes"] = json::array();
  j["output_dir"] = (cache_dir(".wetseg-cache") / "patches" / preset).string();
  return j;
}

json train_defaults(nn::ModelKind kind) {
  auto c = kind == nn::ModelKind::Autoencoder ? train::TrainConfig::autoencoder_defaults()
                                              : train::TrainConfig::unet_defaults();
  c.deterministic = false;
  c.output_dir = fs::path("runs") / section_of(kind);
  json j = c;
  j["manifest"] = "";
  j["train_split"] = "train";
  j["val_split"] = "val";
  return j;
}

json eval_defaults() {
  return {{"checkpoint", ""},
          {"manifest", ""},
          {"split", "test"},
          {"tolerance", 0.05},
          {"batch_size", 4},
          {"max_renders", 4},
          {"loss_weights", losses::MixedLossWeights{}},
          {"ssim_window", 11},
          {"output_dir", "runs/eval"}};
}

json transfer_defaults() {
  json j = transfer::ResolutionConfig{};
  j["scenes"] = "";
  j["max_gap_days"] = 7;
  j["output_dir"] = "runs/transfer";
  return j;
}

const std::set<std::string>& whole_paths() {
  static const std::set<std::string> paths{"preprocess.split_policy.regions", "transfer.scene_splits"};
  return paths;
}

json section_schema(const std::string& section) {
  if (section == "preprocess") {
    json j = preprocess_defaults("medium");
    for (const char* k : {"train", "val", "test", "seed"}) j["split_policy"][k] = 0;
    return j;
  }
  if (section == "pretrain") return train_defaults(nn::ModelKind::Autoencoder);
  if (section == "train") return train_defaults(nn::ModelKind::UNet);
  if (section == "eval") return eval_defaults();
  if (section == "transfer") return transfer_defaults();
  throw ConfigError("unknown config section '" + section + "'");
}

PreprocessJob parse_preprocess(const json& section, std::vector<std::string>& errors) {
  PreprocessJob job;
  job.preset = section.value("preset", std::string("medium"));
  try {
    job.config = job.preset == "high" ? pipeline::PreprocessConfig::high_resolution()
                                      : pipeline::PreprocessConfig::medium_resolution();
    if (job.preset != "high" && job.preset != "medium")
      errors.push_back("preprocess.preset: expected 'medium' or 'high', got '" + job.preset + "'");
    pipeline::update_from_json(without(section, {"preset", "scenes", "output_dir"}), job.config);
  } catch (const std::exception& e) {
    add_error_lines("preprocess", e.what(), errors);
  }
  prefixed(job.config.violations(), "preprocess", errors);
  read_field(section, "output_dir", job.output_dir, "preprocess", errors);
  if (job.output_dir.empty()) errors.push_back("preprocess.output_dir: required");
  const json scenes = section.value("scenes", json::array());
  if (!scenes.is_array()) errors.push_back("preprocess.scenes: must be a list");
  for (std::size_t i = 0; scenes.is_array() && i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const std::string at = "preprocess.scenes[" + std::to_string(i) + "]";
    if (!s.is_object() || !s.contains("image") || !s["image"].is_string()) {
      errors.push_back(at + ": needs an 'image' path");
      continue;
    }
    for (const auto& [k, v] : s.items())
      if (k != "image" && k != "label" && k != "region" && k != "source")
        errors.push_back(at + "." + k + ": unknown key");
      else if (!v.is_string())
        errors.push_back(at + "." + k + ": must be a string");
    SceneSpec spec;
    spec.image = s["image"].get<std::string>();
    spec.label = s.value("label", "");
    spec.region = s.value("region", "");
    spec.source = s.value("source", "");
    job.scenes.push_back(std::move(spec));
  }
  if (job.scenes.empty()) errors.push_back("preprocess.scenes: at least one scene is required");
  return job;
}

TrainJob parse_train(const json& section, nn::ModelKind kind, std::vector<std::string>& errors,
                     bool require_inputs) {
  const std::string name = section_of(kind);
  TrainJob job;
  job.config = kind == nn::ModelKind::Autoencoder ? train::TrainConfig::autoencoder_defaults()
                                                  : train::TrainConfig::unet_defaults();
  try {
    train::from_json(without(section, {"manifest", "train_split", "val_split"}), job.config);
  } catch (const std::exception& e) {
    add_error_lines(name, e.what(), errors);
  }
  if (job.config.model.kind != kind)
    errors.push_back(name + ".model.kind: must be '" +
                     (kind == nn::ModelKind::Autoencoder ? "autoencoder" : "unet") + "'");
  prefixed(job.config.violations(), name, errors);
  read_field(section, "manifest", job.manifest, name, errors);
  read_field(section, "train_split", job.train_split, name, errors);
  read_field(section, "val_split", job.val_split, name, errors);
  if (require_inputs && job.manifest.empty()) errors.push_back(name + ".manifest: required");
  try {
    parse_split(job.train_split);
  } catch (const std::exception& e) {
    errors.push_back(name + ".train_split: " + e.what());
  }
  if (job.val_split != "none") {
    try {
      parse_split(job.val_split);
    } catch (const std::exception& e) {
      errors.push_back(name + ".val_split: " + e.what() + " (or 'none')");
    }
  }
  if (!job.config.output_dir || job.config.output_dir->empty())
    errors.push_back(name + ".output_dir: required");
  return job;
}

EvalJob parse_eval(const json& section, std::vector<std::string>& errors, bool require_inputs) {
  EvalJob job;
  for (const auto& [k, v] : section.items())
    if (!eval_defaults().contains(k)) errors.push_back("eval." + k + ": unknown key");
  read_field(section, "checkpoint", job.checkpoint, "eval", errors);
  read_field(section, "manifest", job.manifest, "eval", errors);
  read_field(section, "split", job.split, "eval", errors);
  read_field(section, "tolerance", job.tolerance, "eval", errors);
  read_field(section, "batch_size", job.batch_size, "eval", errors);
  read_field(section, "max_renders", job.max_renders, "eval", errors);
  read_field(section, "loss_weights", job.weights, "eval", errors);
  read_field(section, "ssim_window", job.ssim_window, "eval", errors);
  read_field(section, "output_dir", job.output_dir, "eval", errors);
  if (require_inputs && job.checkpoint.empty()) errors.push_back("eval.checkpoint: required");
  if (require_inputs && job.manifest.empty()) errors.push_back("eval.manifest: required");
  if (job.output_dir.empty()) errors.push_back("eval.output_dir: required");
  try {
    parse_split(job.split);
  } catch (const std::exception& e) {
    errors.push_back(std::string("eval.split: ") + e.what());
  }
  if (!(job.tolerance >= 0)) errors.push_back("eval.tolerance: must be >= 0");
  if (job.batch_size < 1) errors.push_back("eval.batch_size: must be >= 1");
  if (job.max_renders < 0) errors.push_back("eval.max_renders: must be >= 0");
  if (job.ssim_window < 1 || job.ssim_window % 2 == 0)
    errors.push_back("eval.ssim_window: must be a positive odd number");
  try {
    job.weights.validate();
  } catch (const std::exception& e) {
    errors.push_back(std::string("eval.loss_weights: ") + e.what());
  }
  return job;
}

TransferJob parse_transfer(const json& section, std::vector<std::string>& errors) {
  TransferJob job;
  try {
    transfer::update_from_json(without(section, {"scenes", "max_gap_days", "output_dir"}), job.config);
  } catch (const std::exception& e) {
    add_error_lines("transfer", e.what(), errors);
  }
  prefixed(job.config.violations(), "transfer", errors);
  read_field(section, "scenes", job.scenes, "transfer", errors);
  read_field(section, "max_gap_days", job.max_gap_days, "transfer", errors);
  read_field(section, "output_dir", job.output_dir, "transfer", errors);
  if (job.scenes.empty()) errors.push_back("transfer.scenes: required");
  if (job.max_gap_days < 0) errors.push_back("transfer.max_gap_days: must be >= 0");
  if (job.output_dir.empty()) errors.push_back("transfer.output_dir: required");
  return job;
}

json to_json(const PreprocessJob& job) {
  json j = job.config;
  j["preset"] = job.preset;
  j["output_dir"] = job.output_dir;
  auto& scenes = j["scenes"] = json::array();
  for (const auto& s : job.scenes) {
    json e = {{"image", s.image}};
    if (!s.label.empty()) e["label"] = s.label;
    if (!s.region.empty()) e["region"] = s.region;
    if (!s.source.empty()) e["source"] = s.source;
    scenes.push_back(e);
  }
  return j;
}

json to_json(const TrainJob& job) {
  json j = job.config;
  j["manifest"] = job.manifest;
  j["train_split"] = job.train_split;
  j["val_split"] = job.val_split;
  return j;
}

json to_json(const EvalJob& job) {
  return {{"checkpoint", job.checkpoint}, {"manifest", job.manifest},
          {"split", job.split},           {"tolerance", job.tolerance},
          {"batch_size", job.batch_size}, {"max_renders", job.max_renders},
          {"loss_weights", job.weights},  {"ssim_window", job.ssim_window},
          {"output_dir", job.output_dir}};
}

json to_json(const TransferJob& job) {
  json j = job.config;
  j["scenes"] = job.scenes;
  j["max_gap_days"] = job.max_gap_days;
  j["output_dir"] = job.output_dir;
  return j;
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json cmd_preprocess(const PreprocessJob& job) {
  const ClassScheme& scheme = builtin_scheme(job.config.class_scheme);
  std::vector<pipeline::SceneInput> scenes;
  for (const auto& s : job.scenes) {
    pipeline::SceneInput in;
    in.image = read_raster(s.image);
    if (!s.region.empty()) in.image.region = s.region;
    if (!s.label.empty()) in.label = read_mask(s.label, scheme);
    in.source = s.source.empty() ? fs::path(s.image).stem().string() : s.source;
    scenes.push_back(std::move(in));
  }
  const fs::path out = job.output_dir;
  const auto result = pipeline::run_pipeline(scenes, job.config, out);
  write_json({{"preprocess", to_json(job)}}, out / "resolved_config.json");
  return {{"manifest", (out / "manifest.json").string()},
          {"manifest_hash", manifest_hash(result.manifest)},
          {"tiles", result.tiles},
          {"patches", result.manifest.entries.size()},
          {"splits", split_counts(result.manifest)},
          {"rejections", result.rejections}};
}

json cmd_train(TrainJob job, const RunContext& ctx) { return train_from_manifest(std::move(job), ctx).summary; }

json cmd_eval(const EvalJob& job) { return evaluate_job(job); }

json cmd_transfer(const TransferJob& job) {
  const fs::path scenes_path = job.scenes;
  std::ifstream in(scenes_path);
  if (!in) throw DataError("cannot read scene list " + job.scenes);
  json list;
  try {
    list = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(job.scenes + ": " + e.what());
  }
  const auto hires = scene_list(list, "hires", job.scenes);
  const auto lores = scene_list(list, "lores", job.scenes);
  const auto pairing = transfer::pair_scenes(hires, lores, job.max_gap_days);
  const fs::path out = job.output_dir;
  write_json(pairing, out / "pairing.json");
  const auto exp =
      transfer::build_resolution_experiment(pairing.pairs, scenes_path.parent_path(), job.config, out);
  write_json({{"transfer", to_json(job)}}, out / "resolved_config.json");
  json splits = json::object();
  for (const auto& [id, s] : exp.scene_splits) splits[id] = split_name(s);
  json unpaired = json::array();
  for (const auto& u : pairing.unpaired) unpaired.push_back({{"id", u.id}, {"reason", u.reason}});
  return {{"pairs", pairing.pairs.size()},
          {"unpaired", unpaired},
          {"scene_splits", splits},
          {"hires", {{"manifest", (out / "hires" / "manifest.json").string()},
                     {"manifest_hash", manifest_hash(exp.hires)},
                     {"splits", split_counts(exp.hires)}}},
          {"lores", {{"manifest", (out / "lores" / "manifest.json").string()},
                     {"manifest_hash", manifest_hash(exp.lores)},
                     {"splits", split_counts(exp.lores)}}}};
}

json experiment_reconstruction(TrainJob pretrain, EvalJob eval, const std::string& out,
                               const RunContext& ctx) {
  const fs::path dir = out;
  pretrain.config.output_dir = dir / "pretrain";
  const auto trained = train_from_manifest(pretrain, ctx);
  eval.checkpoint = (dir / "pretrain" / "checkpoint.wsck").string();
  eval.manifest = pretrain.manifest;
  eval.output_dir = (dir / "eval").string();
  const auto report = evaluate_job(eval);
  const auto& r = *report.reconstruction;
  json summary = {{"experiment", "reconstruction"},
                  {"dataset_id", report.dataset_id},
                  {"images", report.images},
                  {"pretrain", trained.summary},
                  {"rows", json::array({{{"model", "autoencoder"},
                                         {"accuracy", r.accuracy},
                                         {"psnr", eval::number_or_inf(r.psnr)},
                                         {"ssim", r.ssim},
                                         {"huber_loss", r.huber},
                                         {"ssim_loss", r.ssim_loss},
                                         {"edge_loss", r.edge_loss},
                                         {"mixed_loss", r.mixed_loss}}})}};
  pretrain.config.progress = nullptr;
  write_json({{"pretrain", to_json(pretrain)}, {"eval", to_json(eval)}}, dir / "resolved_config.json");
  write_json(summary, dir / "summary.json");
  return summary;
}

json experiment_pretraining(TrainJob pretrain, TrainJob train, EvalJob eval, const std::string& out,
                            const RunContext& ctx) {
  const fs::path dir = out;
  pretrain.config.output_dir = dir / "pretrain";
  const auto ae = train_from_manifest(pretrain, ctx);
  train.manifest = pretrain.manifest;
  eval.manifest = pretrain.manifest;

  json rows = json::array(), runs = json::object();
  for (const std::string method : {"scratch", "pretrained"}) {
    TrainJob job = train;
    job.config.output_dir = dir / method;
    if (method == "scratch") {
      job.config.init = {};
    } else {
      job.config.init.checkpoint = dir / "pretrain" / "checkpoint.wsck";
    }
    const auto unet = train_from_manifest(job, ctx);
    EvalJob ev = eval;
    ev.checkpoint = (dir / method / "checkpoint.wsck").string();
    ev.output_dir = (dir / ("eval_" + method)).string();
    const auto report = evaluate_job(ev);
    json row = segmentation_row(*report.segmentation);
    row.erase("weighted_accuracy");
    row["method"] = method;
    rows.push_back(row);
    runs[method] = unet.summary;
  }
  json summary = {{"experiment", "pretraining"},
                  {"pretrain", ae.summary},
                  {"runs", runs},
                  {"rows", rows}};
  pretrain.config.progress = nullptr;
  write_json({{"pretrain", to_json(pretrain)}, {"train", to_json(train)}, {"eval", to_json(eval)}},
             dir / "resolved_config.json");
  write_json(summary, dir / "summary.json");
  return summary;
}

json experiment_resolution(TransferJob transfer, TrainJob train, EvalJob eval, const std::string& out,
                           const RunContext& ctx) {
  const fs::path dir = out;
  transfer.output_dir = (dir / "transfer").string();
  const auto prepared = cmd_transfer(transfer);

  json rows = json::array(), runs = json::object();
  for (const auto& [resolution, sub] : {std::pair{"medium", "lores"}, std::pair{"high", "hires"}}) {
    TrainJob job = train;
    job.manifest = (dir / "transfer" / sub / "manifest.json").string();
    job.config.output_dir = dir / ("train_" + std::string(resolution));
    const auto unet = train_from_manifest(job, ctx);
    EvalJob ev = eval;
    ev.manifest = job.manifest;
    ev.checkpoint = (*job.config.output_dir / "checkpoint.wsck").string();
    ev.output_dir = (dir / ("eval_" + std::string(resolution))).string();
    const auto report = evaluate_job(ev);
    json row = segmentation_row(*report.segmentation);
    row["resolution"] = resolution;
    rows.push_back(row);
    runs[resolution] = unet.summary;
  }
  json summary = {{"experiment", "resolution"}, {"transfer", prepared}, {"runs", runs}, {"rows", rows}};
  train.config.progress = nullptr;
  write_json({{"transfer", to_json(transfer)}, {"train", to_json(train)}, {"eval", to_json(eval)}},
             dir / "resolved_config.json");
  write_json(summary, dir / "summary.json");
  return summary;
}

}  // namespace wetseg::cli
