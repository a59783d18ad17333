// SPDX-License-Identifier: Apache-2.0
#include "wetseg/train/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <set>

#include "wetseg/error.hpp"
#include "wetseg/eval/evaluate.hpp"
#include "wetseg/hash.hpp"
#include "wetseg/rng.hpp"
#include "wetseg/tensor/ops.hpp"

namespace wetseg::train {

namespace {

ClassScheme numbered_scheme(int k) {
  ClassScheme s{"classes" + std::to_string(k), {}};
  for (int i = 0; i < k; ++i) s.classes.push_back({static_cast<std::uint8_t>(i), std::to_string(i), {}});
  return s;
}

const char* seg_loss_name(SegLoss l) { return l == SegLoss::Dice ? "dice" : "dice+ce"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

// Fraction of labeled pixels whose argmax matches.
std::pair<std::uint64_t, std::uint64_t> pixel_hits(const nn::Tensor& logits,
                                                   std::span<const std::uint8_t> labels) {
  const int k = logits.shape.c;
  const std::size_t plane = logits.shape.plane();
  std::uint64_t hit = 0, total = 0;
  for (int n = 0; n < logits.shape.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::uint8_t g = labels[n * plane + i];
      if (g == kUnlabeled) continue;
      const float* base = logits.data.data() + std::size_t(n) * k * plane + i;
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (base[c * plane] > base[best * plane]) best = c;
      hit += best == g;
      ++total;
    }
  return {hit, total};
}

TrainResult run(const data::PatchDataset& train, const data::PatchDataset* val,
                const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const bool seg = cfg.model.kind == nn::ModelKind::UNet;
  if (train.empty()) throw DataError("empty split: train");
  for (const auto* ds : {&train, val}) {
    if (!ds) continue;
    if (ds->channels() != cfg.model.in_channels)
      throw DataError("dataset has " + std::to_string(ds->channels()) + " bands, model expects " +
                      std::to_string(cfg.model.in_channels));
    if (seg && !ds->labeled()) throw DataError("U-Net training needs labeled patches");
  }
  if (val && val->empty()) throw DataError("empty split: val");

  nn::Model model = initial_model(cfg);
  const std::string hash = config_hash(cfg);
  TrainResult result;
  auto& rec = result.record;
  rec.task = seg ? "unet" : "autoencoder";
  rec.config_hash = hash;
  rec.seed = cfg.seed;

  auto snapshot = [&](int best_epoch) {
    return nn::make_checkpoint(model, {{"task", rec.task},
                                       {"config_hash", hash},
                                       {"seed", cfg.seed},
                                       {"best_epoch", best_epoch}});
  };
  result.checkpoint = snapshot(-1);

  const losses::SsimOptions ssim{cfg.ssim_window};
  eval::EvalOptions eopt;
  eopt.weights = cfg.loss_weights;
  eopt.ssim = ssim;
  eopt.batch_size = cfg.batch_size;
  eopt.scheme = numbered_scheme(cfg.model.num_classes);

  double best = std::numeric_limits<double>::infinity();
  double patience_ref = best;
  int stale = 0;
  auto say = [&](int epoch, const char* split, double loss, double acc) {
    if (!cfg.progress) return;
    char line[160];
    std::snprintf(line, sizeof line, "epoch=%d split=%s loss=%.6f acc=%.6f\n", epoch, split, loss, acc);
    *cfg.progress << line << std::flush;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    er.lr = cfg.schedule.at(epoch, cfg.epochs);
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    auto drop_rng = keyed_rng(cfg.seed, rng_stream::kDropout, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0;
    std::uint64_t hit = 0, seen = 0;
    std::size_t samples = 0;
    bool capped = false;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      if (cfg.max_steps > 0 && rec.steps >= cfg.max_steps) {
        capped = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const data::Batch batch = train.batch(idx);
      try {
        model.params().zero_grad();
        const nn::Var x(batch.images);
        const nn::Var out = model.forward(x, true, &drop_rng);
        nn::Var loss;
        if (seg) {
          loss = losses::dice_loss(out, batch.labels);
          if (cfg.seg_loss == SegLoss::DiceCrossEntropy)
            loss = nn::add(loss, losses::cross_entropy(out, batch.labels));
          const auto [h, t] = pixel_hits(out.value(), batch.labels);
          hit += h;
          seen += t;
        } else {
          loss = losses::mixed_loss(out, x, cfg.loss_weights, ssim);
          const auto& o = out.value().data;
          for (std::size_t i = 0; i < o.size(); ++i)
            hit += std::abs(double{o[i]} - batch.images.data[i]) <= 0.05;
          seen += o.size();
        }
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw NumericError("non-finite loss");
        nn::backward(loss);
        model.params().adam_step(static_cast<float>(er.lr));
        loss_sum += lv * idx.size();
        samples += idx.size();
        ++rec.steps;
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " +
                           e.what());
      }
    }
    if (samples == 0) break;  // step cap reached at an epoch boundary
    er.train_loss = loss_sum / samples;
    er.train_accuracy = seen ? double(hit) / seen : 0.0;
    say(epoch, "train", er.train_loss, er.train_accuracy);

    double monitored = er.train_loss;
    if (val) {
      eval::MetricsReport r;
      try {
        r = eval::evaluate(model, *val, eopt);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " validation: " + e.what());
      }
      if (seg) {
        er.val_loss = *r.segmentation->dice_loss;
        er.val_accuracy = r.segmentation->overall_accuracy;
        er.val_dice = r.segmentation->macro_dice;
        er.val_iou = r.segmentation->macro_iou;
      } else {
        er.val_loss = r.reconstruction->mixed_loss;
        er.val_accuracy = r.reconstruction->accuracy;
      }
      monitored = *er.val_loss;
      say(epoch, "val", *er.val_loss, *er.val_accuracy);
    }
    rec.epochs.push_back(er);

    if (monitored < best) {
      best = monitored;
      rec.best_epoch = epoch;
      rec.best_loss = monitored;
      result.checkpoint = snapshot(epoch);
    }
    if (monitored < patience_ref - cfg.min_delta) {
      patience_ref = monitored;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      rec.stopped_early = true;
      break;
    }
    if (capped) break;
  }
  if (rec.epochs.empty()) result.checkpoint = snapshot(-1);
  result.checkpoint.provenance["epochs_run"] = rec.epochs.size();
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (cfg.output_dir) {
    rec.checkpoint_path = (*cfg.output_dir / "checkpoint.wsck").string();
    write_run(result, cfg, *cfg.output_dir);
  }
  return result;
}

}  // namespace

double cosine_lr(int t, int total, double eta_max, double eta_min) {
  if (total < 1) throw ConfigError("cosine_lr: total epochs must be >= 1");
  if (t < 0 || t > total)
    throw ConfigError("cosine_lr: epoch " + std::to_string(t) + " outside [0, " +
                      std::to_string(total) + "]");
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

double LrSchedule::at(int epoch, int total) const {
  return kind == Kind::Fixed ? lr : cosine_lr(epoch, total, lr, lr_min);
}

TrainConfig TrainConfig::autoencoder_defaults(int in_channels) {
  TrainConfig c;
  c.model = nn::ModelSpec::autoencoder(in_channels);
  c.epochs = 200;
  c.schedule = LrSchedule::fixed(1e-3);
  return c;
}

TrainConfig TrainConfig::unet_defaults(int in_channels, int num_classes) {
  TrainConfig c;
  c.model = nn::ModelSpec::unet(in_channels, num_classes);
  c.epochs = 300;
  c.schedule = LrSchedule::cosine(1e-3, 1e-4);
  return c;
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> v;
  try {
    model.validate();
  } catch (const ConfigError& e) {
    v.push_back(e.what());
  }
  if (epochs < 0) v.push_back("epochs must be >= 0");
  if (batch_size < 1) v.push_back("batch_size must be >= 1");
  if (!(schedule.lr > 0)) v.push_back("schedule.lr must be > 0");
  if (schedule.kind == LrSchedule::Kind::Cosine && !(schedule.lr_min > 0 && schedule.lr_min <= schedule.lr))
    v.push_back("schedule.lr_min must satisfy 0 < lr_min <= lr");
  try {
    loss_weights.validate();
  } catch (const ConfigError& e) {
    v.push_back(e.what());
  }
  if (ssim_window < 1 || ssim_window % 2 == 0) v.push_back("ssim_window must be a positive odd number");
  if (patience < 0) v.push_back("patience must be >= 0");
  if (!(min_delta >= 0)) v.push_back("min_delta must be >= 0");
  if (max_steps < 0) v.push_back("max_steps must be >= 0");
  if (init.freeze && !init.checkpoint) v.push_back("init.freeze requires init.checkpoint");
  return v;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  const bool cosine = c.schedule.kind == LrSchedule::Kind::Cosine;
  j = {{"model", c.model},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"schedule",
        {{"kind", cosine ? "cosine" : "fixed"}, {"lr", c.schedule.lr}, {"lr_min", c.schedule.lr_min}}},
       {"seed", c.seed},
       {"loss_weights", c.loss_weights},
       {"ssim_window", c.ssim_window},
       {"seg_loss", seg_loss_name(c.seg_loss)},
       {"init",
        {{"checkpoint", c.init.checkpoint ? nlohmann::json(c.init.checkpoint->string()) : nlohmann::json()},
         {"freeze", c.init.freeze}}},
       {"patience", c.patience},
       {"min_delta", c.min_delta},
       {"max_steps", c.max_steps},
       {"deterministic", c.deterministic},
       {"output_dir", c.output_dir ? nlohmann::json(c.output_dir->string()) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{
      "model",      "epochs",   "batch_size", "schedule",  "seed",          "loss_weights",
      "ssim_window", "seg_loss", "init",       "patience",  "min_delta",     "max_steps",
      "deterministic", "output_dir"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  std::vector<std::string> errors;
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) errors.push_back("unknown key '" + k + "'");
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const std::exception& e) {
      errors.push_back(std::string(key) + ": " + e.what());
    }
  };
  field("model", c.model);
  field("epochs", c.epochs);
  field("batch_size", c.batch_size);
  field("seed", c.seed);
  field("loss_weights", c.loss_weights);
  field("ssim_window", c.ssim_window);
  field("patience", c.patience);
  field("min_delta", c.min_delta);
  field("max_steps", c.max_steps);
  field("deterministic", c.deterministic);
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    const std::string kind = s.value("kind", c.schedule.kind == LrSchedule::Kind::Cosine ? "cosine" : "fixed");
    if (kind == "fixed") c.schedule.kind = LrSchedule::Kind::Fixed;
    else if (kind == "cosine") c.schedule.kind = LrSchedule::Kind::Cosine;
    else errors.push_back("schedule.kind: expected 'fixed' or 'cosine', got '" + kind + "'");
    try {
      c.schedule.lr = s.value("lr", c.schedule.lr);
      c.schedule.lr_min = s.value("lr_min", c.schedule.lr_min);
    } catch (const std::exception& e) {
      errors.push_back(std::string("schedule: ") + e.what());
    }
  }
  if (j.contains("seg_loss")) {
    const auto name = j["seg_loss"].is_string() ? j["seg_loss"].get<std::string>() : "";
    if (name == "dice") c.seg_loss = SegLoss::Dice;
    else if (name == "dice+ce") c.seg_loss = SegLoss::DiceCrossEntropy;
    else errors.push_back("seg_loss: expected 'dice' or 'dice+ce'");
  }
  if (j.contains("init")) {
    const auto& i = j["init"];
    try {
      if (i.contains("checkpoint") && !i["checkpoint"].is_null())
        c.init.checkpoint = i["checkpoint"].get<std::string>();
      c.init.freeze = i.value("freeze", c.init.freeze);
    } catch (const std::exception& e) {
      errors.push_back(std::string("init: ") + e.what());
    }
  }
  if (j.contains("output_dir") && !j["output_dir"].is_null()) {
    if (j["output_dir"].is_string()) c.output_dir = j["output_dir"].get<std::string>();
    else errors.push_back("output_dir: expected a string");
  }
  if (!errors.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string config_hash(const TrainConfig& c) {
  nlohmann::json j = c;
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

bool RunRecord::operator==(const RunRecord& o) const {
  return task == o.task && config_hash == o.config_hash && seed == o.seed && epochs == o.epochs &&
         steps == o.steps && best_epoch == o.best_epoch && best_loss == o.best_loss &&
         stopped_early == o.stopped_early && checkpoint_path == o.checkpoint_path;
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  auto epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", opt(e.val_loss)},
                      {"val_accuracy", opt(e.val_accuracy)},
                      {"val_dice", opt(e.val_dice)},
                      {"val_iou", opt(e.val_iou)}});
  j = {{"task", r.task},
       {"config_hash", r.config_hash},
       {"seed", r.seed},
       {"epochs", epochs},
       {"epochs_run", r.epochs.size()},
       {"steps", r.steps},
       {"best_epoch", r.best_epoch},
       {"best_loss", opt(r.best_loss)},
       {"stopped_early", r.stopped_early},
       {"checkpoint", r.checkpoint_path}};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = keyed_rng(seed, rng_stream::kShuffle, static_cast<std::uint64_t>(epoch));
  // Fisher-Yates with a plain modulus, so the order does not depend on the
  // standard library's distribution implementation.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

nn::Model initial_model(const TrainConfig& cfg) {
  nn::Model model(cfg.model, cfg.seed);
  if (!cfg.init.checkpoint) return model;
  const auto ckpt = nn::load_checkpoint(*cfg.init.checkpoint);
  if (ckpt.spec.kind == cfg.model.kind) {
    if (cfg.init.freeze) throw ConfigError("init.freeze applies only to autoencoder transfer");
    nn::load_weights(model, ckpt);
  } else if (ckpt.spec.kind == nn::ModelKind::Autoencoder) {
    nn::transfer_encoder(ckpt, model, cfg.init.freeze);
  } else {
    throw ConfigError("cannot initialize an autoencoder from a U-Net checkpoint");
  }
  return model;
}

TrainResult train_autoencoder(const data::PatchDataset& train, const data::PatchDataset* val,
                              const TrainConfig& cfg) {
  if (cfg.model.kind != nn::ModelKind::Autoencoder)
    throw ConfigError("train_autoencoder needs an autoencoder model spec");
  return run(train, val, cfg);
}

TrainResult train_unet(const data::PatchDataset& train, const data::PatchDataset* val,
                       const TrainConfig& cfg) {
  if (cfg.model.kind != nn::ModelKind::UNet) throw ConfigError("train_unet needs a U-Net model spec");
  return run(train, val, cfg);
}

TrainResult run_training(const data::PatchDataset& train, const data::PatchDataset* val,
                         const TrainConfig& cfg) {
  return run(train, val, cfg);
}

void write_run(const TrainResult& result, const TrainConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(result.checkpoint, dir / "checkpoint.wsck");
  RunRecord rec = result.record;
  rec.checkpoint_path = "checkpoint.wsck";
  write_text(dir / "run.json", nlohmann::json(rec).dump(2) + "\n");
  write_text(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
  write_text(dir / "timing.json", nlohmann::json({{"wall_time_s", rec.wall_time_s}}).dump(2) + "\n");
}

}  // namespace wetseg::train
