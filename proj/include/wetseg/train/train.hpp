// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/data/dataset.hpp"
#include "wetseg/losses/losses.hpp"
#include "wetseg/nn/model.hpp"

namespace wetseg::train {

/// eta_min + 0.5 (eta_max - eta_min)(1 + cos(pi t / T)). Throws ConfigError
/// unless 0 <= t <= T and T >= 1.
double cosine_lr(int t, int total, double eta_max, double eta_min);

struct LrSchedule {
  enum class Kind { Fixed, Cosine };
  Kind kind = Kind::Fixed;
  double lr = 1e-3;      // fixed rate, or eta_max
  double lr_min = 1e-4;  // eta_min, cosine only

  double at(int epoch, int total) const;
  static LrSchedule fixed(double lr) { return {Kind::Fixed, lr, lr}; }
  static LrSchedule cosine(double max, double min) { return {Kind::Cosine, max, min}; }
};

enum class SegLoss { Dice, DiceCrossEntropy };

struct InitSpec {
  std::optional<std::filesystem::path> checkpoint;  // scratch when empty
  bool freeze = false;                              // encoder, on autoencoder transfer
};

struct TrainConfig {
  nn::ModelSpec model;  // kind selects the task
  int epochs = 200;
  int batch_size = 8;
  LrSchedule schedule = LrSchedule::fixed(1e-3);
  std::uint64_t seed = 0;
  losses::MixedLossWeights loss_weights;
  int ssim_window = 11;
  SegLoss seg_loss = SegLoss::Dice;
  InitSpec init;
  int patience = 0;  // epochs without improvement before stopping; 0 disables
  double min_delta = 1e-5;
  long max_steps = 0;  // optimizer steps cap; 0 for none
  bool deterministic = true;
  std::optional<std::filesystem::path> output_dir;
  std::ostream* progress = nullptr;  // not serialized

  static TrainConfig autoencoder_defaults(int in_channels = 9);
  static TrainConfig unet_defaults(int in_channels = 9, int num_classes = 9);

  /// Every violated field, empty when valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep the values already in `c`.
void from_json(const nlohmann::json& j, TrainConfig& c);
/// FNV-1a over the canonical JSON of the config, as 16 hex digits.
std::string config_hash(const TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  std::optional<double> val_dice;  // segmentation: macro Dice
  std::optional<double> val_iou;   // segmentation: macro IoU

  bool operator==(const EpochRecord&) const = default;
};

struct RunRecord {
  std::string task;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  long steps = 0;
  int best_epoch = -1;  // -1 when no epoch ran
  std::optional<double> best_loss;
  bool stopped_early = false;
  std::string checkpoint_path;
  double wall_time_s = 0;

  /// Equality ignores wall time, the one field that is not reproducible.
  bool operator==(const RunRecord& o) const;
};

/// Wall time is left out so the file is reproducible; write_run stores it
/// in timing.json instead.
void to_json(nlohmann::json& j, const RunRecord& r);

struct TrainResult {
  RunRecord record;
  nn::ModelCheckpoint checkpoint;  // best epoch by monitored loss
};

/// Minimizes the mixed reconstruction loss. Labels are ignored. The
/// monitored loss is the validation loss when `val` is given, the training
/// loss otherwise.
TrainResult train_autoencoder(const data::PatchDataset& train, const data::PatchDataset* val,
                              const TrainConfig& cfg);
/// Minimizes the Dice (or Dice + cross-entropy) loss on labeled patches.
/// An autoencoder checkpoint in cfg.init is transferred into the encoder
/// before the first step; a U-Net checkpoint initializes every parameter.
TrainResult train_unet(const data::PatchDataset& train, const data::PatchDataset* val,
                       const TrainConfig& cfg);
/// Dispatches on cfg.model.kind.
TrainResult run_training(const data::PatchDataset& train, const data::PatchDataset* val,
                         const TrainConfig& cfg);

/// Batch order for one epoch, a function of (seed, epoch) only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// The model a run starts from: seeded initialization plus cfg.init.
/// Throws before any training on spec or transfer mismatches.
nn::Model initial_model(const TrainConfig& cfg);

/// Writes checkpoint.wsck, run.json, config.json and timing.json into `dir`.
void write_run(const TrainResult& result, const TrainConfig& cfg, const std::filesystem::path& dir);

}  // namespace wetseg::train
