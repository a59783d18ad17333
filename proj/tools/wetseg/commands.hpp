// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/nn/model.hpp"
#include "wetseg/pipeline/pipeline.hpp"
#include "wetseg/train/train.hpp"
#include "wetseg/transfer/transfer.hpp"

namespace wetseg::cli {

using nlohmann::json;

/// Default directory for fixtures and patches: $WETSEG_CACHE, else `fallback`.
std::filesystem::path cache_dir(const std::filesystem::path& fallback);

// Section defaults, including the CLI-only keys (inputs, output_dir).
json preprocess_defaults(const std::string& preset);
json train_defaults(nn::ModelKind kind);
json eval_defaults();
json transfer_defaults();

/// Objects replaced as a whole when merging config layers.
const std::set<std::string>& whole_paths();
/// Keys accepted under each section of a config file.
json section_schema(const std::string& section);

struct SceneSpec {
  std::string image;
  std::string label;
  std::string region;
  std::string source;
};

struct PreprocessJob {
  std::string preset;
  pipeline::PreprocessConfig config;
  std::vector<SceneSpec> scenes;
  std::string output_dir;
};

struct TrainJob {
  train::TrainConfig config;
  std::string manifest;
  std::string train_split = "train";
  std::string val_split = "val";  // "none" trains without validation
  bool auto_in_channels = true;   // take model.in_channels from the data
  bool auto_num_classes = true;   // take model.num_classes from the class scheme
};

struct EvalJob {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  double tolerance = 0.05;
  int batch_size = 4;
  int max_renders = 4;
  losses::MixedLossWeights weights;
  int ssim_window = 11;
  std::string output_dir;
};

struct TransferJob {
  transfer::ResolutionConfig config;
  std::string scenes;
  int max_gap_days = 7;
  std::string output_dir;
};

// Parsers append every problem to `errors` and return what could be read.
// Without `require_inputs`, missing manifest and checkpoint paths are left
// for an experiment to fill in.
PreprocessJob parse_preprocess(const json& section, std::vector<std::string>& errors);
TrainJob parse_train(const json& section, nn::ModelKind kind, std::vector<std::string>& errors,
                     bool require_inputs = true);
EvalJob parse_eval(const json& section, std::vector<std::string>& errors, bool require_inputs = true);
TransferJob parse_transfer(const json& section, std::vector<std::string>& errors);

// Canonical resolved sections.
json to_json(const PreprocessJob& j);
json to_json(const TrainJob& j);
json to_json(const EvalJob& j);
json to_json(const TransferJob& j);

struct RunContext {
  std::ostream* log = nullptr;  // progress lines
};

/// Each command writes its outputs and resolved_config.json into its output
/// directory and returns a JSON summary.
json cmd_preprocess(const PreprocessJob& job);
json cmd_train(TrainJob job, const RunContext& ctx);
json cmd_eval(const EvalJob& job);
json cmd_transfer(const TransferJob& job);

json experiment_reconstruction(TrainJob pretrain, EvalJob eval, const std::string& out,
                               const RunContext& ctx);
json experiment_pretraining(TrainJob pretrain, TrainJob train, EvalJob eval,
                            const std::string& out, const RunContext& ctx);
json experiment_resolution(TransferJob transfer, TrainJob train, EvalJob eval,
                           const std::string& out, const RunContext& ctx);

/// Deterministic JSON file with a trailing newline.
void write_json(const json& j, const std::filesystem::path& path);

}  // namespace wetseg::cli
