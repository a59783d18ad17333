// SPDX-License-Identifier: Apache-2.0
//
// Convolutional autoencoder and U-Net sharing one encoder layout.
//
// Parameter names:
//   encoder.block{i}.conv{1,2}.{weight,bias}   i = 0..depth-1, width base*2^i
//   encoder.bridge.conv{1,2}.{weight,bias}     width bridge_channels
//   decoder.block{i}.conv{1,2}.{weight,bias}   width base*2^i
//   head.{weight,bias}                          1x1 conv to the output channels
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/tensor/param_store.hpp"
#include "wetseg/tensor/tensor.hpp"

namespace wetseg::nn {

enum class ModelKind { Autoencoder, UNet };
enum class Upsample { Nearest };

const char* kind_name(ModelKind k);

struct ModelSpec {
  ModelKind kind = ModelKind::Autoencoder;
  int in_channels = 9;
  int base_channels = 64;
  int depth = 4;
  int bridge_channels = 512;
  float dropout_p = 0.15f;
  int num_classes = 9;  // U-Net only
  Upsample upsample = Upsample::Nearest;

  static ModelSpec autoencoder(int in_channels = 9);
  static ModelSpec unet(int in_channels = 9, int num_classes = 9);

  int block_channels(int level) const { return base_channels << level; }
  int out_channels() const { return kind == ModelKind::Autoencoder ? in_channels : num_classes; }
  /// Throws ConfigError on non-positive sizes or p outside [0,1).
  void validate() const;
  /// Same encoder shape (input channels, widths, depth, bridge).
  bool same_encoder(const ModelSpec& o) const;
  bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

/// Closed-form parameter count; see the README for the formula.
std::size_t expected_parameter_count(const ModelSpec& spec);
/// Names of every encoder and bridge parameter, in registration order.
std::vector<std::string> encoder_parameter_names(const ModelSpec& spec);

struct ForwardTrace {
  std::vector<Var> skips;  // encoder block outputs before pooling
  Var bridge;
};

class Model {
 public:
  /// Builds the network with He-uniform weights and zero biases drawn from `seed`.
  Model(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Autoencoder: sigmoid reconstruction with the input's shape.
  /// U-Net: raw class logits (N, num_classes, H, W).
  /// Dropout is active only when `training`; it then draws from `rng`.
  Var forward(const Var& x, bool training = false, std::mt19937_64* rng = nullptr,
              ForwardTrace* trace = nullptr) const;
  /// Encoder and bridge only.
  ForwardTrace encode(const Var& x, bool training = false, std::mt19937_64* rng = nullptr) const;

 private:
  Var block(const std::string& prefix, const Var& x, bool training, std::mt19937_64* rng) const;

  ModelSpec spec_;
  ParamStore params_;
};

Model build_autoencoder(const ModelSpec& spec, std::uint64_t seed = 0);
Model build_unet(const ModelSpec& spec, std::uint64_t seed = 0);

struct ModelCheckpoint {
  static constexpr std::uint16_t kVersion = 1;

  std::uint16_t version = kVersion;
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json provenance = nlohmann::json::object();  // epochs, seed, config hash

  const Tensor& tensor(const std::string& name) const;
};

ModelCheckpoint make_checkpoint(const Model& model, nlohmann::json provenance = {});
/// Overwrites the model's parameters. Throws ConfigError if the spec differs
/// and DataError if a parameter is missing, repeated or misshapen.
void load_weights(Model& model, const ModelCheckpoint& ckpt);

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);
/// As above, failing with ConfigError unless the checkpoint holds `kind`.
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, ModelKind kind);

/// Copies every encoder and bridge parameter from an autoencoder checkpoint
/// into `unet`. With `freeze`, those parameters stop receiving optimizer
/// updates. Throws DataError listing differing names or naming the first
/// shape mismatch.
void transfer_encoder(const ModelCheckpoint& autoencoder, Model& unet, bool freeze = false);

}  // namespace wetseg::nn
