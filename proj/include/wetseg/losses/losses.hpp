// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "json.hpp"
#include "wetseg/tensor/tensor.hpp"

namespace wetseg::losses {

using nn::Var;

/// Mean Huber loss: 0.5 e^2 for |e| <= delta, else delta (|e| - 0.5 delta).
Var huber_loss(const Var& pred, const Var& target, float delta = 1.0f);

struct SsimOptions {
  int window = 11;
  float sigma = 1.5f;
  float c1 = 0.01f * 0.01f;
  float c2 = 0.03f * 0.03f;
};

/// Mean local SSIM over every valid window position, band and image.
/// Throws DataError when the image is smaller than the window.
Var ssim(const Var& pred, const Var& target, const SsimOptions& opt = {});
Var ssim_loss(const Var& pred, const Var& target, const SsimOptions& opt = {});

/// Mean |Sobel magnitude(pred) - Sobel magnitude(target)| per band, with
/// unnormalized 3x3 Sobel kernels and replicate padding.
Var edge_loss(const Var& pred, const Var& target);

struct MixedLossWeights {
  float alpha = 0.5f;  // Huber
  float beta = 0.4f;   // 1 - SSIM
  float gamma = 0.1f;  // edge
  void validate() const;
};

void to_json(nlohmann::json& j, const MixedLossWeights& w);
void from_json(const nlohmann::json& j, MixedLossWeights& w);

/// alpha * Huber + beta * (1 - SSIM) + gamma * edge. Terms with zero weight
/// are skipped.
Var mixed_loss(const Var& pred, const Var& target, const MixedLossWeights& w = {},
               const SsimOptions& opt = {});

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// 1 - mean soft Dice over the classes present in the mask or in the argmax
/// prediction. `mask` holds N*H*W class ids; kIgnoreLabel pixels are skipped.
Var dice_loss(const Var& logits, std::span<const std::uint8_t> mask, float eps = 1e-6f);

/// Mean softmax cross-entropy over labeled pixels.
Var cross_entropy(const Var& logits, std::span<const std::uint8_t> mask);

}  // namespace wetseg::losses
