// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "wetseg/tensor/tensor.hpp"

namespace wetseg::nn {

/// Cross-correlation. weight is (Cout, Cin, k, k); bias (1, Cout, 1, 1) or
/// undefined. Output spatial size is floor((H + 2*padding - k) / stride) + 1.
Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride = 1, int padding = 0);

Var relu(const Var& x);
Var sigmoid(const Var& x);

/// 2x2 max pooling, stride 2. Odd spatial dims are rejected.
Var maxpool2(const Var& x);
/// Nearest-neighbour 2x upsampling.
Var upsample2(const Var& x);

/// Inverted dropout: zero each element with probability p and scale the rest
/// by 1/(1-p). Identity when !training or p == 0.
Var dropout(const Var& x, float p, bool training, std::mt19937_64& rng);

Var concat_channels(const Var& a, const Var& b);
/// Softmax over the channel axis, per pixel.
Var softmax_channels(const Var& logits);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, float s);
/// Sum of all elements as a (1,1,1,1) tensor.
Var sum(const Var& x);
Var mean(const Var& x);
/// Weighted sum of scalars: sum_i w_i * x_i.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<float>& weights);

/// Worker threads for the matrix kernels; n <= 0 selects every core.
void set_num_threads(int n);
int num_threads();

}  // namespace wetseg::nn
