// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace wetseg {

/// Independent generator for a (seed, stream, counter) key. Streams separate
/// consumers (init, dropout, shuffling, splits) so that adding draws to one
/// never perturbs another; the counter is typically an epoch or step index.
inline std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t counter = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(counter),
                    static_cast<std::uint32_t>(counter >> 32)};
  return std::mt19937_64(seq);
}

namespace rng_stream {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kSynthetic = 5;
}  // namespace rng_stream

}  // namespace wetseg
