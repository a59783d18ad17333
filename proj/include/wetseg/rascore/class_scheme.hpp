// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

namespace wetseg {

using Rgb = std::array<std::uint8_t, 3>;

struct ClassInfo {
  std::uint8_t id = 0;
  std::string label;
  Rgb color{0, 0, 0};
};

/// Ordered class list. Ids are contiguous from 0 and labels unique.
struct ClassScheme {
  std::string name;
  std::vector<ClassInfo> classes;

  std::size_t size() const { return classes.size(); }
  const ClassInfo& operator[](std::size_t id) const { return classes.at(id); }

  /// Throws DataError if ids are not 0..n-1 in order or labels repeat.
  void validate() const;
};

/// Class id reserved for pixels without a label. Excluded from losses and metrics.
inline constexpr std::uint8_t kUnlabeled = 255;

/// The 9 Dynamic World classes (ids 0..8) with the product's published palette.
const ClassScheme& dynamic_world_scheme();
/// Manual annotation scheme for the high-resolution Biesbosch tiles.
const ClassScheme& biesbosch_manual_scheme();
/// Looks up a built-in scheme by name; throws ConfigError for unknown names.
const ClassScheme& builtin_scheme(const std::string& name);

void to_json(nlohmann::json& j, const ClassScheme& s);
void from_json(const nlohmann::json& j, ClassScheme& s);

}  // namespace wetseg
